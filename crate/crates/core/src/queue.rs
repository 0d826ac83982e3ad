//! Queue prediction at signalized approaches.
//!
//! The predictor is a deterministic fluid model: vehicles accumulate at
//! the arrival flow during the effective red and stack at jam spacing; at
//! green onset a release shockwave travels backward from the stop line at
//! the jam-to-capacity wave speed w = q_c / (k_j - k_c). A vehicle whose
//! unimpeded arrival falls at time t would find n = demand * (t - red
//! start) vehicles ahead of it, i.e. a queue of n jam spacings, which is
//! released at green onset + q / w.

use serde::{Deserialize, Serialize};

use crate::network::Link;
use crate::signal::SpatPlan;

/// Predicted (or observed) queue state at one intersection for one
/// arrival instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueEstimate {
    /// Stacked queue length ahead of the subject vehicle, metres.
    pub queue_length_m: f64,
    /// Magnitude of the release shockwave speed, m/s.
    pub dissipation_speed_ms: f64,
    /// Instant the queue tail starts moving: green onset + q / w, capped
    /// at the green end.
    pub release_time_s: f64,
    /// The arrival instant this prediction targets.
    pub valid_for_arrival_s: f64,
    /// Onset of the serving green.
    pub green_start_s: f64,
    /// End of the serving green.
    pub green_end_s: f64,
    /// Set when the queue cannot clear within one green.
    pub oversaturated: bool,
}

impl QueueEstimate {
    /// True when the targeted arrival falls inside the serving green after
    /// the queue has released: the vehicle needs no speed constraint.
    pub fn passes_unconstrained(&self) -> bool {
        self.valid_for_arrival_s >= self.release_time_s
            && self.valid_for_arrival_s < self.green_end_s
            && !self.oversaturated
    }
}

/// Predicts the queue a vehicle with unimpeded arrival `arrival_time_s`
/// would face at the approach governed by `plan`. With `use_queue` false
/// the queue is forced to zero (SPaT-only planning) and over-saturation is
/// not detected, since both require queue information.
pub fn predict_queue(
    link: &Link,
    plan: &SpatPlan,
    demand_vphpl: f64,
    arrival_time_s: f64,
    use_queue: bool,
) -> QueueEstimate {
    let green_start = plan.next_green_start(arrival_time_s);
    let green_end = plan.green_end(green_start);
    let w = link.dissipation_speed_ms();
    if !use_queue {
        return QueueEstimate {
            queue_length_m: 0.0,
            dissipation_speed_ms: w,
            release_time_s: green_start,
            valid_for_arrival_s: arrival_time_s,
            green_start_s: green_start,
            green_end_s: green_end,
            oversaturated: false,
        };
    }
    let red_start = green_start - plan.red_s();
    let elapsed = (arrival_time_s - red_start).max(0.0);
    let n_ahead = demand_vphpl / 3600.0 * elapsed;
    let q = (n_ahead * link.jam_spacing_m()).min(link.length_m);
    let raw_release = green_start + q / w;
    // Sustained-demand clearing check: arrivals per cycle versus discharge
    // capacity per green.
    let sustained = demand_vphpl * plan.cycle_s > link.saturation_flow_vphpl * plan.green_s;
    let oversaturated = sustained || raw_release > green_end;
    QueueEstimate {
        queue_length_m: q,
        dissipation_speed_ms: w,
        release_time_s: raw_release.min(green_end),
        valid_for_arrival_s: arrival_time_s,
        green_start_s: green_start,
        green_end_s: green_end,
        oversaturated,
    }
}

/// Ground-truth queue measurement from simulation state: jam spacing times
/// the number of stopped vehicles (speed below 1 km/h) on the approach,
/// i.e. positioned in `(stopline_m - approach_length_m, stopline_m]`.
pub fn observe_queue<I>(
    stopline_m: f64,
    approach_length_m: f64,
    jam_spacing_m: f64,
    vehicles: I,
) -> f64
where
    I: IntoIterator<Item = (f64, f64)>, // (position_m, speed_kmh)
{
    let stopped = vehicles
        .into_iter()
        .filter(|&(pos, speed)| {
            speed < 1.0 && pos <= stopline_m && pos > stopline_m - approach_length_m
        })
        .count();
    stopped as f64 * jam_spacing_m
}
