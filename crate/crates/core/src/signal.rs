//! Fixed-time signal plans: indication lookup and future green windows.
//!
//! A plan is periodic with its cycle; the movement's green starts at
//! `offset_s` and onsets repeat every cycle. Green onsets are reported
//! within the simulation timeline (never before t = 0), so a query made
//! inside a green whose onset would be negative returns the first onset of
//! that green at or after zero plus cycles as needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One movement's fixed-time plan. Durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatPlan {
    pub cycle_s: f64,
    pub green_s: f64,
    pub amber_s: f64,
    pub allred_s: f64,
    /// Start of this movement's green relative to network time zero.
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalColor {
    Green,
    Amber,
    Red,
}

/// Current indication plus time until it changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indication {
    pub color: SignalColor,
    pub time_to_change_s: f64,
}

impl SpatPlan {
    pub fn new(cycle_s: f64, green_s: f64, amber_s: f64, allred_s: f64, offset_s: f64) -> Self {
        SpatPlan {
            cycle_s,
            green_s,
            amber_s,
            allred_s,
            offset_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_s > 0.0) {
            return Err(Error::Config("signal: cycle_s must be > 0".into()));
        }
        if self.green_s < 0.0 || self.amber_s < 0.0 || self.allred_s < 0.0 {
            return Err(Error::Config("signal: durations must be >= 0".into()));
        }
        if self.green_s + self.amber_s + self.allred_s > self.cycle_s + 1e-9 {
            return Err(Error::Config(
                "signal: green + amber + allred must not exceed cycle".into(),
            ));
        }
        Ok(())
    }

    /// Effective red for planning: everything that is not green.
    pub fn red_s(&self) -> f64 {
        self.cycle_s - self.green_s
    }

    /// Phase position in [0, cycle), measured from the green onset. Values
    /// within one nanosecond of the cycle end snap to the onset so that
    /// instants computed from onset arithmetic land inside the green.
    fn phase(&self, t: f64) -> f64 {
        let p = (t - self.offset_s).rem_euclid(self.cycle_s);
        if self.cycle_s - p < 1e-9 {
            0.0
        } else {
            p
        }
    }

    /// Indication shown at absolute time `t`.
    pub fn indication_at(&self, t: f64) -> Indication {
        let p = self.phase(t);
        if p < self.green_s {
            Indication {
                color: SignalColor::Green,
                time_to_change_s: self.green_s - p,
            }
        } else if p < self.green_s + self.amber_s {
            Indication {
                color: SignalColor::Amber,
                time_to_change_s: self.green_s + self.amber_s - p,
            }
        } else {
            Indication {
                color: SignalColor::Red,
                time_to_change_s: self.cycle_s - p,
            }
        }
    }

    pub fn is_green(&self, t: f64) -> bool {
        self.indication_at(t).color == SignalColor::Green
    }

    /// Onset of the green serving time `t`: the current green's onset when
    /// `t` is inside a green, otherwise the next onset after `t`. Onsets
    /// before t = 0 are advanced by whole cycles into the timeline.
    pub fn next_green_start(&self, t: f64) -> f64 {
        let p = self.phase(t);
        let onset = if p < self.green_s {
            t - p
        } else {
            t + (self.cycle_s - p)
        };
        if onset < 0.0 {
            onset + self.cycle_s * (-onset / self.cycle_s).ceil()
        } else {
            onset
        }
    }

    /// End of the green that starts at `green_start`.
    pub fn green_end(&self, green_start: f64) -> f64 {
        green_start + self.green_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// The two-intersection scenario plan: 120 s cycle, 61/4/2 splits.
    fn base_plan(offset: f64) -> SpatPlan {
        SpatPlan::new(120.0, 61.0, 4.0, 2.0, offset)
    }

    #[test]
    fn indication_examples() {
        let plan = base_plan(0.0);
        assert_eq!(plan.indication_at(30.0).color, SignalColor::Green);
        // Amber covers [61, 65); 70 is red.
        assert_eq!(plan.indication_at(70.0).color, SignalColor::Red);
        assert_eq!(plan.indication_at(120.0).color, SignalColor::Green);
        assert_eq!(plan.indication_at(63.0).color, SignalColor::Amber);
    }

    #[test]
    fn next_green_start_examples() {
        let plan = base_plan(0.0);
        assert_relative_eq!(plan.next_green_start(70.0), 120.0);
        assert_relative_eq!(plan.next_green_start(30.0), 0.0);
        let offset75 = base_plan(75.0);
        assert_relative_eq!(plan.next_green_start(0.0), 0.0);
        assert_relative_eq!(offset75.next_green_start(0.0), 75.0);
    }

    #[test]
    fn green_end_examples() {
        let plan = base_plan(0.0);
        assert_relative_eq!(plan.green_end(0.0), 61.0);
        assert_relative_eq!(plan.green_end(120.0), 181.0);
        assert_relative_eq!(base_plan(75.0).green_end(75.0), 136.0);
    }

    #[test]
    fn effective_red_matches_cycle_minus_green() {
        assert_relative_eq!(base_plan(0.0).red_s(), 59.0);
    }

    #[test]
    fn green_time_partitions_cycle_exactly() {
        let plan = base_plan(17.0);
        // Interval arithmetic: within one cycle the indication intervals
        // are [0, g), [g, g+a), [g+a, cycle) in phase coordinates.
        let g = plan.green_s;
        let a = plan.amber_s;
        assert_relative_eq!(g + a + (plan.cycle_s - g - a), plan.cycle_s);
        // Sampled check that colors change exactly at the boundaries.
        for (t, color) in [
            (17.0, SignalColor::Green),
            (17.0 + g - 1e-9, SignalColor::Green),
            (17.0 + g, SignalColor::Amber),
            (17.0 + g + a, SignalColor::Red),
            (17.0 + plan.cycle_s - 1e-6, SignalColor::Red),
        ] {
            assert_eq!(plan.indication_at(t).color, color, "t = {t}");
        }
    }

    proptest::proptest! {
        #[test]
        fn periodic_in_cycle(t in 0.0f64..1e4, offset in 0.0f64..120.0) {
            let plan = base_plan(offset);
            let a = plan.indication_at(t);
            let b = plan.indication_at(t + plan.cycle_s);
            proptest::prop_assert_eq!(a.color, b.color);
            proptest::prop_assert!((a.time_to_change_s - b.time_to_change_s).abs() < 1e-6);
        }

        #[test]
        fn next_green_start_returns_an_onset(t in 0.0f64..1e4, offset in 0.0f64..120.0) {
            let plan = base_plan(offset);
            let onset = plan.next_green_start(t);
            proptest::prop_assert!(onset >= 0.0);
            proptest::prop_assert_eq!(plan.indication_at(onset).color, SignalColor::Green);
            proptest::prop_assert_ne!(plan.indication_at(onset - 1e-6).color, SignalColor::Green);
        }

        #[test]
        fn time_to_change_nonnegative(t in 0.0f64..1e4) {
            let plan = base_plan(42.0);
            proptest::prop_assert!(plan.indication_at(t).time_to_change_s >= 0.0);
        }
    }
}
