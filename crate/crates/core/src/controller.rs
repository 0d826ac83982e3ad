//! The eco-drive controller: classifies each equipped vehicle's situation,
//! solves the matching optimization (two-intersection, single-intersection
//! or downstream ramp), and emits 1 Hz advisory speed limits.
//!
//! The advisory is a cap: the simulator applies the minimum of the
//! car-following speed and the advisory, so safety always wins. Advisories
//! never exceed the speed limit and are never negative.

use serde::{Deserialize, Serialize};

use crate::fuel::FuelParams;
use crate::network::{ControlSegment, Link};
use crate::profile::{
    baseline_stop_profile, profile_fuel, solve_profile, ControlContext, SpeedProfile, Trajectory,
};
use crate::queue::{predict_queue, QueueEstimate};
use crate::search::{golden_section, grid_min, nelder_mead};
use crate::signal::SpatPlan;
use crate::units::kmh_to_ms;

/// Search scheme: coarse grid over the acceleration box plus a bounded
/// Nelder-Mead polish. Both are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub coarse_points: usize,
    pub nm_iters: usize,
    pub pricing_dt_s: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            coarse_points: 21,
            nm_iters: 80,
            pricing_dt_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lookahead {
    One,
    Two,
}

/// One of the four controller variants: one- or two-intersection lookahead,
/// with or without queue prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AlgorithmVariant {
    pub lookahead: Lookahead,
    pub use_queue: bool,
}

impl AlgorithmVariant {
    pub const ECO_1S_O: Self = AlgorithmVariant {
        lookahead: Lookahead::One,
        use_queue: false,
    };
    pub const ECO_1S_Q: Self = AlgorithmVariant {
        lookahead: Lookahead::One,
        use_queue: true,
    };
    pub const ECO_MS_O: Self = AlgorithmVariant {
        lookahead: Lookahead::Two,
        use_queue: false,
    };
    pub const ECO_MS_Q: Self = AlgorithmVariant {
        lookahead: Lookahead::Two,
        use_queue: true,
    };

    pub const ALL: [Self; 4] = [Self::ECO_1S_O, Self::ECO_1S_Q, Self::ECO_MS_O, Self::ECO_MS_Q];
}

impl std::fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let span = match self.lookahead {
            Lookahead::One => "1S",
            Lookahead::Two => "MS",
        };
        let q = if self.use_queue { "Q" } else { "O" };
        write!(f, "Eco-{span}-{q}")
    }
}

impl std::str::FromStr for AlgorithmVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eco-1s-o" => Ok(Self::ECO_1S_O),
            "eco-1s-q" => Ok(Self::ECO_1S_Q),
            "eco-ms-o" => Ok(Self::ECO_MS_O),
            "eco-ms-q" => Ok(Self::ECO_MS_Q),
            other => Err(format!(
                "unknown variant '{other}' (expected eco-1s-o, eco-1s-q, eco-ms-o, eco-ms-q)"
            )),
        }
    }
}

impl TryFrom<String> for AlgorithmVariant {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<AlgorithmVariant> for String {
    fn from(v: AlgorithmVariant) -> String {
        v.to_string().to_ascii_lowercase()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    Inactive,
    Unconstrained,
    SingleIntersection,
    TwoIntersection,
    DownstreamAccel,
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ControllerMode::Inactive => "inactive",
            ControllerMode::Unconstrained => "unconstrained",
            ControllerMode::SingleIntersection => "single",
            ControllerMode::TwoIntersection => "two",
            ControllerMode::DownstreamAccel => "downstream",
        };
        f.write_str(s)
    }
}

/// Scenario classification from the queue estimates at the next one or two
/// downstream signals. `est_i_at_v0` is the prediction for arrival at the
/// current speed (absent when nearly stopped); an over-saturated first
/// intersection reverts the vehicle to car-following (no advisory below
/// the limit), an over-saturated or freely-passed second intersection
/// reduces the problem to a single intersection.
pub fn classify(
    est_i_at_vf: &QueueEstimate,
    est_i_at_v0: Option<&QueueEstimate>,
    est_next: Option<&QueueEstimate>,
    lookahead: Lookahead,
    is_last_signal: bool,
) -> ControllerMode {
    if est_i_at_vf.passes_unconstrained()
        || est_i_at_v0.is_some_and(|e| e.passes_unconstrained())
    {
        return ControllerMode::Unconstrained;
    }
    if est_i_at_vf.oversaturated {
        return ControllerMode::Unconstrained;
    }
    if lookahead == Lookahead::One || is_last_signal {
        return ControllerMode::SingleIntersection;
    }
    match est_next {
        Some(e) if e.passes_unconstrained() || e.oversaturated => {
            ControllerMode::SingleIntersection
        }
        Some(_) => ControllerMode::TwoIntersection,
        None => ControllerMode::SingleIntersection,
    }
}

fn polish(
    objective: &impl Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    cfg: &SearchConfig,
) -> Option<(Vec<f64>, f64)> {
    let (grid_point, grid_value) = grid_min(objective, lo, hi, cfg.coarse_points)?;
    let step: Vec<f64> = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| 0.5 * (h - l) / (cfg.coarse_points - 1) as f64)
        .collect();
    let (nm_point, nm_value) = nelder_mead(objective, &grid_point, &step, lo, hi, cfg.nm_iters);
    if nm_value < grid_value {
        Some((nm_point, nm_value))
    } else {
        Some((grid_point, grid_value))
    }
}

/// Two-intersection optimization: minimizes profile fuel over the
/// acceleration box. Returns `None` when no candidate is feasible, in
/// which case the caller falls back to the single-intersection problem.
pub fn optimize_two(
    ctx: &ControlContext,
    params: &FuelParams,
    cfg: &SearchConfig,
) -> Option<(f64, f64, f64, SpeedProfile)> {
    let objective = |p: &[f64]| match solve_profile(ctx, p[0], p[1], p[2]) {
        Some(profile) => profile_fuel(&profile, params, cfg.pricing_dt_s),
        None => f64::INFINITY,
    };
    let lo = [ctx.a_minus_ms2, ctx.a_minus_ms2, 0.0];
    let hi = [ctx.a_plus_ms2, ctx.a_plus_ms2, ctx.a_plus_ms2];
    let (best, _) = polish(&objective, &lo, &hi, cfg)?;
    let profile = solve_profile(ctx, best[0], best[1], best[2])?;
    Some((best[0], best[1], best[2], profile))
}

/// Single-intersection optimization over (a1, a3); `ctx` must be a
/// degenerate single-intersection context. Returns `None` when infeasible,
/// in which case the caller falls back to the baseline stop trajectory.
pub fn optimize_single(
    ctx: &ControlContext,
    params: &FuelParams,
    cfg: &SearchConfig,
) -> Option<(f64, f64, SpeedProfile)> {
    let objective = |p: &[f64]| match solve_profile(ctx, p[0], 0.0, p[1]) {
        Some(profile) => profile_fuel(&profile, params, cfg.pricing_dt_s),
        None => f64::INFINITY,
    };
    let lo = [ctx.a_minus_ms2, 0.0];
    let hi = [ctx.a_plus_ms2, ctx.a_plus_ms2];
    let (best, _) = polish(&objective, &lo, &hi, cfg)?;
    let profile = solve_profile(ctx, best[0], 0.0, best[1])?;
    Some((best[0], best[1], profile))
}

/// Ramp-then-cruise trajectory from the current speed to the limit over a
/// downstream section of length `d3_m`. When even the given acceleration
/// cannot reach the limit within the section, the ramp is truncated at the
/// section end.
pub fn downstream_trajectory(v_kmh: f64, vf_kmh: f64, d3_m: f64, a3: f64) -> Trajectory {
    let v = kmh_to_ms(v_kmh);
    let vf = kmh_to_ms(vf_kmh);
    let mut traj = Trajectory::default();
    if vf - v < 1e-9 || a3 < 1e-9 {
        traj.push(d3_m / vf.max(0.1), v, 0.0);
        return traj;
    }
    let ramp_dist = (vf * vf - v * v) / (2.0 * a3);
    if ramp_dist >= d3_m {
        let dur = ((v * v + 2.0 * a3 * d3_m).sqrt() - v) / a3;
        traj.push(dur, v, a3);
    } else {
        traj.push((vf - v) / a3, v, a3);
        traj.push((d3_m - ramp_dist) / vf, vf, 0.0);
    }
    traj
}

/// Fuel-optimal downstream ramp acceleration from the current speed to the
/// speed limit over `d3_m`. Degenerates to zero when already at the limit.
pub fn optimize_downstream(
    v_kmh: f64,
    vf_kmh: f64,
    d3_m: f64,
    params: &FuelParams,
    a_plus_ms2: f64,
    pricing_dt_s: f64,
) -> f64 {
    let v = kmh_to_ms(v_kmh);
    let vf = kmh_to_ms(vf_kmh);
    if vf - v < 1e-9 {
        return 0.0;
    }
    // Smallest acceleration whose ramp still fits in the section.
    let a_lo = ((vf * vf - v * v) / (2.0 * d3_m)).max(1e-4);
    if a_lo >= a_plus_ms2 {
        return a_plus_ms2;
    }
    let objective =
        |a3: f64| downstream_trajectory(v_kmh, vf_kmh, d3_m, a3).fuel_l(params, pricing_dt_s);
    let (a_star, f_star) = golden_section(&objective, a_lo, a_plus_ms2, 64);
    // Guard the bracket ends in case the objective is edge-minimal.
    let mut best = (a_star, f_star);
    for a in [a_lo, a_plus_ms2] {
        let f = objective(a);
        if f < best.1 {
            best = (a, f);
        }
    }
    best.0
}

/// One downstream signal as the controller sees it.
pub struct ApproachView<'a> {
    /// Route-linear stop-line position, metres.
    pub stopline_m: f64,
    pub link: &'a Link,
    pub plan: &'a SpatPlan,
    /// Arrival demand on the approach, veh/h/lane.
    pub demand_vphpl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Advisory deceleration bound, m/s² (< 0).
    pub a_minus_ms2: f64,
    /// Advisory acceleration bound, m/s² (> 0).
    pub a_plus_ms2: f64,
    pub search: SearchConfig,
    /// Re-plan when a predicted release shifts by more than this.
    pub replan_release_shift_s: f64,
    /// Re-plan when car-following overrides have dragged the vehicle this
    /// far behind its planned position.
    pub replan_position_error_m: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            a_minus_ms2: -1.5,
            a_plus_ms2: 1.5,
            search: SearchConfig::default(),
            replan_release_shift_s: 1.0,
            replan_position_error_m: 15.0,
        }
    }
}

#[derive(Debug, Clone)]
struct ActivePlan {
    anchor_t_s: f64,
    anchor_x_m: f64,
    traj: Trajectory,
    accels: [f64; 3],
    release_1_abs_s: f64,
    release_2_abs_s: Option<f64>,
    /// Unimpeded arrival estimates the queue predictions were anchored to.
    /// Re-predictions reuse them so a vehicle slowing along its own plan
    /// does not drift its own queue estimate.
    arrival_1_abs_s: f64,
    arrival_2_abs_s: Option<f64>,
    signal_idx: usize,
}

/// Per-vehicle controller state. Updates are pure given the read-only
/// signal/queue snapshot, so controllers for different vehicles can run
/// concurrently.
#[derive(Debug, Clone)]
pub struct VehicleController {
    pub variant: AlgorithmVariant,
    pub mode: ControllerMode,
    plan: Option<ActivePlan>,
    last_decision_s: f64,
    last_advisory_kmh: f64,
}

impl VehicleController {
    pub fn new(variant: AlgorithmVariant) -> Self {
        VehicleController {
            variant,
            mode: ControllerMode::Inactive,
            plan: None,
            last_decision_s: f64::NEG_INFINITY,
            last_advisory_kmh: f64::INFINITY,
        }
    }

    pub fn accels(&self) -> Option<[f64; 3]> {
        self.plan.as_ref().map(|p| p.accels)
    }

    /// Advances the controller to time `t_s` and returns the advisory speed
    /// limit in km/h. Classification and re-planning run at 1 Hz; between
    /// decisions the cached plan is evaluated.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        t_s: f64,
        pos_m: f64,
        speed_kmh: f64,
        approaches: &[ApproachView],
        control: &ControlSegment,
        vf_kmh: f64,
        params: &FuelParams,
        cfg: &ControllerConfig,
    ) -> f64 {
        if t_s - self.last_decision_s < 1.0 - 1e-9 {
            return self.evaluate(t_s, vf_kmh);
        }
        self.last_decision_s = t_s;
        self.decide(t_s, pos_m, speed_kmh, approaches, control, vf_kmh, params, cfg);
        self.evaluate(t_s, vf_kmh)
    }

    fn evaluate(&mut self, t_s: f64, vf_kmh: f64) -> f64 {
        let advisory = match (&self.mode, &self.plan) {
            (ControllerMode::Inactive | ControllerMode::Unconstrained, _) | (_, None) => vf_kmh,
            (_, Some(plan)) => plan
                .traj
                .speed_kmh_at(t_s - plan.anchor_t_s)
                .clamp(0.0, vf_kmh),
        };
        self.last_advisory_kmh = advisory;
        advisory
    }

    #[allow(clippy::too_many_arguments)]
    fn decide(
        &mut self,
        t_s: f64,
        pos_m: f64,
        speed_kmh: f64,
        approaches: &[ApproachView],
        control: &ControlSegment,
        vf_kmh: f64,
        params: &FuelParams,
        cfg: &ControllerConfig,
    ) {
        let vf_ms = kmh_to_ms(vf_kmh);
        let next_idx = approaches.iter().position(|a| a.stopline_m > pos_m + 1e-6);
        let Some(i) = next_idx else {
            // Past the last signal: downstream ramp, then deactivate.
            let past = approaches
                .last()
                .map(|a| pos_m - a.stopline_m)
                .unwrap_or(f64::INFINITY);
            if past <= control.d3_m {
                self.enter_downstream(t_s, speed_kmh, vf_kmh, control.d3_m - past, params, cfg);
            } else {
                self.deactivate();
            }
            return;
        };

        let approach = &approaches[i];
        let dist_i = approach.stopline_m - pos_m;
        let active = match self.variant.lookahead {
            Lookahead::Two => i > 0 || dist_i <= control.d1_m + 1e-9,
            Lookahead::One => dist_i <= control.d1_m + 1e-9,
        };
        if !active {
            // Single-intersection control keeps a downstream ramp alive for
            // d3 past the previous signal.
            if self.variant.lookahead == Lookahead::One && i > 0 {
                let past = pos_m - approaches[i - 1].stopline_m;
                if past <= control.d3_m {
                    self.enter_downstream(
                        t_s,
                        speed_kmh,
                        vf_kmh,
                        control.d3_m - past,
                        params,
                        cfg,
                    );
                    return;
                }
            }
            self.deactivate();
            return;
        }

        let use_queue = self.variant.use_queue;
        let is_last = i + 1 >= approaches.len();

        // Cached-plan fast path: same signal pair, plan still running, and
        // re-predictions at the plan's arrival anchors agree with what it
        // was solved for. The paper's 1 Hz update then just follows the
        // cached profile.
        if let Some(plan) = &self.plan {
            let planned_x = plan.anchor_x_m + plan.traj.position_m_at(t_s - plan.anchor_t_s);
            if plan.signal_idx == i
                && matches!(
                    self.mode,
                    ControllerMode::SingleIntersection | ControllerMode::TwoIntersection
                )
                && t_s - plan.anchor_t_s <= plan.traj.duration_s()
                && planned_x - pos_m <= cfg.replan_position_error_m
            {
                let re1 = predict_queue(
                    approach.link,
                    approach.plan,
                    approach.demand_vphpl,
                    plan.arrival_1_abs_s,
                    use_queue,
                );
                let stable1 = (re1.release_time_s - plan.release_1_abs_s).abs()
                    <= cfg.replan_release_shift_s;
                let stable2 = match (plan.release_2_abs_s, plan.arrival_2_abs_s) {
                    (Some(old), Some(arr2)) if !is_last => {
                        let next = &approaches[i + 1];
                        let re2 = predict_queue(next.link, next.plan, next.demand_vphpl, arr2, use_queue);
                        (re2.release_time_s - old).abs() <= cfg.replan_release_shift_s
                    }
                    _ => true,
                };
                if stable1 && stable2 {
                    return;
                }
            }
        }

        let arrival_1 = t_s + dist_i / vf_ms;
        let est1_vf = predict_queue(
            approach.link,
            approach.plan,
            approach.demand_vphpl,
            arrival_1,
            use_queue,
        );
        let est1_v0 = (speed_kmh > 5.0).then(|| {
            predict_queue(
                approach.link,
                approach.plan,
                approach.demand_vphpl,
                t_s + dist_i / kmh_to_ms(speed_kmh),
                use_queue,
            )
        });
        let (est2, arrival_2) = if self.variant.lookahead == Lookahead::Two && !is_last {
            let next = &approaches[i + 1];
            let d2 = next.stopline_m - approach.stopline_m;
            let arrival2 = est1_vf.release_time_s.max(arrival_1) + d2 / vf_ms;
            (
                Some(predict_queue(
                    next.link,
                    next.plan,
                    next.demand_vphpl,
                    arrival2,
                    use_queue,
                )),
                Some(arrival2),
            )
        } else {
            (None, None)
        };

        let mode = classify(
            &est1_vf,
            est1_v0.as_ref(),
            est2.as_ref(),
            self.variant.lookahead,
            is_last,
        );

        self.mode = mode;
        match mode {
            ControllerMode::SingleIntersection => {
                let ctx = ControlContext::single_intersection(
                    speed_kmh.min(vf_kmh),
                    vf_kmh,
                    dist_i,
                    control.d3_m,
                    est1_vf.green_start_s - t_s,
                    est1_vf.shifted_by(t_s),
                    cfg.a_minus_ms2,
                    cfg.a_plus_ms2,
                );
                let (traj, accels) = match optimize_single(&ctx, params, &cfg.search) {
                    Some((a1, a3, profile)) => (profile.to_trajectory(), [a1, 0.0, a3]),
                    None => (baseline_stop_profile(&ctx), [0.0, 0.0, 0.0]),
                };
                self.plan = Some(ActivePlan {
                    anchor_t_s: t_s,
                    anchor_x_m: pos_m,
                    traj,
                    accels,
                    release_1_abs_s: est1_vf.release_time_s,
                    release_2_abs_s: None,
                    arrival_1_abs_s: arrival_1,
                    arrival_2_abs_s: None,
                    signal_idx: i,
                });
            }
            ControllerMode::TwoIntersection => {
                let next = &approaches[i + 1];
                let est2 = est2.expect("two-intersection mode implies a second estimate");
                let ctx = ControlContext {
                    v0_kmh: speed_kmh.min(vf_kmh),
                    vf_kmh,
                    d1_m: dist_i,
                    d2_m: next.stopline_m - approach.stopline_m,
                    d3_m: control.d3_m,
                    t_g1_s: est1_vf.green_start_s - t_s,
                    t_g2_s: est2.green_start_s - t_s,
                    q1: est1_vf.shifted_by(t_s),
                    q2: est2.shifted_by(t_s),
                    a_minus_ms2: cfg.a_minus_ms2,
                    a_plus_ms2: cfg.a_plus_ms2,
                };
                let (traj, accels, release2) = match optimize_two(&ctx, params, &cfg.search) {
                    Some((a1, a2, a3, profile)) => {
                        (profile.to_trajectory(), [a1, a2, a3], Some(est2.release_time_s))
                    }
                    None => {
                        // Documented fallback: single-intersection on i.
                        let single = ControlContext::single_intersection(
                            speed_kmh.min(vf_kmh),
                            vf_kmh,
                            dist_i,
                            control.d3_m,
                            est1_vf.green_start_s - t_s,
                            est1_vf.shifted_by(t_s),
                            cfg.a_minus_ms2,
                            cfg.a_plus_ms2,
                        );
                        self.mode = ControllerMode::SingleIntersection;
                        match optimize_single(&single, params, &cfg.search) {
                            Some((a1, a3, profile)) => {
                                (profile.to_trajectory(), [a1, 0.0, a3], None)
                            }
                            None => (baseline_stop_profile(&single), [0.0, 0.0, 0.0], None),
                        }
                    }
                };
                self.plan = Some(ActivePlan {
                    anchor_t_s: t_s,
                    anchor_x_m: pos_m,
                    traj,
                    accels,
                    release_1_abs_s: est1_vf.release_time_s,
                    release_2_abs_s: release2,
                    arrival_1_abs_s: arrival_1,
                    arrival_2_abs_s: arrival_2,
                    signal_idx: i,
                });
            }
            _ => {
                self.plan = None;
            }
        }
    }

    fn enter_downstream(
        &mut self,
        t_s: f64,
        speed_kmh: f64,
        vf_kmh: f64,
        remaining_m: f64,
        params: &FuelParams,
        cfg: &ControllerConfig,
    ) {
        if self.mode == ControllerMode::DownstreamAccel && self.plan.is_some() {
            return;
        }
        self.mode = ControllerMode::DownstreamAccel;
        let remaining = remaining_m.max(1.0);
        let a3 = optimize_downstream(
            speed_kmh.min(vf_kmh),
            vf_kmh,
            remaining,
            params,
            cfg.a_plus_ms2,
            cfg.search.pricing_dt_s,
        );
        let traj = downstream_trajectory(speed_kmh.min(vf_kmh), vf_kmh, remaining, a3);
        self.plan = Some(ActivePlan {
            anchor_t_s: t_s,
            anchor_x_m: f64::NEG_INFINITY,
            traj,
            accels: [0.0, 0.0, a3],
            release_1_abs_s: f64::INFINITY,
            release_2_abs_s: None,
            arrival_1_abs_s: f64::INFINITY,
            arrival_2_abs_s: None,
            signal_idx: usize::MAX,
        });
    }

    fn deactivate(&mut self) {
        self.mode = ControllerMode::Inactive;
        self.plan = None;
    }
}

impl QueueEstimate {
    /// The same estimate with all time fields shifted into a frame whose
    /// zero is `origin_s` (used to build plan-relative contexts).
    pub fn shifted_by(&self, origin_s: f64) -> QueueEstimate {
        QueueEstimate {
            release_time_s: self.release_time_s - origin_s,
            valid_for_arrival_s: self.valid_for_arrival_s - origin_s,
            green_start_s: self.green_start_s - origin_s,
            green_end_s: self.green_end_s - origin_s,
            ..*self
        }
    }
}
