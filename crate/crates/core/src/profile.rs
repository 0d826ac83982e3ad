//! Piecewise constant-acceleration speed profiles and the arrival
//! constraint solver.
//!
//! A two-intersection plan has the shape ramp / cruise / ramp / cruise /
//! ramp / cruise: decelerate (or accelerate) to a first cruise speed, pass
//! the first stop line exactly when its queue tail releases, adjust to a
//! second cruise speed, pass the second stop line at its release, then
//! accelerate back to the speed limit and hold it to the end of the
//! control section. Given the three ramp accelerations everything else is
//! determined by the arrival equalities, each a quadratic in the ramp
//! duration. Single-intersection plans are the degenerate case with a
//! zero-length middle section.
//!
//! All times are relative to the plan instant and all positions relative
//! to the vehicle position at that instant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuel::{fuel_rate, FuelParams, KinematicSample};
use crate::queue::QueueEstimate;
use crate::units::{kmh_to_ms, ms_to_kmh};

/// Minimum cruise speed; candidates that would creep below this are
/// infeasible and the caller falls back to a stop-and-wait trajectory.
pub const CRUISE_FLOOR_KMH: f64 = 5.0;

const ACCEL_EPS: f64 = 1e-9;
const TIME_EPS: f64 = 1e-9;
const SPEED_EPS: f64 = 1e-9;

/// Everything the profile solver needs about the vehicle's situation.
/// Green onsets are relative to the plan instant; distances are measured
/// from the vehicle's current position (`d1_m` to the first stop line).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlContext {
    pub v0_kmh: f64,
    pub vf_kmh: f64,
    pub d1_m: f64,
    pub d2_m: f64,
    pub d3_m: f64,
    pub t_g1_s: f64,
    pub t_g2_s: f64,
    pub q1: QueueEstimate,
    pub q2: QueueEstimate,
    pub a_minus_ms2: f64,
    pub a_plus_ms2: f64,
}

impl ControlContext {
    /// Context for a single-intersection plan: a degenerate middle section
    /// (d2 = 0, identical queue state at both "intersections") makes the
    /// two-intersection solver produce the one-cruise shape.
    pub fn single_intersection(
        v0_kmh: f64,
        vf_kmh: f64,
        d1_m: f64,
        d3_m: f64,
        t_g_s: f64,
        queue: QueueEstimate,
        a_minus_ms2: f64,
        a_plus_ms2: f64,
    ) -> Self {
        ControlContext {
            v0_kmh,
            vf_kmh,
            d1_m,
            d2_m: 0.0,
            d3_m,
            t_g1_s: t_g_s,
            t_g2_s: t_g_s,
            q1: queue,
            q2: queue,
            a_minus_ms2,
            a_plus_ms2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v0_kmh >= 0.0 && self.v0_kmh <= self.vf_kmh + 1e-9) {
            return Err(Error::Config("ctx: need 0 <= v0 <= vf".into()));
        }
        if !(self.a_minus_ms2 < 0.0 && self.a_plus_ms2 > 0.0) {
            return Err(Error::Config("ctx: need a- < 0 < a+".into()));
        }
        if !(self.d1_m > 0.0 && self.d2_m >= 0.0 && self.d3_m > 0.0) {
            return Err(Error::Config("ctx: distances must be positive".into()));
        }
        Ok(())
    }

    /// Release instant of the first queue: green onset + q / w.
    pub fn release_1_s(&self) -> f64 {
        self.t_g1_s + self.q1.queue_length_m / self.q1.dissipation_speed_ms
    }

    /// Release instant of the second queue.
    pub fn release_2_s(&self) -> f64 {
        self.t_g2_s + self.q2.queue_length_m / self.q2.dissipation_speed_ms
    }
}

/// A solved advisory speed profile. Speeds are stored in m/s; the
/// breakpoints follow the ramp/cruise alternation described at module
/// level, with `t[1]` and `t[3]` pinned to the two queue releases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// Breakpoints t1..t6, seconds from the plan instant.
    pub t: [f64; 6],
    pub v0_ms: f64,
    pub vc1_ms: f64,
    pub vc2_ms: f64,
    pub vf_ms: f64,
    pub a1_ms2: f64,
    pub a2_ms2: f64,
    pub a3_ms2: f64,
}

impl SpeedProfile {
    pub fn cruise_speeds_kmh(&self) -> (f64, f64) {
        (ms_to_kmh(self.vc1_ms), ms_to_kmh(self.vc2_ms))
    }

    pub fn duration_s(&self) -> f64 {
        self.t[5]
    }

    pub fn speed_ms_at(&self, t: f64) -> f64 {
        let [t1, t2, t3, t4, t5, _] = self.t;
        let v = if t <= 0.0 {
            self.v0_ms
        } else if t <= t1 {
            self.v0_ms + self.a1_ms2 * t
        } else if t <= t2 {
            self.vc1_ms
        } else if t <= t3 {
            self.vc1_ms + self.a2_ms2 * (t - t2)
        } else if t <= t4 {
            self.vc2_ms
        } else if t <= t5 {
            self.vc2_ms + self.a3_ms2 * (t - t4)
        } else {
            self.vf_ms
        };
        v.clamp(0.0, self.vf_ms)
    }

    pub fn speed_kmh_at(&self, t: f64) -> f64 {
        ms_to_kmh(self.speed_ms_at(t))
    }

    /// Analytic displacement since the plan instant, metres.
    pub fn position_m_at(&self, t: f64) -> f64 {
        let mut pos = 0.0;
        let mut cursor = 0.0;
        for seg in self.segments() {
            if t <= cursor + TIME_EPS {
                break;
            }
            let dt = (t - cursor).min(seg.dur_s);
            pos += seg.v0_ms * dt + 0.5 * seg.a_ms2 * dt * dt;
            cursor += seg.dur_s;
        }
        if t > cursor {
            pos += self.vf_ms * (t - cursor);
        }
        pos
    }

    pub fn total_distance_m(&self) -> f64 {
        self.position_m_at(self.t[5])
    }

    fn segments(&self) -> Vec<Segment> {
        let [t1, t2, t3, t4, t5, t6] = self.t;
        let raw = [
            (t1, self.v0_ms, self.a1_ms2),
            (t2 - t1, self.vc1_ms, 0.0),
            (t3 - t2, self.vc1_ms, self.a2_ms2),
            (t4 - t3, self.vc2_ms, 0.0),
            (t5 - t4, self.vc2_ms, self.a3_ms2),
            (t6 - t5, self.vf_ms, 0.0),
        ];
        raw.iter()
            .filter(|(dur, _, _)| *dur > TIME_EPS)
            .map(|&(dur, v0, a)| Segment {
                dur_s: dur,
                v0_ms: v0,
                a_ms2: a,
            })
            .collect()
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            segments: self.segments(),
        }
    }
}

/// One constant-acceleration piece of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub dur_s: f64,
    pub v0_ms: f64,
    pub a_ms2: f64,
}

impl Segment {
    pub fn end_speed_ms(&self) -> f64 {
        self.v0_ms + self.a_ms2 * self.dur_s
    }

    pub fn distance_m(&self) -> f64 {
        self.v0_ms * self.dur_s + 0.5 * self.a_ms2 * self.dur_s * self.dur_s
    }
}

/// A general piecewise constant-acceleration trajectory; the shape used
/// for baseline (stop-and-wait) references, which need idle segments the
/// six-breakpoint profile cannot express.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn push(&mut self, dur_s: f64, v0_ms: f64, a_ms2: f64) {
        if dur_s > TIME_EPS {
            self.segments.push(Segment {
                dur_s,
                v0_ms,
                a_ms2,
            });
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.dur_s).sum()
    }

    pub fn distance_m(&self) -> f64 {
        self.segments.iter().map(|s| s.distance_m()).sum()
    }

    pub fn speed_ms_at(&self, t: f64) -> f64 {
        let mut cursor = 0.0;
        for seg in &self.segments {
            if t <= cursor + seg.dur_s {
                return (seg.v0_ms + seg.a_ms2 * (t - cursor).max(0.0)).max(0.0);
            }
            cursor += seg.dur_s;
        }
        self.segments.last().map_or(0.0, |s| s.end_speed_ms().max(0.0))
    }

    pub fn speed_kmh_at(&self, t: f64) -> f64 {
        ms_to_kmh(self.speed_ms_at(t))
    }

    pub fn position_m_at(&self, t: f64) -> f64 {
        let mut pos = 0.0;
        let mut cursor = 0.0;
        for seg in &self.segments {
            if t <= cursor {
                break;
            }
            let dt = (t - cursor).min(seg.dur_s);
            pos += seg.v0_ms * dt + 0.5 * seg.a_ms2 * dt * dt;
            cursor += seg.dur_s;
        }
        if t > cursor {
            pos += self.segments.last().map_or(0.0, |s| s.end_speed_ms().max(0.0)) * (t - cursor);
        }
        pos
    }

    /// Fuel over the whole trajectory, litres: exact rate-times-duration on
    /// cruise segments, trapezoidal sampling at `dt_s` (segment-aligned) on
    /// ramps.
    pub fn fuel_l(&self, params: &FuelParams, dt_s: f64) -> f64 {
        let mut total = 0.0;
        for seg in &self.segments {
            if seg.a_ms2.abs() < ACCEL_EPS {
                let rate = fuel_rate(&KinematicSample::new(ms_to_kmh(seg.v0_ms), 0.0), params);
                total += rate * seg.dur_s;
            } else {
                let n = (seg.dur_s / dt_s).ceil().max(1.0) as usize;
                let h = seg.dur_s / n as f64;
                let rate_at = |tau: f64| {
                    let v = (seg.v0_ms + seg.a_ms2 * tau).max(0.0);
                    fuel_rate(&KinematicSample::new(ms_to_kmh(v), seg.a_ms2), params)
                };
                let mut prev = rate_at(0.0);
                for i in 1..=n {
                    let cur = rate_at(i as f64 * h);
                    total += 0.5 * (prev + cur) * h;
                    prev = cur;
                }
            }
        }
        total
    }

    /// Writes the trajectory as a `(t, x, v, a, fuel_rate)` CSV sampled at
    /// `dt_s`, with a leading schema comment.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut w: W,
        params: &FuelParams,
        dt_s: f64,
    ) -> Result<()> {
        writeln!(w, "# trajectory v1: t_s,x_m,v_kmh,a_ms2,fuel_rate_lps")?;
        writeln!(w, "t_s,x_m,v_kmh,a_ms2,fuel_rate_lps")?;
        let end = self.duration_s();
        let mut t = 0.0;
        while t <= end + TIME_EPS {
            let (v, a) = self.speed_accel_at(t);
            let rate = fuel_rate(&KinematicSample::new(ms_to_kmh(v), a), params);
            writeln!(
                w,
                "{:.3},{:.3},{:.3},{:.4},{:.7}",
                t,
                self.position_m_at(t),
                ms_to_kmh(v),
                a,
                rate
            )?;
            t += dt_s;
        }
        Ok(())
    }

    fn speed_accel_at(&self, t: f64) -> (f64, f64) {
        let mut cursor = 0.0;
        for seg in &self.segments {
            if t <= cursor + seg.dur_s {
                let v = (seg.v0_ms + seg.a_ms2 * (t - cursor).max(0.0)).max(0.0);
                return (v, seg.a_ms2);
            }
            cursor += seg.dur_s;
        }
        (
            self.segments.last().map_or(0.0, |s| s.end_speed_ms().max(0.0)),
            0.0,
        )
    }
}

/// Solves the ramp-then-cruise sub-problem: starting at `u` m/s,
/// accelerate at `a` for some duration, then cruise, covering `dist`
/// metres in exactly `total_time` seconds. Returns the ramp duration and
/// cruise speed, or `None` when no admissible root exists.
fn ramp_then_cruise(
    u: f64,
    a: f64,
    dist: f64,
    total_time: f64,
    v_floor: f64,
    v_max: f64,
) -> Option<(f64, f64)> {
    if total_time <= TIME_EPS {
        // Degenerate section (single-intersection contexts).
        return (dist.abs() <= 1e-6).then_some((0.0, u));
    }
    if dist <= 0.0 {
        return None;
    }
    if a.abs() < ACCEL_EPS {
        let err = (u * total_time - dist).abs();
        let scale = dist.max(1.0);
        return (err <= 1e-6 * scale).then_some((0.0, u));
    }
    let disc = total_time * total_time - 2.0 * (dist - u * total_time) / a;
    if disc < 0.0 {
        return None;
    }
    // Root T - sqrt(disc) is the gentler speed change and the only one that
    // can satisfy tau <= T.
    let tau = total_time - disc.sqrt();
    if !(-TIME_EPS..=total_time + TIME_EPS).contains(&tau) {
        return None;
    }
    let tau = tau.clamp(0.0, total_time);
    let vc = u + a * tau;
    if vc < v_floor - SPEED_EPS || vc > v_max + SPEED_EPS {
        return None;
    }
    Some((tau, vc.clamp(0.0, v_max)))
}

/// Solves the full profile for one acceleration triple. Returns `None`
/// when the triple is geometrically infeasible (complex root, breakpoints
/// out of order, cruise speed outside its admissible band, or the final
/// ramp not fitting in the downstream section).
pub fn solve_profile(ctx: &ControlContext, a1: f64, a2: f64, a3: f64) -> Option<SpeedProfile> {
    let v0 = kmh_to_ms(ctx.v0_kmh);
    let vf = kmh_to_ms(ctx.vf_kmh);
    let floor = kmh_to_ms(CRUISE_FLOOR_KMH);
    let q1 = ctx.q1.queue_length_m;
    let q2 = ctx.q2.queue_length_m;

    let t2 = ctx.release_1_s();
    if t2 <= TIME_EPS {
        return None;
    }
    let d1 = ctx.d1_m - q1;
    if d1 <= 0.0 {
        return None;
    }
    let (t1, vc1) = ramp_then_cruise(v0, a1, d1, t2, floor, vf)?;

    let (t3, t4, vc2) = if ctx.d2_m > 0.0 {
        let t4 = ctx.release_2_s();
        let window = t4 - t2;
        if window <= TIME_EPS {
            return None;
        }
        let d2 = ctx.d2_m + q1 - q2;
        if d2 <= 0.0 {
            return None;
        }
        let (tau, vc2) = ramp_then_cruise(vc1, a2, d2, window, floor, vf)?;
        (t2 + tau, t4, vc2)
    } else {
        // Single-intersection: no middle section.
        (t2, t2, vc1)
    };

    let d3 = ctx.d3_m + q2;
    let (ramp_dur, ramp_dist) = if (vf - vc2).abs() < SPEED_EPS {
        (0.0, 0.0)
    } else {
        if a3 < ACCEL_EPS {
            return None;
        }
        let dur = (vf - vc2) / a3;
        let dist = (vf * vf - vc2 * vc2) / (2.0 * a3);
        if dist > d3 + 1e-6 {
            return None;
        }
        (dur, dist.min(d3))
    };
    let t5 = t4 + ramp_dur;
    let t6 = t5 + (d3 - ramp_dist) / vf;

    let t = [t1, t2, t3, t4, t5, t6];
    for pair in t.windows(2) {
        if pair[1] < pair[0] - TIME_EPS {
            return None;
        }
    }
    Some(SpeedProfile {
        t,
        v0_ms: v0,
        vc1_ms: vc1,
        vc2_ms: vc2,
        vf_ms: vf,
        a1_ms2: a1,
        a2_ms2: a2,
        a3_ms2: a3,
    })
}

/// Fuel consumed by an advisory profile, litres, priced with the same
/// trapezoidal rule the simulator uses.
pub fn profile_fuel(profile: &SpeedProfile, params: &FuelParams, dt_s: f64) -> f64 {
    profile.to_trajectory().fuel_l(params, dt_s)
}

/// Uncontrolled reference trajectory: drive at the speed limit, brake at
/// the comfortable rate to each queue tail, idle until its release, then
/// accelerate at the comfortable rate; used for savings accounting and
/// plots. Targets that release before the vehicle could reach them cause
/// no stop.
pub fn baseline_stop_profile(ctx: &ControlContext) -> Trajectory {
    let vf = kmh_to_ms(ctx.vf_kmh);
    let a_plus = ctx.a_plus_ms2;
    let a_minus = ctx.a_minus_ms2.abs();
    let mut traj = Trajectory::default();
    let mut t = 0.0;
    let mut v = kmh_to_ms(ctx.v0_kmh);

    let d1 = ctx.d1_m - ctx.q1.queue_length_m;
    let mid = ctx.d2_m + ctx.q1.queue_length_m - ctx.q2.queue_length_m;
    let targets: Vec<(f64, f64)> = if ctx.d2_m > 0.0 {
        vec![(d1, ctx.release_1_s()), (mid, ctx.release_2_s())]
    } else {
        vec![(d1, ctx.release_1_s())]
    };

    for (dist, release) in targets {
        if dist <= 0.0 {
            continue;
        }
        // Earliest arrival driving free (ramp to vf, then cruise).
        let free_arrival = t + time_to_cover(v, dist, vf, a_plus);
        if free_arrival >= release {
            // Green wave: drive through without stopping.
            let (segs, end_v, end_t) = drive_free(v, dist, vf, a_plus);
            for s in segs {
                traj.push(s.dur_s, s.v0_ms, s.a_ms2);
            }
            v = end_v;
            t += end_t;
            continue;
        }
        // Stop at the target: accelerate/cruise, brake to zero exactly at
        // the target, idle until release.
        let brake_dist = v * v / (2.0 * a_minus);
        if brake_dist >= dist {
            // Too close to do anything but brake (steeper than comfort).
            let a_req = v * v / (2.0 * dist);
            let dur = v / a_req;
            traj.push(dur, v, -a_req);
            t += dur;
        } else {
            // Peak speed of the accelerate-then-brake envelope.
            let peak = ((dist + v * v / (2.0 * a_plus)) * 2.0 * a_plus * a_minus
                / (a_plus + a_minus))
                .sqrt()
                .max(v);
            let peak = peak.min(vf);
            let ramp_up = (peak - v) / a_plus;
            let d_up = (peak * peak - v * v) / (2.0 * a_plus);
            let d_down = peak * peak / (2.0 * a_minus);
            let cruise = (dist - d_up - d_down).max(0.0) / peak;
            traj.push(ramp_up, v, a_plus);
            traj.push(cruise, peak, 0.0);
            traj.push(peak / a_minus, peak, -a_minus);
            t += ramp_up + cruise + peak / a_minus;
        }
        v = 0.0;
        if release > t {
            traj.push(release - t, 0.0, 0.0);
            t = release;
        }
    }

    // Final stretch to the end of the control section.
    let covered: f64 = traj.distance_m();
    let total = (ctx.d1_m + ctx.d2_m + ctx.d3_m) - covered;
    if total > 0.0 {
        let (segs, _, _) = drive_free(v, total, vf, a_plus);
        for s in segs {
            traj.push(s.dur_s, s.v0_ms, s.a_ms2);
        }
    }
    traj
}

/// Time to cover `dist` starting at `v`, accelerating at `a` toward
/// `v_max` and cruising there.
fn time_to_cover(v: f64, dist: f64, v_max: f64, a: f64) -> f64 {
    let ramp_dist = (v_max * v_max - v * v) / (2.0 * a);
    if ramp_dist >= dist {
        // Still ramping at the target: v t + a t^2 / 2 = dist.
        let disc = v * v + 2.0 * a * dist;
        (disc.sqrt() - v) / a
    } else {
        (v_max - v) / a + (dist - ramp_dist) / v_max
    }
}

fn drive_free(v: f64, dist: f64, v_max: f64, a: f64) -> (Vec<Segment>, f64, f64) {
    let mut segs = Vec::new();
    let ramp_dist = (v_max * v_max - v * v) / (2.0 * a);
    if v_max - v > SPEED_EPS && ramp_dist >= dist {
        let disc = v * v + 2.0 * a * dist;
        let dur = (disc.sqrt() - v) / a;
        segs.push(Segment {
            dur_s: dur,
            v0_ms: v,
            a_ms2: a,
        });
        (segs, v + a * dur, dur)
    } else {
        let mut total = 0.0;
        if v_max - v > SPEED_EPS {
            let dur = (v_max - v) / a;
            segs.push(Segment {
                dur_s: dur,
                v0_ms: v,
                a_ms2: a,
            });
            total += dur;
        }
        let cruise = (dist - ramp_dist.max(0.0)).max(0.0) / v_max;
        segs.push(Segment {
            dur_s: cruise,
            v0_ms: v_max,
            a_ms2: 0.0,
        });
        (segs, v_max, total + cruise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpatPlan;
    use approx::assert_relative_eq;

    fn empty_queue(green_start: f64) -> QueueEstimate {
        QueueEstimate {
            queue_length_m: 0.0,
            dissipation_speed_ms: 3.1746031746031744,
            release_time_s: green_start,
            valid_for_arrival_s: green_start,
            green_start_s: green_start,
            green_end_s: green_start + 61.0,
            oversaturated: false,
        }
    }

    fn queued(green_start: f64, q_m: f64) -> QueueEstimate {
        let w = 3.1746031746031744;
        QueueEstimate {
            queue_length_m: q_m,
            dissipation_speed_ms: w,
            release_time_s: green_start + q_m / w,
            valid_for_arrival_s: green_start,
            green_start_s: green_start,
            green_end_s: green_start + 61.0,
            oversaturated: false,
        }
    }

    /// The two-intersection test geometry: d = 500/1000/200 m, 80 km/h.
    fn site_ctx(t_g1: f64, t_g2: f64, q1_m: f64, q2_m: f64) -> ControlContext {
        ControlContext {
            v0_kmh: 80.0,
            vf_kmh: 80.0,
            d1_m: 500.0,
            d2_m: 1000.0,
            d3_m: 200.0,
            t_g1_s: t_g1,
            t_g2_s: t_g2,
            q1: queued(t_g1, q1_m),
            q2: queued(t_g2, q2_m),
            a_minus_ms2: -1.5,
            a_plus_ms2: 1.5,
        }
    }

    /// Greens aligned with free-flow arrival, zero queues: the null
    /// profile cruises at the limit the whole way.
    fn pass_through_ctx() -> ControlContext {
        let vf = kmh_to_ms(80.0);
        let t_g1 = 500.0 / vf;
        let t_g2 = t_g1 + 1000.0 / vf;
        ControlContext {
            v0_kmh: 80.0,
            vf_kmh: 80.0,
            d1_m: 500.0,
            d2_m: 1000.0,
            d3_m: 200.0,
            t_g1_s: t_g1,
            t_g2_s: t_g2,
            q1: empty_queue(t_g1),
            q2: empty_queue(t_g2),
            a_minus_ms2: -1.5,
            a_plus_ms2: 1.5,
        }
    }

    #[test]
    fn unconstrained_pass_through_is_pure_cruise() {
        let ctx = pass_through_ctx();
        let profile = solve_profile(&ctx, 0.0, 0.0, 0.5).expect("feasible");
        let (vc1, vc2) = profile.cruise_speeds_kmh();
        assert_relative_eq!(vc1, 80.0, max_relative = 1e-9);
        assert_relative_eq!(vc2, 80.0, max_relative = 1e-9);
        let params = FuelParams::light_duty();
        let cruise_rate = fuel_rate(&KinematicSample::new(80.0, 0.0), &params);
        assert_relative_eq!(
            profile_fuel(&profile, &params, 1.0),
            cruise_rate * profile.duration_s(),
            max_relative = 1e-9
        );
        assert_relative_eq!(profile.duration_s(), 1700.0 / kmh_to_ms(80.0), max_relative = 1e-9);
    }

    #[test]
    fn arrival_equalities_hold_by_direct_substitution() {
        let ctx = site_ctx(40.0, 115.0, 30.0, 20.0);
        let profile = solve_profile(&ctx, -1.5, 0.5, 1.0).expect("feasible");
        let [t1, t2, t3, t4, t5, t6] = profile.t;
        // Independent substitution of the closed-form arrival equations.
        let x_t2 = profile.v0_ms * t1 + 0.5 * profile.a1_ms2 * t1 * t1
            + profile.vc1_ms * (t2 - t1);
        assert_relative_eq!(x_t2, 500.0 - 30.0, max_relative = 1e-9);
        let mid = profile.vc1_ms * (t3 - t2)
            + 0.5 * profile.a2_ms2 * (t3 - t2) * (t3 - t2)
            + profile.vc2_ms * (t4 - t3);
        assert_relative_eq!(mid, 1000.0 + 30.0 - 20.0, max_relative = 1e-9);
        let last = profile.vc2_ms * (t5 - t4)
            + 0.5 * profile.a3_ms2 * (t5 - t4) * (t5 - t4)
            + profile.vf_ms * (t6 - t5);
        assert_relative_eq!(last, 200.0 + 20.0, max_relative = 1e-9);
        // Release pinning.
        assert_relative_eq!(t2, ctx.release_1_s(), max_relative = 1e-12);
        assert_relative_eq!(t4, ctx.release_2_s(), max_relative = 1e-12);
        // Speed-limit recovery at t5.
        assert_relative_eq!(profile.speed_ms_at(t5), profile.vf_ms, max_relative = 1e-12);
    }

    #[test]
    fn too_mild_deceleration_is_infeasible() {
        let ctx = site_ctx(40.0, 115.0, 30.0, 20.0);
        assert!(solve_profile(&ctx, -0.1, 0.5, 1.0).is_none());
    }

    #[test]
    fn total_distance_telescopes() {
        let ctx = site_ctx(40.0, 115.0, 30.0, 20.0);
        let profile = solve_profile(&ctx, -1.2, 0.4, 0.9).expect("feasible");
        assert_relative_eq!(profile.total_distance_m(), 1700.0, max_relative = 1e-9);
    }

    #[test]
    fn cruise_floor_rejects_creeping() {
        // A release so late that covering d1 needs a crawl below 5 km/h.
        let ctx = site_ctx(400.0, 500.0, 0.0, 0.0);
        for a1 in [-1.5, -1.0, -0.5] {
            assert!(solve_profile(&ctx, a1, 0.5, 1.0).is_none());
        }
    }

    #[test]
    fn single_intersection_context_produces_one_cruise() {
        let q = queued(60.0, 25.0);
        let ctx = ControlContext::single_intersection(80.0, 80.0, 500.0, 200.0, 60.0, q, -1.5, 1.5);
        let profile = solve_profile(&ctx, -1.5, 0.0, 1.5).expect("feasible");
        assert_relative_eq!(profile.t[1], profile.t[2], max_relative = 1e-12);
        assert_relative_eq!(profile.t[1], profile.t[3], max_relative = 1e-12);
        assert_eq!(profile.vc1_ms, profile.vc2_ms);
        // Covers d1 - q to the release, then d3 + q beyond.
        assert_relative_eq!(profile.position_m_at(profile.t[1]), 475.0, max_relative = 1e-9);
        assert_relative_eq!(profile.total_distance_m(), 700.0, max_relative = 1e-9);
    }

    #[test]
    fn profile_fuel_refinement_under_one_percent() {
        let ctx = site_ctx(40.0, 115.0, 30.0, 20.0);
        let profile = solve_profile(&ctx, -1.5, 0.5, 1.0).unwrap();
        let params = FuelParams::light_duty();
        let coarse = profile_fuel(&profile, &params, 1.0);
        let fine = profile_fuel(&profile, &params, 0.1);
        assert!((coarse - fine).abs() / fine < 0.01);
    }

    #[test]
    fn baseline_green_wave_has_no_stop() {
        let ctx = pass_through_ctx();
        let traj = baseline_stop_profile(&ctx);
        assert!(traj.segments.iter().all(|s| s.v0_ms > 1.0 || s.dur_s < 1e-9));
        let params = FuelParams::light_duty();
        let cruise_rate = fuel_rate(&KinematicSample::new(80.0, 0.0), &params);
        assert_relative_eq!(
            traj.fuel_l(&params, 1.0),
            cruise_rate * traj.duration_s(),
            max_relative = 1e-9
        );
        assert_relative_eq!(traj.distance_m(), 1700.0, max_relative = 1e-9);
    }

    #[test]
    fn baseline_red_red_stops_twice_and_idles() {
        // Releases far beyond free-flow arrivals force two full stops.
        let ctx = site_ctx(100.0, 220.0, 30.0, 20.0);
        let traj = baseline_stop_profile(&ctx);
        let idles = traj
            .segments
            .iter()
            .filter(|s| s.v0_ms.abs() < 1e-9 && s.a_ms2.abs() < 1e-9 && s.dur_s > 1.0)
            .count();
        assert_eq!(idles, 2);
        assert_relative_eq!(traj.distance_m(), 1700.0, max_relative = 1e-6);
    }

    #[test]
    fn speed_stays_within_bounds_everywhere() {
        let ctx = site_ctx(40.0, 115.0, 30.0, 20.0);
        let profile = solve_profile(&ctx, -1.5, 0.5, 1.0).unwrap();
        let mut t = 0.0;
        while t < profile.duration_s() {
            let v = profile.speed_ms_at(t);
            assert!((0.0..=profile.vf_ms + 1e-9).contains(&v));
            t += 0.25;
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn feasible_profiles_cover_exact_distance(
            tg1 in 30.0f64..80.0,
            gap in 40.0f64..90.0,
            q1 in 0.0f64..60.0,
            q2 in 0.0f64..60.0,
            a1 in -1.5f64..-0.2,
            a2 in -1.0f64..1.0,
            a3 in 0.2f64..1.5,
        ) {
            let ctx = site_ctx(tg1, tg1 + gap, q1, q2);
            if let Some(profile) = solve_profile(&ctx, a1, a2, a3) {
                let d = profile.total_distance_m();
                proptest::prop_assert!((d - 1700.0).abs() / 1700.0 < 1e-6);
                let t = profile.t;
                for w in t.windows(2) {
                    proptest::prop_assert!(w[1] >= w[0] - 1e-9);
                }
                // Breakpoints pinned to releases.
                proptest::prop_assert!((t[1] - ctx.release_1_s()).abs() < 1e-9);
                proptest::prop_assert!((t[3] - ctx.release_2_s()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn queue_estimate_consistency_with_spataplan() {
        // release_1_s must agree with the plan-derived release when the
        // estimate came from predict_queue.
        let plan = SpatPlan::new(120.0, 61.0, 4.0, 2.0, 0.0);
        let mut link = crate::network::Link::template(1, 80.0, 1600.0, 160.0);
        link.length_m = 1000.0;
        let est = crate::queue::predict_queue(&link, &plan, 600.0, 118.0, true);
        let ctx = ControlContext {
            v0_kmh: 80.0,
            vf_kmh: 80.0,
            d1_m: 500.0,
            d2_m: 1000.0,
            d3_m: 200.0,
            t_g1_s: est.green_start_s,
            t_g2_s: est.green_start_s + 75.0,
            q1: est,
            q2: empty_queue(est.green_start_s + 75.0),
            a_minus_ms2: -1.5,
            a_plus_ms2: 1.5,
        };
        assert_relative_eq!(ctx.release_1_s(), est.release_time_s, max_relative = 1e-12);
    }
}
