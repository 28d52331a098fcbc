//! Jerk-limited time-optimal trajectories for a triple integrator.
//!
//! Each axis is planned independently as a sequence of constant-jerk phases
//! with `|j| = j_max` or `j = 0`. A profile has three parts: a velocity change
//! from the start state to a peak velocity `vp` with zero acceleration, an
//! optional cruise at `vp`, and a velocity change from `vp` into the target
//! state. The peak velocity is chosen so that the displacement matches, and
//! among all such choices the fastest one wins.
//!
//! The planner doubles as a model predictive controller: it is re-run from
//! the measured state at every control tick and only the first sample of
//! each fresh plan is used.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;

pub const GRAVITY: f64 = 9.81;

const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum TrajectoryError {
    #[error("state out of bounds")]
    StateOutOfBounds,
    #[error("limits must be strictly positive and finite")]
    InvalidLimits,
    #[error("no profile reaches the target")]
    NoSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
}

impl AxisLimits {
    pub const fn new(v_max: f64, a_max: f64, j_max: f64) -> Self {
        Self {
            v_max,
            a_max,
            j_max,
        }
    }

    pub const XY: AxisLimits = AxisLimits::new(5.0, 4.0, 5.0);
    pub const Z: AxisLimits = AxisLimits::new(1.0, 10.0, 50.0);

    pub fn is_valid(&self) -> bool {
        [self.v_max, self.a_max, self.j_max]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisState {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

impl AxisState {
    pub const fn new(p: f64, v: f64, a: f64) -> Self {
        Self { p, v, a }
    }

    pub const fn at_rest(p: f64) -> Self {
        Self { p, v: 0.0, a: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration: f64,
    pub jerk: f64,
}

/// Advances `(p, v, a)` under constant jerk for `t` seconds.
#[inline]
pub fn integrate(s: AxisState, jerk: f64, t: f64) -> AxisState {
    AxisState {
        p: s.p + t * (s.v + t * (s.a / 2.0 + t * jerk / 6.0)),
        v: s.v + t * (s.a + t * jerk / 2.0),
        a: s.a + t * jerk,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisProfile {
    pub start: AxisState,
    pub target: AxisState,
    pub limits: AxisLimits,
    pub phases: Vec<Phase>,
}

impl AxisProfile {
    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|ph| ph.duration).sum()
    }

    /// State and jerk at time `t`. Past the end the target state is held
    /// with zero jerk.
    pub fn sample(&self, t: f64) -> (AxisState, f64) {
        let mut s = self.start;
        let mut elapsed = 0.0;
        for ph in &self.phases {
            if t < elapsed + ph.duration {
                return (integrate(s, ph.jerk, (t - elapsed).max(0.0)), ph.jerk);
            }
            s = integrate(s, ph.jerk, ph.duration);
            elapsed += ph.duration;
        }
        (self.target, 0.0)
    }

    /// State reached by integrating every phase, without snapping to target.
    pub fn end_state(&self) -> AxisState {
        self.phases
            .iter()
            .fold(self.start, |s, ph| integrate(s, ph.jerk, ph.duration))
    }

    /// Phase table as comment lines followed by samples at `rate_hz`.
    pub fn to_csv(&self, rate_hz: f64) -> String {
        let mut out = String::from("# popper-profile/1\n# phase,duration,jerk\n");
        for (i, ph) in self.phases.iter().enumerate() {
            let _ = writeln!(out, "# {i},{:.9},{:.9}", ph.duration, ph.jerk);
        }
        out.push_str("t,p,v,a,j\n");
        let n = (self.duration() * rate_hz).ceil() as usize;
        for k in 0..=n {
            let t = k as f64 / rate_hz;
            let (s, j) = self.sample(t);
            let _ = writeln!(out, "{t:.6},{:.9},{:.9},{:.9},{:.9}", s.p, s.v, s.a, j);
        }
        out
    }
}

/// Fastest jerk sequence taking `(v0, a0)` to `(v1, 0)` without exceeding
/// the acceleration limit. Returns the phases together with their duration
/// and displacement.
fn velocity_change(v0: f64, a0: f64, v1: f64, lim: &AxisLimits) -> ([Phase; 3], f64, f64) {
    let j = lim.j_max;
    let v_stop = v0 + a0 * a0.abs() / (2.0 * j);
    let dir = if v1 >= v_stop { 1.0 } else { -1.0 };
    let (a0d, dv) = (dir * a0, dir * (v1 - v0));
    let mut ap = (dv * j + a0d * a0d / 2.0).max(0.0).sqrt();
    let mut hold = 0.0;
    if ap > lim.a_max {
        ap = lim.a_max;
        hold = ((dv - (2.0 * ap * ap - a0d * a0d) / (2.0 * j)) / ap).max(0.0);
    }
    let phases = [
        Phase {
            duration: ((ap - a0d) / j).max(0.0),
            jerk: dir * j,
        },
        Phase {
            duration: hold,
            jerk: 0.0,
        },
        Phase {
            duration: ap / j,
            jerk: -dir * j,
        },
    ];
    let mut s = AxisState::new(0.0, v0, a0);
    let mut t = 0.0;
    for ph in &phases {
        s = integrate(s, ph.jerk, ph.duration);
        t += ph.duration;
    }
    (phases, t, s.p)
}

/// Displacement and duration of the two velocity changes around a peak `vp`.
struct Split {
    head: [Phase; 3],
    tail: [Phase; 3],
    time: f64,
    dist: f64,
}

fn split(start: &AxisState, target: &AxisState, vp: f64, lim: &AxisLimits) -> Split {
    let (head, t_head, d_head) = velocity_change(start.v, start.a, vp, lim);
    // The tail is the time reversal of a velocity change from the mirrored
    // target state; mirroring position as well keeps jerk signs and distance.
    let (mut tail, t_tail, d_tail) = velocity_change(target.v, -target.a, vp, lim);
    tail.reverse();
    Split {
        head,
        tail,
        time: t_head + t_tail,
        dist: d_head + d_tail,
    }
}

fn within(x: f64, max: f64) -> bool {
    x.abs() <= max * (1.0 + BOUND_TOL) + BOUND_TOL
}

/// Time-optimal profile from `start` to `target` under symmetric limits.
pub fn plan_axis(
    start: AxisState,
    target: AxisState,
    lim: AxisLimits,
) -> Result<AxisProfile, TrajectoryError> {
    if !lim.is_valid() {
        return Err(TrajectoryError::InvalidLimits);
    }
    let finite = [start.p, start.v, start.a, target.p, target.v, target.a]
        .iter()
        .all(|x| x.is_finite());
    if !finite
        || !within(start.v, lim.v_max)
        || !within(target.v, lim.v_max)
        || !within(start.a, lim.a_max)
        || !within(target.a, lim.a_max)
    {
        return Err(TrajectoryError::StateOutOfBounds);
    }
    let empty = AxisProfile {
        start,
        target,
        limits: lim,
        phases: Vec::new(),
    };
    if start == target {
        return Ok(empty);
    }

    let dp = target.p - start.p;
    let vmax = lim.v_max;
    let residual = |vp: f64| split(&start, &target, vp, &lim).dist - dp;

    // (peak velocity, cruise time, total time)
    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |vp: f64, cruise: f64, time: f64| {
        if best.is_none_or(|b| time < b.2) {
            best = Some((vp, cruise, time));
        }
    };

    for vp in [vmax, -vmax] {
        let sp = split(&start, &target, vp, &lim);
        let cruise = (dp - sp.dist) / vp;
        if cruise >= 0.0 {
            consider(vp, cruise, sp.time + cruise);
        }
    }

    let j = lim.j_max;
    let mut grid: Vec<f64> = (0..=40)
        .map(|k| -vmax + 2.0 * vmax * k as f64 / 40.0)
        .collect();
    for b in [
        start.v + start.a * start.a.abs() / (2.0 * j),
        target.v - target.a * target.a.abs() / (2.0 * j),
        0.0,
    ] {
        if b.abs() < vmax {
            grid.push(b);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let values: Vec<f64> = grid.iter().map(|&vp| residual(vp)).collect();
    for i in 0..grid.len() {
        if values[i] == 0.0 {
            consider(grid[i], 0.0, split(&start, &target, grid[i], &lim).time);
        }
        if i + 1 < grid.len() && values[i] * values[i + 1] < 0.0 {
            let (mut lo, mut hi, mut flo) = (grid[i], grid[i + 1], values[i]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = residual(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let vp = if residual(lo).abs() <= residual(hi).abs() {
                lo
            } else {
                hi
            };
            consider(vp, 0.0, split(&start, &target, vp, &lim).time);
        }
    }

    let (vp, cruise, _) = best.ok_or(TrajectoryError::NoSolution)?;
    let sp = split(&start, &target, vp, &lim);
    let mut phases: Vec<Phase> = sp.head.to_vec();
    phases.push(Phase {
        duration: cruise,
        jerk: 0.0,
    });
    phases.extend(sp.tail);
    phases.retain(|ph| ph.duration > 0.0);
    Ok(AxisProfile { phases, ..empty })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub profiles: Vec<AxisProfile>,
    pub duration: f64,
    /// False if some axis could not be stretched to the common duration.
    pub synchronized: bool,
}

const SYNC_TOL: f64 = 0.5e-3;
const SYNC_ITERATIONS: usize = 60;

/// Stretches `profile` to `duration` by scaling its limits. `scale_accel`
/// selects whether the acceleration (with velocity fixed at its minimum
/// scale) or the velocity limit is searched.
fn stretch(profile: &AxisProfile, duration: f64, scale_accel: bool) -> Option<AxisProfile> {
    let lim = profile.limits;
    let (s, t) = (profile.start, profile.target);
    let v_floor = (s.v.abs().max(t.v.abs()) / lim.v_max).max(1e-4);
    let a_floor = (s.a.abs().max(t.a.abs()) / lim.a_max).max(1e-4);
    let limits_at = |q: f64| {
        if scale_accel {
            AxisLimits::new(lim.v_max * v_floor, lim.a_max * q, lim.j_max)
        } else {
            AxisLimits::new(lim.v_max * q, lim.a_max, lim.j_max)
        }
    };
    let floor = if scale_accel { a_floor } else { v_floor };
    let plan = |q: f64| plan_axis(s, t, limits_at(q)).ok();

    let slowest = plan(floor)?;
    if slowest.duration() < duration - SYNC_TOL {
        return None;
    }
    let (mut lo, mut hi) = (floor, 1.0);
    let mut best = slowest;
    for _ in 0..SYNC_ITERATIONS {
        if (best.duration() - duration).abs() <= SYNC_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let candidate = plan(mid)?;
        if candidate.duration() > duration {
            lo = mid;
        } else {
            hi = mid;
        }
        if (candidate.duration() - duration).abs() < (best.duration() - duration).abs() {
            best = candidate;
        }
    }
    ((best.duration() - duration).abs() <= SYNC_TOL).then_some(AxisProfile {
        limits: lim,
        ..best
    })
}

/// Slows every faster axis so that all axes arrive together.
pub fn synchronize(profiles: Vec<AxisProfile>) -> SyncResult {
    let duration = profiles
        .iter()
        .map(AxisProfile::duration)
        .fold(0.0, f64::max);
    let mut synchronized = true;
    let out = profiles
        .into_iter()
        .map(|p| {
            if p.phases.is_empty() || p.duration() >= duration - SYNC_TOL {
                return p;
            }
            match stretch(&p, duration, false).or_else(|| stretch(&p, duration, true)) {
                Some(stretched) => stretched,
                None => {
                    synchronized = false;
                    p
                }
            }
        })
        .collect();
    SyncResult {
        profiles: out,
        duration,
        synchronized,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttitudeCommand {
    pub pitch: f64,
    pub roll: f64,
    pub climb_rate: f64,
    pub yaw_rate: f64,
}

fn clamp_state(s: AxisState, lim: &AxisLimits) -> AxisState {
    AxisState {
        p: s.p,
        v: s.v.clamp(-lim.v_max, lim.v_max),
        a: s.a.clamp(-lim.a_max, lim.a_max),
    }
}

/// Plans synchronized x/y/z profiles from `current` and samples them at
/// `t_sample`. The measured velocity and acceleration are clipped into the
/// limits first, since a lagging plant can overshoot them slightly.
pub fn plan_and_sample(
    current: &[AxisState; 3],
    target: &[AxisState; 3],
    lims: &[AxisLimits; 3],
    t_sample: [f64; 3],
) -> Result<([AxisState; 3], SyncResult), TrajectoryError> {
    let mut profiles = Vec::with_capacity(3);
    for i in 0..3 {
        profiles.push(plan_axis(
            clamp_state(current[i], &lims[i]),
            target[i],
            lims[i],
        )?);
    }
    let sync = synchronize(profiles);
    let sampled = [0, 1, 2].map(|i| sync.profiles[i].sample(t_sample[i]).0);
    Ok((sampled, sync))
}

/// One MPC tick: a fresh synchronized plan sampled `dt` ahead, mapped to
/// attitude angles and a climb rate. The yaw rate is left at zero.
pub fn mpc_step(
    current: &[AxisState; 3],
    target: &[AxisState; 3],
    lims: &[AxisLimits; 3],
    dt: f64,
) -> Result<AttitudeCommand, TrajectoryError> {
    let (s, _) = plan_and_sample(current, target, lims, [dt; 3])?;
    Ok(acceleration_command(s[0].a, s[1].a, s[2].v))
}

/// The largest speed up to `v_target` that can be reached from speed `v0`
/// with zero initial acceleration while covering no more than `distance`.
///
/// Asking for more makes the time-optimal profile back up first, which the
/// receding-horizon controller turns into a stall.
pub fn reachable_speed(v0: f64, distance: f64, v_target: f64, lim: &AxisLimits) -> f64 {
    let travel = |v: f64| {
        let dv = (v - v0).abs();
        let t = if dv <= lim.a_max * lim.a_max / lim.j_max {
            2.0 * (dv / lim.j_max).sqrt()
        } else {
            dv / lim.a_max + lim.a_max / lim.j_max
        };
        (v0 + v) / 2.0 * t
    };
    if v0 >= v_target || travel(v_target) <= distance {
        return v_target;
    }
    let (mut lo, mut hi) = (v0.max(0.0), v_target);
    if travel(lo) > distance {
        return lo;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if travel(mid) <= distance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn acceleration_command(ax: f64, ay: f64, vz: f64) -> AttitudeCommand {
    AttitudeCommand {
        pitch: ax.atan2(GRAVITY),
        roll: ay.atan2(GRAVITY),
        climb_rate: vz,
        yaw_rate: 0.0,
    }
}

pub fn yaw_control(psi_target: f64, psi: f64, kp: f64) -> f64 {
    kp * wrap_angle(psi_target - psi)
}
