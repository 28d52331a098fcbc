//! Optimality of planned profiles against an exhaustive switch-time search.

use popper_core::trajectory::{plan_axis, AxisLimits, AxisState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum rest-to-rest duration over a 1 ms grid of the jerk time `t1` and
/// the constant-acceleration time `t2`; the cruise time follows from the
/// displacement. Distances come from forward integration of the jerk
/// sequence, independent of the planner.
fn grid_oracle(dp: f64, lim: AxisLimits) -> f64 {
    let step = 1e-3;
    let mut best = f64::INFINITY;
    let t1_max = (lim.a_max / lim.j_max / step).floor() as usize;
    for i in 1..=t1_max {
        let t1 = i as f64 * step;
        let mut k = 0usize;
        loop {
            let t2 = k as f64 * step;
            let (dist, vp) = accelerate(lim.j_max, t1, t2);
            if vp > lim.v_max + 1e-12 || 2.0 * dist > dp + 1e-12 {
                break;
            }
            let t4 = (dp - 2.0 * dist) / vp;
            best = best.min(4.0 * t1 + 2.0 * t2 + t4);
            k += 1;
        }
    }
    best
}

/// Distance and final velocity of `+j` for `t1`, hold for `t2`, `-j` for `t1`,
/// integrated with small explicit steps.
fn accelerate(j: f64, t1: f64, t2: f64) -> (f64, f64) {
    let (mut p, mut v, mut a) = (0.0f64, 0.0f64, 0.0f64);
    for (dur, jerk) in [(t1, j), (t2, 0.0), (t1, -j)] {
        // exact per-phase polynomial update
        p += v * dur + a * dur * dur / 2.0 + jerk * dur.powi(3) / 6.0;
        v += a * dur + jerk * dur * dur / 2.0;
        a += jerk * dur;
    }
    (p, v)
}

#[test]
fn rest_to_rest_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let lim = AxisLimits::new(
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..10.0),
            rng.random_range(1.0..60.0),
        );
        let dp = 10f64.powf(rng.random_range(-2.0..1.7));
        let planned = plan_axis(AxisState::at_rest(0.0), AxisState::at_rest(dp), lim)
            .unwrap()
            .duration();
        let oracle = grid_oracle(dp, lim);
        worst = worst.max(planned / oracle);
        assert!(
            planned <= oracle * 1.02,
            "dp {dp} {lim:?}: planned {planned} oracle {oracle}"
        );
        // the planner should never be beaten by the discretized search
        assert!(
            planned <= oracle + 1e-9,
            "dp {dp} {lim:?}: planned {planned} oracle {oracle}"
        );
    }
    assert!(worst <= 1.0 + 1e-9);
}

#[test]
fn reference_case_from_table_limits() {
    let p = plan_axis(
        AxisState::at_rest(0.0),
        AxisState::at_rest(0.01),
        AxisLimits::XY,
    )
    .unwrap();
    let oracle = grid_oracle(0.01, AxisLimits::XY);
    assert!(p.duration() <= oracle * 1.02);
}
