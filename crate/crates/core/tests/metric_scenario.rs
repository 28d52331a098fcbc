//! Single-balloon flyby with noisy detection range, comparing the ray and
//! ground-plane association metrics.

use nalgebra::Vector3;
use popper_core::balloon_filter::{BalloonFilter, DetectionRay, DistanceMetric, FilterConfig};
use popper_core::geometry::{project_point, CameraIntrinsics, CameraPose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Counts {
    peak_confirmed: usize,
    peak_total: usize,
}

fn flyby(metric: DistanceMetric, seed: u64) -> Counts {
    let intr = CameraIntrinsics::new(600.0, 600.0, 240.0, 135.0, 480, 270).unwrap();
    let balloon = Vector3::new(15.0, 6.0, 2.8);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filter = BalloonFilter::new(FilterConfig::default(), metric);
    let mut counts = Counts {
        peak_confirmed: 0,
        peak_total: 0,
    };
    // 5 m/s along the lane, camera frames at 20 Hz.
    for k in 0..240 {
        let cam = Vector3::new(-40.0 + 0.25 * k as f64, 0.0, 4.0);
        let pose = CameraPose::forward_looking(cam, 0.0, 10f64.to_radians());
        let mut rays = Vec::new();
        let visible = project_point(&intr, &pose, &balloon)
            .pixel()
            .is_some_and(|px| intr.contains(&px));
        if visible {
            let scale = 1.0 + noise.sample(&mut rng);
            if scale > 0.0 {
                rays.extend(DetectionRay::new(cam, cam + (balloon - cam) * scale));
            }
        }
        filter.process_frame(&pose, &intr, &rays);
        let confirmed = filter
            .hypotheses()
            .iter()
            .filter(|h| h.history.len() >= 8)
            .count();
        counts.peak_confirmed = counts.peak_confirmed.max(confirmed);
        counts.peak_total = counts.peak_total.max(filter.hypotheses().len());
    }
    counts
}

#[test]
fn ray_metric_keeps_one_confirmed_hypothesis() {
    for seed in 0..10 {
        let c = flyby(DistanceMetric::Ray, seed);
        assert_eq!(c.peak_confirmed, 1, "seed {seed}");
        assert_eq!(c.peak_total, 1, "seed {seed}");
    }
}

#[test]
fn ground_metric_splits_the_balloon() {
    for seed in 0..10 {
        let c = flyby(DistanceMetric::Ground, seed);
        assert!(
            c.peak_total >= 2,
            "seed {seed}: peak hypotheses {}",
            c.peak_total
        );
    }
}
