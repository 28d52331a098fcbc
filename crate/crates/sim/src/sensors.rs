//! Synthetic sensors: the segmentation oracle, the downward laser and the
//! barometer.

use nalgebra::Vector3;
use popper_core::geometry::{
    pixel_ray, project_camera_point, CameraIntrinsics, CameraPose, Projection,
};
use popper_core::perception::Mask;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::SensorNoiseConfig;
use crate::world::{MavSimState, SimWorld};

/// Heights above which the laser only returns junk.
pub const LASER_MAX_RANGE: f64 = 5.0;

/// Half width of the band around the true height that junk readings avoid.
const JUNK_EXCLUSION: f64 = 0.15;

const SILHOUETTE_RAYS: usize = 64;

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Pixel-space bounding box of a sphere's silhouette, or the whole image when
/// part of the cone reaches behind the camera. `None` if it is off-screen.
fn silhouette_bbox(
    intr: &CameraIntrinsics,
    axis: &Vector3<f64>,
    cos_b: f64,
    sin_b: f64,
) -> Option<(i64, i64, i64, i64)> {
    let w = intr.width as i64;
    let h = intr.height as i64;
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for k in 0..SILHOUETTE_RAYS {
        let phi = std::f64::consts::TAU * k as f64 / SILHOUETTE_RAYS as f64;
        let dir = axis * cos_b + (e1 * phi.cos() + e2 * phi.sin()) * sin_b;
        match project_camera_point(intr, &dir) {
            Projection::Pixel(p) => {
                u0 = u0.min(p.x);
                v0 = v0.min(p.y);
                u1 = u1.max(p.x);
                v1 = v1.max(p.y);
            }
            Projection::BehindCamera => return Some((0, 0, w - 1, h - 1)),
        }
    }
    let pad = 2.0;
    let (u0, v0) = ((u0 - pad).floor() as i64, (v0 - pad).floor() as i64);
    let (u1, v1) = ((u1 + pad).ceil() as i64, (v1 + pad).ceil() as i64);
    if u1 < 0 || v1 < 0 || u0 >= w || v0 >= h {
        return None;
    }
    Some((u0.max(0), v0.max(0), u1.min(w - 1), v1.min(h - 1)))
}

/// Draws the 1-pixel outline of a sphere seen from the camera origin.
///
/// A pixel is on the outline when its four corner rays do not all lie on the
/// same side of the silhouette cone of half-angle `asin(R / d)`.
pub fn draw_sphere_outline(
    mask: &mut Mask,
    intr: &CameraIntrinsics,
    center_cam: &Vector3<f64>,
    radius: f64,
) {
    let d = center_cam.norm();
    if d <= radius {
        return;
    }
    let axis = center_cam / d;
    let sin_b = radius / d;
    let cos_b = (1.0 - sin_b * sin_b).sqrt();
    if axis.z <= -sin_b {
        return;
    }
    let Some((u0, v0, u1, v1)) = silhouette_bbox(intr, &axis, cos_b, sin_b) else {
        return;
    };
    let cw = (u1 - u0 + 2) as usize;
    let ch = (v1 - v0 + 2) as usize;
    let mut inside = vec![false; cw * ch];
    for j in 0..ch {
        for i in 0..cw {
            let corner =
                nalgebra::Point2::new((u0 + i as i64) as f64 - 0.5, (v0 + j as i64) as f64 - 0.5);
            let ray = pixel_ray(intr, &corner).normalize();
            inside[j * cw + i] = ray.dot(&axis) >= cos_b;
        }
    }
    for j in 0..ch - 1 {
        for i in 0..cw - 1 {
            let c = [
                inside[j * cw + i],
                inside[j * cw + i + 1],
                inside[(j + 1) * cw + i],
                inside[(j + 1) * cw + i + 1],
            ];
            if c.iter().any(|&x| x) && c.iter().any(|&x| !x) {
                mask.set((u0 + i as i64) as u32, (v0 + j as i64) as u32, true);
            }
        }
    }
}

fn draw_arc(mask: &mut Mask, cx: f64, cy: f64, r: f64, start: f64, span: f64) {
    let steps = ((span * r) / 0.5).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let a = start + span * k as f64 / steps as f64;
        mask.set_checked(
            (cx + r * a.cos()).round() as i64,
            (cy + r * a.sin()).round() as i64,
        );
    }
}

/// Segmentation-oracle output for one camera frame, at the resolution of
/// `intr`.
pub fn render_mask(
    world: &SimWorld,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    noise: &SensorNoiseConfig,
    rng: &mut impl Rng,
) -> Mask {
    let mut outline = Mask::new(intr.width, intr.height);
    for b in world.alive() {
        let c = pose.inverse_transform(&b.center);
        draw_sphere_outline(&mut outline, intr, &c, b.radius);
    }
    let mut mask = outline.dilate3x3();
    if noise.mask_dropout_prob > 0.0 {
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) && rng.random_bool(noise.mask_dropout_prob) {
                    mask.set(x, y, false);
                }
            }
        }
    }
    if noise.clutter_components_per_frame > 0.0 {
        let n = Poisson::new(noise.clutter_components_per_frame)
            .expect("positive rate")
            .sample(rng) as usize;
        if n > 0 {
            let mut clutter = Mask::new(intr.width, intr.height);
            for _ in 0..n {
                let cx = rng.random_range(0.0..intr.width as f64);
                let cy = rng.random_range(0.0..intr.height as f64);
                let r = rng.random_range(4.0..30.0);
                let start = rng.random_range(0.0..std::f64::consts::TAU);
                let span = rng.random_range(0.3..1.2);
                draw_arc(&mut clutter, cx, cy, r, start, span);
            }
            let clutter = clutter.dilate3x3();
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    if clutter.get(x, y) {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    mask
}

/// Multiplies a camera-frame position estimate by `1 + σ·N(0, 1)`, a pure
/// range error along the viewing ray.
pub fn perturb_depth(p: &Vector3<f64>, frac: f64, rng: &mut impl Rng) -> Vector3<f64> {
    p * (1.0 + gaussian(rng, frac))
}

fn junk_reading(truth: f64, noise: &SensorNoiseConfig, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = (noise.laser_outlier_low, noise.laser_outlier_high);
    let band_lo = (truth - JUNK_EXCLUSION).clamp(lo, hi);
    let band_hi = (truth + JUNK_EXCLUSION).clamp(lo, hi);
    let band = band_hi - band_lo;
    if hi - lo - band <= 0.0 {
        return lo;
    }
    let u = rng.random_range(lo..hi - band);
    if u >= band_lo {
        u + band
    } else {
        u
    }
}

/// Downward laser range over flat ground.
///
/// Above [`LASER_MAX_RANGE`] every reading is junk that stays clear of the
/// true height. Below it, a reading is an outlier drawn from the outlier
/// range with `laser_outlier_prob`, otherwise the true height plus Gaussian
/// noise.
pub fn sense_laser(
    _world: &SimWorld,
    state: &MavSimState,
    noise: &SensorNoiseConfig,
    rng: &mut impl Rng,
) -> f64 {
    let truth = state.p.z;
    if truth > LASER_MAX_RANGE {
        return junk_reading(truth, noise, rng);
    }
    if noise.laser_outlier_prob > 0.0 && rng.random_bool(noise.laser_outlier_prob) {
        return rng.random_range(noise.laser_outlier_low..noise.laser_outlier_high);
    }
    truth + gaussian(rng, noise.laser_sigma)
}

/// Barometric height with a slow sinusoidal drift and white noise.
pub fn sense_baro(
    state: &MavSimState,
    noise: &SensorNoiseConfig,
    t: f64,
    rng: &mut impl Rng,
) -> f64 {
    let drift = noise.baro_drift_amp * (std::f64::consts::TAU * t / noise.baro_drift_period).sin();
    state.p.z + drift + gaussian(rng, noise.baro_sigma)
}
