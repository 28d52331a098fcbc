//! Balloon detection from a binary outline mask.
//!
//! The segmentation network is not part of this crate; its output is a
//! 480x270 mask where balloon outlines are 1 px wide and have been dilated
//! with a 3x3 structuring element. This module turns such a mask into circle
//! fits and 3D balloon centers in the camera frame.

use std::io::{self, BufRead, Write};

use nalgebra::{Matrix2, Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_ray, CameraIntrinsics};

pub const MASK_WIDTH: u32 = 480;
pub const MASK_HEIGHT: u32 = 270;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate fit: points are collinear or coincident")]
    Degenerate,
    #[error("zero angular radius")]
    ZeroAngularRadius,
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (P5) file")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0}, expected 255")]
    BadMaxval(u32),
}

/// Binary image, row-major, one byte per pixel (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[(y * self.width + x) as usize] = on as u8;
    }

    /// Sets a pixel given signed coordinates, ignoring anything off-image.
    #[inline]
    pub fn set_checked(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set(x as u32, y as u32, true);
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn dilate3x3(&self) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        let (w, h) = (self.width as i64, self.height as i64);
        for y in 0..h {
            for x in 0..w {
                if self.data[(y * w + x) as usize] == 0 {
                    continue;
                }
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        out.set_checked(x + dx, y + dy);
                    }
                }
            }
        }
        out
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| if v != 0 { 255 } else { 0 })
            .collect();
        w.write_all(&bytes)
    }

    pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Mask, PgmError> {
        let mut tokens = Vec::with_capacity(4);
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(PgmError::BadHeader("unexpected end of header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P5" {
            return Err(PgmError::BadMagic);
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| PgmError::BadHeader(s.to_owned()))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(PgmError::BadMaxval(maxval));
        }
        let mut data = vec![0u8; (width * height) as usize];
        r.read_exact(&mut data)?;
        for v in &mut data {
            *v = (*v != 0) as u8;
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub min_component_pixels: usize,
    /// Number of points sampled per component.
    pub sample_count: usize,
    /// Upper bound on the fitted radius in pixels (exclusive).
    pub lambda_radius: f64,
    /// Upper bound on the normalized residual in pixels (exclusive).
    pub lambda_res: f64,
    /// Physical balloon radius in meters.
    pub balloon_radius: f64,
    /// Components with a bounding-box aspect ratio above this are skipped.
    pub max_aspect: f64,
    pub sample_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_component_pixels: 30,
            sample_count: 1024,
            lambda_radius: 120.0,
            lambda_res: 1.5,
            balloon_radius: 0.3,
            max_aspect: 8.0,
            sample_seed: 0,
        }
    }
}

/// Name and description of the first invalid field, if any.
pub type ConfigIssue = (&'static str, String);

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigIssue> {
        if self.sample_count < 3 {
            return Err((
                "sample_count",
                format!("must be >= 3, got {}", self.sample_count),
            ));
        }
        if !(self.lambda_radius > 0.0) {
            return Err((
                "lambda_radius",
                format!("must be > 0, got {}", self.lambda_radius),
            ));
        }
        if !(self.lambda_res > 0.0) {
            return Err((
                "lambda_res",
                format!("must be > 0, got {}", self.lambda_res),
            ));
        }
        if !(self.balloon_radius > 0.0) {
            return Err((
                "balloon_radius",
                format!("must be > 0, got {}", self.balloon_radius),
            ));
        }
        if !(self.max_aspect >= 1.0) {
            return Err((
                "max_aspect",
                format!("must be >= 1, got {}", self.max_aspect),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: Point2<f64>,
    pub radius: f64,
    pub residual: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub fit: CircleFit,
    /// Balloon center in the camera frame, meters.
    pub position: Vector3<f64>,
    pub component_pixels: usize,
}

/// A connected set of mask pixels, listed in scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<(u32, u32)>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn aspect_ratio(&self) -> f64 {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for &(x, y) in &self.pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let w = (x1 - x0 + 1) as f64;
        let h = (y1 - y0 + 1) as f64;
        w.max(h) / w.min(h)
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

/// 8-connected components with at least `min_pixels` pixels, largest first.
/// Equal sizes keep scan order of their first pixel.
pub fn connected_components(mask: &Mask, min_pixels: usize) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    const NONE: u32 = u32::MAX;
    let mut label = vec![NONE; (w * h) as usize];
    let mut parent: Vec<u32> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut current = NONE;
            // Already-visited neighbours: W, NW, N, NE.
            let neighbours = [
                (x.checked_sub(1), Some(y)),
                (x.checked_sub(1), y.checked_sub(1)),
                (Some(x), y.checked_sub(1)),
                (if x + 1 < w { Some(x + 1) } else { None }, y.checked_sub(1)),
            ];
            for (nx, ny) in neighbours {
                let (Some(nx), Some(ny)) = (nx, ny) else {
                    continue;
                };
                let l = label[(ny * w + nx) as usize];
                if l == NONE {
                    continue;
                }
                if current == NONE {
                    current = find(&mut parent, l);
                } else {
                    let a = find(&mut parent, current);
                    let b = find(&mut parent, l);
                    if a != b {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi as usize] = lo;
                        current = lo;
                    }
                }
            }
            if current == NONE {
                current = parent.len() as u32;
                parent.push(current);
            }
            label[(y * w + x) as usize] = current;
        }
    }

    let mut slot = vec![NONE; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = label[(y * w + x) as usize];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if slot[root] == NONE {
                slot[root] = components.len() as u32;
                components.push(Component { pixels: Vec::new() });
            }
            components[slot[root] as usize].pixels.push((x, y));
        }
    }
    components.retain(|c| c.len() >= min_pixels);
    // stable: ties stay in scan order of first pixel
    components.sort_by(|a, b| b.len().cmp(&a.len()));
    components
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Picks `n` pixels with a uniform stride over the component's pixels ordered
/// by angle about its bounding-box center, starting at a seed-dependent
/// offset. Components smaller than `n` are sampled with repetition.
pub fn sample_contour_points(component: &Component, n: usize, seed: u64) -> Vec<Point2<f64>> {
    let len = component.len();
    if len == 0 || n == 0 {
        return Vec::new();
    }
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in &component.pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let mid_x = (x0 + x1) as f64 / 2.0;
    let mid_y = (y0 + y1) as f64 / 2.0;
    let mut ordered: Vec<(f64, (u32, u32))> = component
        .pixels
        .iter()
        .map(|&(x, y)| ((y as f64 - mid_y).atan2(x as f64 - mid_x), (x, y)))
        .collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

    let stride = len as f64 / n as f64;
    let unit = (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64;
    let offset = if len >= n { unit * stride } else { 0.0 };
    (0..n)
        .map(|k| {
            let idx = ((offset + k as f64 * stride).floor() as usize).min(len - 1);
            let (x, y) = ordered[idx].1;
            Point2::new(x as f64, y as f64)
        })
        .collect()
}

/// Sum of squared deviations of point distances from their mean, and the mean.
pub fn circle_cost(points: &[Point2<f64>], center: &Point2<f64>) -> (f64, f64) {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| (p - center).norm()).sum::<f64>() / n;
    let cost = points
        .iter()
        .map(|p| ((p - center).norm() - mean).powi(2))
        .sum();
    (cost, mean)
}

/// Algebraic (Kasa) circle fit, used to seed the geometric refinement.
fn kasa_center(points: &[Point2<f64>]) -> Result<Point2<f64>, FitError> {
    let n = points.len() as f64;
    let centroid = points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p.coords)
        / n;
    let scale = points
        .iter()
        .map(|p| (p.coords - centroid).norm())
        .fold(0.0, f64::max);
    if scale < 1e-12 {
        return Err(FitError::Degenerate);
    }
    // Solve min sum (x^2 + y^2 + D x + E y + F)^2 in normalized coordinates.
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let q = (p.coords - centroid) / scale;
        let row = Vector3::new(q.x, q.y, 1.0);
        ata += row * row.transpose();
        atb -= row * q.norm_squared();
    }
    let lu = ata.lu();
    if lu.determinant().abs() < 1e-10 * n.powi(3) {
        return Err(FitError::Degenerate);
    }
    let sol = lu.solve(&atb).ok_or(FitError::Degenerate)?;
    let c = Vector2::new(-sol.x / 2.0, -sol.y / 2.0);
    if !c.iter().all(|v| v.is_finite()) {
        return Err(FitError::Degenerate);
    }
    Ok(Point2::from(c * scale + centroid))
}

/// Geometric circle fit: the center minimizing the variance of point
/// distances, initialized algebraically and refined with Gauss-Newton.
pub fn fit_circle(points: &[Point2<f64>]) -> Result<CircleFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let mut center = kasa_center(points)?;
    let (mut cost, _) = circle_cost(points, &center);
    let n = points.len() as f64;

    for _ in 0..50 {
        let mut u = Vec::with_capacity(points.len());
        let mut rho = Vec::with_capacity(points.len());
        for p in points {
            let d = p - center;
            let r = d.norm();
            rho.push(r);
            u.push(if r > 0.0 { d / r } else { Vector2::zeros() });
        }
        let mean_rho = rho.iter().sum::<f64>() / n;
        let mean_u = u.iter().fold(Vector2::zeros(), |acc, v| acc + v) / n;
        let mut jtj = Matrix2::zeros();
        let mut jte = Vector2::zeros();
        for (r, ui) in rho.iter().zip(&u) {
            let j = mean_u - ui;
            let e = r - mean_rho;
            jtj += j * j.transpose();
            jte += j * e;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jte)) else {
            break;
        };
        // halve until the cost does not increase
        let mut scale = 1.0;
        let mut accepted = None;
        while scale > 1e-6 {
            let candidate = center + step * scale;
            let (c, _) = circle_cost(points, &candidate);
            if c <= cost {
                accepted = Some((candidate, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_cost)) = accepted else {
            break;
        };
        let moved = (next - center).norm();
        center = next;
        cost = next_cost;
        if moved < 1e-9 {
            break;
        }
    }

    let (cost, radius) = circle_cost(points, &center);
    if !(radius > 0.0) || !center.coords.iter().all(|v| v.is_finite()) {
        return Err(FitError::Degenerate);
    }
    Ok(CircleFit {
        center,
        radius,
        residual: (cost / n).sqrt(),
        n_points: points.len(),
    })
}

/// Both the size and the residual gate are strict.
pub fn validate(fit: &CircleFit, cfg: &DetectorConfig) -> bool {
    fit.radius < cfg.lambda_radius && fit.residual < cfg.lambda_res
}

/// 3D balloon center from the pixel circle and the known balloon radius.
///
/// Back-projects the circle center and the point one radius to its right to
/// unit depth, takes the angle `alpha` between the two rays and scales the
/// center ray by `R / tan(alpha)`.
pub fn estimate_3d(
    fit: &CircleFit,
    intr: &CameraIntrinsics,
    balloon_radius: f64,
) -> Result<Vector3<f64>, FitError> {
    let p1 = pixel_ray(intr, &fit.center);
    let p2 = pixel_ray(intr, &Point2::new(fit.center.x + fit.radius, fit.center.y));
    let cos_alpha = (p1.dot(&p2) / (p1.norm() * p2.norm())).clamp(-1.0, 1.0);
    let alpha = cos_alpha.acos();
    let tan_alpha = alpha.tan();
    if !(tan_alpha > 0.0) || !tan_alpha.is_finite() {
        return Err(FitError::ZeroAngularRadius);
    }
    Ok(p1 * (balloon_radius / tan_alpha))
}

/// Full postprocessing pipeline. `intr` may be given at the full camera
/// resolution; it is rescaled to the mask size before back-projection.
pub fn detect(mask: &Mask, intr: &CameraIntrinsics, cfg: &DetectorConfig) -> Vec<Detection> {
    let intr = if intr.width != mask.width() || intr.height != mask.height() {
        intr.scaled_to(mask.width(), mask.height())
    } else {
        *intr
    };
    connected_components(mask, cfg.min_component_pixels)
        .iter()
        .enumerate()
        .filter(|(_, c)| c.aspect_ratio() <= cfg.max_aspect)
        .filter_map(|(i, c)| {
            let seed = cfg.sample_seed ^ splitmix64(i as u64);
            let points = sample_contour_points(c, cfg.sample_count, seed);
            let fit = fit_circle(&points).ok()?;
            if !validate(&fit, cfg) {
                return None;
            }
            let position = estimate_3d(&fit, &intr, cfg.balloon_radius).ok()?;
            Some(Detection {
                fit,
                position,
                component_pixels: c.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Thin 8-connected circle outline by dense angular stepping, then dilated.
    fn ring(mask: &mut Mask, cx: f64, cy: f64, r: f64) {
        let steps = (r * 16.0).max(64.0) as usize;
        let mut thin = Mask::new(mask.width(), mask.height());
        for k in 0..steps {
            let t = k as f64 / steps as f64 * std::f64::consts::TAU;
            thin.set_checked(
                (cx + r * t.cos()).round() as i64,
                (cy + r * t.sin()).round() as i64,
            );
        }
        let d = thin.dilate3x3();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if d.get(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
    }

    fn circle_points(c: (f64, f64), r: f64, n: usize) -> Vec<Point2<f64>> {
        (0..n)
            .map(|k| {
                let t = k as f64 / n as f64 * std::f64::consts::TAU;
                Point2::new(c.0 + r * t.cos(), c.1 + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        assert!(connected_components(&m, 1).is_empty());
        assert!(detect(&m, &default_intr(), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn single_outline_is_one_component_of_its_pixel_count() {
        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        ring(&mut m, 100.0, 100.0, 11.0);
        let expected = m.count();
        let comps = connected_components(&m, 50);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), expected);
    }

    #[test]
    fn small_components_are_filtered_and_order_is_by_size() {
        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        ring(&mut m, 300.0, 120.0, 5.0);
        ring(&mut m, 100.0, 100.0, 20.0);
        let sizes: Vec<_> = connected_components(&m, 1)
            .iter()
            .map(Component::len)
            .collect();
        assert_eq!(sizes.len(), 2);
        assert!(sizes[0] > sizes[1]);
        let small = sizes[1];
        assert_eq!(connected_components(&m, small + 1).len(), 1);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = Mask::new(10, 10);
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(3, 1, true);
        let comps = connected_components(&m, 1);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixels, vec![(1, 1), (3, 1), (2, 2)]);
    }

    #[test]
    fn sampling_exact_size_and_repetition_and_determinism() {
        let comp = Component {
            pixels: (0..32).map(|i| (i, 0)).collect(),
        };
        let pts = sample_contour_points(&comp, 32, 99);
        assert_eq!(pts.len(), 32);
        let mut xs: Vec<_> = pts.iter().map(|p| p.x as u32).collect();
        xs.sort();
        assert_eq!(xs, (0..32).collect::<Vec<_>>());

        let small = Component {
            pixels: vec![(0, 0), (1, 0), (2, 0)],
        };
        let pts = sample_contour_points(&small, 10, 3);
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|p| p.x <= 2.0));

        assert_eq!(
            sample_contour_points(&comp, 8, 5),
            sample_contour_points(&comp, 8, 5)
        );
    }

    #[test]
    fn sampled_points_cover_circle_evenly() {
        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        ring(&mut m, 200.0, 130.0, 40.0);
        let comp = &connected_components(&m, 1)[0];
        for seed in 0..20 {
            let pts = sample_contour_points(comp, 32, seed);
            let mut angles: Vec<f64> = pts
                .iter()
                .map(|p| (p.y - 130.0).atan2(p.x - 200.0))
                .collect();
            angles.sort_by(f64::total_cmp);
            let mut max_gap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
            for w in angles.windows(2) {
                max_gap = max_gap.max(w[1] - w[0]);
            }
            assert!(
                max_gap <= 3.0 * std::f64::consts::TAU / 32.0,
                "seed {seed}: gap {max_gap}"
            );
        }
    }

    #[test]
    fn exact_circle_fit() {
        let fit = fit_circle(&circle_points((100.0, 80.0), 40.0, 32)).unwrap();
        assert_relative_eq!(fit.center.x, 100.0, epsilon = 1e-6);
        assert_relative_eq!(fit.center.y, 80.0, epsilon = 1e-6);
        assert_relative_eq!(fit.radius, 40.0, epsilon = 1e-6);
        assert!(fit.residual < 1e-6);
        assert_eq!(fit.n_points, 32);
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![Point2::new(5.0, 5.0); 10];
        assert_eq!(fit_circle(&same), Err(FitError::Degenerate));
        let line: Vec<_> = (0..10)
            .map(|i| Point2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert_eq!(fit_circle(&line), Err(FitError::Degenerate));
        assert_eq!(fit_circle(&same[..2]), Err(FitError::TooFewPoints(2)));
    }

    /// Exhaustive search of the cost on a regular grid around `guess`.
    fn grid_search(
        points: &[Point2<f64>],
        guess: Point2<f64>,
        half: f64,
        step: f64,
    ) -> Point2<f64> {
        let n = (half / step).round() as i64;
        let mut best = (f64::INFINITY, guess);
        for i in -n..=n {
            for j in -n..=n {
                let c = Point2::new(guess.x + i as f64 * step, guess.y + j as f64 * step);
                let (cost, _) = circle_cost(points, &c);
                if cost < best.0 {
                    best = (cost, c);
                }
            }
        }
        best.1
    }

    #[test]
    fn noisy_fit_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let truth = (150.0, 120.0);
        let pts: Vec<_> = circle_points(truth, 40.0, 32)
            .into_iter()
            .map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
            .collect();
        let fit = fit_circle(&pts).unwrap();
        let grid = grid_search(&pts, Point2::new(truth.0, truth.1), 2.0, 0.05);
        assert!((fit.center - grid).norm() < 0.1);
        assert!((fit.center - Point2::new(truth.0, truth.1)).norm() < 1.0);
    }

    #[test]
    fn validation_gates_are_strict() {
        let cfg = DetectorConfig {
            lambda_radius: 200.0,
            lambda_res: 2.0,
            ..Default::default()
        };
        let mut fit = CircleFit {
            center: Point2::new(0.0, 0.0),
            radius: 20.0,
            residual: 0.5,
            n_points: 10,
        };
        assert!(validate(&fit, &cfg));
        fit.radius = 200.0;
        assert!(!validate(&fit, &cfg));
        fit.radius = 250.0;
        fit.residual = 0.0;
        assert!(!validate(&fit, &cfg));
        fit.radius = 20.0;
        fit.residual = 2.0;
        assert!(!validate(&fit, &cfg));
    }

    fn default_intr() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 240.0, 135.0, MASK_WIDTH, MASK_HEIGHT).unwrap()
    }

    #[test]
    fn depth_from_radius() {
        let intr = default_intr();
        let fit = |r| CircleFit {
            center: Point2::new(240.0, 135.0),
            radius: r,
            residual: 0.0,
            n_points: 32,
        };
        let p = estimate_3d(&fit(60.0), &intr, 0.3).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-9);
        let p = estimate_3d(&fit(6.0), &intr, 0.3).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 30.0), epsilon = 1e-9);
        assert_eq!(
            estimate_3d(&fit(0.0), &intr, 0.3),
            Err(FitError::ZeroAngularRadius)
        );
    }

    #[test]
    fn detect_ignores_specks_and_counts_outlines() {
        let intr = default_intr();
        let cfg = DetectorConfig::default();
        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        ring(&mut m, 120.0, 100.0, 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            m.set_checked(rng.random_range(300..470), rng.random_range(10..260));
        }
        assert_eq!(detect(&m, &intr, &cfg).len(), 1);

        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        for (i, r) in [30.0, 20.0, 15.0, 10.0, 6.0].iter().enumerate() {
            ring(&mut m, 50.0 + 90.0 * i as f64, 135.0, *r);
        }
        let dets = detect(&m, &intr, &cfg);
        assert_eq!(dets.len(), 5);
        // largest component first
        assert!(dets
            .windows(2)
            .all(|w| w[0].component_pixels >= w[1].component_pixels));
        assert!(dets.iter().all(|d| d.position.z > 0.0));
    }

    #[test]
    fn elongated_components_are_skipped() {
        let mut m = Mask::new(MASK_WIDTH, MASK_HEIGHT);
        for x in 10..200 {
            m.set(x, 50, true);
            m.set(x, 51, true);
        }
        assert!(detect(&m, &default_intr(), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn pgm_round_trip() {
        let mut m = Mask::new(17, 5);
        m.set(3, 2, true);
        m.set(16, 4, true);
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n17 5\n255\n"));
        let back = Mask::read_pgm(&buf[..]).unwrap();
        assert_eq!(back, m);
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\x07";
        let m = Mask::read_pgm(&with_comment[..]).unwrap();
        assert!(!m.get(0, 0) && m.get(1, 0));
        assert!(matches!(
            Mask::read_pgm(&b"P2\n1 1\n255\n0"[..]),
            Err(PgmError::BadMagic)
        ));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = DetectorConfig {
            lambda_res: -1.0,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().0, "lambda_res");
    }

    fn cost_gradient(points: &[Point2<f64>], c: &Point2<f64>, h: f64) -> Vector2<f64> {
        let f = |dx: f64, dy: f64| circle_cost(points, &Point2::new(c.x + dx, c.y + dy)).0;
        Vector2::new(
            (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h),
            (f(0.0, h) - f(0.0, -h)) / (2.0 * h),
        )
    }

    proptest! {
        #[test]
        fn fit_is_stationary_and_translation_equivariant(
            cx in 50.0f64..400.0, cy in 50.0f64..200.0, r in 5.0f64..80.0,
            seed in 0u64..1000, tx in -100.0f64..100.0, ty in -100.0f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.8).unwrap();
            let pts: Vec<_> = circle_points((cx, cy), r, 48)
                .into_iter()
                .map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
                .collect();
            let fit = fit_circle(&pts).unwrap();
            prop_assert!(cost_gradient(&pts, &fit.center, 1e-4).norm() < 1e-3);

            let t = Vector2::new(tx, ty);
            let moved: Vec<_> = pts.iter().map(|p| p + t).collect();
            let fit2 = fit_circle(&moved).unwrap();
            prop_assert!((fit2.center - (fit.center + t)).norm() < 1e-9 * 100.0);
            prop_assert!((fit2.radius - fit.radius).abs() < 1e-9);
            prop_assert!((fit2.residual - fit.residual).abs() < 1e-9);
        }
    }
}
