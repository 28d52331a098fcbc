//! Multi-hypothesis balloon filter.
//!
//! Egocentric detections are transformed into the field frame by the caller
//! and arrive here as rays from the camera center through the detected
//! balloon center. Each hypothesis keeps the last eight associated
//! detections and reports their mean as its position.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{project_point, CameraIntrinsics, CameraPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub assign_threshold: f64,
    pub merge_threshold: f64,
    pub corridor_low: f64,
    pub corridor_high: f64,
    pub confirm_count: usize,
    pub missed_limit: u32,
    pub pop_radius: f64,
    pub history_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            assign_threshold: 2.0,
            merge_threshold: 2.0,
            corridor_low: 1.5,
            corridor_high: 5.0,
            confirm_count: 8,
            missed_limit: 30,
            pop_radius: 0.5,
            history_len: 8,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("assign_threshold", self.assign_threshold),
            ("merge_threshold", self.merge_threshold),
            ("corridor_high", self.corridor_high),
            ("pop_radius", self.pop_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.corridor_low < self.corridor_high) {
            return Err(("corridor_low", "must be below corridor_high".into()));
        }
        if self.history_len == 0 {
            return Err(("history_len", "must be > 0".into()));
        }
        if self.confirm_count == 0 || self.confirm_count > self.history_len {
            return Err((
                "confirm_count",
                format!("must be in 1..={}", self.history_len),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Distance from the hypothesis to the detection's camera ray.
    Ray,
    /// Horizontal distance between hypothesis and detection.
    Ground,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRay {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub endpoint: Vector3<f64>,
}

impl DetectionRay {
    /// Ray from the camera center through a detection, both in the field frame.
    /// Returns `None` if the two points coincide.
    pub fn new(origin: Vector3<f64>, endpoint: Vector3<f64>) -> Option<Self> {
        let d = endpoint - origin;
        let n = d.norm();
        (n > 0.0).then(|| Self {
            origin,
            direction: d / n,
            endpoint,
        })
    }
}

pub fn height_gate(point: &Vector3<f64>, cfg: &FilterConfig) -> bool {
    point.z >= cfg.corridor_low && point.z <= cfg.corridor_high
}

/// Distance from `p` to the half-line starting at the ray origin.
pub fn ray_distance(p: &Vector3<f64>, ray: &DetectionRay) -> f64 {
    let rel = p - ray.origin;
    let t = rel.dot(&ray.direction).max(0.0);
    (rel - ray.direction * t).norm()
}

pub fn ground_distance(p: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    (p.xy() - d.xy()).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalloonHypothesis {
    pub id: u64,
    /// `(sequence number, position)`, most recent first.
    pub history: VecDeque<(u64, Vector3<f64>)>,
    pub position: Vector3<f64>,
    pub missed_count: u32,
}

impl BalloonHypothesis {
    fn recompute(&mut self) {
        let sum = self
            .history
            .iter()
            .fold(Vector3::zeros(), |acc, (_, p)| acc + p);
        self.position = sum / self.history.len() as f64;
    }

    pub fn detections(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedTarget {
    pub id: u64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalloonFilter {
    pub cfg: FilterConfig,
    pub metric: DistanceMetric,
    hypotheses: Vec<BalloonHypothesis>,
    next_id: u64,
    next_seq: u64,
    assigned: BTreeSet<u64>,
}

impl BalloonFilter {
    pub fn new(cfg: FilterConfig, metric: DistanceMetric) -> Self {
        Self {
            cfg,
            metric,
            hypotheses: Vec::new(),
            next_id: 0,
            next_seq: 0,
            assigned: BTreeSet::new(),
        }
    }

    pub fn hypotheses(&self) -> &[BalloonHypothesis] {
        &self.hypotheses
    }

    pub fn get(&self, id: u64) -> Option<&BalloonHypothesis> {
        self.hypotheses.iter().find(|h| h.id == id)
    }

    /// Number of detections ever accepted into the filter.
    pub fn detections_processed(&self) -> u64 {
        self.next_seq
    }

    pub fn begin_frame(&mut self) {
        self.assigned.clear();
    }

    fn distance(&self, h: &BalloonHypothesis, ray: &DetectionRay) -> f64 {
        match self.metric {
            DistanceMetric::Ray => ray_distance(&h.position, ray),
            DistanceMetric::Ground => ground_distance(&h.position, &ray.endpoint),
        }
    }

    /// Associates each detection, in order, with its nearest hypothesis or
    /// starts a new one.
    pub fn assign(&mut self, rays: &[DetectionRay]) {
        for ray in rays {
            let seq = self.next_seq;
            self.next_seq += 1;
            let best = self
                .hypotheses
                .iter()
                .enumerate()
                .map(|(i, h)| (i, self.distance(h, ray)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, d)) if d < self.cfg.assign_threshold => {
                    let h = &mut self.hypotheses[i];
                    h.history.push_front((seq, ray.endpoint));
                    h.history.truncate(self.cfg.history_len);
                    h.recompute();
                    h.missed_count = 0;
                    self.assigned.insert(h.id);
                }
                _ => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.hypotheses.push(BalloonHypothesis {
                        id,
                        history: VecDeque::from([(seq, ray.endpoint)]),
                        position: ray.endpoint,
                        missed_count: 0,
                    });
                    self.assigned.insert(id);
                }
            }
        }
    }

    /// Repeatedly merges the closest pair of hypotheses below the merge
    /// threshold. The older hypothesis survives.
    pub fn merge(&mut self) {
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.hypotheses.len() {
                for j in i + 1..self.hypotheses.len() {
                    let d = (self.hypotheses[i].position - self.hypotheses[j].position).norm();
                    if d >= self.cfg.merge_threshold {
                        continue;
                    }
                    let (a, b) = (&self.hypotheses[i], &self.hypotheses[j]);
                    let key = (a.id.min(b.id), a.id.max(b.id));
                    let better = match best {
                        None => true,
                        Some((bd, bi, bj)) => {
                            let bkey = {
                                let (x, y) = (&self.hypotheses[bi], &self.hypotheses[bj]);
                                (x.id.min(y.id), x.id.max(y.id))
                            };
                            d < bd || (d == bd && key < bkey)
                        }
                    };
                    if better {
                        best = Some((d, i, j));
                    }
                }
            }
            let Some((_, i, j)) = best else { break };
            let (keep, drop) = if self.hypotheses[i].id < self.hypotheses[j].id {
                (i, j)
            } else {
                (j, i)
            };
            let dropped = self.hypotheses[drop].clone();
            let survivor = &mut self.hypotheses[keep];
            let mut combined: Vec<_> = survivor
                .history
                .iter()
                .chain(dropped.history.iter())
                .copied()
                .collect();
            combined.sort_by(|a, b| b.0.cmp(&a.0));
            combined.truncate(self.cfg.history_len);
            survivor.history = combined.into();
            survivor.recompute();
            survivor.missed_count = survivor.missed_count.min(dropped.missed_count);
            if self.assigned.remove(&dropped.id) {
                self.assigned.insert(survivor.id);
            }
            self.hypotheses.remove(drop);
        }
    }

    /// Counts a miss for every hypothesis that projects into the image but was
    /// not associated this frame, and removes those past the miss limit.
    pub fn update_visibility(&mut self, pose: &CameraPose, intr: &CameraIntrinsics) {
        for h in &mut self.hypotheses {
            if self.assigned.contains(&h.id) {
                continue;
            }
            let visible = project_point(intr, pose, &h.position)
                .pixel()
                .is_some_and(|px| intr.contains(&px));
            if visible {
                h.missed_count += 1;
            }
        }
        let limit = self.cfg.missed_limit;
        self.hypotheses.retain(|h| h.missed_count <= limit);
    }

    /// One camera frame: gate, associate, merge, then prune by visibility.
    /// Rays whose endpoint is outside the height corridor are dropped.
    pub fn process_frame(
        &mut self,
        pose: &CameraPose,
        intr: &CameraIntrinsics,
        rays: &[DetectionRay],
    ) {
        self.begin_frame();
        let gated: Vec<DetectionRay> = rays
            .iter()
            .filter(|r| height_gate(&r.endpoint, &self.cfg))
            .copied()
            .collect();
        self.assign(&gated);
        self.merge();
        self.update_visibility(pose, intr);
    }

    /// Hypotheses with enough detections, nearest to `mav_pos` first.
    pub fn confirmed(&self, mav_pos: &Vector3<f64>) -> Vec<ConfirmedTarget> {
        let mut out: Vec<(f64, ConfirmedTarget)> = self
            .hypotheses
            .iter()
            .filter(|h| h.history.len() >= self.cfg.confirm_count)
            .map(|h| {
                (
                    (h.position - mav_pos).norm(),
                    ConfirmedTarget {
                        id: h.id,
                        position: h.position,
                    },
                )
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        out.into_iter().map(|(_, t)| t).collect()
    }

    /// Removes and returns hypotheses the MAV has flown over.
    pub fn mark_popped(&mut self, mav_pos: &Vector3<f64>) -> Vec<BalloonHypothesis> {
        let radius = self.cfg.pop_radius;
        let (popped, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.hypotheses)
            .into_iter()
            .partition(|h| ground_distance(&h.position, mav_pos) <= radius);
        self.hypotheses = kept;
        popped
    }

    pub fn dump_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.hypotheses).expect("hypotheses serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ray_to(endpoint: Vector3<f64>) -> DetectionRay {
        DetectionRay::new(Vector3::new(0.0, 0.0, 4.0), endpoint).unwrap()
    }

    fn filter(metric: DistanceMetric) -> BalloonFilter {
        BalloonFilter::new(FilterConfig::default(), metric)
    }

    #[test]
    fn corridor_is_inclusive() {
        let cfg = FilterConfig::default();
        assert!(height_gate(&Vector3::new(0.0, 0.0, 2.8), &cfg));
        assert!(!height_gate(&Vector3::new(0.0, 0.0, 1.0), &cfg));
        assert!(height_gate(&Vector3::new(0.0, 0.0, 1.5), &cfg));
        assert!(height_gate(&Vector3::new(0.0, 0.0, 5.0), &cfg));
        assert!(!height_gate(&Vector3::new(0.0, 0.0, 5.01), &cfg));
    }

    #[test]
    fn ray_distance_examples() {
        let ray = DetectionRay::new(Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(ray_distance(&Vector3::new(4.0, 0.0, 0.0), &ray), 0.0);
        assert_relative_eq!(ray_distance(&Vector3::new(5.0, 3.0, 0.0), &ray), 3.0);
        assert_relative_eq!(ray_distance(&Vector3::new(-2.0, 0.0, 0.0), &ray), 2.0);
    }

    #[test]
    fn ground_distance_examples() {
        assert_eq!(
            ground_distance(&Vector3::new(0.0, 0.0, 2.8), &Vector3::new(0.0, 0.0, 5.0)),
            0.0
        );
        assert_relative_eq!(
            ground_distance(&Vector3::new(1.0, 2.0, 0.0), &Vector3::new(4.0, 6.0, 9.0)),
            5.0
        );
    }

    #[test]
    fn assignment_creates_and_accumulates() {
        let mut f = filter(DistanceMetric::Ray);
        f.assign(&[ray_to(Vector3::new(10.0, 0.0, 2.8))]);
        assert_eq!(f.hypotheses().len(), 1);
        assert_eq!(f.hypotheses()[0].detections(), 1);

        // 2.5 m off the only hypothesis along every metric
        f.assign(&[ray_to(
            Vector3::new(10.0, 2.5, 2.8) + Vector3::new(0.0, 0.0, 0.0),
        )]);
        let far = ray_distance(
            &f.hypotheses()[0].position,
            &ray_to(Vector3::new(10.0, 2.5, 2.8)),
        );
        assert!(far >= 2.0);
        assert_eq!(f.hypotheses().len(), 2);

        let mut f = filter(DistanceMetric::Ground);
        for _ in 0..8 {
            f.assign(&[ray_to(Vector3::new(1.0, 2.0, 2.8))]);
        }
        assert_eq!(f.hypotheses().len(), 1);
        assert_eq!(f.hypotheses()[0].detections(), 8);
        assert_relative_eq!(
            f.hypotheses()[0].position,
            Vector3::new(1.0, 2.0, 2.8),
            epsilon = 1e-12
        );
        f.assign(&[ray_to(Vector3::new(1.0, 2.0, 2.8))]);
        assert_eq!(f.hypotheses()[0].detections(), 8);
    }

    fn with_hypotheses(points: &[Vector3<f64>]) -> BalloonFilter {
        let mut f = filter(DistanceMetric::Ground);
        // ground metric and widely separated creation avoids association
        f.cfg.assign_threshold = 1e-9;
        for p in points {
            f.assign(&[ray_to(*p)]);
        }
        f.cfg.assign_threshold = 2.0;
        f
    }

    #[test]
    fn merge_threshold() {
        let mut f = with_hypotheses(&[Vector3::new(0.0, 0.0, 2.8), Vector3::new(1.9, 0.0, 2.8)]);
        f.merge();
        assert_eq!(f.hypotheses().len(), 1);
        assert_eq!(f.hypotheses()[0].id, 0);
        assert_relative_eq!(
            f.hypotheses()[0].position,
            Vector3::new(0.95, 0.0, 2.8),
            epsilon = 1e-12
        );

        let mut f = with_hypotheses(&[Vector3::new(0.0, 0.0, 2.8), Vector3::new(2.1, 0.0, 2.8)]);
        f.merge();
        assert_eq!(f.hypotheses().len(), 2);
    }

    #[test]
    fn mutually_close_triple_merges_to_one() {
        let mut f = with_hypotheses(&[
            Vector3::new(0.0, 0.0, 2.8),
            Vector3::new(1.0, 0.0, 2.8),
            Vector3::new(0.5, 0.8, 2.8),
        ]);
        f.merge();
        assert_eq!(f.hypotheses().len(), 1);
        assert_eq!(f.hypotheses()[0].detections(), 3);
    }

    #[test]
    fn merge_keeps_recent_history_and_smaller_miss_count() {
        let mut f = with_hypotheses(&[Vector3::new(0.0, 0.0, 2.8), Vector3::new(5.0, 0.0, 2.8)]);
        for _ in 0..6 {
            f.assign(&[ray_to(Vector3::new(0.0, 0.0, 2.8))]);
            f.assign(&[ray_to(Vector3::new(5.0, 0.0, 2.8))]);
        }
        f.hypotheses[0].missed_count = 7;
        f.hypotheses[1].missed_count = 3;
        f.hypotheses[1].position = Vector3::new(1.0, 0.0, 2.8);
        f.merge();
        let h = &f.hypotheses()[0];
        assert_eq!(h.missed_count, 3);
        assert_eq!(h.detections(), 8);
        let seqs: Vec<u64> = h.history.iter().map(|e| e.0).collect();
        assert_eq!(seqs, vec![13, 12, 11, 10, 9, 8, 7, 6]);
    }

    fn looking_along_x() -> (CameraPose, CameraIntrinsics) {
        let intr = CameraIntrinsics::new(600.0, 600.0, 240.0, 135.0, 480, 270).unwrap();
        (
            CameraPose::forward_looking(Vector3::new(0.0, 0.0, 2.8), 0.0, 0.0),
            intr,
        )
    }

    #[test]
    fn invisible_hypothesis_is_not_penalised() {
        let (pose, intr) = looking_along_x();
        let mut f = with_hypotheses(&[Vector3::new(-10.0, 0.0, 2.8)]);
        for _ in 0..100 {
            f.process_frame(&pose, &intr, &[]);
        }
        assert_eq!(f.hypotheses()[0].missed_count, 0);
    }

    #[test]
    fn visible_hypothesis_removed_after_thirty_one_misses() {
        let (pose, intr) = looking_along_x();
        let mut f = with_hypotheses(&[Vector3::new(10.0, 0.0, 2.8)]);
        for frame in 1..=31 {
            f.process_frame(&pose, &intr, &[]);
            if frame <= 30 {
                assert_eq!(f.hypotheses().len(), 1, "frame {frame}");
            }
        }
        assert!(f.hypotheses().is_empty());
    }

    #[test]
    fn redetection_resets_miss_counter() {
        let (pose, intr) = looking_along_x();
        let origin = pose.translation;
        let target = Vector3::new(10.0, 0.0, 2.8);
        let mut f = with_hypotheses(&[target]);
        for frame in 1..=60 {
            let rays = if frame == 29 {
                vec![DetectionRay::new(origin, target).unwrap()]
            } else {
                vec![]
            };
            f.process_frame(&pose, &intr, &rays);
        }
        // reset at frame 29 leaves 31 misses by frame 60
        assert!(f.hypotheses().is_empty());
        let mut f = with_hypotheses(&[target]);
        for frame in 1..=59 {
            let rays = if frame == 29 {
                vec![DetectionRay::new(origin, target).unwrap()]
            } else {
                vec![]
            };
            f.process_frame(&pose, &intr, &rays);
        }
        assert_eq!(f.hypotheses().len(), 1);
        assert_eq!(f.hypotheses()[0].missed_count, 30);
    }

    #[test]
    fn confirmation_and_ordering() {
        let mut f = filter(DistanceMetric::Ray);
        assert!(f.confirmed(&Vector3::zeros()).is_empty());
        for _ in 0..7 {
            f.assign(&[ray_to(Vector3::new(10.0, 0.0, 2.8))]);
        }
        assert!(f.confirmed(&Vector3::zeros()).is_empty());
        for _ in 0..8 {
            f.assign(&[ray_to(Vector3::new(-4.0, 0.0, 2.8))]);
        }
        f.assign(&[ray_to(Vector3::new(10.0, 0.0, 2.8))]);
        let c = f.confirmed(&Vector3::new(0.0, 0.0, 2.8));
        assert_eq!(c.len(), 2);
        assert_relative_eq!(c[0].position.x, -4.0);
        assert_relative_eq!(c[1].position.x, 10.0);
    }

    #[test]
    fn popping_by_ground_distance() {
        let mut f = with_hypotheses(&[Vector3::new(3.2, 4.1, 2.8), Vector3::new(20.0, 0.0, 2.8)]);
        let popped = f.mark_popped(&Vector3::new(3.0, 4.0, 4.0));
        assert_eq!(popped.len(), 1);
        assert_eq!(f.hypotheses().len(), 1);

        let mut f = with_hypotheses(&[Vector3::new(3.6, 4.0, 2.8)]);
        assert!(f.mark_popped(&Vector3::new(3.0, 4.0, 4.0)).is_empty());
        let mut f = filter(DistanceMetric::Ray);
        assert!(f.mark_popped(&Vector3::zeros()).is_empty());
    }

    #[test]
    fn json_dump_lists_hypotheses() {
        let f = with_hypotheses(&[Vector3::new(3.0, 4.0, 2.8)]);
        let v = f.dump_json();
        assert_eq!(v.as_array().unwrap().len(), 1);
        assert_eq!(v[0]["missed_count"], 0);
    }

    fn mean_matches(f: &BalloonFilter) -> bool {
        f.hypotheses().iter().all(|h| {
            let mean =
                h.history.iter().fold(Vector3::zeros(), |a, (_, p)| a + p) / h.history.len() as f64;
            (mean - h.position).norm() <= 1e-12 && (1..=8).contains(&h.history.len())
        })
    }

    proptest! {
        #[test]
        fn brute_force_half_line_distance(px in -10.0f64..10.0, py in -10.0f64..10.0, pz in -10.0f64..10.0,
                                          dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in 0.1f64..1.0) {
            let ray = DetectionRay::new(Vector3::zeros(), Vector3::new(dx, dy, dz)).unwrap();
            let p = Vector3::new(px, py, pz);
            let brute = (0..=40_000)
                .map(|k| (p - ray.direction * (k as f64 * 0.001)).norm())
                .fold(f64::INFINITY, f64::min);
            prop_assert!((ray_distance(&p, &ray) - brute).abs() < 1e-3);
        }

        #[test]
        fn ground_distance_is_flattened_3d(a in prop::array::uniform3(-50.0f64..50.0), b in prop::array::uniform3(-50.0f64..50.0)) {
            let pa = Vector3::from(a);
            let pb = Vector3::from(b);
            let flat = (Vector3::new(pa.x, pa.y, 0.0) - Vector3::new(pb.x, pb.y, 0.0)).norm();
            prop_assert!((ground_distance(&pa, &pb) - flat).abs() < 1e-12);
        }

        #[test]
        fn invariants_hold_under_random_frames(frames in prop::collection::vec(
            prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, 1.0f64..5.5), 0..4), 1..30),
            mav in prop::array::uniform2(-20.0f64..20.0)) {
            let (pose, intr) = looking_along_x();
            let mut f = BalloonFilter::new(FilterConfig::default(), DistanceMetric::Ray);
            let mut g = f.clone();
            let mut seen = 0;
            for frame in &frames {
                let rays: Vec<_> = frame.iter()
                    .filter_map(|&(x, y, z)| DetectionRay::new(pose.translation, Vector3::new(x, y, z)))
                    .collect();
                seen += rays.len();
                f.process_frame(&pose, &intr, &rays);
                g.process_frame(&pose, &intr, &rays);
                prop_assert!(mean_matches(&f));
                prop_assert!(f.hypotheses().len() <= seen);
                f.mark_popped(&Vector3::new(mav[0], mav[1], 4.0));
                g.mark_popped(&Vector3::new(mav[0], mav[1], 4.0));
                prop_assert!(mean_matches(&f));
            }
            prop_assert_eq!(f, g);
        }
    }
}
