//! Altitude estimation from a downward laser range finder and the flight
//! controller's fused barometric height.
//!
//! Laser readings are trusted only when they pass a set of validity gates.
//! While they are rejected the estimate is carried forward with barometric
//! height changes, and when the laser comes back the estimate either snaps to
//! it or slides toward it at a bounded rate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightFilterConfig {
    pub floor: f64,
    pub window_low: f64,
    pub window_high: f64,
    pub outlier_gate: f64,
    pub bootstrap_count: usize,
    pub reinit_after: u32,
    pub max_slope: f64,
    pub snap_gate: f64,
}

impl Default for HeightFilterConfig {
    fn default() -> Self {
        Self {
            floor: 1.0,
            window_low: 1.0,
            window_high: 5.0,
            outlier_gate: 0.15,
            bootstrap_count: 10,
            reinit_after: 100,
            max_slope: 1.5,
            snap_gate: 0.15,
        }
    }
}

impl HeightFilterConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("floor", self.floor),
            ("window_low", self.window_low),
            ("outlier_gate", self.outlier_gate),
            ("max_slope", self.max_slope),
            ("snap_gate", self.snap_gate),
        ] {
            if !(v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.window_low < self.window_high) {
            return Err(("window_high", "must be above window_low".into()));
        }
        if self.bootstrap_count == 0 {
            return Err(("bootstrap_count", "must be > 0".into()));
        }
        if self.reinit_after == 0 {
            return Err(("reinit_after", "must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeightMode {
    /// No laser reading has been accepted yet.
    BaroOnly,
    LaserTracking,
    /// Laser rejected after it had been accepted before.
    Extrapolating,
    /// Sliding toward a re-acquired laser reading.
    Reconciling,
}

impl HeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HeightMode::BaroOnly => "BARO_ONLY",
            HeightMode::LaserTracking => "LASER_TRACKING",
            HeightMode::Extrapolating => "EXTRAPOLATING",
            HeightMode::Reconciling => "RECONCILING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightStep {
    pub estimate: f64,
    pub mode: HeightMode,
    /// Whether the laser reading passed the validity gates.
    pub valid: bool,
    /// Set on the step where the filter discarded its laser reference.
    pub reinitialized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightFilter {
    pub cfg: HeightFilterConfig,
    estimate: f64,
    last_valid_laser: Option<f64>,
    rejected_streak: u32,
    bootstrap_buffer: Vec<f64>,
    mode: HeightMode,
    last_baro: Option<f64>,
    ever_valid: bool,
}

/// Picks the buffered value with the most buffered values within `gate` of
/// it. Ties go to the earliest.
pub fn select_bootstrap(buffer: &[f64], gate: f64) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for &candidate in buffer {
        let inliers = buffer
            .iter()
            .filter(|&&v| (v - candidate).abs() <= gate)
            .count();
        if best.is_none_or(|(n, _)| inliers > n) {
            best = Some((inliers, candidate));
        }
    }
    best.map(|(_, v)| v)
}

impl HeightFilter {
    pub fn new(cfg: HeightFilterConfig, initial_estimate: f64) -> Self {
        Self {
            cfg,
            estimate: initial_estimate,
            last_valid_laser: None,
            rejected_streak: 0,
            bootstrap_buffer: Vec::new(),
            mode: HeightMode::BaroOnly,
            last_baro: None,
            ever_valid: false,
        }
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn mode(&self) -> HeightMode {
        self.mode
    }

    pub fn last_valid_laser(&self) -> Option<f64> {
        self.last_valid_laser
    }

    pub fn rejected_streak(&self) -> u32 {
        self.rejected_streak
    }

    pub fn bootstrap_len(&self) -> usize {
        self.bootstrap_buffer.len()
    }

    /// Validity gates, evaluated against the current (pre-update) estimate.
    pub fn validate(&self, laser: f64) -> bool {
        if !laser.is_finite() || laser < self.cfg.floor {
            return false;
        }
        if self.estimate < self.cfg.window_low || self.estimate > self.cfg.window_high {
            return false;
        }
        match self.last_valid_laser {
            Some(last) => (laser - last).abs() <= self.cfg.outlier_gate,
            None => true,
        }
    }

    /// Buffers a reading while no laser reference exists. Returns true once
    /// the buffer is full and a reference has been chosen.
    pub fn bootstrap_try(&mut self, laser: f64) -> bool {
        if self.last_valid_laser.is_some() {
            return true;
        }
        self.bootstrap_buffer.push(laser);
        if self.bootstrap_buffer.len() < self.cfg.bootstrap_count {
            return false;
        }
        self.last_valid_laser = select_bootstrap(&self.bootstrap_buffer, self.cfg.outlier_gate);
        self.bootstrap_buffer.clear();
        true
    }

    fn rejected_mode(&self) -> HeightMode {
        if self.ever_valid {
            HeightMode::Extrapolating
        } else {
            HeightMode::BaroOnly
        }
    }

    fn track(&mut self, laser: f64, dt: f64) {
        let diff = laser - self.estimate;
        let max_step = self.cfg.max_slope * dt;
        let reconciling = self.mode == HeightMode::Reconciling;
        if (!reconciling && diff.abs() <= self.cfg.snap_gate)
            || (reconciling && diff.abs() <= max_step)
        {
            self.estimate = laser;
            self.mode = HeightMode::LaserTracking;
        } else {
            self.estimate += diff.clamp(-max_step, max_step);
            self.mode = HeightMode::Reconciling;
        }
        self.ever_valid = true;
    }

    /// Processes one sensor sample. `laser` is `None` when the range finder
    /// returned nothing.
    pub fn step(&mut self, laser: Option<f64>, baro: f64, dt: f64) -> HeightStep {
        let baro_delta = self.last_baro.map_or(0.0, |b| baro - b);
        self.last_baro = Some(baro);
        let valid = laser.is_some_and(|l| self.validate(l));
        let mut reinitialized = false;

        match laser {
            Some(l) if valid => {
                self.rejected_streak = 0;
                if self.last_valid_laser.is_none() {
                    if self.bootstrap_try(l) {
                        let reference = self.last_valid_laser.expect("bootstrap selected a value");
                        self.track(reference, dt);
                    } else {
                        self.estimate += baro_delta;
                        self.mode = self.rejected_mode();
                    }
                } else {
                    self.last_valid_laser = Some(l);
                    self.track(l, dt);
                }
            }
            _ => {
                self.estimate += baro_delta;
                self.mode = self.rejected_mode();
                self.rejected_streak += 1;
                if self.rejected_streak >= self.cfg.reinit_after {
                    self.last_valid_laser = None;
                    self.bootstrap_buffer.clear();
                    self.rejected_streak = 0;
                    reinitialized = true;
                }
            }
        }

        HeightStep {
            estimate: self.estimate,
            mode: self.mode,
            valid,
            reinitialized,
        }
    }
}

/// One row of the height trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightTraceRow {
    pub t: f64,
    pub laser: Option<f64>,
    pub baro: f64,
    pub estimate: f64,
    pub mode: HeightMode,
    pub valid: bool,
}

impl HeightTraceRow {
    pub const CSV_HEADER: &'static str = "t,laser,baro,estimate,mode,valid";

    pub fn to_csv(&self) -> String {
        let laser = self.laser.map(|l| format!("{l:.6}")).unwrap_or_default();
        format!(
            "{:.3},{},{:.6},{:.6},{},{}",
            self.t,
            laser,
            self.baro,
            self.estimate,
            self.mode.as_str(),
            self.valid as u8
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Filter already tracking the laser at `h`.
    fn tracking_at(h: f64) -> HeightFilter {
        let mut f = HeightFilter::new(HeightFilterConfig::default(), h);
        for _ in 0..10 {
            f.step(Some(h), h, 0.01);
        }
        assert_eq!(f.mode(), HeightMode::LaserTracking);
        f
    }

    #[test]
    fn validity_gates() {
        let mut f = tracking_at(3.0);
        assert!(!f.validate(0.8));
        assert!(!f.validate(3.2));
        assert!(f.validate(3.1));
        f.estimate = 6.2;
        assert!(!f.validate(3.0));
    }

    #[test]
    fn bootstrap_selection() {
        let mut buf = vec![3.0; 7];
        buf.extend([4.2; 3]);
        assert_eq!(select_bootstrap(&buf, 0.15), Some(3.0));
        assert_eq!(select_bootstrap(&[2.5; 10], 0.15), Some(2.5));

        let mut f = HeightFilter::new(HeightFilterConfig::default(), 3.0);
        for _ in 0..9 {
            assert!(!f.bootstrap_try(3.0));
        }
        assert!(f.last_valid_laser().is_none());
        assert!(f.bootstrap_try(3.0));
        assert_eq!(f.last_valid_laser(), Some(3.0));
    }

    #[test]
    fn below_floor_follows_baro() {
        let mut f = HeightFilter::new(HeightFilterConfig::default(), 0.0);
        f.step(Some(0.2), 10.0, 0.01);
        for k in 1..50 {
            let h = k as f64 * 0.01;
            let s = f.step(Some(h), 10.0 + h, 0.01);
            assert_eq!(s.mode, HeightMode::BaroOnly);
            assert_relative_eq!(s.estimate, h, epsilon = 1e-9);
        }
    }

    #[test]
    fn extrapolated_estimate_out_of_window_blocks_laser() {
        let mut f = tracking_at(4.9);
        f.step(None, 4.9, 0.01);
        let s = f.step(None, 6.2, 0.01);
        assert_relative_eq!(s.estimate, 6.2, epsilon = 1e-12);
        let s = f.step(Some(5.9), 6.2, 0.01);
        assert!(!s.valid);
        assert_eq!(s.mode, HeightMode::Extrapolating);
    }

    #[test]
    fn slope_limited_reconciliation() {
        let mut f = tracking_at(3.0);
        f.estimate = 3.4;
        let s = f.step(Some(3.0), 3.0, 0.01);
        assert!(s.valid);
        assert_eq!(s.mode, HeightMode::Reconciling);
        assert_relative_eq!(s.estimate, 3.385, epsilon = 1e-12);
        let mut steps = 1;
        while f.mode() == HeightMode::Reconciling {
            f.step(Some(3.0), 3.0, 0.01);
            steps += 1;
        }
        assert_eq!(f.estimate(), 3.0);
        assert_eq!(steps, 27);
    }

    #[test]
    fn reinit_at_exactly_hundredth_rejection() {
        let mut f = tracking_at(3.0);
        for k in 1..=99 {
            let s = f.step(None, 3.0, 0.01);
            assert!(!s.reinitialized, "rejection {k}");
            assert_eq!(f.last_valid_laser(), Some(3.0));
        }
        let s = f.step(Some(0.3), 3.0, 0.01);
        assert!(s.reinitialized);
        assert!(f.last_valid_laser().is_none());
        assert_eq!(f.rejected_streak(), 0);
    }

    proptest! {
        #[test]
        fn estimate_rate_bounded_while_reconciling(
            seq in prop::collection::vec((prop::option::of(0.5f64..6.0), -0.05f64..0.05), 1..400),
            start in 1.0f64..5.0,
        ) {
            let mut f = tracking_at(start);
            let mut baro = start;
            for (laser, db) in seq {
                baro += db;
                let before = f.estimate();
                let s = f.step(laser, baro, 0.01);
                if s.mode == HeightMode::Reconciling {
                    prop_assert!((s.estimate - before).abs() / 0.01 <= 1.5 + 1e-9);
                }
                if s.mode == HeightMode::LaserTracking {
                    prop_assert_eq!(Some(s.estimate), f.last_valid_laser());
                }
                prop_assert!(f.bootstrap_len() <= 10);
            }
        }
    }
}
