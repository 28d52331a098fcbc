//! Scenario configuration for a simulation run.

use popper_core::balloon_filter::{DistanceMetric, FilterConfig};
use popper_core::geometry::CameraIntrinsics;
use popper_core::height_filter::HeightFilterConfig;
use popper_core::mission::MissionConfig;
use popper_core::perception::{DetectorConfig, MASK_HEIGHT, MASK_WIDTH};
use popper_core::trajectory::AxisLimits;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{key}: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending key.
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

fn prefixed(section: &str) -> impl Fn((&'static str, String)) -> ConfigError + '_ {
    move |(key, message)| ConfigError::new(format!("{section}.{key}"), message)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoiseConfig {
    /// Fraction of outline pixels removed from every mask.
    pub mask_dropout_prob: f64,
    /// Mean number of clutter arcs added to every mask.
    pub clutter_components_per_frame: f64,
    pub laser_outlier_prob: f64,
    pub laser_outlier_low: f64,
    pub laser_outlier_high: f64,
    pub laser_sigma: f64,
    pub baro_sigma: f64,
    pub baro_drift_amp: f64,
    pub baro_drift_period: f64,
    /// Relative standard deviation of the range of every detection.
    pub depth_noise_frac: f64,
}

impl Default for SensorNoiseConfig {
    fn default() -> Self {
        Self {
            mask_dropout_prob: 0.05,
            clutter_components_per_frame: 0.02,
            laser_outlier_prob: 0.02,
            laser_outlier_low: 0.0,
            laser_outlier_high: 10.0,
            laser_sigma: 0.02,
            baro_sigma: 0.05,
            baro_drift_amp: 0.3,
            baro_drift_period: 60.0,
            depth_noise_frac: 0.03,
        }
    }
}

impl SensorNoiseConfig {
    /// All noise sources off.
    pub fn noiseless() -> Self {
        Self {
            mask_dropout_prob: 0.0,
            clutter_components_per_frame: 0.0,
            laser_outlier_prob: 0.0,
            laser_sigma: 0.0,
            baro_sigma: 0.0,
            baro_drift_amp: 0.0,
            depth_noise_frac: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, p) in [
            ("mask_dropout_prob", self.mask_dropout_prob),
            ("laser_outlier_prob", self.laser_outlier_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err((name, format!("must be in [0, 1], got {p}")));
            }
        }
        for (name, s) in [
            (
                "clutter_components_per_frame",
                self.clutter_components_per_frame,
            ),
            ("laser_sigma", self.laser_sigma),
            ("baro_sigma", self.baro_sigma),
            ("baro_drift_amp", self.baro_drift_amp),
            ("depth_noise_frac", self.depth_noise_frac),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err((name, format!("must be >= 0, got {s}")));
            }
        }
        if !(self.laser_outlier_low < self.laser_outlier_high) {
            return Err((
                "laser_outlier_low",
                "must be below laser_outlier_high".into(),
            ));
        }
        if !(self.baro_drift_period > 0.0) {
            return Err(("baro_drift_period", "must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TentacleRig {
    pub tentacle_count: u32,
    pub spacing: f64,
    pub tentacle_length: f64,
    /// Horizontal distance from the balloon center within which a pass pops it.
    pub sweep_radius: f64,
    pub pop_speed_min: f64,
    pub max_yaw_rate: f64,
}

impl Default for TentacleRig {
    fn default() -> Self {
        Self {
            tentacle_count: 4,
            spacing: 0.30,
            tentacle_length: 1.4,
            sweep_radius: 0.35,
            pop_speed_min: 1.5,
            max_yaw_rate: 0.5,
        }
    }
}

impl TentacleRig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("spacing", self.spacing),
            ("tentacle_length", self.tentacle_length),
            ("sweep_radius", self.sweep_radius),
            ("max_yaw_rate", self.max_yaw_rate),
        ] {
            if !(v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.pop_speed_min >= 0.0) {
            return Err(("pop_speed_min", "must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub tau_att: f64,
    pub tau_z: f64,
    pub tau_yaw: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            tau_att: 0.15,
            tau_z: 0.2,
            tau_yaw: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pitch_down_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 1200.0,
            fy: 1200.0,
            cx: 480.0,
            cy: 270.0,
            width: 960,
            height: 540,
            pitch_down_deg: 10.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, ConfigError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| ConfigError::new("camera", e.to_string()))
    }

    /// Intrinsics at segmentation-mask resolution.
    pub fn mask_intrinsics(&self) -> Result<CameraIntrinsics, ConfigError> {
        Ok(self.intrinsics()?.scaled_to(MASK_WIDTH, MASK_HEIGHT))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalloonLayout {
    /// Explicit `[x, y]` positions; when empty, `count` balloons are placed
    /// at random.
    pub positions: Vec<[f64; 2]>,
    pub count: usize,
    /// Extra distance kept from the geofence when placing at random.
    pub inset: f64,
    pub min_separation: f64,
    pub center_z: f64,
    pub radius: f64,
    pub pole_height: f64,
}

impl Default for BalloonLayout {
    fn default() -> Self {
        Self {
            positions: Vec::new(),
            count: 5,
            inset: 3.0,
            min_separation: 8.0,
            center_z: 2.8,
            radius: 0.3,
            pole_height: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub limits_xy: AxisLimits,
    pub limits_z: AxisLimits,
    pub yaw_kp: f64,
    /// How far ahead of the current time each fresh plan is sampled for the
    /// horizontal and vertical commands, in seconds.
    pub sample_ahead_xy: f64,
    pub sample_ahead_z: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            limits_xy: AxisLimits::XY,
            limits_z: AxisLimits::Z,
            yaw_kp: 1.0,
            sample_ahead_xy: 0.17,
            sample_ahead_z: 0.22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub time_limit: f64,
    /// Turn-over-balloon failure model of the tentacle rig.
    pub failure_model: bool,
    /// Take-off position on the ground.
    pub start_xy: [f64; 2],
    pub start_yaw: f64,
    pub metric: DistanceMetric,
    pub mission: MissionConfig,
    pub balloons: BalloonLayout,
    pub noise: SensorNoiseConfig,
    pub rig: TentacleRig,
    pub plant: PlantConfig,
    pub camera: CameraConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub height: HeightFilterConfig,
    pub control: ControlConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            time_limit: 900.0,
            failure_model: false,
            start_xy: [0.0, 0.0],
            start_yaw: 0.0,
            metric: DistanceMetric::Ray,
            mission: MissionConfig::default(),
            balloons: BalloonLayout::default(),
            noise: SensorNoiseConfig::default(),
            rig: TentacleRig::default(),
            plant: PlantConfig::default(),
            camera: CameraConfig::default(),
            detector: DetectorConfig::default(),
            filter: FilterConfig::default(),
            height: HeightFilterConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.time_limit > 0.0 && self.time_limit.is_finite()) {
            return Err(ConfigError::new(
                "time_limit",
                format!("must be > 0, got {}", self.time_limit),
            ));
        }
        self.mission.validate().map_err(prefixed("mission"))?;
        self.noise.validate().map_err(prefixed("noise"))?;
        self.rig.validate().map_err(prefixed("rig"))?;
        self.detector.validate().map_err(prefixed("detector"))?;
        self.filter.validate().map_err(prefixed("filter"))?;
        self.height.validate().map_err(prefixed("height"))?;
        self.camera.intrinsics()?;
        if !(self.camera.pitch_down_deg.abs() < 90.0) {
            return Err(ConfigError::new(
                "camera.pitch_down_deg",
                "must be in (-90, 90)",
            ));
        }
        for (name, tau) in [
            ("plant.tau_att", self.plant.tau_att),
            ("plant.tau_z", self.plant.tau_z),
            ("plant.tau_yaw", self.plant.tau_yaw),
        ] {
            if !(tau > 0.0) {
                return Err(ConfigError::new(name, format!("must be > 0, got {tau}")));
            }
        }
        for (name, lim) in [
            ("control.limits_xy", self.control.limits_xy),
            ("control.limits_z", self.control.limits_z),
        ] {
            if !lim.is_valid() {
                return Err(ConfigError::new(name, "limits must be strictly positive"));
            }
        }
        if !(self.control.yaw_kp >= 0.0) {
            return Err(ConfigError::new("control.yaw_kp", "must be >= 0"));
        }
        if !(self.control.sample_ahead_xy > 0.0 && self.control.sample_ahead_z > 0.0) {
            return Err(ConfigError::new(
                "control.sample_ahead_xy",
                "sample times must be > 0",
            ));
        }
        let b = &self.balloons;
        for (name, v) in [
            ("balloons.radius", b.radius),
            ("balloons.center_z", b.center_z),
            ("balloons.pole_height", b.pole_height),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::new(name, format!("must be > 0, got {v}")));
            }
        }
        if !(b.inset >= 0.0 && b.min_separation >= 0.0) {
            return Err(ConfigError::new(
                "balloons.inset",
                "inset and min_separation must be >= 0",
            ));
        }
        let arena = &self.mission.arena;
        let start = nalgebra::Vector2::new(self.start_xy[0], self.start_xy[1]);
        let fence = arena.fence_half_extents();
        if ((start - arena.center).abs() - fence).max() > 0.0 {
            return Err(ConfigError::new("start_xy", "must lie inside the geofence"));
        }
        for p in &b.positions {
            if !arena.inside_arena(&nalgebra::Vector2::new(p[0], p[1])) {
                return Err(ConfigError::new(
                    "balloons.positions",
                    format!("{p:?} lies outside the arena"),
                ));
            }
        }
        Ok(())
    }
}
