//! Arena contents, vehicle dynamics and the tentacle pop model.

use nalgebra::{Vector2, Vector3};
use popper_core::geometry::wrap_angle;
use popper_core::mission::ArenaConfig;
use popper_core::trajectory::{AttitudeCommand, GRAVITY};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{BalloonLayout, ConfigError, PlantConfig, TentacleRig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balloon {
    pub id: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub arena: ArenaConfig,
    pub balloons: Vec<Balloon>,
    pub pole_height: f64,
}

impl SimWorld {
    pub fn new(
        arena: ArenaConfig,
        layout: &BalloonLayout,
        rng: &mut impl Rng,
    ) -> Result<Self, ConfigError> {
        let xy = if layout.positions.is_empty() {
            place_balloons(&arena, layout, rng)?
        } else {
            layout
                .positions
                .iter()
                .map(|p| Vector2::new(p[0], p[1]))
                .collect()
        };
        let balloons = xy
            .into_iter()
            .enumerate()
            .map(|(id, p)| Balloon {
                id,
                center: Vector3::new(p.x, p.y, layout.center_z),
                radius: layout.radius,
                alive: true,
            })
            .collect();
        Ok(Self {
            arena,
            balloons,
            pole_height: layout.pole_height,
        })
    }

    pub fn alive(&self) -> impl Iterator<Item = &Balloon> {
        self.balloons.iter().filter(|b| b.alive)
    }

    pub fn all_popped(&self) -> bool {
        !self.balloons.is_empty() && self.balloons.iter().all(|b| !b.alive)
    }
}

/// Uniform rejection sampling inside the geofence shrunk by `layout.inset`,
/// keeping `layout.min_separation` between balloons.
pub fn place_balloons(
    arena: &ArenaConfig,
    layout: &BalloonLayout,
    rng: &mut impl Rng,
) -> Result<Vec<Vector2<f64>>, ConfigError> {
    let half = arena.fence_half_extents() - Vector2::repeat(layout.inset);
    if half.x <= 0.0 || half.y <= 0.0 {
        return Err(ConfigError::new(
            "balloons.inset",
            "leaves no room inside the geofence",
        ));
    }
    let mut placed: Vec<Vector2<f64>> = Vec::with_capacity(layout.count);
    let mut tries = 0;
    while placed.len() < layout.count {
        tries += 1;
        if tries > 100_000 {
            return Err(ConfigError::new(
                "balloons.min_separation",
                format!(
                    "cannot place {} balloons with this separation",
                    layout.count
                ),
            ));
        }
        let p = arena.center
            + Vector2::new(
                rng.random_range(-half.x..=half.x),
                rng.random_range(-half.y..=half.y),
            );
        if placed
            .iter()
            .all(|q| (q - p).norm() >= layout.min_separation)
        {
            placed.push(p);
        }
    }
    Ok(placed)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MavSimState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

/// Advances the lag-filtered triple integrator by `dt`.
///
/// Horizontal acceleration approaches `g * tan` of the commanded attitude,
/// vertical speed approaches the commanded climb rate and the yaw rate
/// approaches its command, each through a first-order lag. Integration is
/// semi-implicit Euler. The vehicle cannot sink below the ground.
pub fn step_dynamics(
    state: &MavSimState,
    cmd: &AttitudeCommand,
    dt: f64,
    plant: &PlantConfig,
) -> MavSimState {
    let lag = |tau: f64| 1.0 - (-dt / tau).exp();
    let mut s = *state;

    let ax_target = GRAVITY * cmd.pitch.tan();
    let ay_target = GRAVITY * cmd.roll.tan();
    s.a.x += (ax_target - s.a.x) * lag(plant.tau_att);
    s.a.y += (ay_target - s.a.y) * lag(plant.tau_att);
    let vz_new = s.v.z + (cmd.climb_rate - s.v.z) * lag(plant.tau_z);
    s.a.z = (vz_new - s.v.z) / dt;

    s.v.x += s.a.x * dt;
    s.v.y += s.a.y * dt;
    s.v.z = vz_new;
    s.p += s.v * dt;
    if s.p.z < 0.0 {
        s.p.z = 0.0;
        s.v.z = s.v.z.max(0.0);
        s.a.z = s.a.z.max(0.0);
    }

    s.yaw_rate += (cmd.yaw_rate - s.yaw_rate) * lag(plant.tau_yaw);
    s.yaw = wrap_angle(s.yaw + s.yaw_rate * dt);
    s
}

/// Balloons punctured while moving from `prev` to `cur`.
///
/// A balloon is evaluated on the step that contains the horizontal closest
/// approach to its center. It pops if that distance is within the sweep
/// radius and the bar is above the balloon center but no higher than the
/// tentacle length. With the failure model on, the pass also has to be fast
/// and free of yaw motion.
pub fn check_pop(
    prev: &MavSimState,
    cur: &MavSimState,
    rig: &TentacleRig,
    world: &SimWorld,
    failure_model: bool,
    dt: f64,
) -> Vec<usize> {
    let a = prev.p.xy();
    let seg = cur.p.xy() - a;
    let len2 = seg.norm_squared();
    let speed = cur.v.xy().norm();
    let mut popped = Vec::new();
    for b in world.alive() {
        let rel = b.center.xy() - a;
        let s = if len2 > 1e-18 {
            rel.dot(&seg) / len2
        } else {
            0.0
        };
        if !(0.0..1.0).contains(&s) && len2 > 1e-18 {
            continue;
        }
        let closest = a + seg * s;
        if (closest - b.center.xy()).norm() > rig.sweep_radius {
            continue;
        }
        let z = prev.p.z + (cur.p.z - prev.p.z) * s;
        if !(z > b.center.z && z <= b.center.z + rig.tentacle_length) {
            continue;
        }
        if failure_model && (speed < rig.pop_speed_min || cur.yaw_rate.abs() > rig.max_yaw_rate) {
            continue;
        }
        popped.push(b.id);
    }
    let _ = dt;
    popped
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_balloon(x: f64, y: f64) -> SimWorld {
        SimWorld {
            arena: ArenaConfig::default(),
            balloons: vec![Balloon {
                id: 0,
                center: Vector3::new(x, y, 2.8),
                radius: 0.3,
                alive: true,
            }],
            pole_height: 2.5,
        }
    }

    #[test]
    fn zero_command_at_rest_is_a_fixed_point() {
        let s = MavSimState {
            p: Vector3::new(1.0, 2.0, 4.0),
            ..Default::default()
        };
        let next = step_dynamics(
            &s,
            &AttitudeCommand::default(),
            0.005,
            &PlantConfig::default(),
        );
        assert_eq!(next, s);
    }

    #[test]
    fn attitude_step_response() {
        let plant = PlantConfig::default();
        let cmd = AttitudeCommand {
            pitch: std::f64::consts::FRAC_PI_4,
            ..Default::default()
        };
        let mut s = MavSimState::default();
        let dt = 0.005;
        let steps = (3.0 * plant.tau_att / dt).round() as usize;
        for _ in 0..steps {
            s = step_dynamics(&s, &cmd, dt, &plant);
        }
        assert!(s.a.x >= 0.95 * GRAVITY, "a_x {}", s.a.x);
        for _ in 0..2000 {
            s = step_dynamics(&s, &cmd, dt, &plant);
        }
        assert_relative_eq!(s.a.x, GRAVITY, epsilon = 1e-9);
    }

    #[test]
    fn placement_respects_separation_and_fence() {
        let arena = ArenaConfig::default();
        let layout = BalloonLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = place_balloons(&arena, &layout, &mut rng).unwrap();
        assert_eq!(pts.len(), 5);
        for (i, p) in pts.iter().enumerate() {
            assert!(p.x.abs() <= 40.0 && p.y.abs() <= 15.0);
            for q in &pts[i + 1..] {
                assert!((p - q).norm() >= 8.0);
            }
        }
    }

    fn moving(x0: f64, x1: f64, y: f64, z: f64, yaw_rate: f64) -> (MavSimState, MavSimState) {
        let dt = 0.005;
        let v = Vector3::new((x1 - x0) / dt, 0.0, 0.0);
        let a = MavSimState {
            p: Vector3::new(x0, y, z),
            v,
            yaw_rate,
            ..Default::default()
        };
        let b = MavSimState {
            p: Vector3::new(x1, y, z),
            ..a
        };
        (a, b)
    }

    #[test]
    fn straight_fast_pass_pops() {
        let world = one_balloon(10.0, 0.0);
        let (a, b) = moving(9.99, 10.005, 0.0, 3.5, 0.0);
        assert_eq!(
            check_pop(&a, &b, &TentacleRig::default(), &world, true, 0.005),
            vec![0]
        );
    }

    #[test]
    fn hover_and_turn_does_not_pop_with_failure_model() {
        let world = one_balloon(10.0, 0.0);
        let (a, b) = moving(10.0, 10.0, 0.0, 3.5, 1.5);
        let rig = TentacleRig::default();
        assert!(check_pop(&a, &b, &rig, &world, true, 0.005).is_empty());
        assert_eq!(check_pop(&a, &b, &rig, &world, false, 0.005), vec![0]);
    }

    #[test]
    fn lateral_offset_and_altitude_gates() {
        let world = one_balloon(10.0, 0.0);
        let rig = TentacleRig::default();
        let (a, b) = moving(9.99, 10.005, 2.0, 3.5, 0.0);
        assert!(check_pop(&a, &b, &rig, &world, false, 0.005).is_empty());
        let (a, b) = moving(9.99, 10.005, 0.0, 4.5, 0.0);
        assert!(check_pop(&a, &b, &rig, &world, false, 0.005).is_empty());
        let (a, b) = moving(9.99, 10.005, 0.0, 2.7, 0.0);
        assert!(check_pop(&a, &b, &rig, &world, false, 0.005).is_empty());
    }
}
