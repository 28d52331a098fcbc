//! The fixed-rate closed loop.

use log::{debug, info, warn};
use nalgebra::{Rotation2, Vector2, Vector3};
use popper_core::balloon_filter::{BalloonFilter, DetectionRay, DistanceMetric};
use popper_core::geometry::{to_field, CameraPose};
use popper_core::height_filter::{HeightFilter, HeightTraceRow};
use popper_core::mission::{AttemptOutcome, MavView, Mission, MissionMode};
use popper_core::perception::detect;
use popper_core::trajectory::{
    acceleration_command, plan_and_sample, reachable_speed, yaw_control, AttitudeCommand,
    AxisLimits, AxisState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, SimConfig};
use crate::sensors::{perturb_depth, render_mask, sense_baro, sense_laser};
use crate::trace::{summarize, HypothesisRecord, RunSummary, TraceEvent, TRACE_SCHEMA};
use crate::world::{check_pop, step_dynamics, MavSimState, SimWorld};

/// Dynamics step, 200 Hz.
pub const DYNAMICS_DT: f64 = 0.005;
/// Laser and barometer every 2 dynamics steps (100 Hz).
pub const SENSOR_DIVIDER: u64 = 2;
/// Mission and MPC every 4 dynamics steps (50 Hz).
pub const CONTROL_DIVIDER: u64 = 4;
/// Camera every 10 dynamics steps (20 Hz).
pub const CAMERA_DIVIDER: u64 = 10;
/// Vehicle state is traced every 20 dynamics steps (10 Hz).
pub const STATE_DIVIDER: u64 = 20;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_CAMERA: u64 = 1;
const STREAM_DEPTH: u64 = 2;
const STREAM_LASER: u64 = 3;
const STREAM_BARO: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
    pub height: Vec<HeightTraceRow>,
    pub summary: RunSummary,
}

impl SimTrace {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for ev in &self.events {
            s.push_str(&ev.to_json_line());
            s.push('\n');
        }
        s
    }
}

fn outcome_name(o: Option<AttemptOutcome>) -> Option<String> {
    o.map(|o| {
        match o {
            AttemptOutcome::Completed => "completed",
            AttemptOutcome::Cancelled => "cancelled",
        }
        .to_string()
    })
}

fn metric_name(m: DistanceMetric) -> &'static str {
    match m {
        DistanceMetric::Ray => "ray",
        DistanceMetric::Ground => "ground",
    }
}

/// Runs one scenario to completion or to the time limit.
pub fn run(cfg: &SimConfig) -> Result<SimTrace, ConfigError> {
    cfg.validate()?;
    let intr = cfg.camera.mask_intrinsics()?;
    let pitch = cfg.camera.pitch_down_deg.to_radians();
    let mut world = SimWorld::new(
        cfg.mission.arena,
        &cfg.balloons,
        &mut stream(cfg.seed, STREAM_PLACEMENT),
    )?;
    let mut cam_rng = stream(cfg.seed, STREAM_CAMERA);
    let mut depth_rng = stream(cfg.seed, STREAM_DEPTH);
    let mut laser_rng = stream(cfg.seed, STREAM_LASER);
    let mut baro_rng = stream(cfg.seed, STREAM_BARO);

    let mut filter = BalloonFilter::new(cfg.filter, cfg.metric);
    let mut height = HeightFilter::new(cfg.height, 0.0);
    let mut mission = Mission::new(cfg.mission);
    let arena = cfg.mission.arena;

    let mut state = MavSimState {
        p: Vector3::new(cfg.start_xy[0], cfg.start_xy[1], 0.0),
        yaw: cfg.start_yaw,
        ..Default::default()
    };
    let mut cmd = AttitudeCommand::default();
    let mut outside_arena = false;

    let mut events = vec![TraceEvent::Header {
        t: 0.0,
        schema: TRACE_SCHEMA.to_string(),
        seed: cfg.seed,
        strategy: format!("{:?}", cfg.mission.strategy).to_lowercase(),
        metric: metric_name(cfg.metric).to_string(),
        failure_model: cfg.failure_model,
        balloons: world.balloons.iter().map(|b| b.center.into()).collect(),
    }];
    let mut height_rows = Vec::new();
    info!(
        "seed {}: {} balloons, strategy {:?}, metric {:?}",
        cfg.seed,
        world.balloons.len(),
        cfg.mission.strategy,
        cfg.metric
    );

    let max_ticks = (cfg.time_limit / DYNAMICS_DT).round() as u64;
    let mut tick: u64 = 0;
    let end_reason = loop {
        let t = tick as f64 * DYNAMICS_DT;
        let believed = Vector3::new(state.p.x, state.p.y, height.estimate());

        if tick % SENSOR_DIVIDER == 0 {
            let laser = sense_laser(&world, &state, &cfg.noise, &mut laser_rng);
            let baro = sense_baro(&state, &cfg.noise, t, &mut baro_rng);
            let step = height.step(Some(laser), baro, DYNAMICS_DT * SENSOR_DIVIDER as f64);
            if step.reinitialized {
                debug!("t={t:.2}: height filter reinitialized");
            }
            height_rows.push(HeightTraceRow {
                t,
                laser: Some(laser),
                baro,
                estimate: step.estimate,
                mode: step.mode,
                valid: step.valid,
            });
        }

        if tick % CAMERA_DIVIDER == 0 {
            let true_pose = CameraPose::forward_looking(state.p, state.yaw, pitch);
            let belief_pose = CameraPose::forward_looking(believed, state.yaw, pitch);
            let mask = render_mask(&world, &true_pose, &intr, &cfg.noise, &mut cam_rng);
            let detections = detect(&mask, &intr, &cfg.detector);
            let rays: Vec<DetectionRay> = detections
                .iter()
                .filter_map(|d| {
                    let p_cam =
                        perturb_depth(&d.position, cfg.noise.depth_noise_frac, &mut depth_rng);
                    DetectionRay::new(belief_pose.translation, to_field(&belief_pose, &p_cam))
                })
                .collect();
            filter.process_frame(&belief_pose, &intr, &rays);
            events.push(TraceEvent::Hyps {
                t,
                detections: detections.len(),
                hypotheses: filter
                    .hypotheses()
                    .iter()
                    .map(|h| HypothesisRecord {
                        id: h.id,
                        position: h.position.into(),
                        detections: h.history.len(),
                        confirmed: h.history.len() >= cfg.filter.confirm_count,
                    })
                    .collect(),
            });
        }

        if tick % CONTROL_DIVIDER == 0 {
            let popped: Vec<u64> = filter
                .mark_popped(&believed)
                .into_iter()
                .map(|h| h.id)
                .collect();
            for &id in &popped {
                events.push(TraceEvent::AssumedPop { t, hypothesis: id });
            }
            let confirmed = filter.confirmed(&believed);
            let view = MavView {
                position: believed,
                yaw: state.yaw,
            };
            let goal = mission.step(t, &confirmed, &view, &popped);
            for tr in mission.take_transitions() {
                events.push(TraceEvent::Mode {
                    t: tr.t,
                    from: tr.mode_from.as_str().to_string(),
                    to: tr.mode_to.as_str().to_string(),
                    target: tr.target_id,
                });
            }
            for a in mission.take_attempts() {
                events.push(TraceEvent::Attempt {
                    t: a.t,
                    target: a.target_id,
                    position: a.position.into(),
                    outcome: outcome_name(a.outcome),
                });
            }
            if !arena.inside_fence(&goal.position) {
                warn!("t={t:.2}: goal outside the geofence");
                events.push(TraceEvent::Violation {
                    t,
                    kind: "goal".into(),
                    position: goal.position.into(),
                });
            }
            let outside = !arena.inside_arena(&state.p.xy());
            if outside && !outside_arena {
                warn!("t={t:.2}: vehicle left the arena");
                events.push(TraceEvent::Violation {
                    t,
                    kind: "arena".into(),
                    position: state.p.into(),
                });
            }
            outside_arena = outside;

            let mut lim_xy = cfg.control.limits_xy;
            if mission.mode() != MissionMode::Pop {
                lim_xy.v_max = lim_xy.v_max.min(arena.search_speed);
            }
            let lims: [AxisLimits; 3] = [lim_xy, lim_xy, cfg.control.limits_z];
            let heading = if goal.pass_velocity.xy().norm() > 1e-9 {
                goal.pass_velocity.y.atan2(goal.pass_velocity.x)
            } else {
                0.0
            };
            let to_frame = Rotation2::new(-heading);
            let (p, g) = (to_frame * believed.xy(), to_frame * goal.position.xy());
            let (v, a) = (to_frame * state.v.xy(), to_frame * state.a.xy());
            let mut gv = to_frame * goal.pass_velocity.xy();
            if gv.x > 0.0 {
                gv.x = reachable_speed(v.x, g.x - p.x, gv.x, &lim_xy);
            }
            let current = [
                AxisState::new(p.x, v.x, a.x),
                AxisState::new(p.y, v.y, a.y),
                AxisState::new(believed.z, state.v.z, state.a.z),
            ];
            let target = [
                AxisState::new(g.x, gv.x, 0.0),
                AxisState::new(g.y, gv.y, 0.0),
                AxisState::new(goal.position.z, goal.pass_velocity.z, 0.0),
            ];
            let ahead = [
                cfg.control.sample_ahead_xy,
                cfg.control.sample_ahead_xy,
                cfg.control.sample_ahead_z,
            ];
            cmd = match plan_and_sample(&current, &target, &lims, ahead) {
                Ok((s, _)) => {
                    let acc = to_frame.inverse() * Vector2::new(s[0].a, s[1].a);
                    acceleration_command(acc.x, acc.y, s[2].v)
                }
                Err(e) => {
                    warn!("t={t:.2}: planning failed ({e}), holding attitude level");
                    AttitudeCommand::default()
                }
            };
            cmd.yaw_rate = yaw_control(goal.yaw, state.yaw, cfg.control.yaw_kp);
        }

        if tick % STATE_DIVIDER == 0 {
            events.push(TraceEvent::State {
                t,
                position: state.p.into(),
                velocity: state.v.into(),
                yaw: state.yaw,
                yaw_rate: state.yaw_rate,
                height_estimate: height.estimate(),
                mode: mission.mode().as_str().to_string(),
                command: [cmd.pitch, cmd.roll, cmd.climb_rate, cmd.yaw_rate],
            });
        }

        if tick >= max_ticks {
            break "time_limit";
        }

        let next = step_dynamics(&state, &cmd, DYNAMICS_DT, &cfg.plant);
        tick += 1;
        let t_next = tick as f64 * DYNAMICS_DT;
        for id in check_pop(
            &state,
            &next,
            &cfg.rig,
            &world,
            cfg.failure_model,
            DYNAMICS_DT,
        ) {
            world.balloons[id].alive = false;
            info!("t={t_next:.2}: balloon {id} popped");
            events.push(TraceEvent::Pop {
                t: t_next,
                balloon: id,
            });
        }
        state = next;
        if world.all_popped() {
            mission.finish(t_next);
            for tr in mission.take_transitions() {
                events.push(TraceEvent::Mode {
                    t: tr.t,
                    from: tr.mode_from.as_str().to_string(),
                    to: tr.mode_to.as_str().to_string(),
                    target: tr.target_id,
                });
            }
            break "all_popped";
        }
    };

    events.push(TraceEvent::End {
        t: tick as f64 * DYNAMICS_DT,
        reason: end_reason.to_string(),
    });
    let summary = summarize(&events);
    info!(
        "seed {}: {} / {} popped, ended at {:.2} s ({end_reason})",
        cfg.seed,
        summary.pops(),
        summary.balloons,
        summary.total_duration
    );
    Ok(SimTrace {
        events,
        height: height_rows,
        summary,
    })
}
