//! Search and pop mission logic.
//!
//! The MAV takes off, flies a repeating two-lane creeping-line pattern along
//! the long axis of the arena, and as soon as the balloon filter reports a
//! confirmed target it flies a straight pass through the balloon. Every goal
//! handed to the controller is clamped into the geofenced volume.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::balloon_filter::ConfirmedTarget;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    pub length: f64,
    pub width: f64,
    pub center: Vector2<f64>,
    pub lane_inset: f64,
    pub search_alt: f64,
    pub search_speed: f64,
    pub alt_low: f64,
    pub alt_high: f64,
    pub geofence_margin: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            length: 90.0,
            width: 40.0,
            center: Vector2::zeros(),
            lane_inset: 10.0,
            search_alt: 4.0,
            search_speed: 5.0,
            alt_low: 3.0,
            alt_high: 5.0,
            geofence_margin: 2.0,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.length > 0.0) {
            return Err(("length", format!("must be > 0, got {}", self.length)));
        }
        if !(self.width > 0.0) {
            return Err(("width", format!("must be > 0, got {}", self.width)));
        }
        if !(self.lane_inset >= 0.0 && self.lane_inset <= self.width / 2.0) {
            return Err((
                "lane_inset",
                format!("must be in [0, width/2], got {}", self.lane_inset),
            ));
        }
        if !(self.alt_low < self.alt_high) {
            return Err(("alt_low", "must be below alt_high".into()));
        }
        if !(self.search_alt >= self.alt_low && self.search_alt <= self.alt_high) {
            return Err(("search_alt", "must lie inside the altitude corridor".into()));
        }
        if !(self.search_speed > 0.0) {
            return Err((
                "search_speed",
                format!("must be > 0, got {}", self.search_speed),
            ));
        }
        let margin = self.geofence_margin;
        if !(margin >= 0.0 && 2.0 * margin < self.length.min(self.width)) {
            return Err((
                "geofence_margin",
                format!("must be in [0, half the arena width), got {margin}"),
            ));
        }
        Ok(())
    }

    /// Half extents of the geofenced rectangle around the center.
    pub fn fence_half_extents(&self) -> Vector2<f64> {
        Vector2::new(
            self.length / 2.0 - self.geofence_margin,
            self.width / 2.0 - self.geofence_margin,
        )
    }

    pub fn inside_fence(&self, p: &Vector3<f64>) -> bool {
        let h = self.fence_half_extents();
        let rel = p.xy() - self.center;
        let eps = 1e-9;
        rel.x.abs() <= h.x + eps
            && rel.y.abs() <= h.y + eps
            && p.z >= self.alt_low - eps
            && p.z <= self.alt_high + eps
    }

    /// Horizontal part of [`Self::inside_fence`].
    pub fn inside_fence_xy(&self, p: &Vector2<f64>) -> bool {
        let h = self.fence_half_extents();
        let rel = p - self.center;
        rel.x.abs() <= h.x + 1e-9 && rel.y.abs() <= h.y + 1e-9
    }

    pub fn inside_arena(&self, p: &Vector2<f64>) -> bool {
        let rel = p - self.center;
        rel.x.abs() <= self.length / 2.0 && rel.y.abs() <= self.width / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionMode {
    Takeoff,
    Search,
    Pop,
    ReturnToCenter,
    Done,
}

impl MissionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MissionMode::Takeoff => "TAKEOFF",
            MissionMode::Search => "SEARCH",
            MissionMode::Pop => "POP",
            MissionMode::ReturnToCenter => "RETURN_TO_CENTER",
            MissionMode::Done => "DONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Go straight on to the next target after each pass.
    Direct,
    /// Return to the arena center after each pass.
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub position: Vector3<f64>,
    pub pass_velocity: Vector3<f64>,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub arena: ArenaConfig,
    pub strategy: Strategy,
    pub approach_offset: f64,
    pub approach_height: f64,
    pub pass_speed: f64,
    pub waypoint_tolerance: f64,
    pub approach_tolerance: f64,
    pub through_tolerance: f64,
    pub center_tolerance: f64,
    pub takeoff_alt: f64,
    /// Largest jump of a target's position that is still the same target
    /// after its hypothesis was merged into another one.
    pub target_match_radius: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            arena: ArenaConfig::default(),
            strategy: Strategy::Star,
            approach_offset: 2.0,
            approach_height: 0.7,
            pass_speed: 3.0,
            waypoint_tolerance: 1.5,
            approach_tolerance: 0.3,
            through_tolerance: 0.3,
            center_tolerance: 0.5,
            takeoff_alt: 4.0,
            target_match_radius: 2.0,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        self.arena.validate()?;
        for (name, v) in [
            ("approach_offset", self.approach_offset),
            ("pass_speed", self.pass_speed),
            ("waypoint_tolerance", self.waypoint_tolerance),
            ("approach_tolerance", self.approach_tolerance),
            ("through_tolerance", self.through_tolerance),
            ("center_tolerance", self.center_tolerance),
            ("takeoff_alt", self.takeoff_alt),
            ("target_match_radius", self.target_match_radius),
        ] {
            if !(v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.approach_height >= 0.0) {
            return Err(("approach_height", "must be >= 0".into()));
        }
        Ok(())
    }
}

/// Repeating search loop: two lanes along the long axis at the configured
/// inset from the long edges, endpoints at the geofence.
pub fn search_waypoints(arena: &ArenaConfig) -> Vec<Vector3<f64>> {
    let half = arena.fence_half_extents();
    let lateral = (arena.width / 2.0 - arena.lane_inset).min(half.y);
    let c = arena.center;
    let z = arena.search_alt;
    let point = |x: f64, y: f64| Vector3::new(c.x + x, c.y + y, z);
    if lateral <= 0.0 {
        return vec![point(half.x, 0.0), point(-half.x, 0.0)];
    }
    vec![
        point(half.x, lateral),
        point(half.x, -lateral),
        point(-half.x, -lateral),
        point(-half.x, lateral),
    ]
}

pub fn geofence_clamp(goal: &Vector3<f64>, arena: &ArenaConfig) -> Vector3<f64> {
    let h = arena.fence_half_extents();
    let c = arena.center;
    Vector3::new(
        goal.x.clamp(c.x - h.x, c.x + h.x),
        goal.y.clamp(c.y - h.y, c.y + h.y),
        goal.z.clamp(arena.alt_low, arena.alt_high),
    )
}

/// Horizontal unit direction from the MAV to the balloon, falling back to
/// the current heading when they are on top of each other.
pub fn approach_direction(
    balloon: &Vector3<f64>,
    mav: &Vector3<f64>,
    mav_yaw: f64,
) -> Vector2<f64> {
    let d = balloon.xy() - mav.xy();
    let n = d.norm();
    if n > 1e-6 {
        d / n
    } else {
        Vector2::new(mav_yaw.cos(), mav_yaw.sin())
    }
}

/// Approach and through poses for a straight pass along `dir`.
pub fn pop_goal_along(
    balloon: &Vector3<f64>,
    dir: &Vector2<f64>,
    cfg: &MissionConfig,
) -> (GoalPose, GoalPose) {
    let z = balloon.z + cfg.approach_height;
    let offset = dir * cfg.approach_offset;
    let yaw = dir.y.atan2(dir.x);
    let pass_velocity = Vector3::new(dir.x, dir.y, 0.0) * cfg.pass_speed;
    let approach = Vector3::new(balloon.x - offset.x, balloon.y - offset.y, z);
    let through = Vector3::new(balloon.x + offset.x, balloon.y + offset.y, z);
    let pose = |p: Vector3<f64>| GoalPose {
        position: geofence_clamp(&p, &cfg.arena),
        pass_velocity,
        yaw,
    };
    (pose(approach), pose(through))
}

pub fn pop_goal(
    balloon: &Vector3<f64>,
    mav: &Vector3<f64>,
    mav_yaw: f64,
    cfg: &MissionConfig,
) -> (GoalPose, GoalPose) {
    pop_goal_along(balloon, &approach_direction(balloon, mav, mav_yaw), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopPhase {
    Approach,
    Through,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetLock {
    pub id: u64,
    pub position: Vector3<f64>,
    pub direction: Vector2<f64>,
    pub phase: PopPhase,
    pub started: f64,
    /// The filter already assumes this balloon popped.
    pub assumed_popped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MavView {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub mode_from: MissionMode,
    pub mode_to: MissionMode,
    pub target_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptOutcome {
    Completed,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptEvent {
    pub t: f64,
    pub target_id: u64,
    pub position: Vector3<f64>,
    pub outcome: Option<AttemptOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub cfg: MissionConfig,
    mode: MissionMode,
    target: Option<TargetLock>,
    waypoints: Vec<Vector3<f64>>,
    search_index: usize,
    takeoff_xy: Option<Vector2<f64>>,
    last_yaw: f64,
    transitions: Vec<Transition>,
    attempts: Vec<AttemptEvent>,
}

/// Signed distance of `p` past the plane through `origin` normal to `dir`.
fn past_plane(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector2<f64>) -> f64 {
    (p.xy() - origin.xy()).dot(dir)
}

fn lateral_offset(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector2<f64>) -> f64 {
    let rel = p.xy() - origin.xy();
    (rel - dir * rel.dot(dir)).norm()
}

impl Mission {
    pub fn new(cfg: MissionConfig) -> Self {
        let waypoints = search_waypoints(&cfg.arena);
        Self {
            cfg,
            mode: MissionMode::Takeoff,
            target: None,
            waypoints,
            search_index: 0,
            takeoff_xy: None,
            last_yaw: 0.0,
            transitions: Vec::new(),
            attempts: Vec::new(),
        }
    }

    pub fn mode(&self) -> MissionMode {
        self.mode
    }

    pub fn target(&self) -> Option<&TargetLock> {
        self.target.as_ref()
    }

    pub fn search_index(&self) -> usize {
        self.search_index
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }

    /// Drains the mode transitions recorded since the last call.
    pub fn take_transitions(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.transitions)
    }

    /// Drains attempt start (`outcome: None`) and end events.
    pub fn take_attempts(&mut self) -> Vec<AttemptEvent> {
        std::mem::take(&mut self.attempts)
    }

    fn set_mode(&mut self, t: f64, to: MissionMode) {
        if to == self.mode {
            return;
        }
        self.transitions.push(Transition {
            t,
            mode_from: self.mode,
            mode_to: to,
            target_id: self.target.map(|l| l.id),
        });
        self.mode = to;
    }

    fn start_pop(&mut self, t: f64, target: &ConfirmedTarget, mav: &MavView) {
        let direction = approach_direction(&target.position, &mav.position, mav.yaw);
        self.target = Some(TargetLock {
            id: target.id,
            position: target.position,
            direction,
            phase: PopPhase::Approach,
            started: t,
            assumed_popped: false,
        });
        self.attempts.push(AttemptEvent {
            t,
            target_id: target.id,
            position: target.position,
            outcome: None,
        });
        self.set_mode(t, MissionMode::Pop);
    }

    fn end_attempt(
        &mut self,
        t: f64,
        outcome: AttemptOutcome,
        confirmed: &[ConfirmedTarget],
        mav: &MavView,
    ) {
        let lock = self.target.expect("attempt in progress");
        self.attempts.push(AttemptEvent {
            t,
            target_id: lock.id,
            position: lock.position,
            outcome: Some(outcome),
        });
        match self.cfg.strategy {
            Strategy::Star => {
                self.set_mode(t, MissionMode::ReturnToCenter);
                self.target = None;
            }
            Strategy::Direct => {
                let next = confirmed.iter().find(|c| c.id != lock.id).copied();
                match next {
                    Some(next) => {
                        self.target = None;
                        self.start_pop(t, &next, mav);
                    }
                    None => {
                        self.set_mode(t, MissionMode::Search);
                        self.target = None;
                    }
                }
            }
        }
    }

    /// Stops the mission; no further goals change.
    pub fn finish(&mut self, t: f64) {
        self.set_mode(t, MissionMode::Done);
        self.target = None;
    }

    /// Finds the locked target among the confirmed ones, following merges.
    fn track_target(
        &self,
        lock: &TargetLock,
        confirmed: &[ConfirmedTarget],
    ) -> Option<ConfirmedTarget> {
        confirmed
            .iter()
            .find(|c| c.id == lock.id)
            .copied()
            .or_else(|| {
                confirmed
                    .iter()
                    .filter(|c| (c.position - lock.position).norm() < self.cfg.target_match_radius)
                    .min_by(|a, b| {
                        (a.position - lock.position)
                            .norm()
                            .total_cmp(&(b.position - lock.position).norm())
                    })
                    .copied()
            })
    }

    fn face(&mut self, from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
        let d = to.xy() - from.xy();
        if d.norm() > 1.0 {
            self.last_yaw = d.y.atan2(d.x);
        }
        self.last_yaw
    }

    fn hover_goal(&mut self, mav: &MavView, to: Vector3<f64>) -> GoalPose {
        let yaw = self.face(&mav.position, &to);
        GoalPose {
            position: geofence_clamp(&to, &self.cfg.arena),
            pass_velocity: Vector3::zeros(),
            yaw,
        }
    }

    /// Advances the state machine by one control tick.
    ///
    /// `confirmed` is the filter's confirmed target list (nearest first) and
    /// `popped_ids` the hypotheses the filter removed as popped this tick.
    /// Targets outside the geofence rectangle are ignored.
    pub fn step(
        &mut self,
        t: f64,
        confirmed: &[ConfirmedTarget],
        mav: &MavView,
        popped_ids: &[u64],
    ) -> GoalPose {
        let reachable: Vec<ConfirmedTarget> = confirmed
            .iter()
            .filter(|c| self.cfg.arena.inside_fence_xy(&c.position.xy()))
            .copied()
            .collect();
        self.advance(t, &reachable, mav, popped_ids)
    }

    fn advance(
        &mut self,
        t: f64,
        confirmed: &[ConfirmedTarget],
        mav: &MavView,
        popped_ids: &[u64],
    ) -> GoalPose {
        if self.takeoff_xy.is_none() {
            self.takeoff_xy = Some(mav.position.xy());
            self.last_yaw = mav.yaw;
        }
        match self.mode {
            MissionMode::Takeoff => {
                if (mav.position.z - self.cfg.takeoff_alt).abs() < 0.2 {
                    self.set_mode(t, MissionMode::Search);
                    return self.advance(t, confirmed, mav, popped_ids);
                }
                let xy = self.takeoff_xy.expect("set above");
                let goal = Vector3::new(xy.x, xy.y, self.cfg.takeoff_alt);
                GoalPose {
                    position: geofence_clamp(&goal, &self.cfg.arena),
                    pass_velocity: Vector3::zeros(),
                    yaw: self.last_yaw,
                }
            }
            MissionMode::Search => {
                if let Some(first) = confirmed.first() {
                    self.start_pop(t, first, mav);
                    return self.advance(t, confirmed, mav, popped_ids);
                }
                let wp = self.waypoints[self.search_index];
                if (wp.xy() - mav.position.xy()).norm() < self.cfg.waypoint_tolerance {
                    self.search_index = (self.search_index + 1) % self.waypoints.len();
                }
                let wp = self.waypoints[self.search_index];
                self.hover_goal(mav, wp)
            }
            MissionMode::Pop => self.step_pop(t, confirmed, mav, popped_ids),
            MissionMode::ReturnToCenter => {
                let c = self.cfg.arena.center;
                let center = Vector3::new(c.x, c.y, self.cfg.arena.search_alt);
                if (center.xy() - mav.position.xy()).norm() < self.cfg.center_tolerance {
                    match confirmed.first() {
                        Some(first) => self.start_pop(t, first, mav),
                        None => self.set_mode(t, MissionMode::Search),
                    }
                    return self.advance(t, confirmed, mav, popped_ids);
                }
                let next = confirmed.iter().min_by(|a, b| {
                    (a.position.xy() - c)
                        .norm()
                        .total_cmp(&(b.position.xy() - c).norm())
                });
                let mut goal = self.hover_goal(mav, center);
                if let Some(next) = next {
                    goal.yaw = self.face(&mav.position, &next.position);
                }
                goal
            }
            MissionMode::Done => GoalPose {
                position: geofence_clamp(&mav.position, &self.cfg.arena),
                pass_velocity: Vector3::zeros(),
                yaw: self.last_yaw,
            },
        }
    }

    fn step_pop(
        &mut self,
        t: f64,
        confirmed: &[ConfirmedTarget],
        mav: &MavView,
        popped_ids: &[u64],
    ) -> GoalPose {
        let mut lock = self.target.expect("POP always has a target");
        if popped_ids.contains(&lock.id) {
            lock.assumed_popped = true;
            if self.cfg.strategy == Strategy::Direct {
                self.target = Some(lock);
                self.end_attempt(t, AttemptOutcome::Completed, confirmed, mav);
                return self.advance(t, confirmed, mav, &[]);
            }
        }
        if !lock.assumed_popped && lock.phase == PopPhase::Approach {
            match self.track_target(&lock, confirmed) {
                Some(current) => {
                    lock.id = current.id;
                    lock.position = current.position;
                }
                None => {
                    self.target = Some(lock);
                    self.end_attempt(t, AttemptOutcome::Cancelled, confirmed, mav);
                    return self.advance(t, confirmed, mav, &[]);
                }
            }
        }

        let (approach, through) = pop_goal_along(&lock.position, &lock.direction, &self.cfg);
        if lock.phase == PopPhase::Approach {
            let close = (approach.position - mav.position).norm() < self.cfg.approach_tolerance;
            let crossed = past_plane(&mav.position, &approach.position, &lock.direction) >= 0.0
                && lateral_offset(&mav.position, &approach.position, &lock.direction) <= 1.0;
            if close || crossed {
                lock.phase = PopPhase::Through;
            }
        }
        if lock.phase == PopPhase::Through {
            let close = (through.position - mav.position).norm() < self.cfg.through_tolerance;
            let crossed = past_plane(&mav.position, &through.position, &lock.direction) >= 0.0;
            if (close || crossed) && t > lock.started {
                self.target = Some(lock);
                self.end_attempt(t, AttemptOutcome::Completed, confirmed, mav);
                return self.advance(t, confirmed, mav, &[]);
            }
        }
        self.target = Some(lock);
        match lock.phase {
            PopPhase::Approach => {
                self.last_yaw = approach.yaw;
                let yaw = self.face(&mav.position, &lock.position);
                GoalPose { yaw, ..approach }
            }
            PopPhase::Through => {
                self.last_yaw = through.yaw;
                through
            }
        }
    }
}
