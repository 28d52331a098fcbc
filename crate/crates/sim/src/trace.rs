//! Trace events and the run summary derived from them.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const TRACE_SCHEMA: &str = "popper-trace/1";
pub const SUMMARY_SCHEMA: &str = "popper-summary/1";

/// Hypotheses and attempts within this distance of a true balloon are
/// attributed to it.
pub const ATTRIBUTION_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub id: u64,
    pub position: [f64; 3],
    pub detections: usize,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Header {
        t: f64,
        schema: String,
        seed: u64,
        strategy: String,
        metric: String,
        failure_model: bool,
        balloons: Vec<[f64; 3]>,
    },
    State {
        t: f64,
        position: [f64; 3],
        velocity: [f64; 3],
        yaw: f64,
        yaw_rate: f64,
        height_estimate: f64,
        mode: String,
        command: [f64; 4],
    },
    Hyps {
        t: f64,
        detections: usize,
        hypotheses: Vec<HypothesisRecord>,
    },
    Mode {
        t: f64,
        from: String,
        to: String,
        target: Option<u64>,
    },
    Attempt {
        t: f64,
        target: u64,
        position: [f64; 3],
        outcome: Option<String>,
    },
    Pop {
        t: f64,
        balloon: usize,
    },
    AssumedPop {
        t: f64,
        hypothesis: u64,
    },
    Violation {
        t: f64,
        kind: String,
        position: [f64; 3],
    },
    End {
        t: f64,
        reason: String,
    },
}

impl TraceEvent {
    pub fn t(&self) -> f64 {
        match self {
            TraceEvent::Header { t, .. }
            | TraceEvent::State { t, .. }
            | TraceEvent::Hyps { t, .. }
            | TraceEvent::Mode { t, .. }
            | TraceEvent::Attempt { t, .. }
            | TraceEvent::Pop { t, .. }
            | TraceEvent::AssumedPop { t, .. }
            | TraceEvent::Violation { t, .. }
            | TraceEvent::End { t, .. } => *t,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub balloons: usize,
    /// `(balloon id, time)` in pop order.
    pub pop_times: Vec<(usize, f64)>,
    pub total_duration: f64,
    pub reattempts: usize,
    pub geofence_violations: usize,
    pub distance_flown: f64,
    /// Per true balloon, the largest number of confirmed hypotheses
    /// attributed to it at any camera frame.
    pub peak_confirmed: Vec<usize>,
    /// Per true balloon, the same count over all hypotheses.
    pub peak_hypotheses: Vec<usize>,
}

impl RunSummary {
    pub fn pops(&self) -> usize {
        self.pop_times.len()
    }

    pub fn all_popped(&self) -> bool {
        self.balloons > 0 && self.pops() == self.balloons
    }

    /// Time between consecutive pops.
    pub fn pop_intervals(&self) -> Vec<f64> {
        self.pop_times.windows(2).map(|w| w[1].1 - w[0].1).collect()
    }

    /// Mean of [`Self::peak_confirmed`] over balloons that were confirmed at
    /// least once, or zero.
    pub fn mean_confirmed_per_balloon(&self) -> f64 {
        let seen: Vec<usize> = self
            .peak_confirmed
            .iter()
            .copied()
            .filter(|&n| n > 0)
            .collect();
        if seen.is_empty() {
            0.0
        } else {
            seen.iter().sum::<usize>() as f64 / seen.len() as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {SUMMARY_SCHEMA}");
        let _ = writeln!(s, "field,balloon,value");
        for (b, t) in &self.pop_times {
            let _ = writeln!(s, "pop_time,{b},{t}");
        }
        for (b, n) in self.peak_confirmed.iter().enumerate() {
            let _ = writeln!(s, "peak_confirmed,{b},{n}");
        }
        for (b, n) in self.peak_hypotheses.iter().enumerate() {
            let _ = writeln!(s, "peak_hypotheses,{b},{n}");
        }
        let _ = writeln!(s, "seed,,{}", self.seed);
        let _ = writeln!(s, "balloons,,{}", self.balloons);
        let _ = writeln!(s, "pops,,{}", self.pops());
        let _ = writeln!(s, "total_duration,,{}", self.total_duration);
        let _ = writeln!(s, "reattempts,,{}", self.reattempts);
        let _ = writeln!(s, "geofence_violations,,{}", self.geofence_violations);
        let _ = writeln!(s, "distance_flown,,{}", self.distance_flown);
        let _ = writeln!(
            s,
            "mean_confirmed_per_balloon,,{}",
            self.mean_confirmed_per_balloon()
        );
        s
    }
}

fn nearest_balloon(balloons: &[Vector3<f64>], p: &[f64; 3]) -> Option<usize> {
    let p = Vector3::from(*p);
    balloons
        .iter()
        .enumerate()
        .map(|(i, b)| (i, (b - p).norm()))
        .filter(|&(_, d)| d <= ATTRIBUTION_RADIUS)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Recomputes the run summary from a trace. The simulator and the replay
/// command both go through this function.
pub fn summarize(events: &[TraceEvent]) -> RunSummary {
    let mut seed = 0;
    let mut balloons: Vec<Vector3<f64>> = Vec::new();
    let mut pop_times = Vec::new();
    let mut end_t = 0.0;
    let mut violations = 0;
    let mut distance = 0.0;
    let mut last_pos: Option<Vector3<f64>> = None;
    let mut completed = Vec::new();
    let mut reattempts = 0;
    let mut peak_confirmed = Vec::new();
    let mut peak_hyps = Vec::new();

    for ev in events {
        match ev {
            TraceEvent::Header {
                seed: s,
                balloons: b,
                ..
            } => {
                seed = *s;
                balloons = b.iter().map(|p| Vector3::from(*p)).collect();
                completed = vec![false; balloons.len()];
                peak_confirmed = vec![0; balloons.len()];
                peak_hyps = vec![0; balloons.len()];
            }
            TraceEvent::State { position, .. } => {
                let p = Vector3::from(*position);
                if let Some(q) = last_pos {
                    distance += (p - q).norm();
                }
                last_pos = Some(p);
            }
            TraceEvent::Hyps { hypotheses, .. } => {
                let mut all = vec![0; balloons.len()];
                let mut conf = vec![0; balloons.len()];
                for h in hypotheses {
                    if let Some(b) = nearest_balloon(&balloons, &h.position) {
                        all[b] += 1;
                        if h.confirmed {
                            conf[b] += 1;
                        }
                    }
                }
                for b in 0..balloons.len() {
                    peak_hyps[b] = peak_hyps[b].max(all[b]);
                    peak_confirmed[b] = peak_confirmed[b].max(conf[b]);
                }
            }
            TraceEvent::Attempt {
                position, outcome, ..
            } => {
                if let Some(b) = nearest_balloon(&balloons, position) {
                    match outcome.as_deref() {
                        None if completed[b] => reattempts += 1,
                        Some("completed") => completed[b] = true,
                        _ => {}
                    }
                }
            }
            TraceEvent::Pop { t, balloon } => pop_times.push((*balloon, *t)),
            TraceEvent::Violation { .. } => violations += 1,
            TraceEvent::End { t, .. } => end_t = *t,
            TraceEvent::Mode { .. } | TraceEvent::AssumedPop { .. } => {}
        }
    }

    RunSummary {
        seed,
        balloons: balloons.len(),
        pop_times,
        total_duration: end_t,
        reattempts,
        geofence_violations: violations,
        distance_flown: distance,
        peak_confirmed,
        peak_hypotheses: peak_hyps,
    }
}
