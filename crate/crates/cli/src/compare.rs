//! Paired runs along one configuration axis.

use std::fmt::Write as _;

use popper_core::balloon_filter::DistanceMetric;
use popper_core::mission::Strategy;
use popper_sim::{run, RunSummary, SimConfig};

use crate::output::COMPARE_SCHEMA;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Metric,
    Strategy,
}

impl Axis {
    /// Variant names and the configurations they produce from `base`.
    pub fn variants(self, base: &SimConfig) -> Vec<(&'static str, SimConfig)> {
        match self {
            Axis::Metric => vec![
                (
                    "ray",
                    SimConfig {
                        metric: DistanceMetric::Ray,
                        ..base.clone()
                    },
                ),
                (
                    "ground",
                    SimConfig {
                        metric: DistanceMetric::Ground,
                        ..base.clone()
                    },
                ),
            ],
            Axis::Strategy => {
                let with = |strategy| {
                    let mut c = base.clone();
                    c.mission.strategy = strategy;
                    c
                };
                vec![
                    ("star", with(Strategy::Star)),
                    ("direct", with(Strategy::Direct)),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub variant: &'static str,
    pub summary: RunSummary,
}

impl ComparisonRow {
    pub fn max_confirmed_per_balloon(&self) -> usize {
        self.summary
            .peak_confirmed
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn max_hypotheses_per_balloon(&self) -> usize {
        self.summary
            .peak_hypotheses
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub axis: Axis,
    pub rows: Vec<ComparisonRow>,
}

/// Parses `"1-10"`, `"3,5,8"` or a mix such as `"1-3,7"`.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>, CliError> {
    let bad = |part: &str| CliError::Usage(format!("invalid seed list entry {part:?}"));
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| bad(part))?,
                    b.trim().parse().map_err(|_| bad(part))?,
                );
                if a > b {
                    return Err(bad(part));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    Ok(seeds)
}

pub fn compare(base: &SimConfig, axis: Axis, seeds: &[u64]) -> Result<Comparison, CliError> {
    if seeds.is_empty() {
        return Err(CliError::Usage("compare needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for (variant, mut cfg) in axis.variants(base) {
            cfg.seed = seed;
            let trace = run(&cfg).map_err(|e| CliError::Config {
                key: e.key,
                message: e.message,
            })?;
            rows.push(ComparisonRow {
                seed,
                variant,
                summary: trace.summary,
            });
        }
    }
    Ok(Comparison { axis, rows })
}

impl Comparison {
    pub fn variant_rows<'a>(
        &'a self,
        variant: &'a str,
    ) -> impl Iterator<Item = &'a ComparisonRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {COMPARE_SCHEMA}\n");
        s.push_str("seed,variant,pops,balloons,total_duration,reattempts,geofence_violations,distance_flown,mean_confirmed_per_balloon,max_confirmed_per_balloon,max_hypotheses_per_balloon\n");
        for r in &self.rows {
            let m = &r.summary;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.variant,
                m.pops(),
                m.balloons,
                m.total_duration,
                m.reattempts,
                m.geofence_violations,
                m.distance_flown,
                m.mean_confirmed_per_balloon(),
                r.max_confirmed_per_balloon(),
                r.max_hypotheses_per_balloon()
            );
        }
        let mut variants: Vec<&'static str> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        for v in variants {
            let rows: Vec<&ComparisonRow> = self.variant_rows(v).collect();
            let n = rows.len() as f64;
            let mean =
                |f: &dyn Fn(&ComparisonRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let _ = writeln!(
                s,
                "mean,{v},{},{},{},{},{},{},{},{},{}",
                mean(&|r| r.summary.pops() as f64),
                mean(&|r| r.summary.balloons as f64),
                mean(&|r| r.summary.total_duration),
                mean(&|r| r.summary.reattempts as f64),
                mean(&|r| r.summary.geofence_violations as f64),
                mean(&|r| r.summary.distance_flown),
                mean(&|r| r.summary.mean_confirmed_per_balloon()),
                mean(&|r| r.max_confirmed_per_balloon() as f64),
                mean(&|r| r.max_hypotheses_per_balloon() as f64)
            );
        }
        s
    }
}
