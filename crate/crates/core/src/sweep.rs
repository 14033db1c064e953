//! One-parameter sweeps over a base scenario.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::learning::AttackConfig;
use crate::runner::{run, Outcome, RunOutput};
use crate::scenario::Scenario;
use crate::simnet::{Time, MILLIS, SEGMENTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Servers,
    K,
    ModelDim,
    LambdaBoost,
    ByzantineClients,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "n_s" => Axis::Servers,
            "K" | "k" => Axis::K,
            "model_dim" => Axis::ModelDim,
            "lambda_boost" => Axis::LambdaBoost,
            "f_c" => Axis::ByzantineClients,
            _ => return Err(format!("unknown axis `{s}`; expected n_s, K, model_dim, lambda_boost or f_c")),
        })
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Servers => "n_s",
            Axis::K => "K",
            Axis::ModelDim => "model_dim",
            Axis::LambdaBoost => "lambda_boost",
            Axis::ByzantineClients => "f_c",
        })
    }
}

fn count(value: &str) -> Result<usize, String> {
    value.parse().map_err(|_| format!("`{value}` is not a non-negative integer"))
}

/// The base scenario with `axis` set to `value`.
pub fn apply(base: &Scenario, axis: Axis, value: &str) -> Result<Scenario, String> {
    let mut s = base.clone();
    match axis {
        Axis::Servers => {
            let n = count(value)?;
            if n % 2 == 0 {
                return Err(format!("n_s = {n} must be odd (2 f_s + 1)"));
            }
            s.population.f_s = n / 2;
        }
        Axis::K => {
            let k = count(value)?;
            if s.task.m == s.task.k {
                s.task.m = k;
            }
            s.task.m = s.task.m.min(k);
            s.task.k = k;
            s.task.min_clients = s.task.min_clients.max(k);
            s.population.clients = s.population.clients.max(s.task.min_clients);
        }
        Axis::ModelDim => s.task.dim = count(value)?,
        Axis::LambdaBoost => {
            let v: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
            s.faults.attack = AttackConfig::SignFlipBoost { lambda_boost: v };
        }
        Axis::ByzantineClients => s.faults.byzantine_clients = count(value)?,
    }
    s.validate().map_err(|(field, msg)| format!("{axis}={value}: {field}: {msg}"))?;
    Ok(s)
}

pub struct SweepCell {
    pub value: String,
    pub output: RunOutput,
}

impl SweepCell {
    /// Mean of each latency segment over the committed rounds, then the mean round latency.
    pub fn mean_segments(&self) -> Option<([f64; 5], f64)> {
        let m = &self.output.metrics;
        let rows: Vec<[Time; 5]> = m.rounds().filter_map(|r| m.segments(r)).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut seg = [0.0; 5];
        for r in &rows {
            for (acc, v) in seg.iter_mut().zip(r) {
                *acc += *v as f64 / n;
            }
        }
        Some((seg, seg.iter().sum()))
    }
}

/// Validates every cell, then runs them in parallel. Cell order follows `values`.
pub fn sweep(base: &Scenario, axis: Axis, values: &[String]) -> Result<Vec<SweepCell>, String> {
    let scenarios: Vec<(String, Scenario)> =
        values.iter().map(|v| apply(base, axis, v).map(|s| (v.clone(), s))).collect::<Result<_, _>>()?;
    Ok(scenarios.into_par_iter().map(|(value, s)| SweepCell { value, output: run(&s) }).collect())
}

pub fn sweep_csv(axis: Axis, cells: &[SweepCell]) -> String {
    let mut out = String::from("axis,value,outcome,rounds");
    for name in SEGMENTS {
        let _ = write!(out, ",{name}_ms");
    }
    out.push_str(",round_latency_ms,final_loss,rounds_to_threshold\n");
    let ms = |ns: f64| ns / MILLIS as f64;
    for c in cells {
        let o = &c.output;
        let status = match o.outcome {
            Outcome::Final => "final",
            Outcome::LivenessFailure { .. } => "liveness_failure",
        };
        let _ = write!(out, "{axis},{},{status},{}", c.value, o.committed_rounds);
        match c.mean_segments() {
            Some((seg, total)) => {
                for v in seg {
                    let _ = write!(out, ",{:.6}", ms(v));
                }
                let _ = write!(out, ",{:.6}", ms(total));
            }
            None => out.push_str(",,,,,,"),
        }
        let loss = o.final_loss().map(|l| format!("{l:e}")).unwrap_or_default();
        let hit = o.scenario.loss_threshold.and_then(|t| o.rounds_to(t)).map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(out, ",{loss},{hit}");
    }
    out
}
