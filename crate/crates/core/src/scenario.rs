//! Scenario configuration: population, task, data, network, faults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;
use crate::ledger::{BlockTiming, TaskParams};
use crate::learning::{AttackConfig, FeatureMap, InstaHideConfig, LocalTrainConfig, Partition, TaskKind};
use crate::protocol::ServerBehavior;
use crate::simnet::{ms, DelayModel, Latency, Time};
use crate::storage::ReplicaBehavior;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub clients: usize,
    pub f_s: usize,
    pub f_r: usize,
}

impl Population {
    pub fn servers(&self) -> usize {
        2 * self.f_s + 1
    }

    pub fn replicas(&self) -> usize {
        self.f_r + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
    /// Defaults to `abs` for logistic tasks and `identity` otherwise.
    #[serde(default)]
    pub features: Option<FeatureMap>,
    #[serde(default = "default_samples")]
    pub samples_per_client: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub partition: Partition,
}

fn default_kind() -> TaskKind {
    TaskKind::LinearRegression
}

fn default_samples() -> usize {
    40
}

fn default_noise() -> f64 {
    0.1
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            features: None,
            samples_per_client: default_samples(),
            noise: default_noise(),
            partition: Partition::Iid,
        }
    }
}

impl DataConfig {
    pub fn feature_map(&self) -> FeatureMap {
        self.features.unwrap_or(match self.kind {
            TaskKind::LinearRegression => FeatureMap::Identity,
            TaskKind::LogisticRegression => FeatureMap::Abs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_delay")]
    pub delay: DelayModel,
    #[serde(default)]
    pub block: BlockTiming,
}

fn default_delay() -> DelayModel {
    DelayModel {
        latency: Latency::Uniform { lo_ms: 5.0, hi_ms: 20.0 },
        overrides: Vec::new(),
        bandwidth_bytes_per_sec: Some(125e6),
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { delay: default_delay(), block: BlockTiming::default() }
    }
}

/// Modelled compute costs in simulated nanoseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeConfig {
    /// Per sample, per parameter, per local epoch.
    #[serde(default = "default_train_ns")]
    pub train_ns_per_param: f64,
    /// Per parameter, per aggregated update.
    #[serde(default = "default_aggregate_ns")]
    pub aggregate_ns_per_param: f64,
}

fn default_train_ns() -> f64 {
    2.0
}

fn default_aggregate_ns() -> f64 {
    1.0
}

impl Default for ComputeConfig {
    fn default() -> Self {
        Self { train_ns_per_param: default_train_ns(), aggregate_ns_per_param: default_aggregate_ns() }
    }
}

/// Behaviour assignments. Byzantine clients are the lowest-indexed ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub servers: BTreeMap<u32, ServerBehavior>,
    #[serde(default)]
    pub replicas: BTreeMap<u32, ReplicaBehavior>,
    #[serde(default)]
    pub byzantine_clients: usize,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Sample count Byzantine clients declare at JOIN.
    #[serde(default)]
    pub byzantine_declared_n: Option<u64>,
}

impl FaultPlan {
    pub fn server(&self, index: u32) -> ServerBehavior {
        self.servers.get(&index).copied().unwrap_or_default()
    }

    pub fn replica(&self, index: u32) -> ReplicaBehavior {
        self.replicas.get(&index).copied().unwrap_or(ReplicaBehavior::Correct)
    }

    pub fn byzantine_servers(&self) -> usize {
        self.servers.values().filter(|b| b.is_byzantine()).count()
    }

    pub fn byzantine_replicas(&self) -> usize {
        self.replicas.values().filter(|b| **b != ReplicaBehavior::Correct).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Terminate,
    /// Over-budget adversaries; the run is expected to stall or fail audit.
    Failure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub population: Population,
    pub task: TaskParams,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub compute: ComputeConfig,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default)]
    pub instahide: Option<InstaHideConfig>,
    #[serde(default)]
    pub expect: Expectation,
    /// Simulated time limit; defaults to one minute per round plus one.
    #[serde(default)]
    pub horizon_ms: Option<f64>,
    #[serde(default)]
    pub read_deadline_ms: Option<f64>,
    /// Loss level used for rounds-to-threshold in sweeps.
    #[serde(default)]
    pub loss_threshold: Option<f64>,
}

/// A configuration problem, anchored to a line of the source text when known.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl Scenario {
    /// Parses and validates a JSON scenario.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ConfigError { line: Some(e.line()), message: e.to_string() })?;
        s.validate().map_err(|(field, message)| ConfigError { line: find_line(text, field), message })?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    /// Checks cross-field constraints; on failure names the offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let p = &self.population;
        self.task.validate().map_err(|e| ("task", e.to_string()))?;
        if self.task.min_clients > p.clients {
            return Err(("min_clients", format!("min_clients {} exceeds {} clients", self.task.min_clients, p.clients)));
        }
        let within_budget = self.expect == Expectation::Terminate;
        for &i in self.faults.servers.keys() {
            if i as usize >= p.servers() {
                return Err(("servers", format!("server index {i} outside {} servers", p.servers())));
            }
        }
        if within_budget && self.faults.byzantine_servers() > p.f_s {
            return Err(("servers", format!("{} Byzantine servers exceed f_s = {}", self.faults.byzantine_servers(), p.f_s)));
        }
        for &i in self.faults.replicas.keys() {
            if i as usize >= p.replicas() {
                return Err(("replicas", format!("replica index {i} outside {} replicas", p.replicas())));
            }
        }
        if within_budget && self.faults.byzantine_replicas() > p.f_r {
            return Err(("replicas", format!("{} Byzantine replicas exceed f_r = {}", self.faults.byzantine_replicas(), p.f_r)));
        }
        if self.faults.byzantine_clients > p.clients {
            return Err(("byzantine_clients", "more Byzantine clients than clients".into()));
        }
        if !self.faults.attack.is_valid() {
            return Err(("attack", "lambda_boost must be finite and at least 1".into()));
        }
        if self.data.samples_per_client == 0 {
            return Err(("samples_per_client", "each client needs at least one sample".into()));
        }
        if !(self.data.noise.is_finite() && self.data.noise >= 0.0) {
            return Err(("noise", "noise must be finite and non-negative".into()));
        }
        if let Some(ih) = &self.instahide {
            if ih.mix == 0 || ih.mix > self.data.samples_per_client {
                return Err(("instahide", format!("mix {} must lie in 1..={}", ih.mix, self.data.samples_per_client)));
            }
        }
        if !self.network.delay.is_valid() {
            return Err(("delay", "latencies must be positive and bandwidth positive".into()));
        }
        if !self.network.block.is_valid() {
            return Err(("block", "block timing must be positive".into()));
        }
        let c = &self.compute;
        if !(c.train_ns_per_param >= 0.0 && c.aggregate_ns_per_param >= 0.0 && c.train_ns_per_param.is_finite() && c.aggregate_ns_per_param.is_finite()) {
            return Err(("compute", "compute costs must be finite and non-negative".into()));
        }
        for (name, v) in [("horizon_ms", self.horizon_ms), ("read_deadline_ms", self.read_deadline_ms)] {
            if v.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                return Err((name, format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> Time {
        ms(self.horizon_ms.unwrap_or(60_000.0 * (self.task.t_fin + 1) as f64))
    }

    /// Bytes of one encoded model.
    pub fn model_bytes(&self) -> u64 {
        1 + 8 + 8 * self.task.dim as u64
    }

    pub fn read_deadline(&self) -> Time {
        match self.read_deadline_ms {
            Some(v) => ms(v),
            None => {
                let d = &self.network.delay;
                let transmit = d.bandwidth_bytes_per_sec.map_or(0.0, |bw| self.model_bytes() as f64 * 1e9 / bw);
                10 * (d.max_latency() + transmit.ceil() as Time)
            }
        }
    }

    pub fn initial_model(&self) -> ParamVector {
        ParamVector::zeros(self.task.dim)
    }

    pub fn train(&self) -> &LocalTrainConfig {
        &self.task.train
    }
}

fn find_line(text: &str, field: &str) -> Option<usize> {
    let needle = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "seed": 3,
  "population": {"clients": 6, "f_s": 1, "f_r": 1},
  "task": {"k": 4, "min_clients": 6, "m": 4, "t_fin": 2, "dim": 5}
}"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.population.servers(), 3);
        assert_eq!(s.data.feature_map(), FeatureMap::Identity);
        assert_eq!(s.expect, Expectation::Terminate);
        assert!(s.read_deadline() > 0);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = Scenario::from_json("{\n  \"seed\": 1,\n  oops\n}").unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn semantic_errors_point_at_the_field() {
        let text = MINIMAL.replace("\"min_clients\": 6", "\"min_clients\": 9");
        let err = Scenario::from_json(&text).unwrap_err();
        assert_eq!(err.line, Some(4));
        let text = MINIMAL.replace("\"f_r\": 1}", "\"f_r\": 1},\n  \"faults\": {\"servers\": {\"0\": \"silent\", \"1\": \"silent\"}}");
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.message.contains("exceed f_s"), "{err}");
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        assert!(Scenario::from_json(&text).is_err());
    }
}
