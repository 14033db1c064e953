//! Builds a simulation from a scenario, runs it, and writes the run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;
use crate::codec::{canonical_decode, canonical_encode, hash_bytes, HashKey};
use crate::crypto::{derive_keys, KeyRegistry};
use crate::ids::{ProcessId, TaskId};
use crate::ledger::{Block, LedgerActor, LedgerState, TxBody};
use crate::learning::{global_loss, instahide_encode, AttackConfig, ClientDataset, SyntheticTask};
use crate::messages::Msg;
use crate::proofs::{PoAI, Tag};
use crate::protocol::{ClientActor, ClientConfig, OwnerActor, OwnerConfig, RewardInfo, ServerActor, ServerConfig};
use crate::rng::stream;
use crate::scenario::Scenario;
use crate::simnet::{Endpoint, LogEntry, Metrics, RunOutcome, Simulation, Time};
use crate::storage::{ReplicaActor, ReplicaBehavior};

/// Task id used for the single task of a scenario.
pub const TASK: TaskId = TaskId(1);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Final,
    LivenessFailure { reason: String },
}

/// The process layout shared by the runner and the auditor.
#[derive(Clone, Debug)]
pub struct Layout {
    pub servers: Vec<ProcessId>,
    pub replicas: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub owner: ProcessId,
}

impl Layout {
    pub fn of(s: &Scenario) -> Self {
        let n = |k: usize| 0..k as u32;
        Self {
            servers: n(s.population.servers()).map(ProcessId::server).collect(),
            replicas: n(s.population.replicas()).map(ProcessId::replica).collect(),
            clients: n(s.population.clients).map(ProcessId::client).collect(),
            owner: ProcessId::owner(),
        }
    }

    /// Public keys of every signing process.
    pub fn registry(&self, seed: u64) -> KeyRegistry {
        derive_keys(seed, self.signers()).0
    }

    fn signers(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.servers.iter().chain(&self.clients).copied().chain(std::iter::once(self.owner))
    }
}

/// The synthetic task and the clean per-client datasets of a scenario.
pub fn build_data(s: &Scenario) -> (SyntheticTask, Vec<ClientDataset>) {
    let d = &s.data;
    let task = SyntheticTask::generate(d.kind, d.feature_map(), s.task.dim, d.noise, &mut stream(s.seed, "task", 0));
    let data = task.generate_datasets(s.population.clients, d.samples_per_client, d.partition, &mut stream(s.seed, "data", 0));
    (task, data)
}

pub struct RunOutput {
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub sim_time: Time,
    pub log: Vec<LogEntry>,
    pub metrics: Metrics,
    pub blocks: Vec<Arc<Block>>,
    /// Union of the correct replicas' contents.
    pub storage: BTreeMap<HashKey, Arc<Vec<u8>>>,
    /// Certificates completed at correct servers, deduplicated.
    pub certificates: Vec<PoAI>,
    pub final_model: Option<Arc<ParamVector>>,
    pub reward: Option<RewardInfo>,
    /// Global loss on clean data of the initial model and of each round's first certified model.
    pub losses: Vec<(u64, f64)>,
    pub committed_rounds: u64,
    pub nr_commits: u64,
    pub final_commits: u64,
}

impl RunOutput {
    pub fn final_digest(&self) -> Option<HashKey> {
        self.final_model.as_ref().map(|m| hash_bytes(&canonical_encode(&**m).expect("finite model")))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|(_, l)| *l)
    }

    /// First round from which every certified model has loss at or below `threshold`.
    pub fn rounds_to(&self, threshold: f64) -> Option<u64> {
        let last_above = self.losses.iter().rposition(|(_, l)| *l > threshold || l.is_nan());
        let settle = last_above.map_or(0, |i| i + 1);
        self.losses.get(settle).map(|(r, _)| (*r).max(1))
    }

    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            let _ = writeln!(out, "{} {} {}", e.time, e.actor, e.text);
        }
        out
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("round,loss\n");
        for (r, l) in &self.losses {
            let _ = writeln!(out, "{r},{l:e}");
        }
        out
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            outcome: self.outcome.clone(),
            final_digest: self.final_digest().map(|d| d.to_hex()),
            rounds: self.committed_rounds,
            final_loss: self.final_loss(),
            sim_time_ns: self.sim_time,
            reward_total: self.reward.as_ref().map(RewardInfo::total),
        }
    }

    /// Writes every run artifact into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scenario.json"), self.scenario.to_json())?;
        fs::write(dir.join("transcript.log"), self.transcript())?;
        fs::write(dir.join("metrics.csv"), self.metrics.to_csv())?;
        fs::write(dir.join("loss.csv"), self.loss_csv())?;
        fs::write(dir.join("result.json"), to_json(&self.result()))?;
        let blocks: Vec<&Block> = self.blocks.iter().map(|b| &**b).collect();
        fs::write(dir.join("ledger.json"), to_json(&blocks))?;
        fs::write(dir.join("storage.bin"), encode_storage(&self.storage))?;
        fs::write(dir.join("certificates.json"), to_json(&self.certificates))?;
        if let Some(m) = &self.final_model {
            fs::write(dir.join("final_model.bin"), canonical_encode(&**m).expect("finite model"))?;
        }
        Ok(())
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("run artifacts serialize")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub final_digest: Option<String>,
    pub rounds: u64,
    pub final_loss: Option<f64>,
    pub sim_time_ns: Time,
    pub reward_total: Option<u64>,
}

/// `key ‖ len (u64 LE) ‖ value` per entry, in key order.
pub fn encode_storage(entries: &BTreeMap<HashKey, Arc<Vec<u8>>>) -> Vec<u8> {
    let mut out = Vec::new();
    for (k, v) in entries {
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&(v.len() as u64).to_le_bytes());
        out.extend_from_slice(v);
    }
    out
}

pub fn decode_storage(mut bytes: &[u8]) -> Result<Vec<(HashKey, Vec<u8>)>, String> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 40 {
            return Err("truncated storage entry header".into());
        }
        let mut key = [0u8; 32];
        key.copy_from_slice(&bytes[..32]);
        let len = u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| "storage entry too large")?;
        let rest = &bytes[40..];
        if rest.len() < len {
            return Err("truncated storage entry value".into());
        }
        out.push((HashKey(key), rest[..len].to_vec()));
        bytes = &rest[len..];
    }
    Ok(out)
}

/// Runs a validated scenario to FINAL, quiescence, or the horizon.
pub fn run(s: &Scenario) -> RunOutput {
    let layout = Layout::of(s);
    let (registry, ring) = derive_keys(s.seed, layout.signers());
    let registry = Arc::new(registry);
    let (task_model, clean) = build_data(s);
    let task_model = Arc::new(task_model);
    let f_s = s.population.f_s;
    let deadline = s.read_deadline();

    let mut sim: Simulation<Msg> = Simulation::new(s.network.delay.clone(), stream(s.seed, "net", 0));
    for (i, r) in layout.replicas.iter().enumerate() {
        sim.add_actor(*r, Box::new(ReplicaActor::new(s.faults.replica(i as u32))));
    }
    let subscribers: Vec<Endpoint> =
        layout.servers.iter().chain(&layout.clients).copied().chain([layout.owner]).map(Endpoint::from).collect();
    let ledger = LedgerActor::new(
        LedgerState::new(registry.clone(), f_s),
        s.network.block.clone(),
        layout.servers.len(),
        stream(s.seed, "ledger", 0),
        subscribers,
    );
    sim.add_actor(Endpoint::Ledger, Box::new(ledger));
    for (i, id) in layout.servers.iter().enumerate() {
        let cfg = ServerConfig {
            id: *id,
            behavior: s.faults.server(i as u32),
            f_s,
            servers: layout.servers.clone(),
            replicas: layout.replicas.clone(),
            registry: registry.clone(),
            signer: ring.signer(*id).expect("server key"),
            aggregate_ns_per_param: s.compute.aggregate_ns_per_param,
            read_deadline: deadline,
        };
        sim.add_actor(*id, Box::new(ServerActor::new(cfg)));
    }
    for (i, id) in layout.clients.iter().enumerate() {
        let byzantine = i < s.faults.byzantine_clients;
        let data = match &s.instahide {
            Some(cfg) => instahide_encode(&clean[i], cfg, &mut stream(s.seed, "instahide", i as u64))
                .expect("mix count validated against dataset size"),
            None => clean[i].clone(),
        };
        let cfg = ClientConfig {
            id: *id,
            signer: ring.signer(*id).expect("client key"),
            servers: layout.servers.clone(),
            replicas: layout.replicas.clone(),
            registry: registry.clone(),
            f_s,
            attack: if byzantine { s.faults.attack } else { AttackConfig::None },
            stake: s.task.stake_threshold,
            declared_n: if byzantine { s.faults.byzantine_declared_n } else { None },
            train_ns_per_param: s.compute.train_ns_per_param,
            read_deadline: deadline,
        };
        let rng = stream(s.seed, "client", i as u64);
        sim.add_actor(*id, Box::new(ClientActor::new(cfg, task_model.clone(), data, rng)));
    }
    let owner = OwnerConfig {
        signer: ring.signer(layout.owner).expect("owner key"),
        replicas: layout.replicas.clone(),
        registry: registry.clone(),
        f_s,
        task: TASK,
        params: s.task.clone(),
        initial: Arc::new(s.initial_model()),
        read_deadline: deadline,
    };
    sim.add_actor(layout.owner, Box::new(OwnerActor::new(owner)));

    let run_outcome = sim.run(s.horizon());
    if run_outcome == RunOutcome::Stopped {
        // Let in-flight stores and votes land so the storage dump is complete.
        sim.resume();
        sim.run(s.horizon());
    }
    collect(s, &layout, &sim, run_outcome, &task_model, &clean)
}

fn collect(
    s: &Scenario,
    layout: &Layout,
    sim: &Simulation<Msg>,
    run_outcome: RunOutcome,
    task_model: &SyntheticTask,
    clean: &[ClientDataset],
) -> RunOutput {
    let owner = sim.actor::<OwnerActor>(layout.owner).expect("owner actor");
    let ledger = sim.actor::<LedgerActor>(Endpoint::Ledger).expect("ledger actor");
    let blocks = ledger.blocks().to_vec();

    let mut storage = BTreeMap::new();
    for (i, r) in layout.replicas.iter().enumerate() {
        if s.faults.replica(i as u32) == ReplicaBehavior::Correct {
            let a = sim.actor::<ReplicaActor>(*r).expect("replica actor");
            storage.extend(a.state().entries().iter().map(|(k, v)| (*k, v.clone())));
        }
    }

    let correct: Vec<&ServerActor> = layout
        .servers
        .iter()
        .map(|id| sim.actor::<ServerActor>(*id).expect("server actor"))
        .filter(|a| !a.behavior().is_byzantine())
        .collect();
    let mut timed: Vec<(Time, PoAI)> = correct.iter().flat_map(|a| a.certificates().iter().cloned()).collect();
    timed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.slot.cmp(&b.1.slot)));
    let mut certificates: Vec<PoAI> = Vec::new();
    for (_, p) in &timed {
        if !certificates.contains(p) {
            certificates.push(p.clone());
        }
    }

    let mut losses = vec![(0, global_loss(task_model, clean, &s.initial_model()).unwrap_or(f64::NAN))];
    let mut first_mod: BTreeMap<u64, HashKey> = BTreeMap::new();
    for (_, p) in &timed {
        if p.tag() == Tag::Mod {
            first_mod.entry(p.round()).or_insert(p.hash_key());
        }
    }
    for (r, key) in &first_mod {
        let model = storage.get(key).and_then(|b| canonical_decode::<ParamVector>(b).ok());
        if let Some(m) = model {
            losses.push((*r, global_loss(task_model, clean, &m).unwrap_or(f64::NAN)));
        }
    }

    let count = |v: &str| blocks.iter().flat_map(|b| &b.txs).filter(|t| t.body.variant() == v).count() as u64;
    let (nr_commits, final_commits) = (count("NR"), count("FINAL"));
    let committed_rounds = blocks
        .iter()
        .flat_map(|b| &b.txs)
        .filter_map(|t| match &t.body {
            TxBody::NewRound { round, .. } => Some(*round),
            _ => None,
        })
        .max()
        .unwrap_or(0);

    let outcome = if owner.final_model().is_some() {
        Outcome::Final
    } else {
        let mut reason = match run_outcome {
            RunOutcome::Horizon => "horizon reached before FINAL".to_string(),
            RunOutcome::Quiescent => "no events left before FINAL".to_string(),
            RunOutcome::Stopped => "stopped before FINAL".to_string(),
        };
        let _ = write!(reason, " after {committed_rounds} committed rounds");
        if let Some(why) = correct.iter().find_map(|a| a.halted()) {
            let _ = write!(reason, "; {why}");
        }
        Outcome::LivenessFailure { reason }
    };

    RunOutput {
        scenario: s.clone(),
        outcome,
        sim_time: sim.now(),
        log: sim.log().to_vec(),
        metrics: sim.metrics().clone(),
        blocks,
        storage,
        certificates,
        final_model: owner.final_model().cloned(),
        reward: owner.reward().cloned(),
        losses,
        committed_rounds,
        nr_commits,
        final_commits,
    }
}
