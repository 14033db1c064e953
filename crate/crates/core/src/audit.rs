//! Offline audit of a run directory: ledger replay, certificate checks,
//! and an independent recomputation of every round's aggregate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::aggregation::{epsilon_close, ParamVector, WeightedUpdate};
use crate::codec::{canonical_decode, hash_bytes, HashKey};
use crate::crypto::KeyRegistry;
use crate::ledger::{Block, LedgerState, TaskState, TxLine};
use crate::proofs::{verify_poai, PoAI, Tag};
use crate::protocol::{dedupe_committed, RewardInfo, Update};
use crate::runner::{decode_storage, Layout, RunResult, TASK};
use crate::scenario::Scenario;

/// The first violated invariant.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{invariant}: {detail}")]
pub struct AuditFailure {
    pub invariant: &'static str,
    pub detail: String,
}

fn fail<T>(invariant: &'static str, detail: impl Into<String>) -> Result<T, AuditFailure> {
    Err(AuditFailure { invariant, detail: detail.into() })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub blocks: usize,
    pub rounds: u64,
    pub certificates: usize,
    pub models_checked: usize,
    /// Largest coordinate gap between a certified model and the recomputed aggregate.
    pub max_divergence: f64,
}

/// The files of a run directory.
pub struct Artifacts {
    pub scenario: Scenario,
    pub transcript: String,
    pub blocks: Vec<Block>,
    pub storage: Vec<(HashKey, Vec<u8>)>,
    pub certificates: Vec<PoAI>,
    pub result: RunResult,
    pub final_model: Option<Vec<u8>>,
}

impl Artifacts {
    pub fn load(dir: &Path) -> Result<Self, AuditFailure> {
        let read = |name: &str| fs::read(dir.join(name)).or_else(|e| fail("artifacts present", format!("{name}: {e}")));
        let text = |name: &str| {
            read(name).and_then(|b| String::from_utf8(b).or_else(|_| fail("artifacts present", format!("{name} is not UTF-8"))))
        };
        let json = |name: &'static str, t: String| -> Result<serde_json::Value, AuditFailure> {
            serde_json::from_str(&t).or_else(|e| fail("artifacts parse", format!("{name}: {e}")))
        };
        let scenario = Scenario::from_json(&text("scenario.json")?).or_else(|e| fail("artifacts parse", format!("scenario.json: {e}")))?;
        let blocks = serde_json::from_value(json("ledger.json", text("ledger.json")?)?)
            .or_else(|e| fail("artifacts parse", format!("ledger.json: {e}")))?;
        let certificates = serde_json::from_value(json("certificates.json", text("certificates.json")?)?)
            .or_else(|e| fail("artifacts parse", format!("certificates.json: {e}")))?;
        let result = serde_json::from_value(json("result.json", text("result.json")?)?)
            .or_else(|e| fail("artifacts parse", format!("result.json: {e}")))?;
        let storage = decode_storage(&read("storage.bin")?).or_else(|e| fail("artifacts parse", format!("storage.bin: {e}")))?;
        let final_model = fs::read(dir.join("final_model.bin")).ok();
        Ok(Self { scenario, transcript: text("transcript.log")?, blocks, storage, certificates, result, final_model })
    }
}

pub fn audit_dir(dir: &Path) -> Result<AuditReport, AuditFailure> {
    audit(&Artifacts::load(dir)?)
}

pub fn audit(a: &Artifacts) -> Result<AuditReport, AuditFailure> {
    let s = &a.scenario;
    let registry = Arc::new(Layout::of(s).registry(s.seed));
    let f_s = s.population.f_s;
    let mut report = AuditReport { blocks: a.blocks.len(), ..AuditReport::default() };

    let mut storage: BTreeMap<HashKey, &[u8]> = BTreeMap::new();
    for (k, v) in &a.storage {
        if hash_bytes(v) != *k {
            return fail("storage integrity", format!("entry {k} does not hash to its key"));
        }
        storage.insert(*k, v);
    }

    let mut ledger = LedgerState::new(registry.clone(), f_s);
    for b in &a.blocks {
        if let Err(e) = ledger.apply_block(b) {
            return fail("ledger replay", e.to_string());
        }
    }
    check_transcript(&a.transcript, &a.blocks)?;

    let Some(task) = ledger.task(TASK) else { return fail("ledger replay", "task was never created") };
    let Some(fin) = &task.fin else { return fail("FINAL committed", "no FINAL transaction on the ledger") };
    report.rounds = task.last_round();

    let get = |k: &HashKey, what: &str| match storage.get(k) {
        Some(v) => Ok(*v),
        None => fail("storage availability", format!("{what} {k} missing from correct replicas")),
    };

    let w0 = get(&task.model_hash, "initial model")?;
    let mut reference: ParamVector =
        canonical_decode(w0).or_else(|e| fail("storage availability", format!("initial model undecodable: {e}")))?;
    let mut refs: BTreeMap<u64, ParamVector> = BTreeMap::new();
    let mut expected_reward = RewardInfo { task: TASK, counts: BTreeMap::new() };
    let mut committed_total = 0u64;
    for (&round, rec) in &task.rounds {
        let mut held = Vec::new();
        for p in &rec.cand {
            let bytes = get(&p.hash_key(), "committed update")?;
            let u: Update = canonical_decode(bytes)
                .or_else(|e| fail("committed updates valid", format!("round {round}: {e}")))?;
            check_update(task, &registry, round, &u)?;
            held.push((p.hash_key(), Arc::new(u)));
        }
        let sorted = dedupe_committed(held);
        committed_total += sorted.len() as u64;
        for (_, u) in &sorted {
            *expected_reward.counts.entry(u.client).or_default() += 1;
        }
        let weighted: Vec<WeightedUpdate<'_>> = sorted
            .iter()
            .map(|(_, u)| WeightedUpdate {
                update: &u.vector,
                weight: task.declared_n(u.client).unwrap_or(1),
                client: u.client,
                round,
            })
            .collect();
        reference = task
            .params
            .aggregator
            .step(&reference, &weighted)
            .or_else(|e| fail("aggregate recomputation", format!("round {round}: {e}")))?;
        refs.insert(round, reference.clone());
    }

    let mut certs: Vec<&PoAI> = a.certificates.iter().collect();
    certs.push(&fin.model_proof);
    certs.push(&fin.reward_proof);
    for p in certs {
        if !verify_poai(p, &registry, f_s) {
            return fail("certificate validity", format!("{} round {} does not verify", p.tag(), p.round()));
        }
        report.certificates += 1;
        if p.tag() != Tag::Mod || p.task() != TASK {
            continue;
        }
        let Some(expected) = refs.get(&p.round()) else {
            return fail("epsilon-chain safety", format!("MOD certificate for uncommitted round {}", p.round()));
        };
        let bytes = get(&p.hash_key(), "certified model")?;
        let model: ParamVector =
            canonical_decode(bytes).or_else(|e| fail("epsilon-chain safety", format!("round {}: {e}", p.round())))?;
        if !epsilon_close(&model, expected, &task.params.eps).unwrap_or(false) {
            return fail(
                "epsilon-chain safety",
                format!("certified model {} of round {} is not eps-close to the recomputed aggregate", p.hash_key(), p.round()),
            );
        }
        report.max_divergence = report.max_divergence.max(model.max_abs_diff(expected));
        report.models_checked += 1;
    }

    let reward_bytes = get(&fin.reward_proof.hash_key(), "reward info")?;
    let reward: RewardInfo =
        canonical_decode(reward_bytes).or_else(|e| fail("reward accounting", format!("undecodable: {e}")))?;
    if reward.total() != committed_total {
        return fail("reward accounting", format!("reward total {} differs from {committed_total} committed updates", reward.total()));
    }
    if reward != expected_reward {
        return fail("reward accounting", "certified reward counts differ from the committed update sets");
    }

    check_result(a, fin.model_proof.hash_key())?;
    Ok(report)
}

fn check_update(task: &TaskState, registry: &KeyRegistry, round: u64, u: &Update) -> Result<(), AuditFailure> {
    let selected = task.clients_for(round).is_some_and(|c| c.contains(u.client));
    if u.task != TASK || u.round != round || !selected || !u.verifies(registry) || u.vector.dim() != task.params.dim {
        return fail("committed updates valid", format!("round {round}: update from {} is not admissible", u.client));
    }
    Ok(())
}

/// Ledger commit lines in the transcript must match the chain, in order.
fn check_transcript(transcript: &str, blocks: &[Block]) -> Result<(), AuditFailure> {
    let logged: Vec<&str> = transcript
        .lines()
        .filter_map(|l| {
            let mut parts = l.splitn(3, ' ');
            let (_, actor, text) = (parts.next()?, parts.next()?, parts.next()?);
            (actor == "ledger" && text.starts_with("commit ")).then_some(text)
        })
        .collect();
    let expected: Vec<String> =
        blocks.iter().flat_map(|b| b.txs.iter().map(move |t| format!("commit {}", TxLine(b.height, t)))).collect();
    for (i, want) in expected.iter().enumerate() {
        match logged.get(i) {
            Some(got) if *got == want => {}
            Some(got) => return fail("transcript ledger lines", format!("line {} reads `{got}`, chain has `{want}`", i + 1)),
            None => return fail("transcript ledger lines", format!("transcript lacks `{want}`")),
        }
    }
    if logged.len() > expected.len() {
        return fail("transcript ledger lines", format!("{} commit lines beyond the chain", logged.len() - expected.len()));
    }
    Ok(())
}

fn check_result(a: &Artifacts, certified: HashKey) -> Result<(), AuditFailure> {
    let Some(model) = &a.final_model else { return fail("final model digest", "final_model.bin missing") };
    let digest = hash_bytes(model);
    if digest != certified {
        return fail("final model digest", "final_model.bin does not hash to the FINAL model certificate");
    }
    if a.result.final_digest.as_deref() != Some(digest.to_hex().as_str()) {
        return fail("final model digest", "result.json digest differs from final_model.bin");
    }
    Ok(())
}
