use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::{epsilon_close, ParamVector, WeightedUpdate};
use crate::codec::{canonical_decode, canonical_encode, hash_bytes, hash_parts, hash_value, HashKey};
use crate::crypto::{KeyRegistry, Signature, SignerKey};
use crate::ids::{ProcessId, TaskId};
use crate::ledger::{Block, LedgerFollower, LedgerState, TaskParams, Transaction, TxBody};
use crate::messages::{Msg, Timer};
use crate::proofs::{Accumulated, LocalProof, PoAI, Slot, Tag, VoteAccumulator};
use crate::simnet::{counter, Actor, Context, Endpoint, Milestone, Time};
use crate::storage::{ReadStart, ReadTarget, StorageReader, StoreMsg};

use super::{ClientSet, RewardInfo, Update};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerBehavior {
    #[default]
    Correct,
    /// Sends nothing.
    Silent,
    /// Follows the protocol but also votes for a fabricated hash-key in every
    /// slot it votes on, and for every model it receives.
    Equivocator,
    /// Broadcasts its aggregate offset by 100 eps and votes only for that.
    ModelCorruptor,
    /// Follows the protocol but also submits NR transactions with forged
    /// certificates.
    BogusNrSender,
}

impl ServerBehavior {
    pub fn is_byzantine(self) -> bool {
        self != ServerBehavior::Correct
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub id: ProcessId,
    pub behavior: ServerBehavior,
    pub f_s: usize,
    pub servers: Vec<ProcessId>,
    pub replicas: Vec<ProcessId>,
    pub registry: Arc<KeyRegistry>,
    pub signer: SignerKey,
    /// Modelled aggregation cost per parameter per update.
    pub aggregate_ns_per_param: f64,
    pub read_deadline: Time,
}

/// Keeps one committed update per client (the lowest hash-key), sorted by client.
pub fn dedupe_committed(updates: impl IntoIterator<Item = (HashKey, Arc<Update>)>) -> Vec<(HashKey, Arc<Update>)> {
    let mut by_client: BTreeMap<ProcessId, (HashKey, Arc<Update>)> = BTreeMap::new();
    for (k, u) in updates {
        match by_client.get(&u.client) {
            Some((existing, _)) if *existing <= k => {}
            _ => {
                by_client.insert(u.client, (k, u));
            }
        }
    }
    by_client.into_values().collect()
}

/// Summation order of a server: the client-sorted list rotated left by `rotation`.
pub fn aggregation_order<T: Clone>(sorted: &[T], rotation: usize) -> Vec<T> {
    let mut out = sorted.to_vec();
    if !out.is_empty() {
        let r = rotation % out.len();
        out.rotate_left(r);
    }
    out
}

#[derive(Debug)]
enum Fetch {
    Initial,
    Round(u64),
}

#[derive(Default)]
struct RoundState {
    selected: Option<ClientSet>,
    seen: BTreeSet<ProcessId>,
    updates: BTreeMap<HashKey, Arc<Update>>,
    cand: BTreeMap<ProcessId, PoAI>,
    threshold_fired: bool,
    next_clients: Option<ClientSet>,
    committed: Option<Vec<PoAI>>,
    fetched: bool,
    committed_clients: Option<Vec<ProcessId>>,
    aggregate: Option<Arc<ParamVector>>,
    published: Option<(HashKey, Arc<ParamVector>)>,
    pending_models: Vec<(ProcessId, Arc<ParamVector>)>,
    model_cert: Option<PoAI>,
    fanned_out: bool,
    bogus_sent: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum TxSlot {
    Start,
    Round(u64),
    Final,
}

/// An aggregation server.
pub struct ServerActor {
    cfg: ServerConfig,
    index: usize,
    reader: StorageReader<Fetch>,
    follower: LedgerFollower,
    ledger: LedgerState,
    acc: VoteAccumulator,
    task: Option<(TaskId, TaskParams)>,
    w0: Option<Arc<ParamVector>>,
    rounds: BTreeMap<u64, RoundState>,
    early: Vec<Arc<Update>>,
    voted: BTreeSet<Slot>,
    start_set: Option<ClientSet>,
    reward: Option<(HashKey, RewardInfo)>,
    pending_tx: BTreeMap<TxSlot, Arc<Transaction>>,
    certificates: Vec<(Time, PoAI)>,
    halted: Option<String>,
}

impl ServerActor {
    pub fn new(cfg: ServerConfig) -> Self {
        let index = cfg.servers.iter().position(|s| *s == cfg.id).unwrap_or(0);
        let reader = StorageReader::new(cfg.replicas.clone(), cfg.registry.clone(), cfg.f_s, cfg.read_deadline);
        Self {
            index,
            reader,
            follower: LedgerFollower::default(),
            ledger: LedgerState::new(cfg.registry.clone(), cfg.f_s),
            acc: VoteAccumulator::new(cfg.f_s),
            task: None,
            w0: None,
            rounds: BTreeMap::new(),
            early: Vec::new(),
            voted: BTreeSet::new(),
            start_set: None,
            reward: None,
            pending_tx: BTreeMap::new(),
            certificates: Vec::new(),
            halted: None,
            cfg,
        }
    }

    pub fn behavior(&self) -> ServerBehavior {
        self.cfg.behavior
    }

    /// Certificates completed by this server's accumulator, in order.
    pub fn certificates(&self) -> &[(Time, PoAI)] {
        &self.certificates
    }

    /// This server's own aggregate for `round`.
    pub fn aggregate(&self, round: u64) -> Option<&Arc<ParamVector>> {
        self.rounds.get(&round).and_then(|r| r.aggregate.as_ref())
    }

    pub fn reward(&self) -> Option<&RewardInfo> {
        self.reward.as_ref().map(|(_, r)| r)
    }

    /// Why this server stopped making progress, if it did.
    pub fn halted(&self) -> Option<&str> {
        self.halted.as_deref()
    }

    fn task_id(&self) -> Option<TaskId> {
        self.task.as_ref().map(|(t, _)| *t)
    }

    fn round(&mut self, r: u64) -> &mut RoundState {
        self.rounds.entry(r).or_default()
    }

    fn halt(&mut self, ctx: &mut Context<'_, Msg>, why: String) {
        ctx.log(format!("halt: {why}"));
        self.halted.get_or_insert(why);
    }

    fn store(&self, ctx: &mut Context<'_, Msg>, key: HashKey, value: Arc<Vec<u8>>) {
        for r in &self.cfg.replicas {
            ctx.send(*r, Msg::Store(StoreMsg::Store { key, value: value.clone() }));
        }
    }

    fn submit(&mut self, ctx: &mut Context<'_, Msg>, slot: TxSlot, body: TxBody) {
        if self.pending_tx.contains_key(&slot) {
            return;
        }
        match Transaction::new(&self.cfg.signer, body) {
            Ok(tx) => {
                let tx = Arc::new(tx);
                ctx.send(Endpoint::Ledger, Msg::Submit(tx.clone()));
                self.pending_tx.insert(slot, tx);
            }
            Err(e) => self.halt(ctx, format!("cannot encode transaction: {e}")),
        }
    }

    /// Signs and broadcasts a vote, at most once per slot.
    fn vote(&mut self, ctx: &mut Context<'_, Msg>, slot: Slot) {
        if !self.voted.insert(slot) {
            return;
        }
        let v = LocalProof::sign(&self.cfg.signer, slot);
        for s in self.cfg.servers.clone() {
            if s != self.cfg.id {
                ctx.send(s, Msg::Vote(v.clone()));
            }
        }
        self.on_vote(ctx, v);
        if self.cfg.behavior == ServerBehavior::Equivocator {
            let fake = Slot { hash_key: hash_parts(&[b"equivocate", &slot.hash_key.0]), ..slot };
            if self.voted.insert(fake) {
                let v = LocalProof::sign(&self.cfg.signer, fake);
                for s in self.cfg.servers.clone() {
                    if s != self.cfg.id {
                        ctx.send(s, Msg::Vote(v.clone()));
                    }
                }
            }
        }
    }

    fn on_vote(&mut self, ctx: &mut Context<'_, Msg>, v: LocalProof) {
        match self.acc.offer(&v, &self.cfg.registry) {
            Accumulated::Certificate(p) => self.on_certificate(ctx, p),
            Accumulated::Dropped => ctx.metrics.incr(counter::DROPPED_VOTES),
            Accumulated::Pending | Accumulated::Late => {}
        }
    }

    fn on_certificate(&mut self, ctx: &mut Context<'_, Msg>, p: PoAI) {
        self.certificates.push((ctx.now(), p.clone()));
        if Some(p.task()) != self.task_id() {
            return;
        }
        let r = p.round();
        match p.tag() {
            Tag::Upd => self.try_add_cand(ctx, r, p.hash_key()),
            Tag::Clients => {
                self.try_submit_start(ctx);
                if r >= 2 {
                    self.try_submit_nr(ctx, r - 1);
                }
            }
            Tag::Mod => self.on_model_cert(ctx, p),
            Tag::Reward => self.try_submit_final(ctx),
        }
    }

    // ---- ledger ----

    fn on_block(&mut self, ctx: &mut Context<'_, Msg>, block: &Block) {
        self.ledger.apply_block_trusted(block);
        for tx in &block.txs {
            match &tx.body {
                TxBody::NewTask { task, params, model_hash } => {
                    if self.task.is_some() {
                        continue;
                    }
                    self.task = Some((*task, params.clone()));
                    match self.reader.read(ctx, ReadTarget::Key(*model_hash), Fetch::Initial) {
                        Ok(ReadStart::Done(p, v)) => self.on_fetched(ctx, p, v),
                        Ok(ReadStart::Pending(_)) => {}
                        Err(e) => self.halt(ctx, e.to_string()),
                    }
                }
                TxBody::StartTask { task, clients, .. } if Some(*task) == self.task_id() => {
                    self.pending_tx.remove(&TxSlot::Start);
                    self.round(1).selected = Some(clients.clone());
                    self.on_round_opened(ctx, 1);
                }
                TxBody::NewRound { task, round, cand, next_clients, .. } if Some(*task) == self.task_id() => {
                    let t = *round;
                    self.pending_tx.remove(&TxSlot::Round(t));
                    self.round(t).committed = Some(cand.clone());
                    if !next_clients.members.is_empty() {
                        self.round(t + 1).selected = Some(next_clients.clone());
                    }
                    self.start_fetch(ctx, t);
                    self.fan_out(ctx, t);
                    self.on_round_opened(ctx, t + 1);
                }
                TxBody::Final { task, .. } if Some(*task) == self.task_id() => {
                    self.pending_tx.remove(&TxSlot::Final);
                }
                _ => {}
            }
        }
        self.try_vote_start(ctx);
        for tx in self.pending_tx.values() {
            ctx.send(Endpoint::Ledger, Msg::Submit(tx.clone()));
        }
    }

    fn try_vote_start(&mut self, ctx: &mut Context<'_, Msg>) {
        let Some(task) = self.task_id() else { return };
        if self.start_set.is_some() || self.ledger.task(task).is_none_or(|t| t.start.is_some()) {
            return;
        }
        let Some(c1) = self.ledger.expected_selection(task, 1) else { return };
        let key = hash_value(&c1).expect("client sets encode");
        self.start_set = Some(c1);
        self.vote(ctx, Slot::new(Tag::Clients, key, task, 1));
        self.try_submit_start(ctx);
    }

    fn try_submit_start(&mut self, ctx: &mut Context<'_, Msg>) {
        let (Some(task), Some(c1)) = (self.task_id(), self.start_set.clone()) else { return };
        if self.ledger.task(task).is_some_and(|t| t.start.is_some()) {
            return;
        }
        let slot = Slot::new(Tag::Clients, hash_value(&c1).expect("client sets encode"), task, 1);
        if let Some(proof) = self.acc.certificate(&slot).cloned() {
            self.submit(ctx, TxSlot::Start, TxBody::StartTask { task, clients: c1, proof });
        }
    }

    fn on_round_opened(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let early: Vec<Arc<Update>> = std::mem::take(&mut self.early);
        for u in early {
            self.on_update(ctx, u);
        }
        if self.cfg.behavior == ServerBehavior::BogusNrSender {
            self.send_bogus_nr(ctx, r);
        }
    }

    fn send_bogus_nr(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some((task, params)) = self.task.clone() else { return };
        if r > params.t_fin || self.round(r).bogus_sent {
            return;
        }
        self.round(r).bogus_sent = true;
        let forge = |i: u64, tag: Tag, round: u64| {
            let slot = Slot::new(tag, hash_parts(&[b"forged", &i.to_le_bytes()]), task, round);
            let mine = LocalProof::sign(&self.cfg.signer, slot).signature;
            let mut signatures = vec![mine];
            for s in self.cfg.servers.iter().filter(|s| **s != self.cfg.id).take(self.cfg.f_s) {
                signatures.push(Signature { signer: *s, bytes: [7; 64] });
            }
            signatures.sort_by_key(|s| s.signer);
            PoAI { slot, signatures }
        };
        let cand = (0..params.m as u64).map(|i| forge(i, Tag::Upd, r)).collect();
        let next_clients = ClientSet::terminal(task, r + 1);
        let body = TxBody::NewRound { task, round: r, cand, next_clients, clients_proof: forge(u64::MAX, Tag::Clients, r + 1) };
        if let Ok(tx) = Transaction::new(&self.cfg.signer, body) {
            ctx.send(Endpoint::Ledger, Msg::Submit(Arc::new(tx)));
        }
    }

    // ---- updates and candidate sets ----

    fn on_update(&mut self, ctx: &mut Context<'_, Msg>, u: Arc<Update>) {
        let Some((task, params)) = self.task.clone() else {
            self.early.push(u);
            return;
        };
        if u.task != task || u.round == 0 || u.round > params.t_fin {
            ctx.metrics.incr(counter::DROPPED_UPDATES);
            return;
        }
        let st = self.round(u.round);
        let Some(selected) = &st.selected else {
            self.early.push(u);
            return;
        };
        if st.committed.is_some() || !selected.contains(u.client) || st.seen.contains(&u.client) {
            ctx.metrics.incr(counter::DROPPED_UPDATES);
            return;
        }
        if u.vector.dim() != params.dim || !u.verifies(&self.cfg.registry) {
            ctx.metrics.incr(counter::DROPPED_UPDATES);
            return;
        }
        let Ok(bytes) = canonical_encode(&*u) else {
            ctx.metrics.incr(counter::DROPPED_UPDATES);
            return;
        };
        let key = hash_bytes(&bytes);
        let st = self.round(u.round);
        st.seen.insert(u.client);
        st.updates.insert(key, u.clone());
        self.store(ctx, key, Arc::new(bytes));
        self.vote(ctx, Slot::new(Tag::Upd, key, task, u.round));
        self.try_add_cand(ctx, u.round, key);
    }

    fn try_add_cand(&mut self, ctx: &mut Context<'_, Msg>, r: u64, key: HashKey) {
        let Some((task, params)) = self.task.clone() else { return };
        let Some(p) = self.acc.certificate(&Slot::new(Tag::Upd, key, task, r)).cloned() else { return };
        let st = self.round(r);
        let Some(u) = st.updates.get(&key) else { return };
        if st.committed.is_some() || st.cand.contains_key(&u.client) {
            return;
        }
        st.cand.insert(u.client, p);
        if st.cand.len() >= params.m && !st.threshold_fired {
            st.threshold_fired = true;
            self.on_threshold(ctx, r);
        }
    }

    fn on_threshold(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some((task, _)) = self.task.clone() else { return };
        let Some(next) = self.ledger.expected_selection(task, r + 1) else {
            self.halt(ctx, format!("selection for round {} unavailable", r + 1));
            return;
        };
        let key = hash_value(&next).expect("client sets encode");
        self.round(r).next_clients = Some(next);
        self.vote(ctx, Slot::new(Tag::Clients, key, task, r + 1));
        self.try_submit_nr(ctx, r);
    }

    fn try_submit_nr(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some(task) = self.task_id() else { return };
        let Some(st) = self.rounds.get(&r) else { return };
        if !st.threshold_fired || st.committed.is_some() {
            return;
        }
        let Some(next) = st.next_clients.clone() else { return };
        let slot = Slot::new(Tag::Clients, hash_value(&next).expect("client sets encode"), task, r + 1);
        let Some(clients_proof) = self.acc.certificate(&slot).cloned() else { return };
        let cand: Vec<PoAI> = st.cand.values().cloned().collect();
        self.submit(ctx, TxSlot::Round(r), TxBody::NewRound { task, round: r, cand, next_clients: next, clients_proof });
    }

    // ---- fetch and aggregation ----

    fn start_fetch(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let st = self.round(r);
        let Some(committed) = st.committed.clone() else { return };
        let missing: Vec<ReadTarget> = committed
            .iter()
            .filter(|p| !st.updates.contains_key(&p.hash_key()))
            .map(|p| ReadTarget::Proof(p.clone()))
            .collect();
        match self.reader.get_all(ctx, &missing, Fetch::Round(r)) {
            Ok(ReadStart::Done(p, v)) => self.on_fetched(ctx, p, v),
            Ok(ReadStart::Pending(_)) => {}
            Err(e) => self.halt(ctx, format!("round {r} fetch: {e}")),
        }
    }

    fn on_fetched(&mut self, ctx: &mut Context<'_, Msg>, purpose: Fetch, values: Vec<Arc<Vec<u8>>>) {
        match purpose {
            Fetch::Initial => match canonical_decode::<ParamVector>(&values[0]) {
                Ok(w) => {
                    self.w0 = Some(Arc::new(w));
                    self.try_aggregate(ctx, 1);
                }
                Err(e) => self.halt(ctx, format!("initial model: {e}")),
            },
            Fetch::Round(r) => {
                for bytes in values {
                    match canonical_decode::<Update>(&bytes) {
                        Ok(u) => {
                            self.round(r).updates.insert(hash_bytes(&bytes), Arc::new(u));
                        }
                        Err(e) => return self.halt(ctx, format!("round {r} update: {e}")),
                    }
                }
                self.round(r).fetched = true;
                ctx.metrics.mark(r, Milestone::FetchDone, ctx.now());
                self.try_aggregate(ctx, r);
            }
        }
    }

    fn try_aggregate(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some((task, params)) = self.task.clone() else { return };
        let base = if r == 1 {
            self.w0.clone()
        } else {
            self.rounds.get(&(r - 1)).and_then(|s| s.aggregate.clone())
        };
        let Some(base) = base else { return };
        let Some(st) = self.rounds.get(&r) else { return };
        if !st.fetched || st.aggregate.is_some() {
            return;
        }
        let committed = st.committed.as_ref().expect("fetched implies committed");
        let held: Vec<(HashKey, Arc<Update>)> =
            committed.iter().filter_map(|p| st.updates.get(&p.hash_key()).map(|u| (p.hash_key(), u.clone()))).collect();
        let sorted = dedupe_committed(held);
        let clients: Vec<ProcessId> = sorted.iter().map(|(_, u)| u.client).collect();
        let rotation = if self.cfg.behavior == ServerBehavior::ModelCorruptor { 0 } else { self.index };
        let ordered = aggregation_order(&sorted, rotation);
        let state = self.ledger.task(task);
        let weighted: Vec<WeightedUpdate<'_>> = ordered
            .iter()
            .map(|(_, u)| WeightedUpdate {
                update: &u.vector,
                weight: state.and_then(|t| t.declared_n(u.client)).unwrap_or(1),
                client: u.client,
                round: r,
            })
            .collect();
        let w = match params.aggregator.step(&base, &weighted) {
            Ok(w) => Arc::new(w),
            Err(e) => return self.halt(ctx, format!("round {r} aggregation: {e}")),
        };
        let n = weighted.len();
        drop(weighted);
        let st = self.round(r);
        st.aggregate = Some(w.clone());
        st.committed_clients = Some(clients);
        st.updates.clear();
        let delay = (self.cfg.aggregate_ns_per_param * (params.dim * n) as f64).round() as Time;
        ctx.schedule_self(delay, Msg::Timer(Timer::Publish(r)));
        self.try_aggregate(ctx, r + 1);
    }

    fn publish(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some((task, params)) = self.task.clone() else { return };
        let Some(own) = self.rounds.get(&r).and_then(|s| s.aggregate.clone()) else { return };
        let model = if self.cfg.behavior == ServerBehavior::ModelCorruptor {
            let eps = &params.eps;
            Arc::new(ParamVector(own.0.iter().enumerate().map(|(i, v)| v + 100.0 * eps.get(i).max(1e-9)).collect()))
        } else {
            own
        };
        let bytes = Arc::new(canonical_encode(&*model).expect("aggregates are finite"));
        let key = hash_bytes(&bytes);
        ctx.log(format!("aggregate round {r} {key}"));
        self.round(r).published = Some((key, model.clone()));
        self.store(ctx, key, bytes);
        for s in self.cfg.servers.clone() {
            if s != self.cfg.id {
                ctx.send(s, Msg::Model { task, round: r, model: model.clone() });
            }
        }
        self.vote(ctx, Slot::new(Tag::Mod, key, task, r));
        let pending = std::mem::take(&mut self.round(r).pending_models);
        for (from, m) in pending {
            self.check_model(ctx, from, r, m);
        }
        if r == params.t_fin {
            self.vote_reward(ctx);
        }
    }

    fn on_model(&mut self, ctx: &mut Context<'_, Msg>, from: ProcessId, task: TaskId, r: u64, model: Arc<ParamVector>) {
        if Some(task) != self.task_id() {
            return;
        }
        let st = self.round(r);
        if st.published.is_none() {
            st.pending_models.push((from, model));
            return;
        }
        self.check_model(ctx, from, r, model);
    }

    fn check_model(&mut self, ctx: &mut Context<'_, Msg>, from: ProcessId, r: u64, model: Arc<ParamVector>) {
        let Some((task, params)) = self.task.clone() else { return };
        let Some(own) = self.rounds.get(&r).and_then(|s| s.aggregate.clone()) else { return };
        let accept = match self.cfg.behavior {
            ServerBehavior::ModelCorruptor => false,
            ServerBehavior::Equivocator => true,
            _ => epsilon_close(&model, &own, &params.eps).unwrap_or(false),
        };
        if !accept {
            if !self.cfg.behavior.is_byzantine() {
                ctx.metrics.incr(counter::REJECTED_MODELS);
                ctx.log(format!("reject model round {r} from {from}"));
            }
            return;
        }
        if !self.cfg.behavior.is_byzantine() {
            ctx.metrics.gauge_max(counter::MAX_MODEL_DIVERGENCE, model.max_abs_diff(&own));
        }
        let Ok(bytes) = canonical_encode(&*model) else { return };
        let key = hash_bytes(&bytes);
        if !self.voted.contains(&Slot::new(Tag::Mod, key, task, r)) {
            self.store(ctx, key, Arc::new(bytes));
            self.vote(ctx, Slot::new(Tag::Mod, key, task, r));
        }
    }

    fn on_model_cert(&mut self, ctx: &mut Context<'_, Msg>, p: PoAI) {
        let Some((_, params)) = self.task.clone() else { return };
        let r = p.round();
        if self.round(r).model_cert.is_some() {
            return;
        }
        ctx.log(format!("certificate {} round {r}", p.render()));
        ctx.metrics.mark(r, Milestone::ModelCert, ctx.now());
        if r < params.t_fin {
            ctx.metrics.mark(r + 1, Milestone::RoundStart, ctx.now());
        }
        self.round(r).model_cert = Some(p);
        self.fan_out(ctx, r);
        if r == params.t_fin {
            self.try_submit_final(ctx);
        }
    }

    /// Sends round `r`'s model certificate to the clients of round `r+1`.
    fn fan_out(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let next = self.rounds.get(&(r + 1)).and_then(|s| s.selected.clone());
        let st = self.round(r);
        let (Some(p), Some(next)) = (st.model_cert.clone(), next) else { return };
        if st.fanned_out {
            return;
        }
        st.fanned_out = true;
        for c in &next.members {
            ctx.send(*c, Msg::ModelCert(p.clone()));
        }
    }

    // ---- final round ----

    fn vote_reward(&mut self, ctx: &mut Context<'_, Msg>) {
        let Some((task, params)) = self.task.clone() else { return };
        if self.reward.is_some() {
            return;
        }
        let mut info = RewardInfo { task, counts: BTreeMap::new() };
        for r in 1..=params.t_fin {
            let Some(clients) = self.rounds.get(&r).and_then(|s| s.committed_clients.as_ref()) else { return };
            for c in clients {
                *info.counts.entry(*c).or_default() += 1;
            }
        }
        let bytes = Arc::new(canonical_encode(&info).expect("reward info encodes"));
        let key = hash_bytes(&bytes);
        self.reward = Some((key, info));
        self.store(ctx, key, bytes);
        self.vote(ctx, Slot::new(Tag::Reward, key, task, params.t_fin));
        self.try_submit_final(ctx);
    }

    fn try_submit_final(&mut self, ctx: &mut Context<'_, Msg>) {
        let Some((task, params)) = self.task.clone() else { return };
        if self.ledger.task(task).is_some_and(|t| t.fin.is_some()) {
            return;
        }
        let Some((key, _)) = &self.reward else { return };
        let Some(reward_proof) = self.acc.certificate(&Slot::new(Tag::Reward, *key, task, params.t_fin)).cloned() else {
            return;
        };
        let Some(model_proof) = self.rounds.get(&params.t_fin).and_then(|s| s.model_cert.clone()) else { return };
        self.submit(ctx, TxSlot::Final, TxBody::Final { task, reward_proof, model_proof });
    }
}

impl Actor<Msg> for ServerActor {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, from: Endpoint, msg: Msg) {
        if self.cfg.behavior == ServerBehavior::Silent {
            return;
        }
        match msg {
            Msg::Block(b) => {
                for blk in self.follower.push(b) {
                    self.on_block(ctx, &blk);
                }
            }
            Msg::Update(u) => self.on_update(ctx, u),
            Msg::Vote(v) => self.on_vote(ctx, v),
            Msg::Model { task, round, model } => {
                if let Endpoint::Process(p) = from {
                    self.on_model(ctx, p, task, round, model);
                }
            }
            Msg::Store(StoreMsg::Reply { key, value }) => {
                for (purpose, values) in self.reader.on_reply(ctx, key, value) {
                    self.on_fetched(ctx, purpose, values);
                }
            }
            Msg::Timer(Timer::ReadDeadline(id)) => {
                if let Some(purpose) = self.reader.on_deadline(id) {
                    self.halt(ctx, format!("availability timeout reading {purpose:?}"));
                }
            }
            Msg::Timer(Timer::Publish(r)) => self.publish(ctx, r),
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_a_left_shift() {
        assert_eq!(aggregation_order(&[1, 2, 3], 1), vec![2, 3, 1]);
        assert_eq!(aggregation_order(&[1, 2, 3], 4), vec![2, 3, 1]);
        assert_eq!(aggregation_order::<u8>(&[], 2), Vec::<u8>::new());
    }
}
