use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::aggregation::ParamVector;
use crate::codec::{canonical_decode, HashKey};
use crate::crypto::{KeyRegistry, SignerKey};
use crate::ids::{ProcessId, TaskId};
use crate::learning::{apply_attack, local_update, AttackConfig, ClientDataset, SyntheticTask};
use crate::ledger::{Block, LedgerFollower, TaskParams, Transaction, TxBody};
use crate::messages::{Msg, Timer};
use crate::proofs::{PoAI, Tag};
use crate::rng::SimRng;
use crate::simnet::{counter, Actor, Context, Endpoint, Milestone, Time};
use crate::storage::{ReadStart, ReadTarget, StorageReader, StoreMsg};

use super::Update;

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub id: ProcessId,
    pub signer: SignerKey,
    pub servers: Vec<ProcessId>,
    pub replicas: Vec<ProcessId>,
    pub registry: Arc<KeyRegistry>,
    pub f_s: usize,
    pub attack: AttackConfig,
    pub stake: u64,
    /// Overrides the sample count declared at JOIN and in updates.
    pub declared_n: Option<u64>,
    /// Modelled local training cost per sample per parameter per epoch.
    pub train_ns_per_param: f64,
    pub read_deadline: Time,
}

/// A data owner that trains on its local dataset when selected.
pub struct ClientActor {
    cfg: ClientConfig,
    task_model: Arc<SyntheticTask>,
    data: ClientDataset,
    rng: SimRng,
    reader: StorageReader<u64>,
    follower: LedgerFollower,
    task: Option<(TaskId, TaskParams, HashKey)>,
    selected: BTreeSet<u64>,
    started: BTreeSet<u64>,
    certs: BTreeMap<u64, PoAI>,
    sent: Vec<u64>,
}

impl ClientActor {
    pub fn new(cfg: ClientConfig, task_model: Arc<SyntheticTask>, data: ClientDataset, rng: SimRng) -> Self {
        let reader = StorageReader::new(cfg.replicas.clone(), cfg.registry.clone(), cfg.f_s, cfg.read_deadline);
        Self {
            cfg,
            task_model,
            data,
            rng,
            reader,
            follower: LedgerFollower::default(),
            task: None,
            selected: BTreeSet::new(),
            started: BTreeSet::new(),
            certs: BTreeMap::new(),
            sent: Vec::new(),
        }
    }

    /// Rounds in which this client sent an update.
    pub fn rounds_sent(&self) -> &[u64] {
        &self.sent
    }

    fn on_block(&mut self, ctx: &mut Context<'_, Msg>, block: &Block) {
        for tx in &block.txs {
            match &tx.body {
                TxBody::NewTask { task, params, model_hash } if self.task.is_none() => {
                    self.task = Some((*task, params.clone(), *model_hash));
                    let body = TxBody::Join {
                        task: *task,
                        client: self.cfg.id,
                        stake: self.cfg.stake,
                        declared_n: self.declared_n(),
                    };
                    if let Ok(tx) = Transaction::new(&self.cfg.signer, body) {
                        ctx.send(Endpoint::Ledger, Msg::Submit(Arc::new(tx)));
                    }
                }
                TxBody::StartTask { task, clients, .. } if self.is_task(*task) => {
                    if clients.contains(self.cfg.id) {
                        self.selected.insert(1);
                        self.try_start(ctx, 1);
                    }
                }
                TxBody::NewRound { task, next_clients, .. }
                    if self.is_task(*task) && next_clients.contains(self.cfg.id) =>
                {
                    self.selected.insert(next_clients.round);
                    self.try_start(ctx, next_clients.round);
                }
                _ => {}
            }
        }
    }

    fn declared_n(&self) -> u64 {
        self.cfg.declared_n.unwrap_or(self.data.len() as u64)
    }

    fn is_task(&self, task: TaskId) -> bool {
        self.task.as_ref().is_some_and(|(t, _, _)| *t == task)
    }

    fn try_start(&mut self, ctx: &mut Context<'_, Msg>, r: u64) {
        let Some((_, _, model_hash)) = &self.task else { return };
        if !self.selected.contains(&r) || self.started.contains(&r) {
            return;
        }
        let target = if r == 1 {
            ReadTarget::Key(*model_hash)
        } else {
            match self.certs.get(&r) {
                Some(p) => ReadTarget::Proof(p.clone()),
                None => return,
            }
        };
        self.started.insert(r);
        match self.reader.read(ctx, target, r) {
            Ok(ReadStart::Done(r, v)) => self.train(ctx, r, &v[0]),
            Ok(ReadStart::Pending(_)) => {}
            Err(_) => {
                // An unverifiable certificate; wait for another one.
                self.started.remove(&r);
                self.certs.remove(&r);
            }
        }
    }

    fn train(&mut self, ctx: &mut Context<'_, Msg>, r: u64, bytes: &[u8]) {
        let Some((task, params, _)) = self.task.clone() else { return };
        let model = match canonical_decode::<ParamVector>(bytes) {
            Ok(m) if m.dim() == params.dim => m,
            _ => {
                ctx.log(format!("round {r} model undecodable"));
                return;
            }
        };
        let g = match local_update(&self.task_model, &self.data, &model, &params.train, &mut self.rng) {
            Ok(g) => g,
            Err(e) => {
                ctx.log(format!("round {r} training failed: {e}"));
                return;
            }
        };
        let g = apply_attack(&g, &self.cfg.attack);
        let update = match Update::new(&self.cfg.signer, task, r, self.declared_n(), g) {
            Ok(u) => Arc::new(u),
            Err(e) => {
                ctx.log(format!("round {r} update unencodable: {e}"));
                return;
            }
        };
        let work = f64::from(params.train.epochs) * (self.data.len() * params.dim) as f64;
        let delay = (self.cfg.train_ns_per_param * work).round() as Time;
        ctx.metrics.mark(r, Milestone::FirstUpdate, ctx.now() + delay);
        for s in &self.cfg.servers {
            ctx.send_after(delay, *s, Msg::Update(update.clone()));
        }
        self.sent.push(r);
    }
}

impl Actor<Msg> for ClientActor {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, _from: Endpoint, msg: Msg) {
        match msg {
            Msg::Block(b) => {
                for blk in self.follower.push(b) {
                    self.on_block(ctx, &blk);
                }
            }
            Msg::ModelCert(p) => {
                if p.tag() != Tag::Mod || !self.is_task(p.task()) {
                    return;
                }
                let r = p.round() + 1;
                if !self.started.contains(&r) {
                    self.certs.entry(r).or_insert(p);
                    self.try_start(ctx, r);
                }
            }
            Msg::Store(StoreMsg::Reply { key, value }) => {
                for (r, values) in self.reader.on_reply(ctx, key, value) {
                    self.train(ctx, r, &values[0]);
                }
            }
            Msg::Timer(Timer::ReadDeadline(id)) => {
                if let Some(r) = self.reader.on_deadline(id) {
                    ctx.metrics.incr(counter::STRAGGLERS);
                    ctx.log(format!("straggler round {r}"));
                }
            }
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
