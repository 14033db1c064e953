use std::any::Any;
use std::sync::Arc;

use crate::aggregation::ParamVector;
use crate::codec::{canonical_decode, canonical_encode, hash_bytes};
use crate::crypto::{KeyRegistry, SignerKey};
use crate::ids::{ProcessId, TaskId};
use crate::ledger::{Block, LedgerFollower, TaskParams, Transaction, TxBody};
use crate::messages::{Msg, Timer};
use crate::proofs::{verify_poai, PoAI, Tag};
use crate::simnet::{Actor, Context, Endpoint, Time};
use crate::storage::{ReadStart, ReadTarget, StorageReader, StoreMsg};

use super::RewardInfo;

#[derive(Clone, Debug)]
pub struct OwnerConfig {
    pub signer: SignerKey,
    pub replicas: Vec<ProcessId>,
    pub registry: Arc<KeyRegistry>,
    pub f_s: usize,
    pub task: TaskId,
    pub params: TaskParams,
    pub initial: Arc<ParamVector>,
    pub read_deadline: Time,
}

/// The model owner: publishes the task and collects the final model.
pub struct OwnerActor {
    cfg: OwnerConfig,
    reader: StorageReader<()>,
    follower: LedgerFollower,
    final_proofs: Option<(PoAI, PoAI)>,
    final_model: Option<Arc<ParamVector>>,
    reward: Option<RewardInfo>,
}

impl OwnerActor {
    pub fn new(cfg: OwnerConfig) -> Self {
        let reader = StorageReader::new(cfg.replicas.clone(), cfg.registry.clone(), cfg.f_s, cfg.read_deadline);
        Self { cfg, reader, follower: LedgerFollower::default(), final_proofs: None, final_model: None, reward: None }
    }

    pub fn final_model(&self) -> Option<&Arc<ParamVector>> {
        self.final_model.as_ref()
    }

    pub fn reward(&self) -> Option<&RewardInfo> {
        self.reward.as_ref()
    }

    /// The (reward, model) certificates from the FINAL transaction.
    pub fn final_proofs(&self) -> Option<&(PoAI, PoAI)> {
        self.final_proofs.as_ref()
    }

    fn on_block(&mut self, ctx: &mut Context<'_, Msg>, block: &Block) {
        for tx in &block.txs {
            let TxBody::Final { task, reward_proof, model_proof } = &tx.body else { continue };
            if *task != self.cfg.task || self.final_proofs.is_some() {
                continue;
            }
            let ok = reward_proof.tag() == Tag::Reward
                && model_proof.tag() == Tag::Mod
                && verify_poai(reward_proof, &self.cfg.registry, self.cfg.f_s)
                && verify_poai(model_proof, &self.cfg.registry, self.cfg.f_s);
            if !ok {
                ctx.log("final transaction carries invalid certificates");
                continue;
            }
            self.final_proofs = Some((reward_proof.clone(), model_proof.clone()));
            let targets = [ReadTarget::Proof(model_proof.clone()), ReadTarget::Proof(reward_proof.clone())];
            match self.reader.get_all(ctx, &targets, ()) {
                Ok(ReadStart::Done((), v)) => self.finish(ctx, &v),
                Ok(ReadStart::Pending(_)) => {}
                Err(e) => ctx.log(format!("final read: {e}")),
            }
        }
    }

    fn finish(&mut self, ctx: &mut Context<'_, Msg>, values: &[Arc<Vec<u8>>]) {
        match (canonical_decode::<ParamVector>(&values[0]), canonical_decode::<RewardInfo>(&values[1])) {
            (Ok(model), Ok(reward)) => {
                ctx.log(format!("final model {} reward total {}", hash_bytes(&values[0]), reward.total()));
                self.final_model = Some(Arc::new(model));
                self.reward = Some(reward);
                ctx.stop();
            }
            _ => ctx.log("final values undecodable"),
        }
    }
}

impl Actor<Msg> for OwnerActor {
    fn on_start(&mut self, ctx: &mut Context<'_, Msg>) {
        let bytes = Arc::new(canonical_encode(&*self.cfg.initial).expect("initial model is finite"));
        let key = hash_bytes(&bytes);
        for r in &self.cfg.replicas {
            ctx.send(*r, Msg::Store(StoreMsg::Store { key, value: bytes.clone() }));
        }
        let body = TxBody::NewTask { task: self.cfg.task, params: self.cfg.params.clone(), model_hash: key };
        let tx = Transaction::new(&self.cfg.signer, body).expect("task parameters encode");
        ctx.send(Endpoint::Ledger, Msg::Submit(Arc::new(tx)));
    }

    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, _from: Endpoint, msg: Msg) {
        match msg {
            Msg::Block(b) => {
                for blk in self.follower.push(b) {
                    self.on_block(ctx, &blk);
                }
            }
            Msg::Store(StoreMsg::Reply { key, value }) => {
                for ((), values) in self.reader.on_reply(ctx, key, value) {
                    self.finish(ctx, &values);
                }
            }
            Msg::Timer(Timer::ReadDeadline(id)) if self.reader.on_deadline(id).is_some() => {
                ctx.log("final read timed out");
            }
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
