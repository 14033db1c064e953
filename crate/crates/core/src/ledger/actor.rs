use std::any::Any;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::ProcessId;
use crate::messages::{Msg, Timer};
use crate::rng::SimRng;
use crate::simnet::{counter, ms, Actor, Context, Endpoint, Latency, Milestone, Time};

use super::{Block, LedgerState, Transaction, TxBody, TxLine};

fn default_block_latency() -> Latency {
    Latency::Fixed { ms: 100.0 }
}

fn default_per_validator_ms() -> f64 {
    10.0
}

/// Time from the first pending transaction to the block cut:
/// a sampled base latency plus a per-validator cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockTiming {
    #[serde(default = "default_block_latency")]
    pub latency: Latency,
    #[serde(default = "default_per_validator_ms")]
    pub per_validator_ms: f64,
}

impl Default for BlockTiming {
    fn default() -> Self {
        Self { latency: default_block_latency(), per_validator_ms: default_per_validator_ms() }
    }
}

impl BlockTiming {
    pub fn is_valid(&self) -> bool {
        self.latency.is_valid() && self.per_validator_ms.is_finite() && self.per_validator_ms >= 0.0
    }

    pub fn sample(&self, validators: usize, rng: &mut SimRng) -> Time {
        self.latency.sample(rng) + ms(self.per_validator_ms * validators as f64)
    }
}

struct Pending {
    arrival: Time,
    sender: ProcessId,
    tx: Arc<Transaction>,
}

/// The trusted ordering service: validates pending transactions against the
/// committed prefix, cuts hash-chained blocks, and streams them to subscribers.
pub struct LedgerActor {
    state: LedgerState,
    timing: BlockTiming,
    validators: usize,
    rng: SimRng,
    subscribers: Vec<Endpoint>,
    pool: Vec<Pending>,
    cut_scheduled: bool,
    blocks: Vec<Arc<Block>>,
}

impl LedgerActor {
    pub fn new(state: LedgerState, timing: BlockTiming, validators: usize, rng: SimRng, subscribers: Vec<Endpoint>) -> Self {
        Self { state, timing, validators, rng, subscribers, pool: Vec::new(), cut_scheduled: false, blocks: Vec::new() }
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    fn submit(&mut self, ctx: &mut Context<'_, Msg>, tx: Arc<Transaction>) {
        if self.pool.iter().any(|p| p.tx.digest() == tx.digest()) {
            return;
        }
        self.pool.push(Pending { arrival: ctx.now(), sender: tx.sender, tx });
        if !self.cut_scheduled {
            self.cut_scheduled = true;
            let delay = self.timing.sample(self.validators, &mut self.rng);
            ctx.schedule_self(delay, Msg::Timer(Timer::LedgerCut));
        }
    }

    fn cut(&mut self, ctx: &mut Context<'_, Msg>) {
        self.cut_scheduled = false;
        let mut pool = std::mem::take(&mut self.pool);
        pool.sort_by_key(|p| (p.arrival, p.sender));
        let height = self.state.height() + 1;
        let mut txs = Vec::new();
        for p in pool {
            match self.state.check_tx(&p.tx) {
                Ok(()) => {
                    self.state.apply_tx(&p.tx, height);
                    match &p.tx.body {
                        TxBody::StartTask { .. } => ctx.metrics.mark(1, Milestone::RoundStart, ctx.now()),
                        TxBody::NewRound { round, .. } => {
                            ctx.metrics.mark(*round, Milestone::NrArrival, p.arrival);
                            ctx.metrics.mark(*round, Milestone::NrCommit, ctx.now());
                        }
                        _ => {}
                    }
                    txs.push(Arc::unwrap_or_clone(p.tx));
                }
                Err(reason) => {
                    ctx.metrics.incr(counter::LEDGER_REJECTIONS);
                    ctx.log(format!("reject {} from {}: {reason}", p.tx.body.variant(), p.sender));
                }
            }
        }
        if txs.is_empty() {
            return;
        }
        let block = Block { height, prev: self.state.tip(), time: ctx.now(), txs };
        self.state.seal(block.hash());
        for tx in &block.txs {
            ctx.log(format!("commit {}", TxLine(height, tx)));
        }
        let block = Arc::new(block);
        for s in &self.subscribers {
            ctx.send(*s, Msg::Block(block.clone()));
        }
        self.blocks.push(block);
    }
}

impl Actor<Msg> for LedgerActor {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, _from: Endpoint, msg: Msg) {
        match msg {
            Msg::Submit(tx) => self.submit(ctx, tx),
            Msg::Timer(Timer::LedgerCut) => self.cut(ctx),
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Reorders block deliveries into height order.
#[derive(Debug)]
pub struct LedgerFollower {
    next: u64,
    buffer: BTreeMap<u64, Arc<Block>>,
}

impl Default for LedgerFollower {
    fn default() -> Self {
        Self { next: 1, buffer: BTreeMap::new() }
    }
}

impl LedgerFollower {
    /// Accepts a delivered block and returns the blocks now deliverable in order.
    pub fn push(&mut self, block: Arc<Block>) -> Vec<Arc<Block>> {
        if block.height >= self.next {
            self.buffer.insert(block.height, block);
        }
        let mut out = Vec::new();
        while let Some(b) = self.buffer.remove(&self.next) {
            self.next += 1;
            out.push(b);
        }
        out
    }
}
