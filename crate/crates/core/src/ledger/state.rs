use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::codec::{hash_value, HashKey};
use crate::crypto::KeyRegistry;
use crate::ids::{ProcessId, ProcessKind, TaskId};
use crate::proofs::{verify_poai, PoAI, Tag};
use crate::protocol::{select_clients, ClientSet, SelectionInput};

use super::{genesis_hash, Block, TaskParams, Transaction, TxBody};

/// Why a transaction was refused.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxRejection {
    #[error("bad signature")]
    BadSignature,
    #[error("duplicate of a committed transaction")]
    Duplicate,
    #[error("sender {0} may not submit this transaction")]
    WrongSender(ProcessId),
    #[error("unknown task")]
    UnknownTask,
    #[error("task already exists")]
    TaskExists,
    #[error("{0}")]
    InvalidParams(String),
    #[error("stake {stake} below threshold {threshold}")]
    StakeTooLow { stake: u64, threshold: u64 },
    #[error("client already joined")]
    AlreadyJoined,
    #[error("declared sample count must be positive")]
    BadDeclaredCount,
    #[error("task already started")]
    AlreadyStarted,
    #[error("task not started")]
    NotStarted,
    #[error("too few registered clients")]
    NotEnoughClients,
    #[error("client set differs from the deterministic selection")]
    WrongSelection,
    #[error("{0} certificate does not verify")]
    BadProof(&'static str),
    #[error("round {got} is not the next round {expected}")]
    WrongRound { expected: u64, got: u64 },
    #[error("candidate set has {got} distinct certificates, need {needed}")]
    TooFewCandidates { needed: usize, got: usize },
    #[error("final round not committed")]
    NotFinished,
    #[error("task already finalized")]
    AlreadyFinal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub stake: u64,
    pub declared_n: u64,
    pub height: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub height: u64,
    pub sender: ProcessId,
    pub cand: Vec<PoAI>,
    pub next_clients: ClientSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalRecord {
    pub height: u64,
    pub reward_proof: PoAI,
    pub model_proof: PoAI,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskState {
    pub params: TaskParams,
    pub model_hash: HashKey,
    pub owner: ProcessId,
    pub registrants: BTreeMap<ProcessId, Registration>,
    /// Height at which registrations first reached `min_clients`.
    pub ready_height: Option<u64>,
    pub start: Option<(u64, ClientSet)>,
    pub rounds: BTreeMap<u64, RoundRecord>,
    pub fin: Option<FinalRecord>,
}

impl TaskState {
    /// Highest round with a committed NR (0 if none).
    pub fn last_round(&self) -> u64 {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    /// Height of the block that opened `round`.
    pub fn round_start_height(&self, round: u64) -> Option<u64> {
        match round {
            0 => None,
            1 => self.start.as_ref().map(|(h, _)| *h),
            r => self.rounds.get(&(r - 1)).map(|rec| rec.height),
        }
    }

    /// The clients selected for `round`, once fixed on-chain.
    pub fn clients_for(&self, round: u64) -> Option<&ClientSet> {
        match round {
            0 => None,
            1 => self.start.as_ref().map(|(_, c)| c),
            r => self.rounds.get(&(r - 1)).map(|rec| &rec.next_clients),
        }
    }

    pub fn declared_n(&self, client: ProcessId) -> Option<u64> {
        self.registrants.get(&client).map(|r| r.declared_n)
    }
}

/// The deterministic state every ledger follower derives from the chain.
#[derive(Clone, Debug)]
pub struct LedgerState {
    registry: Arc<KeyRegistry>,
    f_s: usize,
    tasks: BTreeMap<TaskId, TaskState>,
    committed: BTreeSet<HashKey>,
    block_hashes: Vec<HashKey>,
}

#[allow(clippy::too_many_arguments)]
fn check_proof(p: &PoAI, tag: Tag, task: TaskId, round: u64, key: Option<HashKey>, reg: &KeyRegistry, f_s: usize, what: &'static str) -> Result<(), TxRejection> {
    let ok = p.tag() == tag
        && p.task() == task
        && p.round() == round
        && key.is_none_or(|k| k == p.hash_key())
        && verify_poai(p, reg, f_s);
    if ok {
        Ok(())
    } else {
        Err(TxRejection::BadProof(what))
    }
}

impl LedgerState {
    pub fn new(registry: Arc<KeyRegistry>, f_s: usize) -> Self {
        Self { registry, f_s, tasks: BTreeMap::new(), committed: BTreeSet::new(), block_hashes: vec![genesis_hash()] }
    }

    pub fn f_s(&self) -> usize {
        self.f_s
    }

    pub fn registry(&self) -> &Arc<KeyRegistry> {
        &self.registry
    }

    /// Height of the last applied block.
    pub fn height(&self) -> u64 {
        self.block_hashes.len() as u64 - 1
    }

    pub fn block_hash(&self, height: u64) -> Option<HashKey> {
        self.block_hashes.get(height as usize).copied()
    }

    pub fn tip(&self) -> HashKey {
        *self.block_hashes.last().expect("genesis present")
    }

    pub fn task(&self, task: TaskId) -> Option<&TaskState> {
        self.tasks.get(&task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&TaskId, &TaskState)> {
        self.tasks.iter()
    }

    pub fn is_committed(&self, digest: &HashKey) -> bool {
        self.committed.contains(digest)
    }

    /// Inputs to the selection of `round`'s clients, once the chain fixes them.
    pub fn selection_input(&self, task: TaskId, round: u64) -> Option<SelectionInput> {
        let t = self.tasks.get(&task)?;
        let h = match round {
            0 => return None,
            1 => t.ready_height?,
            r => t.round_start_height(r - 1)?,
        };
        Some(SelectionInput {
            selection_seed: t.params.selection_seed,
            task,
            round,
            block_hash: self.block_hash(h)?,
            registrants: t.registrants.iter().filter(|(_, r)| r.height <= h).map(|(p, _)| *p).collect(),
        })
    }

    /// The deterministic selection for `round`; the terminal empty set after `t_fin`.
    pub fn expected_selection(&self, task: TaskId, round: u64) -> Option<ClientSet> {
        let t = self.tasks.get(&task)?;
        if round > t.params.t_fin {
            return Some(ClientSet::terminal(task, round));
        }
        select_clients(&self.selection_input(task, round)?, t.params.k).ok()
    }

    /// Validity of `tx` against the current state.
    pub fn check_tx(&self, tx: &Transaction) -> Result<(), TxRejection> {
        if !tx.verifies(&self.registry) {
            return Err(TxRejection::BadSignature);
        }
        if self.committed.contains(&tx.digest()) {
            return Err(TxRejection::Duplicate);
        }
        let (reg, f_s) = (&*self.registry, self.f_s);
        let require = |kind: ProcessKind| {
            if tx.sender.kind == kind {
                Ok(())
            } else {
                Err(TxRejection::WrongSender(tx.sender))
            }
        };
        match &tx.body {
            TxBody::NewTask { task, params, .. } => {
                require(ProcessKind::ModelOwner)?;
                if self.tasks.contains_key(task) {
                    return Err(TxRejection::TaskExists);
                }
                params.validate().map_err(|e| TxRejection::InvalidParams(e.0))?;
            }
            TxBody::Join { task, client, stake, declared_n } => {
                require(ProcessKind::Client)?;
                if *client != tx.sender {
                    return Err(TxRejection::WrongSender(tx.sender));
                }
                let t = self.tasks.get(task).ok_or(TxRejection::UnknownTask)?;
                if *stake < t.params.stake_threshold {
                    return Err(TxRejection::StakeTooLow { stake: *stake, threshold: t.params.stake_threshold });
                }
                if t.registrants.contains_key(client) {
                    return Err(TxRejection::AlreadyJoined);
                }
                if *declared_n == 0 {
                    return Err(TxRejection::BadDeclaredCount);
                }
            }
            TxBody::StartTask { task, clients, proof } => {
                require(ProcessKind::Server)?;
                let t = self.tasks.get(task).ok_or(TxRejection::UnknownTask)?;
                if t.start.is_some() {
                    return Err(TxRejection::AlreadyStarted);
                }
                if t.ready_height.is_none() {
                    return Err(TxRejection::NotEnoughClients);
                }
                if self.expected_selection(*task, 1).as_ref() != Some(clients) {
                    return Err(TxRejection::WrongSelection);
                }
                let key = hash_value(clients).ok();
                check_proof(proof, Tag::Clients, *task, 1, key, reg, f_s, "clients")?;
            }
            TxBody::NewRound { task, round, cand, next_clients, clients_proof } => {
                require(ProcessKind::Server)?;
                let t = self.tasks.get(task).ok_or(TxRejection::UnknownTask)?;
                if t.start.is_none() {
                    return Err(TxRejection::NotStarted);
                }
                let expected = t.last_round() + 1;
                if *round != expected || *round > t.params.t_fin {
                    return Err(TxRejection::WrongRound { expected, got: *round });
                }
                let mut keys = BTreeSet::new();
                for p in cand {
                    check_proof(p, Tag::Upd, *task, *round, None, reg, f_s, "update")?;
                    keys.insert(p.hash_key());
                }
                if keys.len() < t.params.m || keys.len() != cand.len() {
                    return Err(TxRejection::TooFewCandidates { needed: t.params.m, got: keys.len() });
                }
                if self.expected_selection(*task, round + 1).as_ref() != Some(next_clients) {
                    return Err(TxRejection::WrongSelection);
                }
                let key = hash_value(next_clients).ok();
                check_proof(clients_proof, Tag::Clients, *task, round + 1, key, reg, f_s, "clients")?;
            }
            TxBody::Final { task, reward_proof, model_proof } => {
                require(ProcessKind::Server)?;
                let t = self.tasks.get(task).ok_or(TxRejection::UnknownTask)?;
                if t.fin.is_some() {
                    return Err(TxRejection::AlreadyFinal);
                }
                let t_fin = t.params.t_fin;
                if !t.rounds.contains_key(&t_fin) {
                    return Err(TxRejection::NotFinished);
                }
                check_proof(reward_proof, Tag::Reward, *task, t_fin, None, reg, f_s, "reward")?;
                check_proof(model_proof, Tag::Mod, *task, t_fin, None, reg, f_s, "model")?;
            }
        }
        Ok(())
    }

    pub fn validate_tx(&self, tx: &Transaction) -> bool {
        self.check_tx(tx).is_ok()
    }

    /// Applies a transaction assumed valid, as part of the block at `height`.
    pub fn apply_tx(&mut self, tx: &Transaction, height: u64) {
        self.committed.insert(tx.digest());
        match &tx.body {
            TxBody::NewTask { task, params, model_hash } => {
                self.tasks.insert(
                    *task,
                    TaskState {
                        params: params.clone(),
                        model_hash: *model_hash,
                        owner: tx.sender,
                        registrants: BTreeMap::new(),
                        ready_height: None,
                        start: None,
                        rounds: BTreeMap::new(),
                        fin: None,
                    },
                );
            }
            TxBody::Join { task, client, stake, declared_n } => {
                if let Some(t) = self.tasks.get_mut(task) {
                    t.registrants.insert(*client, Registration { stake: *stake, declared_n: *declared_n, height });
                    if t.ready_height.is_none() && t.registrants.len() >= t.params.min_clients {
                        t.ready_height = Some(height);
                    }
                }
            }
            TxBody::StartTask { task, clients, .. } => {
                if let Some(t) = self.tasks.get_mut(task) {
                    t.start = Some((height, clients.clone()));
                }
            }
            TxBody::NewRound { task, round, cand, next_clients, .. } => {
                if let Some(t) = self.tasks.get_mut(task) {
                    t.rounds.insert(
                        *round,
                        RoundRecord { height, sender: tx.sender, cand: cand.clone(), next_clients: next_clients.clone() },
                    );
                }
            }
            TxBody::Final { task, reward_proof, model_proof } => {
                if let Some(t) = self.tasks.get_mut(task) {
                    t.fin = Some(FinalRecord {
                        height,
                        reward_proof: reward_proof.clone(),
                        model_proof: model_proof.clone(),
                    });
                }
            }
        }
    }

    /// Records the hash of a completed block.
    pub fn seal(&mut self, hash: HashKey) {
        self.block_hashes.push(hash);
    }

    /// Applies a block already validated by the ledger.
    pub fn apply_block_trusted(&mut self, block: &Block) {
        for tx in &block.txs {
            self.apply_tx(tx, block.height);
        }
        self.seal(block.hash());
    }

    /// Re-validates and applies a block; fails at the first invalid link or
    /// transaction, naming its index.
    pub fn apply_block(&mut self, block: &Block) -> Result<(), BlockError> {
        if block.height != self.height() + 1 {
            return Err(BlockError::Height { expected: self.height() + 1, got: block.height });
        }
        if block.prev != self.tip() {
            return Err(BlockError::BrokenChain(block.height));
        }
        for (i, tx) in block.txs.iter().enumerate() {
            self.check_tx(tx).map_err(|reason| BlockError::InvalidTx { height: block.height, index: i, reason })?;
            self.apply_tx(tx, block.height);
        }
        self.seal(block.hash());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlockError {
    #[error("block height {got}, expected {expected}")]
    Height { expected: u64, got: u64 },
    #[error("block {0} does not extend the chain")]
    BrokenChain(u64),
    #[error("block {height} tx {index}: {reason}")]
    InvalidTx { height: u64, index: usize, reason: TxRejection },
}
