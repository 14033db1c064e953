use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::codec::{hash_bytes, kind, Encoder, HashKey};
use crate::ids::{ProcessId, TaskId};

use super::ClientSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("need {needed} registered clients, have {have}")]
pub struct NotEnoughClientsError {
    pub needed: usize,
    pub have: usize,
}

/// Everything a selection depends on, as fixed by the ledger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionInput {
    pub selection_seed: u64,
    pub task: TaskId,
    pub round: u64,
    /// Hash of the block at the snapshot height.
    pub block_hash: HashKey,
    /// Registered clients as of the snapshot height, sorted.
    pub registrants: Vec<ProcessId>,
}

impl SelectionInput {
    fn seed(&self) -> [u8; 32] {
        let mut enc = Encoder::new();
        enc.u8(kind::SELECTION_SEED);
        enc.u64(self.selection_seed);
        enc.u64(self.task.0);
        enc.u64(self.round);
        enc.hash(&self.block_hash);
        enc.len(self.registrants.len());
        for r in &self.registrants {
            enc.process(*r);
        }
        hash_bytes(&enc.into_bytes()).0
    }
}

/// Draws `k` distinct registrants with a partial Fisher-Yates shuffle seeded by
/// the selection input; members are returned sorted.
pub fn select_clients(input: &SelectionInput, k: usize) -> Result<ClientSet, NotEnoughClientsError> {
    let mut pool = input.registrants.clone();
    pool.sort_unstable();
    pool.dedup();
    if pool.len() < k {
        return Err(NotEnoughClientsError { needed: k, have: pool.len() });
    }
    let mut rng = ChaCha20Rng::from_seed(input.seed());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut members = pool[..k].to_vec();
    members.sort_unstable();
    Ok(ClientSet { task: input.task, round: input.round, members })
}
