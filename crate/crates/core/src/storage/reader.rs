use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::codec::{hash_bytes, HashKey};
use crate::crypto::KeyRegistry;
use crate::ids::ProcessId;
use crate::messages::{Msg, Timer};
use crate::proofs::{verify_poai, PoAI};
use crate::simnet::{counter, Context, Time};

use super::StoreMsg;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadTarget {
    /// Read by certificate; the certificate is verified first.
    Proof(PoAI),
    /// Read by a key fixed elsewhere, e.g. on the ledger.
    Key(HashKey),
}

impl ReadTarget {
    pub fn key(&self) -> HashKey {
        match self {
            ReadTarget::Proof(p) => p.hash_key(),
            ReadTarget::Key(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("certificate at index {0} does not verify")]
    Proof(usize),
    #[error("no matching reply before the read deadline")]
    AvailabilityTimeout,
}

pub type BatchId = u64;

#[derive(Debug)]
pub enum ReadStart<P> {
    /// Nothing to fetch; values returned at once.
    Done(P, Vec<Arc<Vec<u8>>>),
    Pending(BatchId),
}

struct Batch<P> {
    keys: Vec<HashKey>,
    values: Vec<Option<Arc<Vec<u8>>>>,
    missing: usize,
    purpose: P,
}

/// Client side of storage: queries every replica and accepts only replies
/// that hash to the requested key.
pub struct StorageReader<P> {
    replicas: Vec<ProcessId>,
    registry: Arc<KeyRegistry>,
    f_s: usize,
    deadline: Time,
    next: BatchId,
    batches: BTreeMap<BatchId, Batch<P>>,
    waiting: BTreeMap<HashKey, BTreeSet<BatchId>>,
}

impl<P> StorageReader<P> {
    pub fn new(replicas: Vec<ProcessId>, registry: Arc<KeyRegistry>, f_s: usize, deadline: Time) -> Self {
        Self { replicas, registry, f_s, deadline, next: 0, batches: BTreeMap::new(), waiting: BTreeMap::new() }
    }

    pub fn in_flight(&self) -> usize {
        self.batches.len()
    }

    /// Reads one value.
    pub fn read(&mut self, ctx: &mut Context<'_, Msg>, target: ReadTarget, purpose: P) -> Result<ReadStart<P>, StorageError> {
        self.get_all(ctx, &[target], purpose)
    }

    /// Reads every target; values come back in input order. Any invalid
    /// certificate fails the whole call before a query is sent.
    pub fn get_all(
        &mut self,
        ctx: &mut Context<'_, Msg>,
        targets: &[ReadTarget],
        purpose: P,
    ) -> Result<ReadStart<P>, StorageError> {
        for (i, t) in targets.iter().enumerate() {
            if let ReadTarget::Proof(p) = t {
                if !verify_poai(p, &self.registry, self.f_s) {
                    return Err(StorageError::Proof(i));
                }
            }
        }
        if targets.is_empty() {
            return Ok(ReadStart::Done(purpose, Vec::new()));
        }
        let id = self.next;
        self.next += 1;
        let keys: Vec<HashKey> = targets.iter().map(ReadTarget::key).collect();
        let distinct: BTreeSet<HashKey> = keys.iter().copied().collect();
        for key in &distinct {
            let w = self.waiting.entry(*key).or_default();
            if w.is_empty() {
                ctx.metrics.incr(counter::STORAGE_READS);
                for r in &self.replicas {
                    ctx.send(*r, Msg::Store(StoreMsg::Query { key: *key }));
                }
            }
            w.insert(id);
        }
        let n = keys.len();
        self.batches.insert(id, Batch { keys, values: vec![None; n], missing: n, purpose });
        ctx.schedule_self(self.deadline, Msg::Timer(Timer::ReadDeadline(id)));
        Ok(ReadStart::Pending(id))
    }

    /// Handles a replica reply; returns batches completed by it.
    pub fn on_reply(
        &mut self,
        ctx: &mut Context<'_, Msg>,
        key: HashKey,
        value: Arc<Vec<u8>>,
    ) -> Vec<(P, Vec<Arc<Vec<u8>>>)> {
        if !self.waiting.contains_key(&key) {
            return Vec::new();
        }
        if hash_bytes(&value) != key {
            ctx.metrics.incr(counter::STORAGE_REJECTIONS);
            return Vec::new();
        }
        let mut done = Vec::new();
        for id in self.waiting.remove(&key).unwrap_or_default() {
            let Some(b) = self.batches.get_mut(&id) else {
                continue;
            };
            for (k, v) in b.keys.iter().zip(b.values.iter_mut()) {
                if *k == key && v.is_none() {
                    *v = Some(value.clone());
                    b.missing -= 1;
                }
            }
            if b.missing == 0 {
                let b = self.batches.remove(&id).expect("present");
                done.push((b.purpose, b.values.into_iter().map(|v| v.expect("filled")).collect()));
            }
        }
        done
    }

    /// Handles a deadline; returns the purpose of a batch that timed out.
    pub fn on_deadline(&mut self, id: BatchId) -> Option<P> {
        let b = self.batches.remove(&id)?;
        for k in &b.keys {
            if let Some(w) = self.waiting.get_mut(k) {
                w.remove(&id);
                if w.is_empty() {
                    self.waiting.remove(k);
                }
            }
        }
        Some(b.purpose)
    }
}
