use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{hash_bytes, HashKey};
use crate::messages::Msg;
use crate::simnet::{counter, Actor, Context, Endpoint};

use super::StoreMsg;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaBehavior {
    #[default]
    Correct,
    /// Never stores or replies.
    Silent,
    /// Answers every query at once with bytes that do not match the key.
    GarbageReplier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreOutcome {
    Stored,
    AlreadyPresent,
    Rejected,
}

#[derive(Clone, Debug, Default)]
pub struct ReplicaState {
    pub behavior: ReplicaBehavior,
    entries: BTreeMap<HashKey, Arc<Vec<u8>>>,
    rejections: u64,
}

impl ReplicaState {
    pub fn new(behavior: ReplicaBehavior) -> Self {
        Self { behavior, ..Self::default() }
    }

    /// Stores `value` under `key` iff the key is its hash. Entries are never
    /// overwritten.
    pub fn store(&mut self, key: HashKey, value: Arc<Vec<u8>>) -> StoreOutcome {
        if hash_bytes(&value) != key {
            self.rejections += 1;
            return StoreOutcome::Rejected;
        }
        if self.entries.contains_key(&key) {
            return StoreOutcome::AlreadyPresent;
        }
        self.entries.insert(key, value);
        StoreOutcome::Stored
    }

    pub fn get(&self, key: &HashKey) -> Option<&Arc<Vec<u8>>> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> &BTreeMap<HashKey, Arc<Vec<u8>>> {
        &self.entries
    }

    pub fn rejections(&self) -> u64 {
        self.rejections
    }

    /// `key value-digest` lines sorted by key.
    pub fn dump(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} {}\n", hash_bytes(v))).collect()
    }
}

fn garbage(key: &HashKey) -> Arc<Vec<u8>> {
    let mut v = key.0.to_vec();
    v.extend_from_slice(b"garbage");
    Arc::new(v)
}

/// A storage replica. Correct replicas hold queries for absent keys and answer
/// once the value arrives.
pub struct ReplicaActor {
    state: ReplicaState,
    waiting: BTreeMap<HashKey, BTreeSet<Endpoint>>,
}

impl ReplicaActor {
    pub fn new(behavior: ReplicaBehavior) -> Self {
        Self { state: ReplicaState::new(behavior), waiting: BTreeMap::new() }
    }

    pub fn state(&self) -> &ReplicaState {
        &self.state
    }
}

impl Actor<Msg> for ReplicaActor {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, from: Endpoint, msg: Msg) {
        let Msg::Store(msg) = msg else {
            return;
        };
        match self.state.behavior {
            ReplicaBehavior::Silent => {}
            ReplicaBehavior::GarbageReplier => {
                if let StoreMsg::Query { key } = msg {
                    ctx.send(from, Msg::Store(StoreMsg::Reply { key, value: garbage(&key) }));
                }
            }
            ReplicaBehavior::Correct => match msg {
                StoreMsg::Store { key, value } => match self.state.store(key, value.clone()) {
                    StoreOutcome::Rejected => ctx.metrics.incr(counter::STORAGE_REJECTIONS),
                    StoreOutcome::AlreadyPresent => {}
                    StoreOutcome::Stored => {
                        for to in self.waiting.remove(&key).unwrap_or_default() {
                            ctx.send(to, Msg::Store(StoreMsg::Reply { key, value: value.clone() }));
                        }
                    }
                },
                StoreMsg::Query { key } => match self.state.get(&key) {
                    Some(value) => ctx.send(from, Msg::Store(StoreMsg::Reply { key, value: value.clone() })),
                    None => {
                        self.waiting.entry(key).or_default().insert(from);
                    }
                },
                StoreMsg::Reply { .. } => {}
            },
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
    fn store_requires_matching_hash() {
        let mut r = ReplicaState::new(ReplicaBehavior::Correct);
        let v = Arc::new(b"value".to_vec());
        let key = hash_bytes(&v);
        assert_eq!(r.store(key, v.clone()), StoreOutcome::Stored);
        assert_eq!(r.store(key, v.clone()), StoreOutcome::AlreadyPresent);
        assert_eq!(r.store(key, Arc::new(b"other".to_vec())), StoreOutcome::Rejected);
        assert_eq!(r.get(&key), Some(&v));
        assert_eq!(r.rejections(), 1);
        assert_eq!(r.dump(), format!("{key} {key}\n"));
    }
}
