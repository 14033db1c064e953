//! Content-addressed replicated storage and the verified read protocol.

mod reader;
mod replica;

use std::sync::Arc;

pub use reader::{BatchId, ReadStart, ReadTarget, StorageError, StorageReader};
pub use replica::{ReplicaActor, ReplicaBehavior, ReplicaState, StoreOutcome};

use crate::codec::{kind, Canonical, CanonicalDecode, DecodeError, Decoder, Encoder, EncodingError, HashKey};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreMsg {
    Store { key: HashKey, value: Arc<Vec<u8>> },
    Query { key: HashKey },
    Reply { key: HashKey, value: Arc<Vec<u8>> },
}

impl StoreMsg {
    pub fn key(&self) -> HashKey {
        match self {
            StoreMsg::Store { key, .. } | StoreMsg::Query { key } | StoreMsg::Reply { key, .. } => *key,
        }
    }

    pub fn wire_size(&self) -> u64 {
        match self {
            StoreMsg::Query { .. } => 34,
            StoreMsg::Store { value, .. } | StoreMsg::Reply { value, .. } => 42 + value.len() as u64,
        }
    }
}

impl Canonical for StoreMsg {
    const KIND: u8 = kind::STORE_MSG;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        match self {
            StoreMsg::Store { key, value } => {
                enc.u8(0);
                enc.hash(key);
                enc.bytes(value);
            }
            StoreMsg::Query { key } => {
                enc.u8(1);
                enc.hash(key);
            }
            StoreMsg::Reply { key, value } => {
                enc.u8(2);
                enc.hash(key);
                enc.bytes(value);
            }
        }
        Ok(())
    }
}

impl CanonicalDecode for StoreMsg {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => StoreMsg::Store { key: dec.hash()?, value: Arc::new(dec.bytes()?) },
            1 => StoreMsg::Query { key: dec.hash()? },
            2 => StoreMsg::Reply { key: dec.hash()?, value: Arc::new(dec.bytes()?) },
            _ => return Err(DecodeError::Invalid("store message variant")),
        })
    }
}
