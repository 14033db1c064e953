use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;
use crate::codec::{hash_bytes, kind, Canonical, CanonicalDecode, DecodeError, Decoder, Encoder, EncodingError, HashKey};
use crate::crypto::{verify, KeyRegistry, Signature, SignerKey};
use crate::ids::{ProcessId, ProcessKind, TaskId};

/// The clients selected for one round, sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientSet {
    pub task: TaskId,
    pub round: u64,
    pub members: Vec<ProcessId>,
}

impl ClientSet {
    /// The set announced with the last round's NR: no further rounds follow.
    pub fn terminal(task: TaskId, round: u64) -> Self {
        Self { task, round, members: Vec::new() }
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        self.members.binary_search(&p).is_ok()
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.task.0);
        enc.u64(self.round);
        enc.len(self.members.len());
        for m in &self.members {
            enc.process(*m);
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let task = TaskId(dec.u64()?);
        let round = dec.u64()?;
        let n = dec.len(5)?;
        let members = (0..n).map(|_| dec.process()).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { task, round, members })
    }
}

impl Canonical for ClientSet {
    const KIND: u8 = kind::CLIENT_SET;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        self.encode(enc);
        Ok(())
    }
}

impl CanonicalDecode for ClientSet {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Self::decode(dec)
    }
}

/// A client's signed model update for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub client: ProcessId,
    pub task: TaskId,
    pub round: u64,
    pub declared_n: u64,
    pub vector: Arc<ParamVector>,
    pub signature: Signature,
}

fn update_statement(
    client: ProcessId,
    task: TaskId,
    round: u64,
    declared_n: u64,
    vector: &ParamVector,
) -> Result<HashKey, EncodingError> {
    let mut enc = Encoder::with_capacity(8 * vector.dim() + 40);
    enc.u8(kind::UPDATE_STATEMENT);
    enc.process(client);
    enc.u64(task.0);
    enc.u64(round);
    enc.u64(declared_n);
    enc.reals(vector.as_slice())?;
    Ok(hash_bytes(&enc.into_bytes()))
}

impl Update {
    pub fn new(
        signer: &SignerKey,
        task: TaskId,
        round: u64,
        declared_n: u64,
        vector: ParamVector,
    ) -> Result<Self, EncodingError> {
        let digest = update_statement(signer.id(), task, round, declared_n, &vector)?;
        Ok(Self {
            client: signer.id(),
            task,
            round,
            declared_n,
            vector: Arc::new(vector),
            signature: signer.sign(&digest),
        })
    }

    /// Signed by the claimed client over exactly these contents.
    pub fn verifies(&self, registry: &KeyRegistry) -> bool {
        if self.client.kind != ProcessKind::Client || self.signature.signer != self.client {
            return false;
        }
        match update_statement(self.client, self.task, self.round, self.declared_n, &self.vector) {
            Ok(d) => verify(registry, &self.signature, &d),
            Err(_) => false,
        }
    }
}

impl Canonical for Update {
    const KIND: u8 = kind::UPDATE;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        enc.process(self.client);
        enc.u64(self.task.0);
        enc.u64(self.round);
        enc.u64(self.declared_n);
        enc.reals(self.vector.as_slice())?;
        enc.process(self.signature.signer);
        enc.bytes(&self.signature.bytes);
        Ok(())
    }

    fn size_hint(&self) -> usize {
        8 * self.vector.dim() + 128
    }
}

impl CanonicalDecode for Update {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let client = dec.process()?;
        let task = TaskId(dec.u64()?);
        let round = dec.u64()?;
        let declared_n = dec.u64()?;
        let vector = Arc::new(ParamVector(dec.reals()?));
        let signer = dec.process()?;
        let bytes = dec.bytes()?.try_into().map_err(|_| DecodeError::Invalid("signature length"))?;
        Ok(Self { client, task, round, declared_n, vector, signature: Signature { signer, bytes } })
    }
}

/// Per-client count of rounds whose committed set held that client's update.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardInfo {
    pub task: TaskId,
    pub counts: BTreeMap<ProcessId, u64>,
}

impl RewardInfo {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

impl Canonical for RewardInfo {
    const KIND: u8 = kind::REWARD_INFO;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        enc.u64(self.task.0);
        enc.len(self.counts.len());
        for (p, c) in &self.counts {
            enc.process(*p);
            enc.u64(*c);
        }
        Ok(())
    }
}

impl CanonicalDecode for RewardInfo {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let task = TaskId(dec.u64()?);
        let n = dec.len(13)?;
        let mut counts = BTreeMap::new();
        let mut last = None;
        for _ in 0..n {
            let p = dec.process()?;
            if last.is_some_and(|l| l >= p) {
                return Err(DecodeError::Invalid("reward entries out of order"));
            }
            last = Some(p);
            counts.insert(p, dec.u64()?);
        }
        Ok(Self { task, counts })
    }
}

/// Maps reward information to per-client scores.
pub type PayoutFn = fn(&RewardInfo) -> BTreeMap<ProcessId, f64>;

/// Default payout: the raw counts.
pub fn raw_count_payout(info: &RewardInfo) -> BTreeMap<ProcessId, f64> {
    info.counts.iter().map(|(p, c)| (*p, *c as f64)).collect()
}
