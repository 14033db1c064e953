use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{
    hash_bytes, kind, Canonical, CanonicalDecode, DecodeError, Decoder, Encoder, EncodingError, HashKey,
};
use crate::crypto::{verify, KeyRegistry, Signature, SignerKey};
use crate::ids::{ProcessId, TaskId};
use crate::proofs::PoAI;
use crate::protocol::ClientSet;
use crate::simnet::Time;

use super::TaskParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxBody {
    NewTask {
        task: TaskId,
        params: TaskParams,
        model_hash: HashKey,
    },
    Join {
        task: TaskId,
        client: ProcessId,
        stake: u64,
        declared_n: u64,
    },
    StartTask {
        task: TaskId,
        clients: ClientSet,
        proof: PoAI,
    },
    #[serde(rename = "NR")]
    NewRound {
        task: TaskId,
        round: u64,
        cand: Vec<PoAI>,
        next_clients: ClientSet,
        clients_proof: PoAI,
    },
    Final {
        task: TaskId,
        reward_proof: PoAI,
        model_proof: PoAI,
    },
}

impl TxBody {
    pub fn variant(&self) -> &'static str {
        match self {
            TxBody::NewTask { .. } => "NEW_TASK",
            TxBody::Join { .. } => "JOIN",
            TxBody::StartTask { .. } => "START_TASK",
            TxBody::NewRound { .. } => "NR",
            TxBody::Final { .. } => "FINAL",
        }
    }

    pub fn task(&self) -> TaskId {
        match self {
            TxBody::NewTask { task, .. }
            | TxBody::Join { task, .. }
            | TxBody::StartTask { task, .. }
            | TxBody::NewRound { task, .. }
            | TxBody::Final { task, .. } => *task,
        }
    }

    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        match self {
            TxBody::NewTask { task, params, model_hash } => {
                enc.u8(0);
                enc.u64(task.0);
                params.encode(enc)?;
                enc.hash(model_hash);
            }
            TxBody::Join { task, client, stake, declared_n } => {
                enc.u8(1);
                enc.u64(task.0);
                enc.process(*client);
                enc.u64(*stake);
                enc.u64(*declared_n);
            }
            TxBody::StartTask { task, clients, proof } => {
                enc.u8(2);
                enc.u64(task.0);
                clients.encode(enc);
                proof.encode(enc);
            }
            TxBody::NewRound { task, round, cand, next_clients, clients_proof } => {
                enc.u8(3);
                enc.u64(task.0);
                enc.u64(*round);
                enc.len(cand.len());
                for p in cand {
                    p.encode(enc);
                }
                next_clients.encode(enc);
                clients_proof.encode(enc);
            }
            TxBody::Final { task, reward_proof, model_proof } => {
                enc.u8(4);
                enc.u64(task.0);
                reward_proof.encode(enc);
                model_proof.encode(enc);
            }
        }
        Ok(())
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => TxBody::NewTask {
                task: TaskId(dec.u64()?),
                params: TaskParams::decode(dec)?,
                model_hash: dec.hash()?,
            },
            1 => TxBody::Join {
                task: TaskId(dec.u64()?),
                client: dec.process()?,
                stake: dec.u64()?,
                declared_n: dec.u64()?,
            },
            2 => TxBody::StartTask {
                task: TaskId(dec.u64()?),
                clients: ClientSet::decode(dec)?,
                proof: PoAI::decode(dec)?,
            },
            3 => {
                let task = TaskId(dec.u64()?);
                let round = dec.u64()?;
                let n = dec.len(57)?;
                let cand = (0..n).map(|_| PoAI::decode(dec)).collect::<Result<Vec<_>, _>>()?;
                TxBody::NewRound {
                    task,
                    round,
                    cand,
                    next_clients: ClientSet::decode(dec)?,
                    clients_proof: PoAI::decode(dec)?,
                }
            }
            4 => TxBody::Final {
                task: TaskId(dec.u64()?),
                reward_proof: PoAI::decode(dec)?,
                model_proof: PoAI::decode(dec)?,
            },
            _ => return Err(DecodeError::Invalid("transaction variant")),
        })
    }
}

/// A signed ledger transaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub body: TxBody,
    pub sender: ProcessId,
    pub signature: Signature,
}

fn body_digest(body: &TxBody, sender: ProcessId) -> Result<HashKey, EncodingError> {
    let mut enc = Encoder::new();
    enc.u8(kind::TRANSACTION);
    body.encode(&mut enc)?;
    enc.process(sender);
    Ok(hash_bytes(&enc.into_bytes()))
}

impl Transaction {
    pub fn new(signer: &SignerKey, body: TxBody) -> Result<Self, EncodingError> {
        let digest = body_digest(&body, signer.id())?;
        Ok(Self { body, sender: signer.id(), signature: signer.sign(&digest) })
    }

    /// Digest of the body and sender; the value signed and the ledger's
    /// duplicate-detection key.
    pub fn digest(&self) -> HashKey {
        body_digest(&self.body, self.sender).expect("transactions hold only finite reals")
    }

    pub fn verifies(&self, registry: &KeyRegistry) -> bool {
        self.signature.signer == self.sender && verify(registry, &self.signature, &self.digest())
    }

    pub fn wire_size(&self) -> u64 {
        let proofs: u64 = match &self.body {
            TxBody::NewTask { .. } | TxBody::Join { .. } => 0,
            TxBody::StartTask { clients, proof, .. } => proof.wire_size() + 5 * clients.members.len() as u64,
            TxBody::NewRound { cand, next_clients, clients_proof, .. } => {
                cand.iter().map(PoAI::wire_size).sum::<u64>()
                    + clients_proof.wire_size()
                    + 5 * next_clients.members.len() as u64
            }
            TxBody::Final { reward_proof, model_proof, .. } => reward_proof.wire_size() + model_proof.wire_size(),
        };
        160 + proofs
    }
}

impl Canonical for Transaction {
    const KIND: u8 = kind::TRANSACTION;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        self.body.encode(enc)?;
        enc.process(self.sender);
        enc.process(self.signature.signer);
        enc.bytes(&self.signature.bytes);
        Ok(())
    }
}

impl CanonicalDecode for Transaction {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let body = TxBody::decode(dec)?;
        let sender = dec.process()?;
        let signer = dec.process()?;
        let bytes = dec.bytes()?.try_into().map_err(|_| DecodeError::Invalid("signature length"))?;
        Ok(Self { body, sender, signature: Signature { signer, bytes } })
    }
}

/// A cut of the ledger: transactions committed together, hash-chained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev: HashKey,
    pub time: Time,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> HashKey {
        let mut enc = Encoder::new();
        enc.u8(kind::BLOCK_HEADER);
        enc.u64(self.height);
        enc.hash(&self.prev);
        enc.u64(self.time);
        enc.len(self.txs.len());
        for tx in &self.txs {
            enc.hash(&tx.digest());
        }
        hash_bytes(&enc.into_bytes())
    }

    pub fn wire_size(&self) -> u64 {
        80 + self.txs.iter().map(Transaction::wire_size).sum::<u64>()
    }
}

/// Hash standing in for the block before height 1.
pub fn genesis_hash() -> HashKey {
    hash_bytes(b"bftfl/genesis")
}

/// Transcript line for a committed transaction: `height variant sender digest`.
pub struct TxLine<'a>(pub u64, pub &'a Transaction);

impl fmt::Display for TxLine<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.0, self.1.body.variant(), self.1.sender, self.1.digest())
    }
}
