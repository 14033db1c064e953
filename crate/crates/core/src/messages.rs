//! The concrete message type exchanged by every actor of a run.

use std::sync::Arc;

use crate::aggregation::ParamVector;
use crate::ids::TaskId;
use crate::ledger::{Block, Transaction};
use crate::proofs::{LocalProof, PoAI};
use crate::protocol::Update;
use crate::simnet::Payload;
use crate::storage::StoreMsg;

#[derive(Clone, Debug)]
pub enum Msg {
    Store(StoreMsg),
    /// Transaction submission to the ledger.
    Submit(Arc<Transaction>),
    /// Block delivery from the ledger.
    Block(Arc<Block>),
    /// Client update, sent to every server.
    Update(Arc<Update>),
    /// A server vote, sent to every server.
    Vote(LocalProof),
    /// A server's aggregate, sent to every server.
    Model { task: TaskId, round: u64, model: Arc<ParamVector> },
    /// A model certificate, sent to the next round's clients.
    ModelCert(PoAI),
    Timer(Timer),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timer {
    LedgerCut,
    ReadDeadline(u64),
    /// A server finished computing its aggregate for the round.
    Publish(u64),
}

impl Payload for Msg {
    fn wire_size(&self) -> u64 {
        match self {
            Msg::Store(m) => m.wire_size(),
            Msg::Submit(tx) => tx.wire_size(),
            Msg::Block(b) => b.wire_size(),
            Msg::Update(u) => 8 * u.vector.dim() as u64 + 120,
            Msg::Vote(_) => 130,
            Msg::Model { model, .. } => 8 * model.dim() as u64 + 24,
            Msg::ModelCert(p) => p.wire_size(),
            Msg::Timer(_) => 0,
        }
    }
}
