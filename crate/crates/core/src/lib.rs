//! Simulation of Byzantine-fault-tolerant federated learning over a ledger,
//! replicated storage, and a set of aggregation servers.

pub mod aggregation;
pub mod codec;
pub mod crypto;
pub mod ids;
pub mod learning;
pub mod rng;
pub mod simnet;
pub mod ledger;
pub mod messages;
pub mod proofs;
pub mod protocol;
pub mod storage;
pub mod runner;
pub mod scenario;
pub mod audit;
pub mod sweep;
