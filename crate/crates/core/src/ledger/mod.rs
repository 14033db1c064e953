//! A trusted, totally ordered transaction log with validity checks.

mod actor;
mod params;
mod state;
mod tx;

pub use actor::{BlockTiming, LedgerActor, LedgerFollower};
pub use params::{ParamsError, TaskParams};
pub use state::{BlockError, FinalRecord, LedgerState, Registration, RoundRecord, TaskState, TxRejection};
pub use tx::{genesis_hash, Block, Transaction, TxBody, TxLine};
