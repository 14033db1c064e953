//! Actor state machines for servers, clients, and the model owner, plus
//! client selection and the protocol value types.

mod client;
mod owner;
mod selection;
mod server;
mod types;

pub use client::{ClientActor, ClientConfig};
pub use owner::{OwnerActor, OwnerConfig};
pub use selection::{select_clients, NotEnoughClientsError, SelectionInput};
pub use server::{aggregation_order, dedupe_committed, ServerActor, ServerBehavior, ServerConfig};
pub use types::{raw_count_payout, ClientSet, PayoutFn, RewardInfo, Update};
