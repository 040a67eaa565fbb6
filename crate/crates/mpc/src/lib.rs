//! Additive secret sharing over Z_{2^64} with fixed-point encoding, a trusted
//! dealer for correlated randomness, and a framed transport between parties.

pub mod dealer;
pub mod error;
pub mod kernels;
pub mod party;
pub mod ring;
pub mod session;
pub mod share;
pub mod sim;
pub mod transport;

pub use dealer::{Correlation, Dealer, RandomnessBudget, Request};
pub use error::{MpcError, Result};
pub use party::{Party, RandomnessSource};
pub use ring::{FixedPointCodec, RingElement};
pub use session::{plan_schedule, run_session, DealerMode, SessionConfig, SessionOutcome};
pub use share::{Share, SharedTensor};
pub use sim::Simulator;
pub use transport::{Endpoint, Message, MsgType, PartyId, Phase, TrafficStats};
