//! Core of the election management platform.
//!
//! The crate is split along the lines of the running system:
//!
//! * [`identity`] enrolls voters from biometric captures and matches them again
//!   at login time.
//! * [`election`], [`audit`] and [`system`] hold location-scoped elections,
//!   one-time QR credentials, anonymous ballots and the hash-chained audit log.
//! * [`forest`] is a seeded random-forest learner used by the three predictors:
//!   [`turnout`] (weather driven attendance), [`violence`] (per-area risk) and
//!   [`projection`] (mid-day result projection).
//! * [`weather`] normalizes current-conditions documents into observations.
//!
//! Nothing in here touches the network; persistence is reached through the
//! [`system::EventSink`] trait.

pub mod audit;
pub mod crypto;
pub mod election;
pub mod forest;
pub mod identity;
pub mod projection;
pub mod system;
pub mod turnout;
pub mod violence;
pub mod weather;

pub use crypto::{Digest256, Id128};
