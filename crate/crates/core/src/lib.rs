//! Throughput versus average-decoding-time laboratory for feedback-limited
//! retransmission protocols over i.i.d. block-fading channels.
//!
//! Every protocol is available two ways: as a slot-by-slot policy that the
//! Monte Carlo engine runs as a renewal process, and as an analytic solver
//! (closed form, integral equation or dynamic program). The two routes are
//! compared by [`mc::compare`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]

pub mod analysis;
pub mod channel;
pub mod error;
pub mod fredholm;
pub mod mc;
pub mod numeric;
pub mod powerdp;
pub mod protocols;
pub mod ratedp;
pub mod registry;
pub mod rng;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};
