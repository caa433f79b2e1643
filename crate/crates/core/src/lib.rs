//! Bit-metric decoding rate (BMDR) toolkit for MU-MIMO systems.
//!
//! BMDR is a per-user achievable-rate proxy for an arbitrary soft-output
//! detector on a given channel: `max{0, 1 + E[mean log2 q]}` where `q` is the
//! per-bit posterior implied by the detector's LLRs. It plays the role that
//! post-equalization SINR plays for linear receivers, but applies to any
//! detector.
//!
//! The crate provides:
//!
//! - Monte-Carlo BMDR estimation for arbitrary detectors ([`bmdr`]), with
//!   perfect and imperfect CSI, plus GMI evaluation over the metric exponent.
//! - Soft-output detectors behind one contract ([`detect`]): LMMSE, exact and
//!   max-log ML, and K-best tree search.
//! - Labeled-dataset generation from QR-domain channel features ([`dataset`])
//!   and a miniature from-scratch CNN that predicts BMDR from those features
//!   ([`cnn`]).
//! - A BICM chain (LDPC encode / BP decode / interleaving) for validating the
//!   BMDR / code-rate / codeword-error-rate relationship ([`coding`]).

pub mod bmdr;
pub mod channel;
pub mod cnn;
pub mod coding;
pub mod dataset;
pub mod detect;
pub mod linalg;
pub mod modem;
pub mod oracles;
pub mod report;
pub mod rng;
