//! Bit-transition (BT) analysis and reduction toolkit for NoC-based DNN
//! accelerator traffic.
//!
//! The crate is organized around the path data takes from a DNN layer to a
//! mesh link:
//!
//! - [`bits`] — fixed-width bit patterns, popcount, and flit-to-flit
//!   transition counting.
//! - [`analytic`] — the closed-form BT expectation model, the cross-product
//!   objective, and the interleaved-descending arrangement with its
//!   brute-force optimality oracle.
//! - [`ordering`] — the deployable per-flit transforms: descending sort,
//!   affiliated ordering, separated ordering, packing, and deordering.
//! - [`dnn`] — workload models (LeNet, a DarkNet-style reduction), weight
//!   initialization/loading, a reference forward pass, and per-neuron
//!   (input, weight) pair streams.
//! - [`nocsim`] — a cycle-level 2D-mesh wormhole simulator with virtual
//!   channels, X-Y routing, memory-controller traffic sources, and per-link
//!   toggle accounting.
//! - [`report`] — bit-position statistics, reduction rates, link power
//!   estimation, and CSV/JSON export.

pub mod analytic;
pub mod bits;
pub mod dnn;
pub mod error;
pub mod nocsim;
pub mod ordering;
pub mod report;

pub use error::BtError;
