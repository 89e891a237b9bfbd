//! Quantum mass functions on mirrored factor graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: named dense tensors and contraction.
//! * [`graph`]: Forney-style factor graphs, mirroring, closing boxes.
//! * [`qmf`]: certification of (strict) quantum mass functions and marginals.
//! * [`classical`]: classicality of variables and joint classicability.
//! * [`measure`]: measurement gadgets, interaction families and their overlap
//!   kernel, the undo and separation checks.
//! * [`models`]: gates and ready-made systems.

pub mod classical;
pub mod graph;
pub mod measure;
pub mod models;
pub mod numfmt;
pub mod qmf;
pub mod tensor;

pub use num_complex::Complex64 as C64;
