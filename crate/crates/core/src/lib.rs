//! Cycle-level simulation of bit-serial DNN accelerators.
//!
//! Four execution models share one workload decomposition (pallets of
//! activations split into subgroups):
//!
//! * bit-parallel: a fixed `base_width` cycles per pallet,
//! * per-layer precision: every pallet costs the span of the layer profile,
//! * runtime-detected precision: every pallet costs the widest span detected
//!   among its subgroups,
//! * essential bits: lanes pay only for their set bits, optionally after
//!   keeping only the most significant few.
//!
//! Workloads are activation traces ([`trace`]), either produced by running a
//! small fixed-point network or generated synthetically with controlled
//! precision distributions. [`profiler`] searches per-layer precisions that
//! keep the network's top-1 decisions intact.

pub mod engine;
pub mod fixedpoint;
pub mod precdetect;
pub mod profiler;
pub mod report;
pub mod trace;

pub use engine::{ArchConfig, EngineKind, LayerReport, ShifterReach};
pub use fixedpoint::{FixedValue, QuantSpec, Rounding};
pub use precdetect::GroupPrecision;
pub use profiler::{LayerPrecision, PrecisionProfile, ProfileMode};
pub use trace::{ActivationTrace, TraceLayer};
