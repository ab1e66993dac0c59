//! Desk-scale EMT study tool for protection behavior on transmission
//! corridors fed by inverter-based resources.
//!
//! The crate couples three layers at a fixed time step:
//!
//! * [`emt`]: trapezoidal companion-model nodal solver (the network);
//! * [`control`]: grid-forming and grid-following converter controls with
//!   ride-through shaping and sequence-aware current limiting
//!   ([`limiter`]);
//! * [`relays`]: phasor-domain protection models (mho distance loops and
//!   alpha-plane line differential) fed by resampled waveforms.
//!
//! [`network`] builds corridor elements (coupled lines, sources,
//!   transformers, faults) into the solver; [`scenario`] assembles full
//!   studies from declarative TOML files, runs them deterministically, and
//!   exports waveforms, relay trajectories, verdicts, and reports. Start
//!   with the `examples/` directory.

pub mod control;
pub mod emt;
pub mod frames;
pub mod limiter;
pub mod relays;
pub mod scenario;
pub mod network;
