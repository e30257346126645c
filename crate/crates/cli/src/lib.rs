//! Command-line front end for the curtailment-aware training simulator.
//!
//! Three commands share a stable exit-code contract: `0` on success, `2`
//! when a scenario or trace fails validation, `3` when a run fails at
//! runtime. The binary in `main.rs` is a thin argument parser over
//! [`commands`].

pub mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
