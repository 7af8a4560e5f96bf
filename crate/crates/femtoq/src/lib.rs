//! Deterministic system-level simulator of cognitive femtocells performing
//! downlink power allocation with tabular Q-learning.
//!
//! A macrocell (the protected primary link) shares `K` subcarriers with
//! `N_f` closed-access femtocells that learn transmit powers online. Three
//! formulations are provided: fully distributed per-subcarrier learning
//! (DPC-Q, independent or cooperative), partially distributed per-agent
//! vector learning (PDPC-Q), and a centralized controller over joint
//! power matrices (CPC-Q). An exhaustive-search oracle supplies the
//! constrained optimum for benchmarking, and the simulation harness can
//! deploy extra femtocells mid-run, seeding them from the veterans'
//! Q-tables or from scratch.
//!
//! Everything is deterministic for a fixed seed. One run is strictly
//! sequential; the oracle enumeration and replication sweeps are
//! data-parallel under the `parallel` feature (on by default) and fall
//! back to sequential scans without it.

pub mod agents;
pub mod error;
pub mod netmodel;
pub mod oracle;
pub mod qcore;
pub mod scenario;
pub mod simulator;
pub mod trace;

pub use error::{Error, Result};
