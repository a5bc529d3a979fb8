//! IO, providers and the command line around `supercap-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod imageio;
pub mod provider;
pub mod report;
pub mod toy;

pub use supercap_core as core;
