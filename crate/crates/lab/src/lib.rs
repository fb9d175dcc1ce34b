//! File formats, scenario configuration and the experiment runner built on `imprint-core`.

pub mod config;
pub mod dataio;
pub mod runner;
