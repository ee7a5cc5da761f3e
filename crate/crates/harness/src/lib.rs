//! Experiment drivers for `accel-attn`: configuration, seeded instances,
//! CSV/SVG reports and the acceptance self-test.

pub mod config;
pub mod report;
pub mod run;
pub mod selftest;
pub mod setup;
