//! Command-line front end for the gradflow solver library: built-in problem
//! presets, flat-file configuration with flag overrides, run artifacts
//! (diagnostics/fields CSV, certification JSON), and a convergence-study
//! driver.

pub mod cert;
pub mod commands;
pub mod config;
pub mod output;
pub mod presets;
