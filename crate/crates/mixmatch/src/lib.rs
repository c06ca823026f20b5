//! Std companion to `mixmatch-core`: file formats, the remote-expert client,
//! run configuration with named presets, the command implementations behind
//! the `mixmatch` binary, and the verification suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod remote;
pub mod verify;

pub use error::{Error, Result};
