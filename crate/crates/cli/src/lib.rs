//! Library half of the command-line driver; the binary stays a thin shell so
//! configuration and command behavior are testable in-process.

pub mod commands;
pub mod config;
