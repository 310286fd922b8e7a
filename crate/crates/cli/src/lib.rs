//! Run settings and command implementations behind the `diffclass` binary.

pub mod commands;
pub mod settings;
