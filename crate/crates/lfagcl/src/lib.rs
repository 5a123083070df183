//! File formats, configuration and the command-line pipeline around
//! [`lfagcl_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod format;
pub mod io;
pub mod report;
