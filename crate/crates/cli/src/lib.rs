//! Command-line pipeline over `geomesh_core`: argument definitions, run
//! directories with manifests, and the shared glue used by each command.

pub mod args;
pub mod commands;
pub mod pipeline;
pub mod run;
