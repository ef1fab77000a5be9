//! Command line plumbing and the prototype-labelling HTTP service.

pub mod args;
pub mod server;
