//! Mini-applications, a collective latency harness and the `mpidesk` CLI,
//! all written against the stack-generic call surface of `mpidesk-core`.

pub mod apps;
pub mod bench;
pub mod report;
pub mod stack;
pub mod wire;
pub mod workflow;

pub use stack::Stack;
