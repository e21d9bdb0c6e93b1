//! Lock-step Heard-Of-model simulator for the Logres protocol: Byzantine
//! adversary strategies constrained by message closure, machine-checkable
//! property oracles, seeded campaigns, replayable trace dumps and a
//! bounded exhaustive adversary search.

pub mod adversary;
pub mod campaign;
pub mod config;
pub mod ledger;
pub mod properties;
pub mod runner;
pub mod search;
pub mod trace_io;
