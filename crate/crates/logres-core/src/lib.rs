//! Core of the Logres BFT log replication protocol: cryptographic
//! identities and payloads, the log data structure, the per-primary
//! replicate state machine, the three-phase node protocol and the wire
//! formats. Everything here is pure and deterministic; scheduling and
//! transport live in the simulator and runtime crates built on top.

pub mod codec;
pub mod crypto;
pub mod log;
pub mod node;
pub mod replicate;
pub mod wire;
