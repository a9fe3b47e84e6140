//! Deterministic network simulator and safety checkers for the consensus
//! roles in `ppaxos-core`.

pub mod checker;
pub mod simnet;
