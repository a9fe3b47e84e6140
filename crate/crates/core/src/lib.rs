//! Partitioned multi-Paxos: the leader, acceptor, replica and proposer roles
//! as pure transition functions over a shared binary wire format, plus the
//! sharded key-value application the replicas drive.

pub mod acceptor;
pub mod action;
pub mod envelope;
pub mod kvapp;
pub mod leader;
pub mod proposer;
pub mod replica;
pub mod trace;
pub mod wire;

pub use action::{Action, Actions, Dispatch, Group};
pub use envelope::RequestId;
pub use wire::{decode_message, encode_message, MsgType, PaxosMessage, WireError};
