use serde::{Deserialize, Serialize};

use crate::wire::{PaxosMessage, SwitchId};

/// Multicast groups a role can address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Group {
    Acceptors,
    Replicas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dispatch {
    /// Unicast to a single device.
    Forward(SwitchId),
    Multicast(Group),
}

/// A message emitted by a role's transition function, plus where it goes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub msg: PaxosMessage,
    pub dispatch: Dispatch,
}

impl Action {
    pub fn forward(msg: PaxosMessage, to: SwitchId) -> Self {
        Action {
            msg,
            dispatch: Dispatch::Forward(to),
        }
    }

    pub fn multicast(msg: PaxosMessage, group: Group) -> Self {
        Action {
            msg,
            dispatch: Dispatch::Multicast(group),
        }
    }
}

/// Ordered output of one transition.
pub type Actions = Vec<Action>;
