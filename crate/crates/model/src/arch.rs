use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Network family plus tree depth where relevant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arch {
    Dqn,
    DqnDeep,
    DqnWide,
    TreeQn { depth: usize },
    A2c,
    ATreeC { depth: usize },
}

#[derive(Debug, thiserror::Error)]
#[error("unknown architecture '{0}' (expected dqn, dqn-deep, dqn-wide, treeqn-d1..3, a2c or atreec-d1..3)")]
pub struct UnknownArch(pub String);

impl Arch {
    pub const ALL: [Arch; 10] = [
        Arch::Dqn,
        Arch::DqnDeep,
        Arch::DqnWide,
        Arch::TreeQn { depth: 1 },
        Arch::TreeQn { depth: 2 },
        Arch::TreeQn { depth: 3 },
        Arch::A2c,
        Arch::ATreeC { depth: 1 },
        Arch::ATreeC { depth: 2 },
        Arch::ATreeC { depth: 3 },
    ];

    /// Trained with the actor-critic loss rather than n-step Q-learning.
    pub fn is_actor_critic(self) -> bool {
        matches!(self, Arch::A2c | Arch::ATreeC { .. })
    }

    pub fn tree_depth(self) -> Option<usize> {
        match self {
            Arch::TreeQn { depth } | Arch::ATreeC { depth } => Some(depth),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Dqn => f.write_str("dqn"),
            Arch::DqnDeep => f.write_str("dqn-deep"),
            Arch::DqnWide => f.write_str("dqn-wide"),
            Arch::TreeQn { depth } => write!(f, "treeqn-d{depth}"),
            Arch::A2c => f.write_str("a2c"),
            Arch::ATreeC { depth } => write!(f, "atreec-d{depth}"),
        }
    }
}

impl FromStr for Arch {
    type Err = UnknownArch;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| UnknownArch(s.to_string()))
    }
}

impl TryFrom<String> for Arch {
    type Error = UnknownArch;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Arch> for String {
    fn from(a: Arch) -> String {
        a.to_string()
    }
}
