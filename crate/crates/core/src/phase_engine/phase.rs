use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    P0,
    P1,
    P2a,
    P2b,
    P3,
    P4,
    P5,
    P6,
    P7,
    Done,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::P0,
        Phase::P1,
        Phase::P2a,
        Phase::P2b,
        Phase::P3,
        Phase::P4,
        Phase::P5,
        Phase::P6,
        Phase::P7,
        Phase::Done,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::P0 => "P0",
            Phase::P1 => "P1",
            Phase::P2a => "P2a",
            Phase::P2b => "P2b",
            Phase::P3 => "P3",
            Phase::P4 => "P4",
            Phase::P5 => "P5",
            Phase::P6 => "P6",
            Phase::P7 => "P7",
            Phase::Done => "Done",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::P0 => "bootstrap",
            Phase::P1 => "literature search",
            Phase::P2a => "world model construction",
            Phase::P2b => "gap probing",
            Phase::P3 => "development loop",
            Phase::P4 => "evaluation",
            Phase::P5 => "packaging",
            Phase::P6 => "writing",
            Phase::P7 => "review",
            Phase::Done => "done",
        }
    }

    pub fn next(self) -> Option<Phase> {
        let i = Phase::ALL.iter().position(|p| *p == self).expect("phase is listed");
        Phase::ALL.get(i + 1).copied()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

/// Forward along the DAG, or backward from review to a routing target.
pub fn transition_allowed(from: Phase, to: Phase) -> bool {
    from.next() == Some(to) || (from == Phase::P7 && super::review::ROUTES.iter().any(|(_, t)| *t == to))
}
