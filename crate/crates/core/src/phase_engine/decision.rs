use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    SelectDirection,
    SelectTrack,
    ApproveGapSlate,
}

impl DecisionKind {
    pub const ALL: [DecisionKind; 3] = [
        DecisionKind::SelectDirection,
        DecisionKind::SelectTrack,
        DecisionKind::ApproveGapSlate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::SelectDirection => "select_direction",
            DecisionKind::SelectTrack => "select_track",
            DecisionKind::ApproveGapSlate => "approve_gap_slate",
        }
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecisionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown decision kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOption {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

/// A blocking human choice. There is no deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDecision {
    pub kind: DecisionKind,
    /// Ranked; the first option is what auto-select picks.
    pub options: Vec<DecisionOption>,
    /// Model element ids (`n4`) and transcript events (`event:17`).
    #[serde(default)]
    pub evidence: Vec<String>,
}

impl PendingDecision {
    /// Looks an option up by id, or by its 1-based position.
    pub fn option(&self, choice: &str) -> Option<&DecisionOption> {
        let choice = choice.trim();
        self.options.iter().find(|o| o.id == choice).or_else(|| {
            choice
                .parse::<usize>()
                .ok()
                .filter(|i| *i >= 1)
                .and_then(|i| self.options.get(i - 1))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub option: String,
    #[serde(default = "default_actor")]
    pub actor: String,
}

fn default_actor() -> String {
    "user".into()
}

impl Decision {
    pub fn new(kind: DecisionKind, option: impl Into<String>) -> Self {
        Decision {
            kind,
            option: option.into(),
            actor: default_actor(),
        }
    }
}

/// A resolved decision. `seq` is the transcript event that recorded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub kind: DecisionKind,
    pub option: String,
    pub label: String,
    pub actor: String,
    pub seq: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pending() -> PendingDecision {
        PendingDecision {
            kind: DecisionKind::SelectDirection,
            options: (1..=3)
                .map(|i| DecisionOption {
                    id: format!("d{i}"),
                    label: format!("direction {i}"),
                    detail: Value::Null,
                })
                .collect(),
            evidence: vec![],
        }
    }

    #[test]
    fn option_by_id_or_position() {
        let p = pending();
        assert_eq!(p.option("d2").unwrap().id, "d2");
        assert_eq!(p.option("3").unwrap().id, "d3");
        assert!(p.option("0").is_none());
        assert!(p.option("4").is_none());
        assert!(p.option("d9").is_none());
    }

    #[test]
    fn kinds_parse() {
        for k in DecisionKind::ALL {
            assert_eq!(k.as_str().parse::<DecisionKind>().unwrap(), k);
        }
    }
}
