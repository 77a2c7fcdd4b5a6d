use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EngineError, Phase};
use crate::gateway::roles::RawWeakness;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewCategory {
    Writing,
    MissingExperiments,
    MethodWeakness,
    NoveltyConcern,
}

/// Where each category of weakness sends the project.
pub const ROUTES: [(ReviewCategory, Phase); 4] = [
    (ReviewCategory::Writing, Phase::P6),
    (ReviewCategory::MissingExperiments, Phase::P4),
    (ReviewCategory::MethodWeakness, Phase::P3),
    (ReviewCategory::NoveltyConcern, Phase::P2b),
];

impl ReviewCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewCategory::Writing => "writing",
            ReviewCategory::MissingExperiments => "missing_experiments",
            ReviewCategory::MethodWeakness => "method_weakness",
            ReviewCategory::NoveltyConcern => "novelty_concern",
        }
    }

    pub fn target(self) -> Phase {
        ROUTES.iter().find(|(c, _)| *c == self).map(|(_, p)| *p).expect("every category is routed")
    }
}

impl fmt::Display for ReviewCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewCategory {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ROUTES
            .iter()
            .map(|(c, _)| *c)
            .find(|c| c.as_str() == s)
            .ok_or_else(|| EngineError::UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewWeakness {
    pub category: ReviewCategory,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutedWeakness {
    pub weakness: ReviewWeakness,
    pub target: Phase,
}

/// Routes every weakness by category. Any unknown category fails the whole
/// list.
pub fn route_review(weaknesses: &[RawWeakness]) -> Result<Vec<RoutedWeakness>, EngineError> {
    weaknesses
        .iter()
        .map(|w| {
            let category: ReviewCategory = w.category.parse()?;
            Ok(RoutedWeakness {
                weakness: ReviewWeakness {
                    category,
                    text: w.text.clone(),
                },
                target: category.target(),
            })
        })
        .collect()
}

/// The phase a review round returns to: the earliest target, since every
/// later phase reruns from there.
pub fn return_phase(routed: &[RoutedWeakness]) -> Option<Phase> {
    routed.iter().map(|r| r.target).min()
}
