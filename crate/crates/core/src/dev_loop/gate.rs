use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DevError, TestedMethod};
use crate::gateway::roles::{CriterionVerdict, GateResponse};
use crate::gateway::{AgentRequest, AgentRole, Gateway};

/// The ten finalization criteria, grouped novelty, performance, story,
/// compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    NewGap,
    NovelFormulation,
    SurprisingInsight,
    BeatsBaselines,
    StatisticalSignificance,
    Ablation,
    CoherentNarrative,
    SufficientEvidence,
    Reproducible,
    ComputeStated,
}

impl Criterion {
    pub const ALL: [Criterion; 10] = [
        Criterion::NewGap,
        Criterion::NovelFormulation,
        Criterion::SurprisingInsight,
        Criterion::BeatsBaselines,
        Criterion::StatisticalSignificance,
        Criterion::Ablation,
        Criterion::CoherentNarrative,
        Criterion::SufficientEvidence,
        Criterion::Reproducible,
        Criterion::ComputeStated,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Criterion::NewGap => "new_gap",
            Criterion::NovelFormulation => "novel_formulation",
            Criterion::SurprisingInsight => "surprising_insight",
            Criterion::BeatsBaselines => "beats_baselines",
            Criterion::StatisticalSignificance => "statistical_significance",
            Criterion::Ablation => "ablation",
            Criterion::CoherentNarrative => "coherent_narrative",
            Criterion::SufficientEvidence => "sufficient_evidence",
            Criterion::Reproducible => "reproducible",
            Criterion::ComputeStated => "compute_stated",
        }
    }

    pub fn category(self) -> &'static str {
        use Criterion::*;
        match self {
            NewGap | NovelFormulation | SurprisingInsight => "novelty",
            BeatsBaselines | StatisticalSignificance | Ablation => "performance",
            CoherentNarrative | SufficientEvidence => "story",
            Reproducible | ComputeStated => "compute",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Criterion::NewGap => "New gap from our experiments (not \"nobody tested X\")",
            Criterion::NovelFormulation => "Novel formulation with mathematical grounding",
            Criterion::SurprisingInsight => "Surprising insight that changes field understanding",
            Criterion::BeatsBaselines => "Beats >=2 published baselines on their metrics",
            Criterion::StatisticalSignificance => "Statistical significance: p < 0.001, n >= 50, 3 seeds",
            Criterion::Ablation => "Ablation: each component removal causes measurable drop",
            Criterion::CoherentNarrative => "Coherent gap -> insight -> method -> result narrative",
            Criterion::SufficientEvidence => "Sufficient evidence (multiple conditions, confounds tested)",
            Criterion::Reproducible => "Reproducible (code/data/instructions public)",
            Criterion::ComputeStated => "Compute requirements honestly stated",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Criterion {
    type Err = DevError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| DevError::UnknownCriterion(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub evidence: String,
}

/// One verdict per criterion. `q` is their conjunction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateResult {
    pub verdicts: BTreeMap<Criterion, Verdict>,
    pub q: bool,
}

impl GateResult {
    /// Builds a result from verdicts covering all ten criteria exactly once,
    /// whether agent-supplied or entered by hand.
    pub fn from_verdicts(verdicts: &[CriterionVerdict]) -> Result<Self, DevError> {
        let mut map = BTreeMap::new();
        for v in verdicts {
            let c: Criterion = v.criterion.parse()?;
            let verdict = Verdict {
                pass: v.pass,
                evidence: v.evidence.clone(),
            };
            if map.insert(c, verdict).is_some() {
                return Err(DevError::DuplicateCriterion(c));
            }
        }
        if let Some(missing) = Criterion::ALL.into_iter().find(|c| !map.contains_key(c)) {
            return Err(DevError::MissingCriterion(missing));
        }
        Ok(Self::from_map(map))
    }

    pub fn from_passes(passes: [bool; 10]) -> Self {
        let map = Criterion::ALL
            .into_iter()
            .zip(passes)
            .map(|(c, pass)| {
                (
                    c,
                    Verdict {
                        pass,
                        evidence: String::new(),
                    },
                )
            })
            .collect();
        Self::from_map(map)
    }

    fn from_map(verdicts: BTreeMap<Criterion, Verdict>) -> Self {
        let q = verdicts.values().all(|v| v.pass);
        GateResult { verdicts, q }
    }

    pub fn failed(&self) -> Vec<Criterion> {
        self.verdicts.iter().filter(|(_, v)| !v.pass).map(|(c, _)| *c).collect()
    }

    /// `(criterion, verdict, evidence)` rows in checklist order.
    pub fn report(&self) -> Vec<(Criterion, bool, &str)> {
        Criterion::ALL
            .into_iter()
            .map(|c| {
                let v = &self.verdicts[&c];
                (c, v.pass, v.evidence.as_str())
            })
            .collect()
    }
}

/// Agent-supplied gate verdicts for one tested method.
pub fn evaluate_gate(method: &TestedMethod, mechanism: &str, gateway: &Gateway) -> Result<GateResult, DevError> {
    let criteria: Vec<serde_json::Value> = Criterion::ALL
        .iter()
        .map(|c| json!({"id": c.id(), "category": c.category(), "description": c.description()}))
        .collect();
    let ids: Vec<&str> = Criterion::ALL.iter().map(|c| c.id()).collect();
    let req = AgentRequest::new(
        AgentRole::GateEvaluator,
        "gate-evaluator",
        json!({"method": method, "mechanism": mechanism, "criteria": ids, "checklist": criteria}),
    );
    let resp: GateResponse = gateway.invoke_typed(&req, |r: &GateResponse| {
        GateResult::from_verdicts(&r.criteria).map(|_| ()).map_err(|e| e.to_string())
    })?;
    GateResult::from_verdicts(&resp.criteria)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdicts(fail: Option<Criterion>) -> Vec<CriterionVerdict> {
        Criterion::ALL
            .iter()
            .map(|c| CriterionVerdict {
                criterion: c.id().into(),
                pass: Some(*c) != fail,
                evidence: "e".into(),
            })
            .collect()
    }

    #[test]
    fn all_pass_finalizes() {
        assert!(GateResult::from_verdicts(&verdicts(None)).unwrap().q);
    }

    #[test]
    fn significance_failure_blocks() {
        let g = GateResult::from_verdicts(&verdicts(Some(Criterion::StatisticalSignificance))).unwrap();
        assert!(!g.q);
        assert_eq!(g.failed(), [Criterion::StatisticalSignificance]);
    }

    #[test]
    fn every_single_flip_blocks() {
        for c in Criterion::ALL {
            assert!(!GateResult::from_verdicts(&verdicts(Some(c))).unwrap().q, "{c}");
        }
    }

    #[test]
    fn missing_and_unknown_criteria() {
        let mut v = verdicts(None);
        v.pop();
        assert!(matches!(
            GateResult::from_verdicts(&v),
            Err(DevError::MissingCriterion(Criterion::ComputeStated))
        ));
        v.push(CriterionVerdict {
            criterion: "vibes".into(),
            pass: true,
            evidence: String::new(),
        });
        assert!(matches!(GateResult::from_verdicts(&v), Err(DevError::UnknownCriterion(_))));
        let mut d = verdicts(None);
        d.push(d[0].clone());
        assert!(matches!(GateResult::from_verdicts(&d), Err(DevError::DuplicateCriterion(_))));
    }

    #[test]
    fn ids_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.id().parse::<Criterion>().unwrap(), c);
        }
    }
}
