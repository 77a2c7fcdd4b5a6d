use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{IngestError, PaperRecord, DEFAULT_TOP_K};
use crate::gateway::roles::{ExtractedModule, ExtractedResult, ExtractionResponse};
use crate::gateway::{AgentRequest, AgentRole, Gateway};
use crate::world_model::{
    dedup_modules, jaccard_similarity, synthesize_gaps, DedupReport, Delta, MergeReport, MetricVector, NodeAttrs,
    NodeId, NodeRef, Provenance, Relation, WorldModel, DEFAULT_TAU_SHARED, DEFAULT_THETA_DEDUP,
};

pub const EXPECTED_MODULES: std::ops::RangeInclusive<usize> = 5..=15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Methods,
    Results,
    Limitations,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Methods, Section::Results, Section::Limitations];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Methods => "methods",
            Section::Results => "results",
            Section::Limitations => "limitations",
        }
    }

    /// Each section may only yield its own kind of finding.
    fn check(self, r: &ExtractionResponse) -> Result<(), String> {
        let stray = |what: &str| Err(format!("{what} returned from the {} section", self.as_str()));
        match self {
            Section::Methods => {
                if !r.results.is_empty() {
                    return stray("results");
                }
                if !r.limitations.is_empty() {
                    return stray("limitations");
                }
                if r.method.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    return Err("the methods section must name the proposed method".into());
                }
            }
            Section::Results => {
                if !r.modules.is_empty() {
                    return stray("modules");
                }
                if !r.limitations.is_empty() {
                    return stray("limitations");
                }
            }
            Section::Limitations => {
                if !r.modules.is_empty() {
                    return stray("modules");
                }
                if !r.results.is_empty() {
                    return stray("results");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub paper: PaperRecord,
    pub method: String,
    pub modules: Vec<ExtractedModule>,
    pub results: Vec<ExtractedResult>,
    pub limitations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExtractionResult {
    /// Adds this paper's nodes and edges to `delta`, all unverified.
    pub fn add_to(&self, delta: &mut Delta) -> Result<(), IngestError> {
        let paper = delta.add_node(self.paper.to_node());
        let method = delta.add_node(NodeAttrs::method(&self.method));
        delta.add_edge(paper, Relation::Proposes, method, None);
        for m in &self.modules {
            let module = delta.add_node(NodeAttrs::module(&m.name, m.module_type, &m.description));
            delta.add_edge(method, Relation::Uses, module, None);
        }
        for r in &self.results {
            let subject: NodeRef = match &r.method {
                Some(name) if crate::text::normalize(name) != crate::text::normalize(&self.method) => {
                    delta.add_node(NodeAttrs::method(name))
                }
                _ => method,
            };
            let bench = delta.add_node(NodeAttrs::Benchmark {
                name: r.benchmark.clone(),
                domain: String::new(),
                metrics: r.metrics.keys().cloned().collect(),
                size: None,
            });
            let mv = MetricVector::new(r.metrics.iter().map(|(k, v)| (k.clone(), *v)))?;
            delta.add_edge(subject, Relation::EvaluatedOn, bench, Some(mv));
        }
        for l in &self.limitations {
            let lim = delta.add_limitation(l, [paper]);
            delta.add_edge(method, Relation::HasLimitation, lim, None);
        }
        Ok(())
    }
}

/// Three section-specific extractions: modules from the methods section,
/// metric tuples from the results section, limitations from the limitations
/// section. A response carrying another section's findings is rejected.
pub fn extract_paper(record: &PaperRecord, gateway: &Gateway) -> Result<ExtractionResult, IngestError> {
    let text = record
        .full_text
        .as_deref()
        .ok_or_else(|| IngestError::MissingFullText(record.title.clone()))?;
    let mut out = ExtractionResult {
        paper: record.clone(),
        method: String::new(),
        modules: Vec::new(),
        results: Vec::new(),
        limitations: Vec::new(),
        warnings: Vec::new(),
    };
    for section in Section::ALL {
        let req = AgentRequest::new(
            AgentRole::Extractor,
            format!("extractor-{}", section.as_str()),
            json!({
                "section": section.as_str(),
                "title": record.title,
                "method": (!out.method.is_empty()).then_some(&out.method),
                "full_text": text,
            }),
        );
        let r: ExtractionResponse = gateway.invoke_typed(&req, |r| section.check(r))?;
        match section {
            Section::Methods => {
                out.method = r.method.unwrap_or_default();
                out.modules = r.modules;
            }
            Section::Results => out.results = r.results,
            Section::Limitations => out.limitations = r.limitations,
        }
    }
    if !EXPECTED_MODULES.contains(&out.modules.len()) {
        let w = format!(
            "`{}`: {} modules extracted, expected {} to {}",
            record.title,
            out.modules.len(),
            EXPECTED_MODULES.start(),
            EXPECTED_MODULES.end()
        );
        tracing::warn!("{w}");
        out.warnings.push(w);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2aConfig {
    pub theta_dedup: f64,
    pub tau_shared: usize,
}

impl Default for Phase2aConfig {
    fn default() -> Self {
        Phase2aConfig {
            theta_dedup: DEFAULT_THETA_DEDUP,
            tau_shared: DEFAULT_TAU_SHARED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Phase2aReport {
    /// The extraction delta exactly as committed.
    pub delta: Delta,
    pub merge: Option<MergeReport>,
    pub dedup: DedupReport,
    pub gaps: Vec<NodeId>,
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Extracts all papers concurrently and commits the union as one delta, then
/// runs module dedup and gap synthesis over the updated model.
pub fn build_phase2a(
    wm: &mut WorldModel,
    papers: &[PaperRecord],
    gateway: &Gateway,
    config: &Phase2aConfig,
    provenance: Provenance,
) -> Result<Phase2aReport, IngestError> {
    if papers.len() > DEFAULT_TOP_K {
        return Err(IngestError::TooManyPapers { got: papers.len() });
    }
    if papers.is_empty() {
        return Ok(Phase2aReport {
            delta: Delta::new(provenance),
            ..Default::default()
        });
    }
    let extracted: Vec<Result<ExtractionResult, IngestError>> = std::thread::scope(|s| {
        let handles: Vec<_> = papers
            .iter()
            .map(|p| s.spawn(move || extract_paper(p, gateway)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });

    let mut report = Phase2aReport::default();
    let mut delta = Delta::new(provenance.clone());
    for (paper, r) in papers.iter().zip(extracted) {
        match r.and_then(|x| x.add_to(&mut delta).map(|_| x)) {
            Ok(x) => report.warnings.extend(x.warnings),
            Err(e) => report.failures.push((paper.title.clone(), e.to_string())),
        }
    }
    if report.failures.len() == papers.len() {
        return Err(IngestError::AllExtractionsFailed(report.failures));
    }
    report.merge = Some(wm.merge(delta.clone())?);
    report.delta = delta;
    report.dedup = dedup_modules(wm, jaccard_similarity, config.theta_dedup, provenance.clone())?;
    report.gaps = synthesize_gaps(wm, config.tau_shared, provenance)?;
    Ok(report)
}
