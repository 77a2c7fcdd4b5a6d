//! Paper fixture documents and the scripted responders built from them.
//!
//! A fixture lists papers with their metadata, full text, score components
//! and the findings declared for each section:
//!
//! ```json
//! {"papers": [{"title": "...", "venue": "...", "year": 2022, "full_text": "...",
//!   "scores": {"relevance": 9, "code": 8, "venue_prestige": 9,
//!              "depth": 8, "experiments": 8, "reproducibility": 7},
//!   "extraction": {"method": "...", "modules": [...], "results": [...], "limitations": [...]}}]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::PaperRecord;
use crate::gateway::roles::{ExtractedModule, ExtractedResult};
use crate::gateway::{AgentRole, ScriptedBackend};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureScores {
    pub relevance: u8,
    pub code: u8,
    pub venue_prestige: u8,
    #[serde(default)]
    pub depth: u8,
    #[serde(default)]
    pub experiments: u8,
    #[serde(default)]
    pub reproducibility: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixtureExtraction {
    pub method: String,
    #[serde(default)]
    pub modules: Vec<ExtractedModule>,
    #[serde(default)]
    pub results: Vec<ExtractedResult>,
    #[serde(default)]
    pub limitations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperFixture {
    #[serde(flatten)]
    pub record: PaperRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<FixtureScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<FixtureExtraction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixtureLibrary {
    pub papers: Vec<PaperFixture>,
}

impl FixtureLibrary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn records(&self) -> Vec<PaperRecord> {
        self.papers.iter().map(|p| p.record.clone()).collect()
    }

    fn by_title(&self) -> BTreeMap<String, PaperFixture> {
        self.papers
            .iter()
            .map(|p| (normalize(&p.record.title), p.clone()))
            .collect()
    }

    /// Registers responders for venue search, both scoring passes and
    /// section extraction, answering from this library.
    pub fn install(&self, backend: &ScriptedBackend) {
        let papers = Arc::new(self.by_title());

        let lib = Arc::clone(&papers);
        backend.push_responder(AgentRole::VenueSearch, None, move |req| {
            let venue = normalize(req.context.get("venue").and_then(Value::as_str).unwrap_or_default());
            let hits: Vec<&PaperRecord> = lib
                .values()
                .map(|p| &p.record)
                .filter(|r| normalize(&r.venue) == venue)
                .collect();
            Ok(json!({ "papers": hits }))
        });

        let lib = Arc::clone(&papers);
        backend.push_responder(AgentRole::Scorer, None, move |req| {
            let s = lookup(&lib, &req.context)?.scores.ok_or("fixture paper has no scores")?;
            Ok(json!({"relevance": s.relevance, "code": s.code, "venue_prestige": s.venue_prestige}))
        });

        let lib = Arc::clone(&papers);
        backend.push_responder(AgentRole::FullReader, None, move |req| {
            let s = lookup(&lib, &req.context)?.scores.ok_or("fixture paper has no scores")?;
            Ok(json!({"depth": s.depth, "experiments": s.experiments, "reproducibility": s.reproducibility}))
        });

        let lib = papers;
        backend.push_responder(AgentRole::Extractor, None, move |req| {
            let x = lookup(&lib, &req.context)?
                .extraction
                .ok_or("fixture paper declares no extraction")?;
            match req.context.get("section").and_then(Value::as_str) {
                Some("methods") => Ok(json!({"method": x.method, "modules": x.modules})),
                Some("results") => Ok(json!({"results": x.results})),
                Some("limitations") => Ok(json!({"limitations": x.limitations})),
                other => Err(format!("unknown section {other:?}")),
            }
        });
    }

    pub fn scripted(&self) -> ScriptedBackend {
        let b = ScriptedBackend::new();
        self.install(&b);
        b
    }
}

fn lookup(lib: &BTreeMap<String, PaperFixture>, ctx: &Value) -> Result<PaperFixture, String> {
    let title = ctx.get("title").and_then(Value::as_str).unwrap_or_default();
    lib.get(&normalize(title))
        .cloned()
        .ok_or_else(|| format!("no fixture paper titled `{title}`"))
}
