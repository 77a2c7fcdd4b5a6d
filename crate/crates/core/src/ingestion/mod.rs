//! Literature search, ranking and extraction into the world model.

mod extract;
pub mod fixtures;
mod merge;
mod search;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::roles::{AbstractScoreResponse, FullReadResponse, ReviewSignal};
use crate::gateway::{AgentRequest, AgentRole, Gateway, GatewayError};
use crate::text::normalize;
use crate::world_model::{Delta, ModelError, NodeAttrs, Provenance};

pub use extract::{build_phase2a, extract_paper, ExtractionResult, Phase2aConfig, Phase2aReport, Section};
pub use merge::merge_dedup;
pub use search::{run_venue_search, VenueSearchOutcome, MAX_VENUES};

pub const DEFAULT_TOP_K: usize = 20;
pub const TITLE_MERGE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid paper record: {0}")]
    InvalidRecord(String),
    #[error("score component {name} must lie in 0..=10, got {value}")]
    ComponentOutOfRange { name: &'static str, value: u8 },
    #[error("between 1 and {max} venues are allowed, got {got}", max = MAX_VENUES)]
    VenueCount { got: usize },
    #[error("at least one search query is required")]
    NoQueries,
    #[error("every venue search failed: {0:?}")]
    AllVenuesFailed(Vec<(String, String)>),
    #[error("paper `{0}` has no full text")]
    MissingFullText(String),
    #[error("at most {max} papers may be extracted at once, got {got}", max = DEFAULT_TOP_K)]
    TooManyPapers { got: usize },
    #[error("every extraction failed: {0:?}")]
    AllExtractionsFailed(Vec<(String, String)>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: String,
    pub year: u16,
    #[serde(default)]
    pub url: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text: Option<String>,
    #[serde(default)]
    pub code_available: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_signals: Option<Vec<ReviewSignal>>,
    /// Venues whose search agent returned this record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl PaperRecord {
    pub fn new(title: impl Into<String>, year: u16) -> Self {
        PaperRecord {
            title: title.into(),
            authors: Vec::new(),
            venue: String::new(),
            year,
            url: String::new(),
            abstract_text: String::new(),
            full_text: None,
            code_available: 0,
            review_signals: None,
            sources: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.title.trim().is_empty() {
            return Err(IngestError::InvalidRecord("empty title".into()));
        }
        if !(1950..=2100).contains(&self.year) {
            return Err(IngestError::InvalidRecord(format!(
                "implausible year {} for `{}`",
                self.year, self.title
            )));
        }
        if self.code_available > 10 {
            return Err(IngestError::ComponentOutOfRange {
                name: "code_available",
                value: self.code_available,
            });
        }
        Ok(())
    }

    pub fn normalized_title(&self) -> String {
        normalize(&self.title)
    }

    pub fn to_node(&self) -> NodeAttrs {
        NodeAttrs::Paper {
            title: self.title.clone(),
            authors: self.authors.clone(),
            venue: self.venue.clone(),
            year: Some(i32::from(self.year)),
            url: self.url.clone(),
        }
    }
}

fn component(name: &'static str, value: u8) -> Result<u8, IngestError> {
    if value > 10 {
        return Err(IngestError::ComponentOutOfRange { name, value });
    }
    Ok(value)
}

/// Abstract-level score, `S1 = 3r + 2c + v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass1Score {
    pub relevance: u8,
    pub code: u8,
    pub venue_prestige: u8,
    pub total: u32,
}

impl Pass1Score {
    pub fn new(relevance: u8, code: u8, venue_prestige: u8) -> Result<Self, IngestError> {
        let r = u32::from(component("relevance", relevance)?);
        let c = u32::from(component("code", code)?);
        let v = u32::from(component("venue_prestige", venue_prestige)?);
        Ok(Pass1Score {
            relevance,
            code,
            venue_prestige,
            total: 3 * r + 2 * c + v,
        })
    }
}

/// Full-read score, `S2 = S1 + 2d + 2e + p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass2Score {
    pub pass1: Pass1Score,
    pub depth: u8,
    pub experiments: u8,
    pub reproducibility: u8,
    pub total: u32,
}

impl Pass2Score {
    pub fn new(pass1: Pass1Score, depth: u8, experiments: u8, reproducibility: u8) -> Result<Self, IngestError> {
        let d = u32::from(component("depth", depth)?);
        let e = u32::from(component("experiments", experiments)?);
        let p = u32::from(component("reproducibility", reproducibility)?);
        Ok(Pass2Score {
            pass1,
            depth,
            experiments,
            reproducibility,
            total: pass1.total + 2 * d + 2 * e + p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPaper {
    pub record: PaperRecord,
    pub pass1: Pass1Score,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass2: Option<Pass2Score>,
}

impl ScoredPaper {
    pub fn score(&self) -> u32 {
        self.pass2.map_or(self.pass1.total, |p| p.total)
    }
}

/// Descending score, then ascending normalized title; the remaining keys make
/// the order total so input permutation never changes the result.
fn rank_order(a: &ScoredPaper, b: &ScoredPaper) -> Ordering {
    b.score()
        .cmp(&a.score())
        .then_with(|| a.record.normalized_title().cmp(&b.record.normalized_title()))
        .then_with(|| a.record.title.cmp(&b.record.title))
        .then_with(|| {
            let ja = serde_json::to_string(a).unwrap_or_default();
            let jb = serde_json::to_string(b).unwrap_or_default();
            ja.cmp(&jb)
        })
}

/// Sorts by score and keeps exactly `min(k, n)` papers.
pub fn rank_and_cut(mut scored: Vec<ScoredPaper>, k: usize) -> Vec<ScoredPaper> {
    scored.sort_by(rank_order);
    scored.truncate(k);
    scored
}

fn score_context(record: &PaperRecord, direction: Option<&str>) -> serde_json::Value {
    serde_json::json!({
        "title": record.title,
        "venue": record.venue,
        "year": record.year,
        "abstract": record.abstract_text,
        "code_available": record.code_available,
        "direction": direction,
    })
}

pub fn score_pass1(record: &PaperRecord, direction: Option<&str>, gateway: &Gateway) -> Result<Pass1Score, IngestError> {
    let req = AgentRequest::new(AgentRole::Scorer, "scorer", score_context(record, direction));
    let s: AbstractScoreResponse = gateway.invoke_typed(&req, |_| Ok(()))?;
    Pass1Score::new(s.relevance, s.code, s.venue_prestige)
}

pub fn score_pass2(record: &PaperRecord, pass1: Pass1Score, gateway: &Gateway) -> Result<Pass2Score, IngestError> {
    let text = record
        .full_text
        .as_deref()
        .ok_or_else(|| IngestError::MissingFullText(record.title.clone()))?;
    let mut ctx = score_context(record, None);
    ctx["full_text"] = serde_json::Value::String(text.to_owned());
    let req = AgentRequest::new(AgentRole::FullReader, "full-reader", ctx);
    let s: FullReadResponse = gateway.invoke_typed(&req, |_| Ok(()))?;
    Pass2Score::new(pass1, s.depth, s.experiments, s.reproducibility)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub ranked: Vec<ScoredPaper>,
    pub candidates: usize,
    pub merged: usize,
    pub failures: Vec<(String, String)>,
}

/// Search every venue, merge near-duplicate titles, score abstracts, keep the
/// top `k`, then full-read the survivors and re-rank them by `S2`.
pub fn run_phase1(
    queries: &[String],
    venues: &[String],
    direction: Option<&str>,
    k: usize,
    gateway: &Gateway,
) -> Result<Phase1Report, IngestError> {
    let search = run_venue_search(queries, venues, gateway)?;
    let candidates = search.records.len();
    let merged = merge_dedup(search.records);
    let merged_count = merged.len();
    let mut failures = search.failures;

    let scored: Vec<Result<ScoredPaper, (String, String)>> = std::thread::scope(|s| {
        let handles: Vec<_> = merged
            .into_iter()
            .map(|record| {
                s.spawn(move || match score_pass1(&record, direction, gateway) {
                    Ok(pass1) => Ok(ScoredPaper {
                        record,
                        pass1,
                        pass2: None,
                    }),
                    Err(e) => Err((record.title.clone(), e.to_string())),
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut ok = Vec::new();
    for r in scored {
        match r {
            Ok(p) => ok.push(p),
            Err(f) => failures.push(f),
        }
    }
    let top = rank_and_cut(ok, k);

    let read: Vec<(ScoredPaper, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = top
            .into_iter()
            .map(|mut p| {
                s.spawn(move || {
                    if p.record.full_text.is_none() {
                        return (p, None);
                    }
                    match score_pass2(&p.record, p.pass1, gateway) {
                        Ok(s2) => {
                            p.pass2 = Some(s2);
                            (p, None)
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            (p, Some(msg))
                        }
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("reading thread panicked")).collect()
    });
    let mut ranked = Vec::with_capacity(read.len());
    for (p, err) in read {
        if let Some(e) = err {
            failures.push((p.record.title.clone(), e));
        }
        ranked.push(p);
    }
    let n = ranked.len();
    Ok(Phase1Report {
        ranked: rank_and_cut(ranked, n),
        candidates,
        merged: merged_count,
        failures,
    })
}

/// Paper nodes for the ranked set, all unverified.
pub fn papers_delta(ranked: &[ScoredPaper], provenance: Provenance) -> Delta {
    let mut delta = Delta::new(provenance);
    for p in ranked {
        delta.add_node(p.record.to_node());
    }
    delta
}

/// Ranked-literature report: `title,venue,S1,S2,rank`.
pub fn write_ranking_csv<W: Write>(ranked: &[ScoredPaper], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["title", "venue", "S1", "S2", "rank"])
        .map_err(|e| IngestError::Report(e.to_string()))?;
    for (i, p) in ranked.iter().enumerate() {
        let s2 = p.pass2.map(|s| s.total.to_string()).unwrap_or_default();
        w.write_record([
            p.record.title.as_str(),
            p.record.venue.as_str(),
            &p.pass1.total.to_string(),
            &s2,
            &(i + 1).to_string(),
        ])
        .map_err(|e| IngestError::Report(e.to_string()))?;
    }
    w.flush().map_err(|e| IngestError::Report(e.to_string()))?;
    Ok(())
}
