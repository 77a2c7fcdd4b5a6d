use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{IngestError, PaperRecord};
use crate::gateway::roles::VenueSearchResponse;
use crate::gateway::{AgentRequest, AgentRole, Gateway};

pub const MAX_VENUES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueSearchOutcome {
    /// Union of all venues' results in venue order, before merging.
    pub records: Vec<PaperRecord>,
    /// `(venue, error)` for each venue agent that failed.
    pub failures: Vec<(String, String)>,
}

/// One search agent per venue, run concurrently. Failed venues are recorded
/// and skipped; only a total failure is an error.
pub fn run_venue_search(
    queries: &[String],
    venues: &[String],
    gateway: &Gateway,
) -> Result<VenueSearchOutcome, IngestError> {
    if venues.is_empty() || venues.len() > MAX_VENUES {
        return Err(IngestError::VenueCount { got: venues.len() });
    }
    if queries.iter().all(|q| q.trim().is_empty()) {
        return Err(IngestError::NoQueries);
    }
    let results: Vec<Result<Vec<PaperRecord>, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = venues
            .iter()
            .enumerate()
            .map(|(i, venue)| {
                s.spawn(move || {
                    let req = AgentRequest::new(
                        AgentRole::VenueSearch,
                        format!("venue-search-{}", i + 1),
                        json!({"venue": venue, "queries": queries}),
                    );
                    let resp: VenueSearchResponse = gateway.invoke_typed(&req, |_| Ok(())).map_err(|e| e.to_string())?;
                    Ok(resp
                        .papers
                        .into_iter()
                        .map(|p| PaperRecord {
                            venue: if p.venue.is_empty() { venue.clone() } else { p.venue },
                            title: p.title,
                            authors: p.authors,
                            year: p.year,
                            url: p.url,
                            abstract_text: p.abstract_text,
                            full_text: p.full_text,
                            code_available: p.code_available,
                            review_signals: p.review_signals,
                            sources: vec![venue.clone()],
                        })
                        .collect())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("search thread panicked")).collect()
    });

    let mut outcome = VenueSearchOutcome {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (venue, r) in venues.iter().zip(results) {
        match r {
            Ok(mut records) => outcome.records.append(&mut records),
            Err(e) => outcome.failures.push((venue.clone(), e)),
        }
    }
    if outcome.failures.len() == venues.len() {
        return Err(IngestError::AllVenuesFailed(outcome.failures));
    }
    Ok(outcome)
}
