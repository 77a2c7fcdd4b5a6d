//! Ordered engine event log, exported as JSON lines.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Invocation,
    Finding,
    Decision,
    Commit,
    Phase,
    Iteration,
    Failure,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub scope: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    #[serde(default)]
    pub data: Value,
}

/// Append-only event list with strictly increasing sequence numbers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    events: Vec<Event>,
    next_seq: u64,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts numbering at `first_seq`, for logs embedded in a longer stream.
    pub fn starting_at(first_seq: u64) -> Self {
        Transcript {
            events: Vec::new(),
            next_seq: first_seq,
        }
    }

    pub fn push(&mut self, scope: &str, kind: EventKind, data: Value) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Event {
            seq,
            scope: scope.to_owned(),
            kind,
            project: None,
            data,
        });
        seq
    }

    pub fn push_for(&mut self, project: &str, scope: &str, kind: EventKind, data: Value) -> u64 {
        let seq = self.push(scope, kind, data);
        if let Some(e) = self.events.last_mut() {
            e.project = Some(project.to_owned());
        }
        seq
    }

    /// Re-sequences and appends another transcript's events.
    pub fn absorb(&mut self, other: Transcript, project: Option<&str>) -> Vec<Event> {
        self.absorb_events(other.events, project)
    }

    pub fn absorb_events(&mut self, events: impl IntoIterator<Item = Event>, project: Option<&str>) -> Vec<Event> {
        let mut added = Vec::new();
        for mut e in events {
            e.seq = self.next_seq;
            self.next_seq += 1;
            if e.project.is_none() {
                e.project = project.map(str::to_owned);
            }
            added.push(e.clone());
            self.events.push(e);
        }
        added
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut t = Transcript::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(io::Error::other)?;
            if e.seq < t.next_seq {
                return Err(io::Error::other(format!("sequence {} is not increasing", e.seq)));
            }
            t.next_seq = e.seq + 1;
            t.events.push(e);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn jsonl_roundtrip_keeps_sequence() {
        let mut t = Transcript::new();
        t.push("consensus", EventKind::Invocation, json!({"agent": "a1"}));
        t.push("consensus", EventKind::Finding, json!({"gap": "x"}));
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let back = Transcript::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn absorb_resequences() {
        let mut outer = Transcript::starting_at(10);
        outer.push("engine", EventKind::Phase, Value::Null);
        let mut inner = Transcript::new();
        inner.push("consensus", EventKind::Finding, Value::Null);
        inner.push("consensus", EventKind::Decision, Value::Null);
        outer.absorb(inner, Some("p1"));
        let seqs: Vec<u64> = outer.events().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![10, 11, 12]);
        assert_eq!(outer.events()[2].project.as_deref(), Some("p1"));
    }

    #[test]
    fn rejects_non_increasing_sequences() {
        let text = "{\"seq\":3,\"scope\":\"x\",\"kind\":\"phase\"}\n{\"seq\":3,\"scope\":\"x\",\"kind\":\"phase\"}\n";
        assert!(Transcript::read_jsonl(text.as_bytes()).is_err());
    }
}
