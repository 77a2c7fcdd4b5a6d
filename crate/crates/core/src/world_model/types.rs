use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;
use crate::text::normalize;

macro_rules! string_id {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| ModelError::InvalidId(s.to_owned()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_id!(NodeId, "n");
string_id!(EdgeId, "e");

/// Any element that carries an uncertainty state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementId {
    Node(NodeId),
    Edge(EdgeId),
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementId::Node(n) => n.fmt(f),
            ElementId::Edge(e) => e.fmt(f),
        }
    }
}

impl FromStr for ElementId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.starts_with('n') {
            s.parse().map(ElementId::Node)
        } else {
            s.parse().map(ElementId::Edge)
        }
    }
}

impl From<NodeId> for ElementId {
    fn from(id: NodeId) -> Self {
        ElementId::Node(id)
    }
}

impl From<EdgeId> for ElementId {
    fn from(id: EdgeId) -> Self {
        ElementId::Edge(id)
    }
}

impl Serialize for ElementId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Binary verification state. `Verified` orders before `Unverified`, so the
/// merge rule is a plain `min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Uncertainty {
    Verified,
    #[default]
    Unverified,
}

impl Uncertainty {
    pub fn as_bit(self) -> u8 {
        match self {
            Uncertainty::Verified => 0,
            Uncertainty::Unverified => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Uncertainty::Verified),
            1 => Some(Uncertainty::Unverified),
            _ => None,
        }
    }

    pub fn is_verified(self) -> bool {
        self == Uncertainty::Verified
    }
}

impl Serialize for Uncertainty {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_bit())
    }
}

impl<'de> Deserialize<'de> for Uncertainty {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Uncertainty::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("uncertainty must be 0 or 1, got {bit}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Paper,
    Method,
    Module,
    Benchmark,
    Gap,
    Limitation,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Paper,
        NodeKind::Method,
        NodeKind::Module,
        NodeKind::Benchmark,
        NodeKind::Gap,
        NodeKind::Limitation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Paper => "paper",
            NodeKind::Method => "method",
            NodeKind::Module => "module",
            NodeKind::Benchmark => "benchmark",
            NodeKind::Gap => "gap",
            NodeKind::Limitation => "limitation",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleType {
    Loss,
    #[serde(alias = "arch")]
    Architecture,
    #[serde(alias = "train")]
    Training,
    Data,
    #[serde(alias = "infer")]
    Inference,
}

impl ModuleType {
    pub const ALL: [ModuleType; 5] = [
        ModuleType::Loss,
        ModuleType::Architecture,
        ModuleType::Training,
        ModuleType::Data,
        ModuleType::Inference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleType::Loss => "loss",
            ModuleType::Architecture => "architecture",
            ModuleType::Training => "training",
            ModuleType::Data => "data",
            ModuleType::Inference => "inference",
        }
    }
}

impl FromStr for ModuleType {
    type Err = ModelError;

    /// Accepts the long names and the schema abbreviations (`arch`, `train`, `infer`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "loss" => Ok(ModuleType::Loss),
            "architecture" | "arch" => Ok(ModuleType::Architecture),
            "training" | "train" => Ok(ModuleType::Training),
            "data" => Ok(ModuleType::Data),
            "inference" | "infer" => Ok(ModuleType::Inference),
            _ => Err(ModelError::UnknownModuleType(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapType {
    #[serde(alias = "method")]
    Methods,
    Benchmark,
    Position,
}

impl GapType {
    pub const ALL: [GapType; 3] = [GapType::Methods, GapType::Benchmark, GapType::Position];

    pub fn as_str(self) -> &'static str {
        match self {
            GapType::Methods => "methods",
            GapType::Benchmark => "benchmark",
            GapType::Position => "position",
        }
    }
}

impl FromStr for GapType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "methods" | "method" => Ok(GapType::Methods),
            "benchmark" => Ok(GapType::Benchmark),
            "position" => Ok(GapType::Position),
            _ => Err(ModelError::InvalidAttributes(format!("unknown gap type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    #[default]
    Medium,
    High,
}

/// Kind-specific attribute record. The serde tag doubles as the node kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeAttrs {
    Paper {
        title: String,
        #[serde(default)]
        authors: Vec<String>,
        #[serde(default)]
        venue: String,
        #[serde(default)]
        year: Option<i32>,
        #[serde(default)]
        url: String,
    },
    Method {
        name: String,
        #[serde(default)]
        paradigm: String,
        #[serde(default)]
        description: String,
    },
    Module {
        name: String,
        module_type: ModuleType,
        #[serde(default)]
        description: String,
    },
    Benchmark {
        name: String,
        #[serde(default)]
        domain: String,
        #[serde(default)]
        metrics: Vec<String>,
        #[serde(default)]
        size: Option<u64>,
    },
    Gap {
        description: String,
        gap_type: GapType,
        #[serde(default)]
        severity: Severity,
    },
    Limitation {
        description: String,
        shared_count: usize,
        papers: BTreeSet<NodeId>,
    },
}

impl NodeAttrs {
    pub fn paper(title: impl Into<String>) -> Self {
        NodeAttrs::Paper {
            title: title.into(),
            authors: Vec::new(),
            venue: String::new(),
            year: None,
            url: String::new(),
        }
    }

    pub fn method(name: impl Into<String>) -> Self {
        NodeAttrs::Method {
            name: name.into(),
            paradigm: String::new(),
            description: String::new(),
        }
    }

    pub fn module(name: impl Into<String>, module_type: ModuleType, description: impl Into<String>) -> Self {
        NodeAttrs::Module {
            name: name.into(),
            module_type,
            description: description.into(),
        }
    }

    pub fn benchmark(name: impl Into<String>) -> Self {
        NodeAttrs::Benchmark {
            name: name.into(),
            domain: String::new(),
            metrics: Vec::new(),
            size: None,
        }
    }

    pub fn gap(description: impl Into<String>, gap_type: GapType) -> Self {
        NodeAttrs::Gap {
            description: description.into(),
            gap_type,
            severity: Severity::Medium,
        }
    }

    pub fn limitation(description: impl Into<String>, papers: impl IntoIterator<Item = NodeId>) -> Self {
        let papers: BTreeSet<NodeId> = papers.into_iter().collect();
        NodeAttrs::Limitation {
            description: description.into(),
            shared_count: papers.len(),
            papers,
        }
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            NodeAttrs::Paper { .. } => NodeKind::Paper,
            NodeAttrs::Method { .. } => NodeKind::Method,
            NodeAttrs::Module { .. } => NodeKind::Module,
            NodeAttrs::Benchmark { .. } => NodeKind::Benchmark,
            NodeAttrs::Gap { .. } => NodeKind::Gap,
            NodeAttrs::Limitation { .. } => NodeKind::Limitation,
        }
    }

    /// The human-facing identifying text: title, name or description.
    pub fn label(&self) -> &str {
        match self {
            NodeAttrs::Paper { title, .. } => title,
            NodeAttrs::Method { name, .. }
            | NodeAttrs::Module { name, .. }
            | NodeAttrs::Benchmark { name, .. } => name,
            NodeAttrs::Gap { description, .. } | NodeAttrs::Limitation { description, .. } => {
                description
            }
        }
    }

    pub fn canonical_key(&self) -> CanonicalKey {
        CanonicalKey::new(self.kind(), self.label())
    }

    pub fn papers(&self) -> Option<&BTreeSet<NodeId>> {
        match self {
            NodeAttrs::Limitation { papers, .. } => Some(papers),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if normalize(self.label()).is_empty() {
            return Err(ModelError::InvalidAttributes(format!(
                "{} requires a non-empty {}",
                self.kind(),
                match self.kind() {
                    NodeKind::Paper => "title",
                    NodeKind::Gap | NodeKind::Limitation => "description",
                    _ => "name",
                }
            )));
        }
        match self {
            NodeAttrs::Paper { year: Some(y), .. } if !(1950..=2100).contains(y) => {
                Err(ModelError::InvalidAttributes(format!("implausible paper year {y}")))
            }
            NodeAttrs::Limitation { shared_count, papers, .. } if *shared_count != papers.len() => {
                Err(ModelError::InvalidAttributes(format!(
                    "limitation shared_count {shared_count} does not match {} papers",
                    papers.len()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Fills empty fields of `self` from `other` (same kind). Returns true if
    /// `other` still disagrees on some non-empty field afterwards.
    pub(crate) fn absorb(&mut self, other: &NodeAttrs) -> bool {
        fn fill(dst: &mut String, src: &str) -> bool {
            if dst.is_empty() {
                dst.push_str(src);
                false
            } else {
                !src.is_empty() && dst != src
            }
        }
        match (self, other) {
            (
                NodeAttrs::Paper { title, authors, venue, year, url },
                NodeAttrs::Paper { title: t2, authors: a2, venue: v2, year: y2, url: u2 },
            ) => {
                let mut differs = title != t2;
                if authors.is_empty() {
                    authors.clone_from(a2);
                } else {
                    differs |= !a2.is_empty() && authors != a2;
                }
                differs |= fill(venue, v2);
                differs |= fill(url, u2);
                match (year.as_ref(), y2) {
                    (None, _) => *year = *y2,
                    (Some(a), Some(b)) => differs |= a != b,
                    _ => {}
                }
                differs
            }
            (
                NodeAttrs::Method { name, paradigm, description },
                NodeAttrs::Method { name: n2, paradigm: p2, description: d2 },
            ) => (name != n2) | fill(paradigm, p2) | fill(description, d2),
            (
                NodeAttrs::Module { name, module_type, description },
                NodeAttrs::Module { name: n2, module_type: t2, description: d2 },
            ) => (name != n2) | (module_type != t2) | fill(description, d2),
            (
                NodeAttrs::Benchmark { name, domain, metrics, size },
                NodeAttrs::Benchmark { name: n2, domain: d2, metrics: m2, size: s2 },
            ) => {
                let mut differs = (name != n2) | fill(domain, d2);
                for m in m2 {
                    if !metrics.contains(m) {
                        metrics.push(m.clone());
                    }
                }
                match (size.as_ref(), s2) {
                    (None, _) => *size = *s2,
                    (Some(a), Some(b)) => differs |= a != b,
                    _ => {}
                }
                differs
            }
            (
                NodeAttrs::Gap { description, gap_type, severity },
                NodeAttrs::Gap { description: d2, gap_type: g2, severity: s2 },
            ) => (description != d2) | (gap_type != g2) | (severity != s2),
            (
                NodeAttrs::Limitation { description, shared_count, papers },
                NodeAttrs::Limitation { description: d2, papers: p2, .. },
            ) => {
                papers.extend(p2.iter().copied());
                *shared_count = papers.len();
                description != d2
            }
            _ => true,
        }
    }
}

/// `(kind, normalized label)` identity used to merge nodes across agents and sessions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CanonicalKey {
    pub kind: NodeKind,
    pub name: String,
}

impl CanonicalKey {
    pub fn new(kind: NodeKind, label: &str) -> Self {
        CanonicalKey {
            kind,
            name: normalize(label),
        }
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub attrs: NodeAttrs,
    pub uncertainty: Uncertainty,
    /// Attribute revisions that disagreed with the stored values. Append-only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<NodeAttrs>,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        self.attrs.kind()
    }

    pub fn label(&self) -> &str {
        self.attrs.label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Proposes,
    Uses,
    EvaluatedOn,
    HasLimitation,
    Causes,
    Solves,
    EquivalentTo,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Proposes,
        Relation::Uses,
        Relation::EvaluatedOn,
        Relation::HasLimitation,
        Relation::Causes,
        Relation::Solves,
        Relation::EquivalentTo,
    ];

    /// The only `(source kind, target kind)` pair each relation may connect.
    pub fn signature(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            Relation::Proposes => (Paper, Method),
            Relation::Uses => (Method, Module),
            Relation::EvaluatedOn => (Method, Benchmark),
            Relation::HasLimitation => (Method, Limitation),
            Relation::Causes => (Module, Gap),
            Relation::Solves => (Method, Gap),
            Relation::EquivalentTo => (Module, Module),
        }
    }

    pub fn admits(self, src: NodeKind, dst: NodeKind) -> bool {
        self.signature() == (src, dst)
    }

    pub fn carries_metrics(self) -> bool {
        self == Relation::EvaluatedOn
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Proposes => "proposes",
            Relation::Uses => "uses",
            Relation::EvaluatedOn => "evaluated_on",
            Relation::HasLimitation => "has_limitation",
            Relation::Causes => "causes",
            Relation::Solves => "solves",
            Relation::EquivalentTo => "equivalent_to",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ModelError::InvalidAttributes(format!("unknown relation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

/// Metric vector on an `evaluated_on` edge. The reported values are fixed at
/// creation; re-measurements live alongside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    reported: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    measured: Option<Vec<Metric>>,
    #[serde(default)]
    reproduction_failed: bool,
}

/// Relative tolerance above which a re-measurement counts as a failed reproduction.
pub const REPRODUCTION_TOLERANCE: f64 = 0.05;

impl MetricVector {
    pub fn new<I, S>(entries: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let reported = check_entries(entries)?;
        Ok(MetricVector {
            reported,
            measured: None,
            reproduction_failed: false,
        })
    }

    pub fn reported(&self) -> &[Metric] {
        &self.reported
    }

    pub fn measured(&self) -> Option<&[Metric]> {
        self.measured.as_deref()
    }

    pub fn reproduction_failed(&self) -> bool {
        self.reproduction_failed
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.reported.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        check_entries(self.reported.iter().map(|m| (m.name.clone(), m.value)))?;
        if let Some(measured) = &self.measured {
            check_entries(measured.iter().map(|m| (m.name.clone(), m.value)))?;
        }
        Ok(())
    }

    /// Stores a re-measurement. Any shared metric deviating from the reported
    /// value by more than `rel_tol` marks the reproduction as failed; the flag
    /// never clears once set.
    pub(crate) fn record_measurement(&mut self, measured: Vec<Metric>, rel_tol: f64) -> bool {
        let failed = measured.iter().any(|m| match self.get(&m.name) {
            Some(reported) => {
                let scale = reported.abs().max(f64::EPSILON);
                (m.value - reported).abs() / scale > rel_tol
            }
            None => false,
        });
        self.reproduction_failed |= failed;
        self.measured = Some(measured);
        failed
    }
}

fn check_entries<I, S>(entries: I) -> Result<Vec<Metric>, ModelError>
where
    I: IntoIterator<Item = (S, f64)>,
    S: Into<String>,
{
    let mut out: Vec<Metric> = Vec::new();
    for (name, value) in entries {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ModelError::InvalidMetrics("empty metric name".into()));
        }
        if !value.is_finite() {
            return Err(ModelError::InvalidMetrics(format!("metric `{name}` is not finite")));
        }
        if out.iter().any(|m| m.name == name) {
            return Err(ModelError::InvalidMetrics(format!("duplicate metric `{name}`")));
        }
        out.push(Metric { name, value });
    }
    if out.is_empty() {
        return Err(ModelError::InvalidMetrics("metric vector is empty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub relation: Relation,
    pub dst: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricVector>,
    pub uncertainty: Uncertainty,
}

/// Who committed an element, in which phase, at which commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    pub agent: String,
    /// Sequence number of the commit that touched the element; the logical
    /// timestamp of record.
    #[serde(default)]
    pub commit: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derived_from: Vec<ElementId>,
}

impl Provenance {
    pub fn new(phase: impl Into<String>, agent: impl Into<String>) -> Self {
        Provenance {
            phase: phase.into(),
            agent: agent.into(),
            ..Default::default()
        }
    }

    pub fn for_project(mut self, project: impl Into<String>) -> Self {
        self.project = Some(project.into());
        self
    }

    pub fn derived_from(mut self, sources: impl IntoIterator<Item = ElementId>) -> Self {
        self.derived_from.extend(sources);
        self
    }
}

/// Per-project bootstrap record: the chosen direction, queries and venues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ProjectRecord {
    pub interest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(default)]
    pub queries: Vec<String>,
    #[serde(default)]
    pub venues: Vec<String>,
}
