//! Anchored structured-caption representation.
//!
//! A [`StructuredCaption`] holds the four anchored unit sets extracted from one
//! caption (objects, attributes, relations, events) plus the explicit order
//! assertions between events. Object anchors have the form `head_k` and event
//! anchors the form `predicate#j`; both are kept as plain strings because they
//! show up verbatim in questions and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectUnit {
    pub id: String,
    pub head: String,
    pub phrase: String,
    pub clause: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeUnit {
    pub object: String,
    pub value: String,
    pub clause: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationUnit {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub clause: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventMention {
    pub id: String,
    pub predicate: String,
    /// Agent first.
    pub participants: Vec<String>,
    pub clause: usize,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderAssertion {
    pub before: String,
    pub after: String,
    /// True iff stated by a temporal connective rather than implied by narration.
    pub explicit: bool,
}

/// Anchored unit sets of one caption.
///
/// Values built through [`StructuredCaption::normalized`] or [`ingest_json`]
/// keep every unit list sorted and free of exact duplicates, so derived
/// equality is value equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredCaption {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
    #[serde(default)]
    pub objects: Vec<ObjectUnit>,
    #[serde(default)]
    pub attributes: Vec<AttributeUnit>,
    #[serde(default)]
    pub relations: Vec<RelationUnit>,
    #[serde(default)]
    pub events: Vec<EventMention>,
    #[serde(default)]
    pub orders: Vec<OrderAssertion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId { id: String },
    MalformedObjectId { id: String, head: String },
    NonConsecutiveInstanceId { head: String, missing: String },
    MalformedEventId { id: String, predicate: String },
    DanglingAnchor { unit: String, anchor: String },
    EmptyParticipants { event: String },
    OrderIndexViolation { event: String, previous: String },
    DuplicateOrderIndex { event: String, order_index: usize },
    SelfOrder { event: String },
    UnknownOrderEvent { event: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate id `{id}`"),
            Violation::MalformedObjectId { id, head } => {
                write!(f, "object id `{id}` is not of the form `{head}_k`")
            }
            Violation::NonConsecutiveInstanceId { head, missing } => {
                write!(f, "instance ids of `{head}` skip `{missing}`")
            }
            Violation::MalformedEventId { id, predicate } => {
                write!(f, "event id `{id}` is not of the form `{predicate}#j`")
            }
            Violation::DanglingAnchor { unit, anchor } => {
                write!(f, "{unit} references missing object `{anchor}`")
            }
            Violation::EmptyParticipants { event } => write!(f, "event `{event}` has no participants"),
            Violation::OrderIndexViolation { event, previous } => write!(
                f,
                "event `{event}` has an order index not above earlier-clause event `{previous}`"
            ),
            Violation::DuplicateOrderIndex { event, order_index } => {
                write!(f, "event `{event}` reuses order index {order_index}")
            }
            Violation::SelfOrder { event } => write!(f, "order assertion relates `{event}` to itself"),
            Violation::UnknownOrderEvent { event } => {
                write!(f, "order assertion references missing event `{event}`")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("DanglingAnchor: {unit} references missing object `{anchor}`")]
    DanglingAnchor { unit: String, anchor: String },
    #[error("DuplicateId: `{id}`")]
    DuplicateId { id: String },
}

impl From<Violation> for IngestError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::DanglingAnchor { unit, anchor } => IngestError::DanglingAnchor { unit, anchor },
            Violation::DuplicateId { id } => IngestError::DuplicateId { id },
            other => IngestError::Schema(other.to_string()),
        }
    }
}

/// Splits `head_k` into `(head, k)`; `k` must be a positive integer.
pub fn split_object_anchor(id: &str) -> Option<(&str, usize)> {
    let (head, k) = id.rsplit_once('_')?;
    parse_index(head, k)
}

/// Splits `predicate#j` into `(predicate, j)`.
pub fn split_event_anchor(id: &str) -> Option<(&str, usize)> {
    let (pred, j) = id.rsplit_once('#')?;
    parse_index(pred, j)
}

fn parse_index<'a>(head: &'a str, k: &str) -> Option<(&'a str, usize)> {
    if head.is_empty() || k.is_empty() || k.starts_with('0') || !k.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    k.parse().ok().map(|k| (head, k))
}

pub fn object_anchor(head: &str, k: usize) -> String {
    format!("{head}_{k}")
}

pub fn event_anchor(predicate: &str, j: usize) -> String {
    format!("{predicate}#{j}")
}

impl StructuredCaption {
    /// Sorts every unit list canonically and drops exact duplicates.
    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn normalize(&mut self) {
        fn sort_dedup<T: Ord, K: Ord>(v: &mut Vec<T>, key: impl Fn(&T) -> K) {
            v.sort_by(|a, b| key(a).cmp(&key(b)).then_with(|| a.cmp(b)));
            v.dedup();
        }
        sort_dedup(&mut self.objects, |o| (o.clause, o.id.clone()));
        sort_dedup(&mut self.attributes, |a| (a.clause, a.object.clone()));
        sort_dedup(&mut self.relations, |r| (r.clause, r.subject.clone()));
        sort_dedup(&mut self.events, |e| (e.clause, e.id.clone()));
        sort_dedup(&mut self.orders, |o| (o.before.clone(), o.after.clone()));
    }

    pub fn object(&self, id: &str) -> Option<&ObjectUnit> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn event(&self, id: &str) -> Option<&EventMention> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn attributes_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a AttributeUnit> + 'a {
        self.attributes.iter().filter(move |a| a.object == id)
    }

    /// Number of object instances sharing `head`.
    pub fn instances_of(&self, head: &str) -> usize {
        self.objects.iter().filter(|o| o.head == head).count()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
            && self.attributes.is_empty()
            && self.relations.is_empty()
            && self.events.is_empty()
            && self.orders.is_empty()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

/// Checks every type invariant; an empty result means the caption is valid.
pub fn validate(c: &StructuredCaption) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut ids = BTreeSet::new();
    let mut per_head: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for o in &c.objects {
        if !ids.insert(o.id.as_str()) {
            out.push(Violation::DuplicateId { id: o.id.clone() });
            continue;
        }
        match split_object_anchor(&o.id) {
            Some((head, k)) if head == o.head => {
                per_head.entry(head).or_default().insert(k);
            }
            _ => out.push(Violation::MalformedObjectId { id: o.id.clone(), head: o.head.clone() }),
        }
    }
    for (head, ks) in &per_head {
        for expected in 1..=ks.len() {
            if !ks.contains(&expected) {
                out.push(Violation::NonConsecutiveInstanceId {
                    head: head.to_string(),
                    missing: object_anchor(head, expected),
                });
                break;
            }
        }
    }

    let dangling = |unit: String, anchor: &str, out: &mut Vec<Violation>| {
        if !ids.contains(anchor) {
            out.push(Violation::DanglingAnchor { unit, anchor: anchor.to_string() });
        }
    };
    for a in &c.attributes {
        dangling(format!("attribute ({}, {})", a.object, a.value), &a.object, &mut out);
    }
    for r in &c.relations {
        let unit = format!("relation ({}, {}, {})", r.subject, r.predicate, r.object);
        dangling(unit.clone(), &r.subject, &mut out);
        dangling(unit, &r.object, &mut out);
    }

    let mut event_ids = BTreeSet::new();
    for e in &c.events {
        if ids.contains(e.id.as_str()) || !event_ids.insert(e.id.as_str()) {
            out.push(Violation::DuplicateId { id: e.id.clone() });
        }
        match split_event_anchor(&e.id) {
            Some((pred, _)) if pred == e.predicate => {}
            _ => out.push(Violation::MalformedEventId { id: e.id.clone(), predicate: e.predicate.clone() }),
        }
        if e.participants.is_empty() {
            out.push(Violation::EmptyParticipants { event: e.id.clone() });
        }
        for p in &e.participants {
            dangling(format!("event {}", e.id), p, &mut out);
        }
    }

    let mut by_clause: Vec<&EventMention> = c.events.iter().collect();
    by_clause.sort_by_key(|e| (e.clause, e.order_index));
    let mut seen_index = BTreeSet::new();
    for (i, e) in by_clause.iter().enumerate() {
        if !seen_index.insert(e.order_index) {
            out.push(Violation::DuplicateOrderIndex { event: e.id.clone(), order_index: e.order_index });
        }
        if let Some(prev) = by_clause[..i]
            .iter()
            .filter(|p| p.clause < e.clause)
            .find(|p| p.order_index >= e.order_index)
        {
            out.push(Violation::OrderIndexViolation { event: e.id.clone(), previous: prev.id.clone() });
        }
    }

    for o in &c.orders {
        if o.before == o.after {
            out.push(Violation::SelfOrder { event: o.before.clone() });
        }
        for id in [&o.before, &o.after] {
            if !event_ids.contains(id.as_str()) {
                out.push(Violation::UnknownOrderEvent { event: id.clone() });
            }
        }
    }

    out
}

/// Reads a structured caption document, normalizes and validates it.
pub fn ingest_json(bytes: &[u8]) -> Result<StructuredCaption, IngestError> {
    let caption: StructuredCaption =
        serde_json::from_slice(bytes).map_err(|e| IngestError::Schema(e.to_string()))?;
    ingest(caption)
}

/// Normalizes an in-memory caption and rejects it on the first violation.
pub fn ingest(caption: StructuredCaption) -> Result<StructuredCaption, IngestError> {
    let caption = caption.normalized();
    match validate(&caption).into_iter().next() {
        Some(v) => Err(v.into()),
        None => Ok(caption),
    }
}

/// Canonical bytes: sorted keys, units in canonical order, trailing newline.
pub fn serialize(c: &StructuredCaption) -> Vec<u8> {
    let normalized = c.clone().normalized();
    // serde_json::Value keeps object keys in a BTreeMap, which sorts them.
    let value = serde_json::to_value(&normalized).expect("caption serializes");
    let mut bytes = serde_json::to_vec_pretty(&value).expect("value serializes");
    bytes.push(b'\n');
    bytes
}
