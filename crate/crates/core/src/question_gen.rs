//! Yes/no verification questions whose answers are known by construction.
//!
//! Positives are read off the reference caption. Negatives come only from
//! anchor-compatible conflicts between the generated and reference captions,
//! never from content the reference simply does not mention.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{split_object_anchor, EventMention, OrderAssertion, StructuredCaption};
use crate::grammar_parser::{ordinal_word, Lexicon};
use crate::matcher::{EventMatching, ObjectMap};
use crate::world_sim::article;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Temporal,
    Factual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Existence,
    Attribute,
    Relation,
    EventOccurrence,
    TemporalOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn from_bool(b: bool) -> Answer {
        if b {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// An event named either by id or by predicate and participant binding.
/// Anchors live in the reference caption's id space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventSlot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub predicate: String,
    pub participants: Vec<String>,
}

impl EventSlot {
    pub fn of(e: &EventMention, with_id: bool) -> EventSlot {
        EventSlot {
            id: with_id.then(|| e.id.clone()),
            predicate: e.predicate.clone(),
            participants: e.participants.clone(),
        }
    }

    pub fn same_binding(&self, e: &EventMention) -> bool {
        self.predicate == e.predicate && self.participants == e.participants
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slots {
    Existence { object: String, head: String, attributes: Vec<String> },
    Attribute { object: String, value: String },
    Relation { subject: String, predicate: String, object: String },
    EventOccurrence { event: EventSlot },
    TemporalOrder { first: EventSlot, second: EventSlot },
}

impl Slots {
    pub fn kind(&self) -> QuestionKind {
        match self {
            Slots::Existence { .. } => QuestionKind::Existence,
            Slots::Attribute { .. } => QuestionKind::Attribute,
            Slots::Relation { .. } => QuestionKind::Relation,
            Slots::EventOccurrence { .. } => QuestionKind::EventOccurrence,
            Slots::TemporalOrder { .. } => QuestionKind::TemporalOrder,
        }
    }

    /// Object anchors the question refers to.
    pub fn anchors(&self) -> Vec<&str> {
        match self {
            Slots::Existence { object, .. } | Slots::Attribute { object, .. } => vec![object],
            Slots::Relation { subject, object, .. } => vec![subject, object],
            Slots::EventOccurrence { event } => event.participants.iter().map(String::as_str).collect(),
            Slots::TemporalOrder { first, second } => {
                first.participants.iter().chain(&second.participants).map(String::as_str).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ReferenceSupport,
    ReferenceOrder,
    WrongAttribute,
    WrongRelation,
    WrongBinding,
    OrderInversion,
    InstanceCollapse,
}

impl Source {
    pub fn is_negative(self) -> bool {
        !matches!(self, Source::ReferenceSupport | Source::ReferenceOrder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub slots: Slots,
    /// Generated-caption units that exposed a negative.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gen_anchors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationQuestion {
    pub branch: Branch,
    pub kind: QuestionKind,
    pub text: String,
    pub label: Answer,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<VerificationQuestion>,
    pub positives_count: usize,
    pub negatives_count: usize,
}

impl QuestionSet {
    pub fn new(questions: Vec<VerificationQuestion>) -> QuestionSet {
        let positives_count = questions.iter().filter(|q| q.label == Answer::Yes).count();
        let negatives_count = questions.len() - positives_count;
        QuestionSet { questions, positives_count, negatives_count }
    }

    /// Concatenates, dropping repeats of an already present (kind, slots).
    pub fn union(mut self, other: QuestionSet) -> QuestionSet {
        let mut seen: BTreeSet<(QuestionKind, Slots, Answer)> =
            self.questions.iter().map(|q| (q.kind, q.provenance.slots.clone(), q.label)).collect();
        for q in other.questions {
            if seen.insert((q.kind, q.provenance.slots.clone(), q.label)) {
                self.questions.push(q);
            }
        }
        QuestionSet::new(self.questions)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("MissingSlot: template for {kind:?} needs [{slot}]")]
pub struct MissingSlot {
    pub kind: QuestionKind,
    pub slot: &'static str,
}

/// Fills a template by placeholder name (`OBJECT`, `ATTRIBUTE`, `SUBJECT`,
/// `RELATION`, `PARTICIPANTS`, `EVENT`, `EVENT 1`, `EVENT 2`). A relation
/// whose `RELATION` is flagged `COPULAR` uses the "Is the ..." variant.
pub fn render(kind: QuestionKind, slots: &BTreeMap<&str, String>) -> Result<String, MissingSlot> {
    let get = |slot: &'static str| slots.get(slot).map(String::as_str).ok_or(MissingSlot { kind, slot });
    Ok(match kind {
        QuestionKind::Existence => {
            let object = get("OBJECT")?;
            format!("Is there {} {object}?", article(object))
        }
        QuestionKind::Attribute => format!("Is the {} {}?", get("OBJECT")?, get("ATTRIBUTE")?),
        QuestionKind::Relation => {
            let (s, r, o) = (get("SUBJECT")?, get("RELATION")?, get("OBJECT")?);
            if slots.contains_key("COPULAR") {
                format!("Is the {s} {r} the {o}?")
            } else {
                format!("Does the {s} {r} the {o}?")
            }
        }
        QuestionKind::EventOccurrence => format!("Does {} {}?", get("PARTICIPANTS")?, get("EVENT")?),
        QuestionKind::TemporalOrder => format!("Did {} happen before {}?", get("EVENT 1")?, get("EVENT 2")?),
    })
}

/// Renders questions against the reference caption's instance inventory.
pub struct Renderer<'a> {
    pub reference: &'a StructuredCaption,
    pub lexicon: &'a Lexicon,
}

impl Renderer<'_> {
    /// "cup", or "second cup" when the reference has several cups.
    fn descriptor(&self, anchor: &str) -> String {
        let Some((head, k)) = split_object_anchor(anchor) else { return anchor.to_string() };
        let head = self.reference.object(anchor).map_or(head, |o| o.head.as_str());
        if self.reference.instances_of(head) > 1 {
            if let Some(w) = ordinal_word(k) {
                return format!("{w} {head}");
            }
        }
        head.to_string()
    }

    fn event_clause(&self, e: &EventSlot, third_person: bool) -> (String, String) {
        let agent = format!("the {}", self.descriptor(&e.participants[0]));
        let verb = if third_person { self.lexicon.third_person(&e.predicate) } else { e.predicate.clone() };
        let mut rest = verb;
        for p in &e.participants[1..] {
            rest.push_str(&format!(" the {}", self.descriptor(p)));
        }
        (agent, rest)
    }

    /// Repetition suffix so repeated identical events stay distinguishable.
    fn occurrence_suffix(&self, e: &EventSlot) -> String {
        let Some(id) = &e.id else { return String::new() };
        let mut same: Vec<&EventMention> =
            self.reference.events.iter().filter(|x| e.same_binding(x)).collect();
        if same.len() < 2 {
            return String::new();
        }
        same.sort_by_key(|x| x.order_index);
        match same.iter().position(|x| &x.id == id).map(|i| i + 1) {
            Some(1) => " for the first time".into(),
            Some(k) => ordinal_word(k).map(|w| format!(" for the {w} time")).unwrap_or_default(),
            None => String::new(),
        }
    }

    pub fn text(&self, slots: &Slots) -> String {
        let mut fill: BTreeMap<&str, String> = BTreeMap::new();
        match slots {
            Slots::Existence { head, attributes, .. } => {
                let mut words = attributes.clone();
                words.push(head.clone());
                fill.insert("OBJECT", words.join(" "));
            }
            Slots::Attribute { object, value } => {
                fill.insert("OBJECT", self.descriptor(object));
                fill.insert("ATTRIBUTE", value.clone());
            }
            Slots::Relation { subject, predicate, object } => {
                fill.insert("SUBJECT", self.descriptor(subject));
                fill.insert("RELATION", predicate.clone());
                fill.insert("OBJECT", self.descriptor(object));
                if !self.lexicon.verbs.contains_key(predicate) {
                    fill.insert("COPULAR", String::new());
                }
            }
            Slots::EventOccurrence { event } => {
                let (agent, rest) = self.event_clause(event, false);
                fill.insert("PARTICIPANTS", agent);
                fill.insert("EVENT", rest);
            }
            Slots::TemporalOrder { first, second } => {
                for (slot, e) in [("EVENT 1", first), ("EVENT 2", second)] {
                    let (agent, rest) = self.event_clause(e, true);
                    fill.insert(slot, format!("{agent} {rest}{}", self.occurrence_suffix(e)));
                }
            }
        }
        render(slots.kind(), &fill).expect("all slots filled")
    }

    fn question(&self, branch: Branch, source: Source, slots: Slots, gen_anchors: Vec<String>) -> VerificationQuestion {
        VerificationQuestion {
            branch,
            kind: slots.kind(),
            text: self.text(&slots),
            label: Answer::from_bool(!source.is_negative()),
            provenance: Provenance { source, slots, gen_anchors },
        }
    }
}

/// Collects questions, keeping the first of each (kind, slots).
struct Builder<'a> {
    renderer: Renderer<'a>,
    branch: Branch,
    seen: BTreeSet<(QuestionKind, Slots)>,
    out: Vec<VerificationQuestion>,
}

impl<'a> Builder<'a> {
    fn new(reference: &'a StructuredCaption, lexicon: &'a Lexicon, branch: Branch) -> Self {
        Builder { renderer: Renderer { reference, lexicon }, branch, seen: BTreeSet::new(), out: Vec::new() }
    }

    fn push(&mut self, source: Source, slots: Slots, gen_anchors: Vec<String>) {
        if self.seen.insert((slots.kind(), slots.clone())) {
            let q = self.renderer.question(self.branch, source, slots, gen_anchors);
            self.out.push(q);
        }
    }

    fn finish(self) -> QuestionSet {
        QuestionSet::new(self.out)
    }
}

fn existence_slot(reference: &StructuredCaption, anchor: &str) -> Option<Slots> {
    let o = reference.object(anchor)?;
    let values: BTreeSet<&str> = reference.attributes_of(anchor).map(|a| a.value.as_str()).collect();
    let mut attributes: Vec<String> = Vec::new();
    for t in o.phrase.split_whitespace() {
        if values.contains(t) && !attributes.iter().any(|a| a == t) {
            attributes.push(t.to_string());
        }
    }
    Some(Slots::Existence { object: o.id.clone(), head: o.head.clone(), attributes })
}

/// Support chains for every reference relation.
pub fn factual_positive_questions(reference: &StructuredCaption, lexicon: &Lexicon) -> QuestionSet {
    let mut b = Builder::new(reference, lexicon, Branch::Factual);
    for r in &reference.relations {
        for end in [&r.subject, &r.object] {
            if let Some(slots) = existence_slot(reference, end) {
                b.push(Source::ReferenceSupport, slots, vec![]);
            }
        }
        for end in [&r.subject, &r.object] {
            for a in reference.attributes_of(end) {
                b.push(Source::ReferenceSupport, Slots::Attribute { object: end.clone(), value: a.value.clone() }, vec![]);
            }
        }
        b.push(
            Source::ReferenceSupport,
            Slots::Relation { subject: r.subject.clone(), predicate: r.predicate.clone(), object: r.object.clone() },
            vec![],
        );
        for e in reference.events.iter().filter(|e| e.participants.iter().any(|p| *p == r.subject || *p == r.object)) {
            b.push(Source::ReferenceSupport, Slots::EventOccurrence { event: EventSlot::of(e, false) }, vec![]);
        }
    }
    b.finish()
}

fn mapped_event(e: &EventMention, object_map: &ObjectMap) -> Option<EventSlot> {
    let participants = e.participants.iter().map(|p| object_map.get(p).map(str::to_string)).collect::<Option<Vec<_>>>()?;
    Some(EventSlot { id: None, predicate: e.predicate.clone(), participants })
}

/// Slot conflicts between the generated caption and the reference.
pub fn factual_negative_questions(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    object_map: &ObjectMap,
    event_matching: &EventMatching,
    lexicon: &Lexicon,
) -> QuestionSet {
    let mut b = Builder::new(reference, lexicon, Branch::Factual);
    for a in &gen.attributes {
        let Some(r_obj) = object_map.get(&a.object) else { continue };
        let reference_values: BTreeSet<&str> = reference.attributes_of(r_obj).map(|x| x.value.as_str()).collect();
        if !reference_values.is_empty() && !reference_values.contains(a.value.as_str()) {
            b.push(
                Source::WrongAttribute,
                Slots::Attribute { object: r_obj.to_string(), value: a.value.clone() },
                vec![a.object.clone()],
            );
        }
    }
    for g in &gen.relations {
        let (Some(s), Some(o)) = (object_map.get(&g.subject), object_map.get(&g.object)) else { continue };
        let on_pair: BTreeSet<&str> = reference
            .relations
            .iter()
            .filter(|r| r.subject == s && r.object == o)
            .map(|r| r.predicate.as_str())
            .collect();
        if !on_pair.is_empty() && !on_pair.contains(g.predicate.as_str()) {
            b.push(
                Source::WrongRelation,
                Slots::Relation { subject: s.to_string(), predicate: g.predicate.clone(), object: o.to_string() },
                vec![g.subject.clone(), g.object.clone()],
            );
        }
    }
    for c in &event_matching.conflicts {
        let Some(g) = gen.event(&c.gen) else { continue };
        let Some(slot) = mapped_event(g, object_map) else { continue };
        if !reference.events.iter().any(|e| slot.same_binding(e)) {
            b.push(Source::WrongBinding, Slots::EventOccurrence { event: slot }, vec![c.gen.clone()]);
        }
    }
    b.finish()
}

fn has_temporal_structure(reference: &StructuredCaption) -> bool {
    reference.orders.iter().any(|o| o.explicit)
}

pub fn temporal_positive_questions(reference: &StructuredCaption, lexicon: &Lexicon) -> QuestionSet {
    let mut b = Builder::new(reference, lexicon, Branch::Temporal);
    if !has_temporal_structure(reference) {
        return b.finish();
    }
    for e in &reference.events {
        b.push(Source::ReferenceSupport, Slots::EventOccurrence { event: EventSlot::of(e, false) }, vec![]);
    }
    for o in reference.orders.iter().filter(|o| o.explicit) {
        let (Some(first), Some(second)) = (reference.event(&o.before), reference.event(&o.after)) else { continue };
        b.push(
            Source::ReferenceOrder,
            Slots::TemporalOrder { first: EventSlot::of(first, true), second: EventSlot::of(second, true) },
            vec![],
        );
    }
    b.finish()
}

/// Transitive closure of explicit orders as (before, after) id pairs.
fn explicit_closure<'a>(orders: &[&'a OrderAssertion]) -> BTreeSet<(&'a str, &'a str)> {
    let mut after: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for o in orders {
        after.entry(o.before.as_str()).or_default().push(o.after.as_str());
    }
    let mut closure = BTreeSet::new();
    for &start in after.keys() {
        let mut stack = after[start].clone();
        while let Some(next) = stack.pop() {
            if closure.insert((start, next)) {
                stack.extend(after.get(next).into_iter().flatten());
            }
        }
    }
    closure
}

/// Order inversions over matched events, plus collapse/swap conflicts on
/// unmatched ones, both ranging over every order the reference's explicit
/// orders entail.
pub fn temporal_negative_questions(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    object_map: &ObjectMap,
    event_matching: &EventMatching,
    lexicon: &Lexicon,
) -> QuestionSet {
    let mut b = Builder::new(reference, lexicon, Branch::Temporal);
    if !has_temporal_structure(reference) {
        return b.finish();
    }
    let gen_of: BTreeMap<&str, &str> =
        event_matching.pairs.iter().map(|(g, r)| (r.as_str(), g.as_str())).collect();
    let explicit: Vec<_> = reference.orders.iter().filter(|o| o.explicit).collect();
    let precedes = explicit_closure(&explicit);
    for &(before, after) in &precedes {
        let (Some(first), Some(second)) = (reference.event(before), reference.event(after)) else { continue };
        if let (Some(g1), Some(g2)) = (gen_of.get(before), gen_of.get(after)) {
            b.push(
                Source::OrderInversion,
                Slots::TemporalOrder { first: EventSlot::of(second, true), second: EventSlot::of(first, true) },
                vec![g1.to_string(), g2.to_string()],
            );
        }
    }
    for c in &event_matching.conflicts {
        let Some(g) = gen.event(&c.gen) else { continue };
        let Some(claimed) = mapped_event(g, object_map) else { continue };
        // Partners are every event provably before or after the slot.
        for &(before, after) in &precedes {
            let (target_first, partner_id) = if before == c.reference {
                (true, after)
            } else if after == c.reference {
                (false, before)
            } else {
                continue;
            };
            let Some(partner) = reference.event(partner_id) else { continue };
            // The claimed binding may already occur in the reference; the
            // label stays "no" only if every such occurrence is provably on
            // the far side of the partner.
            let sound = reference.events.iter().filter(|e| e.id != partner_id && claimed.same_binding(e)).all(|e| {
                if target_first {
                    precedes.contains(&(partner_id, e.id.as_str()))
                } else {
                    precedes.contains(&(e.id.as_str(), partner_id))
                }
            });
            if !sound {
                continue;
            }
            let partner = EventSlot::of(partner, true);
            let slots = if target_first {
                Slots::TemporalOrder { first: claimed.clone(), second: partner }
            } else {
                Slots::TemporalOrder { first: partner, second: claimed.clone() }
            };
            b.push(Source::InstanceCollapse, slots, vec![c.gen.clone()]);
        }
    }
    b.finish()
}

fn subsample<T: Clone>(items: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut keep = sample(rng, items.len(), k).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

/// Balances labels to within one, then optionally caps the total.
/// Surviving questions keep their original relative order.
pub fn balance_and_cap(qs: &QuestionSet, budget: Option<usize>, seed: u64) -> QuestionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pos, neg): (Vec<_>, Vec<_>) = qs.questions.iter().cloned().enumerate().partition(|(_, q)| q.label == Answer::Yes);
    let mut kept = if !pos.is_empty() && !neg.is_empty() {
        let limit = pos.len().min(neg.len()) + 1;
        let mut both = subsample(&pos, limit, &mut rng);
        both.extend(subsample(&neg, limit, &mut rng));
        both.sort_by_key(|(i, _)| *i);
        both
    } else {
        pos.into_iter().chain(neg).collect()
    };
    if let Some(budget) = budget {
        kept = subsample(&kept, budget, &mut rng);
    }
    QuestionSet::new(kept.into_iter().map(|(_, q)| q).collect())
}

/// Caps the total without balancing labels.
pub fn cap(qs: &QuestionSet, budget: usize, seed: u64) -> QuestionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QuestionSet::new(subsample(&qs.questions, budget, &mut rng))
}
