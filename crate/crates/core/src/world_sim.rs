//! Synthetic closed-world scenes, their reference captions, and the caption
//! corruptions that model common captioning failures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{event_anchor, object_anchor, StructuredCaption};
use crate::grammar_parser::{ordinal_word, Lexicon, ORDINALS};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: String,
    pub head: String,
    pub attributes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldRelation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldEvent {
    pub id: String,
    pub predicate: String,
    pub participants: Vec<String>,
    pub time_index: usize,
    /// The caption states that this event follows the previous one.
    #[serde(default)]
    pub explicit_order: bool,
}

/// Ground-truth scene. Relations hold only prepositional facts; transitive
/// events imply their own relation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldState {
    pub entities: Vec<Entity>,
    pub relations: Vec<WorldRelation>,
    pub events: Vec<WorldEvent>,
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("LexiconTooSmall: {0}")]
    LexiconTooSmall(String),
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("EmptyWorld: a world without entities has no reference caption")]
    EmptyWorld,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

pub type Range = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    #[serde(skip)]
    pub lexicon: Arc<Lexicon>,
    pub entities: Range,
    pub attributes: Range,
    pub relations: Range,
    pub events: Range,
    pub repeat_prob: f64,
    pub explicit_order_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            lexicon: Arc::new(Lexicon::builtin()),
            entities: (2, 5),
            attributes: (0, 2),
            relations: (1, 3),
            events: (1, 4),
            repeat_prob: 0.3,
            explicit_order_prob: 0.7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, (lo, hi)) in
            [("entities", self.entities), ("attributes", self.attributes), ("relations", self.relations), ("events", self.events)]
        {
            if lo > hi {
                return Err(WorldError::InvalidConfig(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        for (name, p) in [("repeat_prob", self.repeat_prob), ("explicit_order_prob", self.explicit_order_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(WorldError::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

fn too_small(msg: impl Into<String>) -> WorldError {
    WorldError::LexiconTooSmall(msg.into())
}

/// Draws a world; deterministic in `(config, seed)`.
pub fn sample_world(config: &WorldConfig, seed: u64) -> Result<WorldState, WorldError> {
    config.validate()?;
    let lex = &config.lexicon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns: Vec<&String> = lex.nouns.iter().collect();
    let adjectives: Vec<&String> = lex.adjectives.iter().collect();
    let prepositions: Vec<&String> = lex.prepositions.iter().collect();
    let transitive: Vec<&String> = lex.verbs.iter().filter(|(_, a)| **a == 2).map(|(v, _)| v).collect();
    let intransitive: Vec<&String> = lex.verbs.iter().filter(|(_, a)| **a == 1).map(|(v, _)| v).collect();

    let n_entities = rng.gen_range(config.entities.0..=config.entities.1);
    if n_entities > 0 && nouns.is_empty() {
        return Err(too_small("no nouns"));
    }
    if config.attributes.0 > adjectives.len() {
        return Err(too_small(format!("{} attributes requested, {} adjectives known", config.attributes.0, adjectives.len())));
    }
    let max_instances = ORDINALS.len();
    if n_entities > nouns.len() * max_instances {
        return Err(too_small("too many entities for the noun inventory"));
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut entities = Vec::with_capacity(n_entities);
    for _ in 0..n_entities {
        let head = loop {
            let h = nouns[rng.gen_range(0..nouns.len())];
            if counts.get(h.as_str()).copied().unwrap_or(0) < max_instances {
                break h;
            }
        };
        let k = counts.entry(head).or_insert(0);
        *k += 1;
        let n_attr = rng.gen_range(config.attributes.0..=config.attributes.1.min(adjectives.len()));
        let attributes = adjectives.choose_multiple(&mut rng, n_attr).map(|a| a.to_string()).collect();
        entities.push(Entity { id: object_anchor(head, *k), head: head.clone(), attributes });
    }

    let n_rel = rng.gen_range(config.relations.0..=config.relations.1);
    let mut relations = Vec::new();
    if n_rel > 0 {
        if prepositions.is_empty() {
            return Err(too_small("relations requested but no prepositions"));
        }
        let capacity = n_entities * n_entities.saturating_sub(1) * prepositions.len();
        if capacity < config.relations.0 {
            return Err(too_small(format!("only {capacity} distinct relations are possible")));
        }
        let mut seen = BTreeSet::new();
        while relations.len() < n_rel.min(capacity) {
            let s = rng.gen_range(0..n_entities);
            let o = rng.gen_range(0..n_entities);
            let p = prepositions[rng.gen_range(0..prepositions.len())];
            if s == o || !seen.insert((s, o, p)) {
                continue;
            }
            relations.push(WorldRelation {
                subject: entities[s].id.clone(),
                predicate: p.clone(),
                object: entities[o].id.clone(),
            });
        }
    }

    let n_events = rng.gen_range(config.events.0..=config.events.1);
    let mut events: Vec<WorldEvent> = Vec::new();
    if n_events > 0 {
        if n_entities == 0 {
            return Err(too_small("events need at least one entity"));
        }
        let mut usable: Vec<&String> = intransitive.clone();
        if n_entities >= 2 {
            usable.extend(transitive.iter().copied());
        }
        if usable.is_empty() {
            return Err(too_small("no verb usable with this entity count"));
        }
        let mut per_pred: BTreeMap<String, usize> = BTreeMap::new();
        for t in 0..n_events {
            let repeat = t > 0 && rng.gen_bool(config.repeat_prob);
            let predicate = if repeat {
                events[rng.gen_range(0..events.len())].predicate.clone()
            } else {
                usable[rng.gen_range(0..usable.len())].clone()
            };
            let agent = rng.gen_range(0..n_entities);
            let mut participants = vec![entities[agent].id.clone()];
            if lex.verbs.get(&predicate) == Some(&2) {
                let object = loop {
                    let o = rng.gen_range(0..n_entities);
                    if o != agent {
                        break o;
                    }
                };
                participants.push(entities[object].id.clone());
            }
            let j = per_pred.entry(predicate.clone()).or_insert(0);
            *j += 1;
            let explicit_order = t > 0 && rng.gen_bool(config.explicit_order_prob);
            events.push(WorldEvent { id: event_anchor(&predicate, *j), predicate, participants, time_index: t + 1, explicit_order });
        }
    }
    Ok(WorldState { entities, relations, events, rng_seed: seed })
}

impl WorldState {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn event(&self, id: &str) -> Option<&WorldEvent> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let ids: BTreeSet<&str> = self.entities.iter().map(|e| e.id.as_str()).collect();
        if ids.len() != self.entities.len() {
            return Err(WorldError::InvalidWorld("duplicate entity id".into()));
        }
        let missing = |a: &str| !ids.contains(a);
        for r in &self.relations {
            if missing(&r.subject) || missing(&r.object) {
                return Err(WorldError::InvalidWorld(format!("relation {} {} {} is dangling", r.subject, r.predicate, r.object)));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if let Some(a) = e.participants.iter().find(|a| missing(a)) {
                return Err(WorldError::InvalidWorld(format!("event {} references missing entity {a}", e.id)));
            }
            if e.participants.is_empty() {
                return Err(WorldError::InvalidWorld(format!("event {} has no participants", e.id)));
            }
            if i > 0 && e.time_index <= self.events[i - 1].time_index {
                return Err(WorldError::InvalidWorld(format!("time_index not increasing at {}", e.id)));
            }
        }
        Ok(())
    }

    /// Number of entities sharing `head`.
    pub fn instances_of(&self, head: &str) -> usize {
        self.entities.iter().filter(|e| e.head == head).count()
    }

    /// "cup" or "second cup" when the head is repeated.
    pub fn descriptor(&self, id: &str) -> String {
        let Some(e) = self.entity(id) else { return id.to_string() };
        if self.instances_of(&e.head) > 1 {
            if let Some((_, k)) = crate::caption_ir::split_object_anchor(id) {
                if let Some(w) = ordinal_word(k) {
                    return format!("{w} {}", e.head);
                }
            }
        }
        e.head.clone()
    }
}

pub fn article(phrase: &str) -> &'static str {
    match phrase.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().collect::<String>() + chars.as_str()).unwrap_or_default()
}

/// Deterministic grammar-conformant reference caption for `world`.
pub fn render_reference(world: &WorldState, lexicon: &Lexicon) -> Result<String, WorldError> {
    if world.is_empty() {
        return Err(WorldError::EmptyWorld);
    }
    world.validate()?;
    let mut sentences = Vec::new();
    let mut seen_heads = BTreeSet::new();
    for e in &world.entities {
        let mut words: Vec<&str> = e.attributes.iter().map(String::as_str).collect();
        words.push(&e.head);
        let phrase = words.join(" ");
        let det = if seen_heads.insert(e.head.as_str()) { article(&phrase) } else { "another" };
        sentences.push(format!("{} {phrase} is present.", capitalize(det)));
    }
    for r in &world.relations {
        sentences.push(format!(
            "The {} is {} the {}.",
            world.descriptor(&r.subject),
            r.predicate,
            world.descriptor(&r.object)
        ));
    }
    for (i, e) in world.events.iter().enumerate() {
        let mut clause = format!("the {} {}", world.descriptor(&e.participants[0]), lexicon.third_person(&e.predicate));
        for p in &e.participants[1..] {
            clause.push_str(&format!(" the {}", world.descriptor(p)));
        }
        if e.explicit_order && i > 0 {
            sentences.push(format!("Then {clause}."));
        } else {
            sentences.push(format!("{}.", capitalize(&clause)));
        }
    }
    Ok(sentences.join(" "))
}

/// Reads a parsed caption back as a world (the inverse of rendering).
/// Relations whose predicate is a verb are taken to be implied by events.
pub fn world_from_caption(caption: &StructuredCaption, lexicon: &Lexicon) -> WorldState {
    let entities = caption
        .objects
        .iter()
        .map(|o| Entity {
            id: o.id.clone(),
            head: o.head.clone(),
            attributes: caption.attributes_of(&o.id).map(|a| a.value.clone()).collect(),
        })
        .collect();
    let mut relations: Vec<WorldRelation> = caption
        .relations
        .iter()
        .filter(|r| !lexicon.verbs.contains_key(&r.predicate))
        .map(|r| WorldRelation { subject: r.subject.clone(), predicate: r.predicate.clone(), object: r.object.clone() })
        .collect();
    relations.dedup();
    let mut events: Vec<_> = caption.events.iter().collect();
    events.sort_by_key(|e| e.order_index);
    let explicit: BTreeSet<(&str, &str)> =
        caption.orders.iter().filter(|o| o.explicit).map(|o| (o.before.as_str(), o.after.as_str())).collect();
    let events = events
        .iter()
        .enumerate()
        .map(|(i, e)| WorldEvent {
            id: e.id.clone(),
            predicate: e.predicate.clone(),
            participants: e.participants.clone(),
            time_index: i + 1,
            explicit_order: i > 0 && explicit.contains(&(events[i - 1].id.as_str(), e.id.as_str())),
        })
        .collect();
    WorldState { entities, relations, events, rng_seed: 0 }
}

/// Structural equality up to anchor renaming: entities, relations and
/// events compared after mapping ids by position.
pub fn isomorphic(a: &WorldState, b: &WorldState) -> bool {
    if a.entities.len() != b.entities.len() || a.events.len() != b.events.len() {
        return false;
    }
    let rename: BTreeMap<&str, &str> =
        a.entities.iter().zip(&b.entities).map(|(x, y)| (x.id.as_str(), y.id.as_str())).collect();
    let entities_ok = a.entities.iter().zip(&b.entities).all(|(x, y)| x.head == y.head && x.attributes == y.attributes);
    let map = |id: &String| rename.get(id.as_str()).map(|s| s.to_string());
    let rel_a: Option<BTreeSet<(String, String, String)>> =
        a.relations.iter().map(|r| Some((map(&r.subject)?, r.predicate.clone(), map(&r.object)?))).collect();
    let rel_b: BTreeSet<_> = b.relations.iter().map(|r| (r.subject.clone(), r.predicate.clone(), r.object.clone())).collect();
    let events_ok = a.events.iter().zip(&b.events).all(|(x, y)| {
        x.predicate == y.predicate
            && x.explicit_order == y.explicit_order
            && x.participants.iter().map(map).collect::<Option<Vec<_>>>().as_ref() == Some(&y.participants)
    });
    entities_ok && events_ok && rel_a.as_ref() == Some(&rel_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    AttributeSwap,
    RelationSwap,
    ParticipantSwap,
    OrderInvert,
    InstanceCollapse,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::AttributeSwap,
        CorruptionKind::RelationSwap,
        CorruptionKind::ParticipantSwap,
        CorruptionKind::OrderInvert,
        CorruptionKind::InstanceCollapse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::AttributeSwap => "attribute_swap",
            CorruptionKind::RelationSwap => "relation_swap",
            CorruptionKind::ParticipantSwap => "participant_swap",
            CorruptionKind::OrderInvert => "order_invert",
            CorruptionKind::InstanceCollapse => "instance_collapse",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorruptionKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown corruption kind `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("NothingToCorrupt: caption has no target for {0}")]
pub struct NothingToCorrupt(pub CorruptionKind);

/// Rebinds the relation implied by a transitive event after its participants change.
fn rebind_event_relation(c: &mut StructuredCaption, event: usize, new_participants: Vec<String>) {
    let e = &c.events[event];
    if e.participants.len() == 2 {
        if let Some(r) = c.relations.iter_mut().find(|r| {
            r.clause == e.clause && r.predicate == e.predicate && r.subject == e.participants[0] && r.object == e.participants[1]
        }) {
            r.subject = new_participants[0].clone();
            r.object = new_participants[1].clone();
        }
    }
    c.events[event].participants = new_participants;
}

/// Applies one corruption of `kind`. Deterministic in `seed`.
pub fn corrupt(
    caption: &StructuredCaption,
    kind: CorruptionKind,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<StructuredCaption, NothingToCorrupt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = caption.clone().normalized();
    let none = || NothingToCorrupt(kind);
    match kind {
        CorruptionKind::AttributeSwap => {
            let mut options = Vec::new();
            for (i, a) in c.attributes.iter().enumerate() {
                let own: BTreeSet<&str> = c.attributes_of(&a.object).map(|x| x.value.as_str()).collect();
                for v in lexicon.adjectives.iter().filter(|v| !own.contains(v.as_str())) {
                    options.push((i, v.clone()));
                }
            }
            let (i, value) = options.choose(&mut rng).cloned().ok_or_else(none)?;
            let old = std::mem::replace(&mut c.attributes[i].value, value.clone());
            let object = c.attributes[i].object.clone();
            if let Some(o) = c.objects.iter_mut().find(|o| o.id == object) {
                o.phrase = o.phrase.split(' ').map(|t| if t == old { value.as_str() } else { t }).collect::<Vec<_>>().join(" ");
            }
        }
        CorruptionKind::RelationSwap => {
            let existing: BTreeSet<(String, String, String)> =
                c.relations.iter().map(|r| (r.subject.clone(), r.predicate.clone(), r.object.clone())).collect();
            let mut options = Vec::new();
            for (i, r) in c.relations.iter().enumerate().filter(|(_, r)| lexicon.prepositions.contains(&r.predicate)) {
                for p in lexicon.prepositions.iter().filter(|p| **p != r.predicate) {
                    if !existing.contains(&(r.subject.clone(), p.clone(), r.object.clone())) {
                        options.push((i, p.clone()));
                    }
                }
            }
            let (i, p) = options.choose(&mut rng).cloned().ok_or_else(none)?;
            c.relations[i].predicate = p;
        }
        CorruptionKind::ParticipantSwap => {
            let ids: Vec<String> = c.objects.iter().map(|o| o.id.clone()).collect();
            let mut options: Vec<(usize, Vec<String>)> = Vec::new();
            for (i, e) in c.events.iter().enumerate() {
                if e.participants.len() == 2 {
                    if e.participants[0] != e.participants[1] {
                        options.push((i, vec![e.participants[1].clone(), e.participants[0].clone()]));
                    }
                } else {
                    for id in ids.iter().filter(|id| **id != e.participants[0]) {
                        let mut p = e.participants.clone();
                        p[0] = id.clone();
                        options.push((i, p));
                    }
                }
            }
            let (i, p) = options.choose(&mut rng).cloned().ok_or_else(none)?;
            rebind_event_relation(&mut c, i, p);
        }
        CorruptionKind::OrderInvert => {
            let explicit: Vec<usize> = (0..c.orders.len()).filter(|&i| c.orders[i].explicit).collect();
            let &i = explicit.choose(&mut rng).ok_or_else(none)?;
            let o = &mut c.orders[i];
            std::mem::swap(&mut o.before, &mut o.after);
        }
        CorruptionKind::InstanceCollapse => {
            let mut options = Vec::new();
            for (i, a) in c.events.iter().enumerate() {
                for (j, b) in c.events.iter().enumerate() {
                    if i < j && a.predicate == b.predicate && a.participants.len() == b.participants.len() {
                        if let Some(pos) = (0..a.participants.len()).find(|&k| a.participants[k] != b.participants[k]) {
                            options.push((i, j, pos));
                        }
                    }
                }
            }
            let (i, j, pos) = options.choose(&mut rng).copied().ok_or_else(none)?;
            let mut p = c.events[j].participants.clone();
            p[pos] = c.events[i].participants[pos].clone();
            if p.len() == 2 && p[0] == p[1] {
                return Err(none());
            }
            rebind_event_relation(&mut c, j, p);
        }
    }
    Ok(c.normalized())
}
