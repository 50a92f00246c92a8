//! Deterministic parser for a small controlled caption grammar.
//!
//! ```text
//! caption := clause (("." | ", then" | "and then" | ". Then") clause)* "."
//! clause  := [connective [","]] np vp
//! np      := ("a" | "an" | "another" | "the" [ordinal]) adjective* noun
//! vp      := verb_t np | verb_i | "is" adjective | "is" preposition np | "is" "present"
//! ```
//!
//! A leading `before`/`after` without a comma opens a subordinate clause that
//! ends at the next comma ("Before the man stands, the man sits.").
//! Indefinite mentions mint a new instance anchor, definite mentions bind to
//! the most recently mentioned instance of the head, or to `head_k` when an
//! ordinal (`first` ... `tenth`) is given.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{
    event_anchor, object_anchor, AttributeUnit, EventMention, ObjectUnit, OrderAssertion, RelationUnit,
    StructuredCaption,
};

pub const DETERMINERS: [&str; 4] = ["a", "an", "the", "another"];
pub const ORDINALS: [&str; 10] =
    ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];
const RESERVED: [&str; 6] = ["a", "an", "the", "another", "is", "present"];

/// Ordinal word for instance `k` (1-based), if the grammar has one.
pub fn ordinal_word(k: usize) -> Option<&'static str> {
    k.checked_sub(1).and_then(|i| ORDINALS.get(i).copied())
}

fn ordinal_value(word: &str) -> Option<usize> {
    ORDINALS.iter().position(|w| *w == word).map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    Then,
    Before,
    After,
    First,
    Again,
}

impl FromStr for Connective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "then" => Connective::Then,
            "before" => Connective::Before,
            "after" => Connective::After,
            "first" => Connective::First,
            "again" => Connective::Again,
            other => return Err(format!("unknown connective role `{other}`")),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("word `{word}` appears in both {first} and {second}")]
    Overlap { word: String, first: &'static str, second: &'static str },
    #[error("irregular form `{surface}` maps to `{lemma}`, which is in no vocabulary")]
    IrregularTarget { surface: String, lemma: String },
    #[error("`{0}` is a reserved grammar word")]
    Reserved(String),
}

/// Closed vocabulary of the caption grammar.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    pub nouns: BTreeSet<String>,
    pub adjectives: BTreeSet<String>,
    /// Lemma to arity (1 = intransitive, 2 = transitive).
    pub verbs: BTreeMap<String, u8>,
    pub prepositions: BTreeSet<String>,
    pub connectives: BTreeMap<String, Connective>,
    pub irregular_lemmas: BTreeMap<String, String>,
}

const DEFAULT_LEXICON: &str = include_str!("default.lexicon");

impl Lexicon {
    /// The built-in vocabulary used by the synthetic worlds.
    pub fn builtin() -> Lexicon {
        Lexicon::parse(DEFAULT_LEXICON).expect("built-in lexicon is valid")
    }

    /// Parses the sectioned plain-text format:
    ///
    /// ```text
    /// [nouns]        man cup table
    /// [adjectives]   red wooden
    /// [verbs]        lift/2 sit/1
    /// [prepositions] on under
    /// [connectives]  then=then before=before
    /// [irregular]    sat=sit
    /// ```
    pub fn parse(text: &str) -> Result<Lexicon, LexiconError> {
        let mut lex = Lexicon::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut rest = line;
            if let Some(stripped) = line.strip_prefix('[') {
                let (name, tail) = stripped.split_once(']').ok_or_else(|| LexiconError::Syntax {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                section = Some(name.trim().to_string());
                rest = tail;
            }
            for word in rest.split_whitespace() {
                let syntax = |message: String| LexiconError::Syntax { line: line_no, message };
                let word = word.to_lowercase();
                match section.as_deref() {
                    Some("nouns") => {
                        lex.nouns.insert(word);
                    }
                    Some("adjectives") => {
                        lex.adjectives.insert(word);
                    }
                    Some("prepositions") => {
                        lex.prepositions.insert(word);
                    }
                    Some("verbs") => {
                        let (lemma, arity) = word
                            .split_once('/')
                            .ok_or_else(|| syntax(format!("verb `{word}` needs an arity, e.g. `{word}/2`")))?;
                        let arity: u8 = match arity {
                            "1" => 1,
                            "2" => 2,
                            _ => return Err(syntax(format!("verb `{lemma}` has arity `{arity}`; expected 1 or 2"))),
                        };
                        lex.verbs.insert(lemma.to_string(), arity);
                    }
                    Some("connectives") => {
                        let (surface, role) = word.split_once('=').unwrap_or((word.as_str(), word.as_str()));
                        let role = role.parse::<Connective>().map_err(syntax)?;
                        lex.connectives.insert(surface.to_string(), role);
                    }
                    Some("irregular") => {
                        let (surface, lemma) = word
                            .split_once('=')
                            .ok_or_else(|| syntax(format!("irregular entry `{word}` must be `surface=lemma`")))?;
                        lex.irregular_lemmas.insert(surface.to_string(), lemma.to_string());
                    }
                    Some(other) => return Err(syntax(format!("unknown section `[{other}]`"))),
                    None => return Err(syntax("word outside of any section".into())),
                }
            }
        }
        lex.check()?;
        Ok(lex)
    }

    fn vocabularies(&self) -> [(&'static str, Vec<&str>); 5] {
        [
            ("nouns", self.nouns.iter().map(String::as_str).collect()),
            ("adjectives", self.adjectives.iter().map(String::as_str).collect()),
            ("verbs", self.verbs.keys().map(String::as_str).collect()),
            ("prepositions", self.prepositions.iter().map(String::as_str).collect()),
            ("connectives", self.connectives.keys().map(String::as_str).collect()),
        ]
    }

    fn check(&self) -> Result<(), LexiconError> {
        let mut owner: BTreeMap<&str, &'static str> = BTreeMap::new();
        for (name, words) in self.vocabularies() {
            for w in words {
                if let Some(first) = owner.insert(w, name) {
                    return Err(LexiconError::Overlap { word: w.to_string(), first, second: name });
                }
                if RESERVED.contains(&w) || (name != "connectives" && ORDINALS.contains(&w)) {
                    return Err(LexiconError::Reserved(w.to_string()));
                }
            }
        }
        for (surface, lemma) in &self.irregular_lemmas {
            if !owner.contains_key(lemma.as_str()) {
                return Err(LexiconError::IrregularTarget { surface: surface.clone(), lemma: lemma.clone() });
            }
        }
        Ok(())
    }

    /// True if `lemma` belongs to any of the five vocabularies.
    pub fn knows(&self, lemma: &str) -> bool {
        self.nouns.contains(lemma)
            || self.adjectives.contains(lemma)
            || self.verbs.contains_key(lemma)
            || self.prepositions.contains(lemma)
            || self.connectives.contains_key(lemma)
    }

    /// Third-person singular present form of a verb lemma.
    pub fn third_person(&self, lemma: &str) -> String {
        if let Some((surface, _)) = self
            .irregular_lemmas
            .iter()
            .find(|(s, l)| l.as_str() == lemma && lemmatize(s, self) == lemma && s.ends_with('s'))
        {
            return surface.clone();
        }
        let bytes = lemma.as_bytes();
        let vowel = |b: u8| b"aeiou".contains(&b);
        if lemma.ends_with('y') && bytes.len() > 1 && !vowel(bytes[bytes.len() - 2]) {
            format!("{}ies", &lemma[..lemma.len() - 1])
        } else if ["s", "sh", "ch", "x", "z", "o"].iter().any(|s| lemma.ends_with(s)) {
            format!("{lemma}es")
        } else {
            format!("{lemma}s")
        }
    }
}

/// Maps a surface form to its lemma: irregular table first, then suffix
/// rules checked against the lexicon, else the lowercased surface.
pub fn lemmatize(surface: &str, lexicon: &Lexicon) -> String {
    let s = surface.to_lowercase();
    if let Some(lemma) = lexicon.irregular_lemmas.get(&s) {
        return lemma.clone();
    }
    if lexicon.knows(&s) {
        return s;
    }
    let mut candidates: Vec<String> = Vec::new();
    if let Some(stem) = s.strip_suffix("ies") {
        candidates.push(format!("{stem}y"));
    }
    if let Some(stem) = s.strip_suffix("es") {
        candidates.push(stem.to_string());
    }
    if let Some(stem) = s.strip_suffix('s') {
        candidates.push(stem.to_string());
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = s.strip_suffix(suffix) {
            candidates.push(stem.to_string());
            let b = stem.as_bytes();
            if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
                candidates.push(stem[..stem.len() - 1].to_string());
            }
            candidates.push(format!("{stem}e"));
        }
    }
    if let Some(hit) = candidates.iter().find(|c| !c.is_empty() && lexicon.knows(c)) {
        return hit.clone();
    }
    // Out-of-vocabulary plurals still get the obvious reduction.
    if let Some(stem) = s.strip_suffix("ies") {
        return format!("{stem}y");
    }
    if s.len() > 2 && s.ends_with('s') && !s.ends_with("ss") {
        return s[..s.len() - 1].to_string();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub index: usize,
    pub tokens: Vec<String>,
    pub connective: Option<Connective>,
    /// Set for a leading `before`/`after` clause that ends at a comma.
    pub subordinate: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("EmptyInput: caption has no words")]
    EmptyInput,
    #[error("UnknownToken: `{token}` in clause {clause}")]
    UnknownToken { token: String, clause: usize },
    #[error("UnresolvedDefinite: `the {head}` in clause {clause} has no antecedent")]
    UnresolvedDefinite { head: String, clause: usize },
    #[error("MalformedClause: clause {clause}: {reason}")]
    MalformedClause { clause: usize, reason: String },
}

fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if matches!(ch, '.' | ',' | '!' | '?' | ';') {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn is_terminator(t: &str) -> bool {
    matches!(t, "." | "!" | "?")
}

/// Splits a caption into clauses, stripping and recording leading connectives.
pub fn segment(text: &str, lexicon: &Lexicon) -> Result<Vec<Clause>, ParseError> {
    let tokens = tokenize(text);
    if !tokens.iter().any(|t| t.chars().any(char::is_alphanumeric)) {
        return Err(ParseError::EmptyInput);
    }

    let mut raw: Vec<(Vec<String>, Option<Connective>)> = Vec::new();
    for sentence in tokens.split(|t| is_terminator(t)).filter(|s| !s.is_empty()) {
        let mut current: Vec<String> = Vec::new();
        let mut pending: Option<Connective> = None;
        let mut i = 0;
        while i < sentence.len() {
            let t = sentence[i].as_str();
            let next = sentence.get(i + 1).map(String::as_str);
            let after = sentence.get(i + 2).map(String::as_str);
            let coordinating = match (t, next, after) {
                (",", Some("and"), Some("then")) => Some(3),
                (",", Some("then"), _) | ("and", Some("then"), _) => Some(2),
                _ => None,
            };
            if let Some(skip) = coordinating {
                raw.push((std::mem::take(&mut current), pending.take()));
                pending = Some(Connective::Then);
                i += skip;
                continue;
            }
            current.push(t.to_string());
            i += 1;
        }
        raw.push((current, pending));
    }

    let mut clauses = Vec::new();
    let malformed = |clause: usize, reason: &str| ParseError::MalformedClause { clause, reason: reason.into() };
    for (mut toks, mut connective) in raw {
        let index = clauses.len();
        let mut subordinate = false;
        if let Some(role) = toks.first().and_then(|t| lexicon.connectives.get(t)).copied() {
            if connective.is_some() {
                return Err(malformed(index, "two connectives on one clause"));
            }
            toks.remove(0);
            connective = Some(role);
            if toks.first().map(String::as_str) == Some(",") {
                toks.remove(0);
            } else if matches!(role, Connective::Before | Connective::After) {
                subordinate = true;
            }
        }
        if subordinate {
            let comma = toks
                .iter()
                .position(|t| t == ",")
                .ok_or_else(|| malformed(index, "subordinate clause without a closing comma"))?;
            let main = toks.split_off(comma + 1);
            toks.pop();
            for (tokens, connective, subordinate) in [(toks, connective, true), (main, None, false)] {
                let index = clauses.len();
                if tokens.is_empty() {
                    return Err(malformed(index, "empty clause"));
                }
                if tokens.iter().any(|t| t == ",") {
                    return Err(malformed(index, "unexpected comma"));
                }
                clauses.push(Clause { index, tokens, connective, subordinate });
            }
            continue;
        }
        if toks.is_empty() {
            return Err(malformed(index, "empty clause"));
        }
        if toks.iter().any(|t| t == "," || t == ";") {
            return Err(malformed(index, "unexpected comma"));
        }
        clauses.push(Clause { index, tokens: toks, connective, subordinate });
    }
    Ok(clauses)
}

struct Anchorer<'a> {
    lexicon: &'a Lexicon,
    caption: StructuredCaption,
    instances: BTreeMap<String, usize>,
    last_mention: BTreeMap<String, String>,
    event_counts: BTreeMap<String, usize>,
    /// (event id, predicate, agent) in narration order.
    history: Vec<(String, String, String)>,
    /// Event of a subordinate clause waiting for its main clause.
    pending: Option<(Connective, String)>,
}

struct Cursor<'t> {
    tokens: &'t [String],
    pos: usize,
    clause: usize,
}

impl<'t> Cursor<'t> {
    fn peek(&self) -> Option<&'t str> {
        self.tokens.get(self.pos).map(String::as_str)
    }
    fn bump(&mut self) -> Option<&'t str> {
        let t = self.peek();
        self.pos += 1;
        t
    }
    fn malformed(&self, reason: impl Into<String>) -> ParseError {
        ParseError::MalformedClause { clause: self.clause, reason: reason.into() }
    }
}

impl<'a> Anchorer<'a> {
    fn is_word(&self, t: &str) -> bool {
        RESERVED.contains(&t)
            || ORDINALS.contains(&t)
            || self.lexicon.connectives.contains_key(t)
            || self.lexicon.knows(&lemmatize(t, self.lexicon))
    }

    fn unexpected(&self, cur: &Cursor<'_>, t: &str, wanted: &str) -> ParseError {
        if self.is_word(t) {
            cur.malformed(format!("expected {wanted}, found `{t}`"))
        } else {
            ParseError::UnknownToken { token: t.to_string(), clause: cur.clause }
        }
    }

    /// `accommodate` lets an unresolved plain definite in object position
    /// introduce a fresh instance ("A cup is on the table.").
    fn noun_phrase(&mut self, cur: &mut Cursor<'_>, accommodate: bool) -> Result<String, ParseError> {
        let det = cur.bump().ok_or_else(|| cur.malformed("expected a noun phrase"))?;
        if !DETERMINERS.contains(&det) {
            return Err(self.unexpected(cur, det, "a determiner"));
        }
        let mut ordinal = None;
        if det == "the" {
            if let Some(k) = cur.peek().and_then(ordinal_value) {
                ordinal = Some(k);
                cur.bump();
            }
        }
        let mut adjectives = Vec::new();
        while let Some(t) = cur.peek() {
            if self.lexicon.adjectives.contains(t) {
                adjectives.push(t.to_string());
                cur.bump();
            } else {
                break;
            }
        }
        let surface = cur.bump().ok_or_else(|| cur.malformed("noun phrase without a noun"))?;
        let head = lemmatize(surface, self.lexicon);
        if !self.lexicon.nouns.contains(&head) {
            return Err(self.unexpected(cur, surface, "a noun"));
        }

        let resolved = match (det, ordinal) {
            ("the", Some(k)) => {
                let known = self.instances.get(&head).copied().unwrap_or(0);
                Some((k <= known).then(|| object_anchor(&head, k)))
            }
            ("the", None) => match self.last_mention.get(&head) {
                Some(id) => Some(Some(id.clone())),
                None if accommodate => None,
                None => Some(None),
            },
            _ => None,
        };
        let anchor = if let Some(resolved) = resolved {
            resolved.ok_or_else(|| ParseError::UnresolvedDefinite { head: head.clone(), clause: cur.clause })?
        } else {
            let k = self.instances.entry(head.clone()).or_insert(0);
            *k += 1;
            let id = object_anchor(&head, *k);
            let mut phrase = adjectives.clone();
            phrase.push(surface.to_string());
            self.caption.objects.push(ObjectUnit {
                id: id.clone(),
                head: head.clone(),
                phrase: phrase.join(" "),
                clause: cur.clause,
            });
            id
        };
        for value in adjectives {
            self.caption.attributes.push(AttributeUnit { object: anchor.clone(), value, clause: cur.clause });
        }
        self.last_mention.insert(head, anchor.clone());
        Ok(anchor)
    }

    fn order(&mut self, before: &str, after: &str) {
        self.caption.orders.push(OrderAssertion { before: before.into(), after: after.into(), explicit: true });
    }

    fn clause(&mut self, clause: &Clause) -> Result<(), ParseError> {
        let mut cur = Cursor { tokens: &clause.tokens, pos: 0, clause: clause.index };
        let subject = self.noun_phrase(&mut cur, false)?;
        let verb_tok = cur.bump().ok_or_else(|| cur.malformed("missing verb phrase"))?;

        let mut event: Option<(String, String)> = None;
        if verb_tok == "is" {
            let t = cur.bump().ok_or_else(|| cur.malformed("dangling `is`"))?;
            if t == "present" {
            } else if self.lexicon.adjectives.contains(t) {
                self.caption.attributes.push(AttributeUnit {
                    object: subject.clone(),
                    value: t.to_string(),
                    clause: clause.index,
                });
            } else if self.lexicon.prepositions.contains(t) {
                let object = self.noun_phrase(&mut cur, true)?;
                self.caption.relations.push(RelationUnit {
                    subject: subject.clone(),
                    predicate: t.to_string(),
                    object,
                    clause: clause.index,
                });
            } else {
                return Err(self.unexpected(&cur, t, "an adjective, a preposition or `present`"));
            }
        } else {
            let lemma = lemmatize(verb_tok, self.lexicon);
            let arity = *self
                .lexicon
                .verbs
                .get(&lemma)
                .ok_or_else(|| self.unexpected(&cur, verb_tok, "a verb or `is`"))?;
            let mut participants = vec![subject.clone()];
            if arity == 2 {
                if cur.peek().is_none() {
                    return Err(cur.malformed(format!("`{lemma}` needs an object")));
                }
                let object = self.noun_phrase(&mut cur, true)?;
                self.caption.relations.push(RelationUnit {
                    subject: subject.clone(),
                    predicate: lemma.clone(),
                    object: object.clone(),
                    clause: clause.index,
                });
                participants.push(object);
            }
            let j = self.event_counts.entry(lemma.clone()).or_insert(0);
            *j += 1;
            let id = event_anchor(&lemma, *j);
            self.caption.events.push(EventMention {
                id: id.clone(),
                predicate: lemma.clone(),
                participants,
                clause: clause.index,
                order_index: self.history.len(),
            });
            event = Some((id, lemma));
        }
        if let Some(t) = cur.peek() {
            return Err(self.unexpected(&cur, t, "end of clause"));
        }

        if let Some((role, sub_event)) = self.pending.take() {
            let (main_event, _) =
                event.as_ref().ok_or_else(|| cur.malformed("subordinate clause needs an eventive main clause"))?;
            match role {
                Connective::Before => self.order(main_event, &sub_event),
                _ => self.order(&sub_event, main_event),
            }
        }

        let Some((id, predicate)) = event else {
            if clause.subordinate {
                return Err(cur.malformed("subordinate clause needs a verb"));
            }
            return Ok(());
        };
        let previous = self.history.last().map(|(e, _, _)| e.clone());
        match (clause.connective, clause.subordinate) {
            (Some(role), true) => self.pending = Some((role, id.clone())),
            (Some(Connective::Then | Connective::After), false) => {
                if let Some(prev) = previous {
                    self.order(&prev, &id);
                }
            }
            (Some(Connective::Before), false) => {
                if let Some(prev) = previous {
                    self.order(&id, &prev);
                }
            }
            (Some(Connective::Again), false) => {
                let earlier = self
                    .history
                    .iter()
                    .rev()
                    .find(|(_, p, agent)| *p == predicate && *agent == subject)
                    .map(|(e, _, _)| e.clone())
                    .ok_or_else(|| cur.malformed("`again` without an earlier matching event"))?;
                self.order(&earlier, &id);
            }
            _ => {}
        }
        self.history.push((id, predicate, subject));
        Ok(())
    }
}

/// Parses a controlled-grammar caption into anchored units.
pub fn parse_caption(text: &str, lexicon: &Lexicon) -> Result<StructuredCaption, ParseError> {
    let clauses = segment(text, lexicon)?;
    let mut anchorer = Anchorer {
        lexicon,
        caption: StructuredCaption { source_text: Some(text.to_string()), ..Default::default() },
        instances: BTreeMap::new(),
        last_mention: BTreeMap::new(),
        event_counts: BTreeMap::new(),
        history: Vec::new(),
        pending: None,
    };
    for clause in &clauses {
        anchorer.clause(clause)?;
    }
    if anchorer.pending.is_some() {
        let clause = clauses.len().saturating_sub(1);
        return Err(ParseError::MalformedClause { clause, reason: "subordinate clause without a main clause".into() });
    }
    Ok(anchorer.caption.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn segment_then() {
        let c = segment("A man sits. Then the man stands.", &lex()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].connective, None);
        assert_eq!(c[1].connective, Some(Connective::Then));
        assert_eq!(c[1].tokens, vec!["the", "man", "stands"]);
    }

    #[test]
    fn segment_single() {
        let c = segment("A cup.", &lex()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].connective, None);
    }

    #[test]
    fn segment_subordinate() {
        let c = segment("Before the man stands, the man sits.", &lex()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].connective, Some(Connective::Before));
        assert!(c[0].subordinate);
        assert_eq!(c[0].tokens, vec!["the", "man", "stands"]);
        assert_eq!(c[1].connective, None);
        assert_eq!((c[0].index, c[1].index), (0, 1));
    }

    #[test]
    fn segment_coordinating_then() {
        let c = segment("A man sits, then the man stands and then the man waves.", &lex()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c[1..].iter().all(|c| c.connective == Some(Connective::Then)));
    }

    #[test]
    fn segment_empty() {
        assert_eq!(segment("  . ", &lex()), Err(ParseError::EmptyInput));
    }

    #[test]
    fn copular_clause() {
        let c = parse_caption("A red cup is on the wooden table.", &lex()).unwrap();
        let ids: Vec<_> = c.objects.iter().map(|o| o.id.as_str()).collect();
        assert_eq!(ids, vec!["cup_1", "table_1"]);
        let attrs: BTreeSet<_> = c.attributes.iter().map(|a| (a.object.as_str(), a.value.as_str())).collect();
        assert_eq!(attrs, BTreeSet::from([("cup_1", "red"), ("table_1", "wooden")]));
        assert_eq!(c.relations.len(), 1);
        assert_eq!((c.relations[0].subject.as_str(), c.relations[0].object.as_str()), ("cup_1", "table_1"));
        assert!(c.events.is_empty());
        assert_eq!(c.objects[0].phrase, "red cup");
    }

    #[test]
    fn repeated_instances_anchor() {
        let c = parse_caption("A man lifts a cup. Then the man lifts another cup.", &lex()).unwrap();
        let ids: BTreeSet<_> = c.objects.iter().map(|o| o.id.as_str()).collect();
        assert_eq!(ids, BTreeSet::from(["man_1", "cup_1", "cup_2"]));
        let events: Vec<_> = c.events.iter().map(|e| (e.id.as_str(), e.participants.clone())).collect();
        assert_eq!(
            events,
            vec![
                ("lift#1", vec!["man_1".to_string(), "cup_1".to_string()]),
                ("lift#2", vec!["man_1".to_string(), "cup_2".to_string()]),
            ]
        );
        assert_eq!(
            c.orders,
            vec![OrderAssertion { before: "lift#1".into(), after: "lift#2".into(), explicit: true }]
        );
        assert!(c.validate().is_empty());
    }

    #[test]
    fn unresolved_definite() {
        assert_eq!(
            parse_caption("The man sits.", &lex()),
            Err(ParseError::UnresolvedDefinite { head: "man".into(), clause: 0 })
        );
    }

    #[test]
    fn unknown_and_malformed() {
        assert!(matches!(
            parse_caption("A zebra sits.", &lex()),
            Err(ParseError::UnknownToken { token, clause: 0 }) if token == "zebra"
        ));
        assert!(matches!(parse_caption("A man lifts.", &lex()), Err(ParseError::MalformedClause { clause: 0, .. })));
        assert!(matches!(parse_caption("A cup.", &lex()), Err(ParseError::MalformedClause { .. })));
        assert!(matches!(
            parse_caption("A man sits. A man red.", &lex()),
            Err(ParseError::MalformedClause { clause: 1, .. })
        ));
    }

    #[test]
    fn before_and_after_subordinates() {
        let c = parse_caption("A man waves. Before the man stands, the man sits.", &lex()).unwrap();
        assert_eq!(
            c.orders,
            vec![OrderAssertion { before: "sit#1".into(), after: "stand#1".into(), explicit: true }]
        );
        let c = parse_caption("A man waves. After the man stands, the man sits.", &lex()).unwrap();
        assert_eq!(
            c.orders,
            vec![OrderAssertion { before: "stand#1".into(), after: "sit#1".into(), explicit: true }]
        );
    }

    #[test]
    fn narration_alone_orders_nothing() {
        let c = parse_caption("A man sits. The man stands.", &lex()).unwrap();
        assert!(c.orders.is_empty());
        assert_eq!(c.events[1].order_index, 1);
    }

    #[test]
    fn again_mints_repetition() {
        let c = parse_caption("A man jumps. A dog sits. Again, the man jumps.", &lex()).unwrap();
        assert_eq!(c.events.iter().filter(|e| e.predicate == "jump").count(), 2);
        assert_eq!(
            c.orders,
            vec![OrderAssertion { before: "jump#1".into(), after: "jump#2".into(), explicit: true }]
        );
        assert!(parse_caption("A man jumps. Again, a man jumps.", &lex()).is_err());
    }

    #[test]
    fn ordinal_binding() {
        let c = parse_caption(
            "A cup is present. Another cup is present. A table is present. The first cup is on the table.",
            &lex(),
        )
        .unwrap();
        assert_eq!(c.relations[0].subject, "cup_1");
        let c = parse_caption("A cup is present. Another cup is present. The cup is red.", &lex()).unwrap();
        assert_eq!(c.attributes[0].object, "cup_2");
        assert!(parse_caption("A cup is present. The third cup is red.", &lex()).is_err());
    }

    #[test]
    fn lemmas() {
        let l = lex();
        assert_eq!(lemmatize("cups", &l), "cup");
        assert_eq!(lemmatize("sat", &l), "sit");
        assert_eq!(lemmatize("cup", &l), "cup");
        assert_eq!(lemmatize("boxes", &l), "box");
        assert_eq!(lemmatize("tables", &l), "table");
        assert_eq!(lemmatize("carries", &l), "carry");
        assert_eq!(lemmatize("sitting", &l), "sit");
        assert_eq!(lemmatize("waving", &l), "wave");
        assert_eq!(lemmatize("lifted", &l), "lift");
        assert_eq!(lemmatize("Cars", &l), "car");
    }

    #[test]
    fn third_person_inverts_lemmatize() {
        let l = lex();
        for verb in l.verbs.keys() {
            assert_eq!(lemmatize(&l.third_person(verb), &l), *verb, "{verb}");
        }
    }

    #[test]
    fn lexicon_validation() {
        assert!(matches!(Lexicon::parse("[nouns] cup\n[adjectives] cup"), Err(LexiconError::Overlap { .. })));
        assert!(matches!(Lexicon::parse("[verbs] lift"), Err(LexiconError::Syntax { .. })));
        assert!(matches!(Lexicon::parse("[nouns] cup\n[irregular] mice=mouse"), Err(LexiconError::IrregularTarget { .. })));
        assert!(matches!(Lexicon::parse("[nouns] the"), Err(LexiconError::Reserved(_))));
        let l = Lexicon::parse("[nouns] cup # a comment\n[verbs] lift/2 sit/1\n[connectives] then").unwrap();
        assert_eq!(l.verbs["lift"], 2);
        assert_eq!(l.connectives["then"], Connective::Then);
    }
}
