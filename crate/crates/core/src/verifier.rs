//! Yes/no answering: a closed-world oracle over [`WorldState`] and a
//! line-delimited JSON client for out-of-process verifiers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{split_event_anchor, split_object_anchor, StructuredCaption};
use crate::matcher::{EventMatching, ObjectMap};
use crate::question_gen::{Answer, EventSlot, Slots, VerificationQuestion};
use crate::world_sim::{Entity, WorldEvent, WorldRelation, WorldState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("VerifierUnavailable: {0}")]
    VerifierUnavailable(String),
    #[error("MalformedResponse: {0}")]
    MalformedResponse(String),
    #[error("Timeout: no answer within {0:?}")]
    Timeout(Duration),
    #[error("UnknownSlotAnchor: `{0}` is not a valid anchor")]
    UnknownSlotAnchor(String),
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    id: u64,
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct Response {
    id: u64,
    answer: Answer,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// One connection, one request in flight at a time.
pub struct ExternalVerifier {
    address: String,
    timeout: Duration,
    next_id: AtomicU64,
    connection: Mutex<Option<Connection>>,
}

impl std::fmt::Debug for ExternalVerifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalVerifier").field("address", &self.address).field("timeout", &self.timeout).finish()
    }
}

impl ExternalVerifier {
    pub fn new(address: impl Into<String>, timeout: Duration) -> Self {
        ExternalVerifier { address: address.into(), timeout, next_id: AtomicU64::new(1), connection: Mutex::new(None) }
    }

    fn connect(&self) -> Result<Connection, VerifierError> {
        let unavailable = |e: String| VerifierError::VerifierUnavailable(format!("{}: {e}", self.address));
        let addr = self
            .address
            .to_socket_addrs()
            .map_err(|e| unavailable(e.to_string()))?
            .next()
            .ok_or_else(|| unavailable("address did not resolve".into()))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(|e| unavailable(e.to_string()))?;
        stream.set_read_timeout(Some(self.timeout)).map_err(|e| unavailable(e.to_string()))?;
        stream.set_write_timeout(Some(self.timeout)).map_err(|e| unavailable(e.to_string()))?;
        let writer = stream.try_clone().map_err(|e| unavailable(e.to_string()))?;
        Ok(Connection { reader: BufReader::new(stream), writer })
    }

    pub fn ask(&self, text: &str) -> Result<Answer, VerifierError> {
        let mut guard = self.connection.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let conn = guard.as_mut().expect("connected above");
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let result = exchange(conn, id, text, self.timeout);
        if result.is_err() {
            *guard = None;
        }
        result
    }
}

fn exchange(conn: &mut Connection, id: u64, text: &str, timeout: Duration) -> Result<Answer, VerifierError> {
    let io = |e: std::io::Error| match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => VerifierError::Timeout(timeout),
        _ => VerifierError::VerifierUnavailable(e.to_string()),
    };
    let mut line = serde_json::to_string(&Request { id, text }).expect("request serializes");
    line.push('\n');
    conn.writer.write_all(line.as_bytes()).map_err(io)?;
    conn.writer.flush().map_err(io)?;
    let mut reply = String::new();
    if conn.reader.read_line(&mut reply).map_err(io)? == 0 {
        return Err(VerifierError::VerifierUnavailable("connection closed".into()));
    }
    let response: Response =
        serde_json::from_str(reply.trim()).map_err(|e| VerifierError::MalformedResponse(e.to_string()))?;
    if response.id != id {
        return Err(VerifierError::MalformedResponse(format!("response id {} does not match request {id}", response.id)));
    }
    Ok(response.answer)
}

#[derive(Debug, Clone)]
pub enum VerifierBinding {
    WorldOracle(Arc<WorldState>),
    /// Answers from a world built out of the generated caption itself, so the
    /// caption is checked against its own claims mapped onto the reference.
    SelfBelief,
    External(Arc<ExternalVerifier>),
}

pub fn answer(binding: &VerifierBinding, q: &VerificationQuestion) -> Result<Answer, VerifierError> {
    match binding {
        VerifierBinding::WorldOracle(world) => oracle_answer(world, q),
        VerifierBinding::External(client) => client.ask(&q.text),
        VerifierBinding::SelfBelief => Err(VerifierError::VerifierUnavailable(
            "self-belief binding needs a caption pair; resolve it with belief_world first".into(),
        )),
    }
}

fn check_object(anchor: &str) -> Result<(), VerifierError> {
    split_object_anchor(anchor).map(|_| ()).ok_or_else(|| VerifierError::UnknownSlotAnchor(anchor.to_string()))
}

fn check_event(slot: &EventSlot) -> Result<(), VerifierError> {
    if let Some(id) = &slot.id {
        split_event_anchor(id).ok_or_else(|| VerifierError::UnknownSlotAnchor(id.clone()))?;
    }
    if slot.participants.is_empty() {
        return Err(VerifierError::UnknownSlotAnchor(format!("{} with no participants", slot.predicate)));
    }
    slot.participants.iter().try_for_each(|p| check_object(p))
}

fn event_matches(e: &WorldEvent, slot: &EventSlot) -> bool {
    match &slot.id {
        Some(id) => e.id == *id,
        None => e.predicate == slot.predicate && e.participants == slot.participants,
    }
}

/// Closed-world answer from structured slots; the question text is ignored.
pub fn oracle_answer(world: &WorldState, q: &VerificationQuestion) -> Result<Answer, VerifierError> {
    let holds = match &q.provenance.slots {
        Slots::Existence { object, head, attributes } => {
            check_object(object)?;
            world.entities.iter().any(|e| e.head == *head && attributes.iter().all(|a| e.attributes.contains(a)))
        }
        Slots::Attribute { object, value } => {
            check_object(object)?;
            world.entity(object).is_some_and(|e| e.attributes.contains(value))
        }
        Slots::Relation { subject, predicate, object } => {
            check_object(subject)?;
            check_object(object)?;
            world.relations.iter().any(|r| r.subject == *subject && r.predicate == *predicate && r.object == *object)
                || world
                    .events
                    .iter()
                    .any(|e| e.predicate == *predicate && e.participants.len() == 2 && e.participants[0] == *subject && e.participants[1] == *object)
        }
        Slots::EventOccurrence { event } => {
            check_event(event)?;
            world.events.iter().any(|e| event_matches(e, event))
        }
        Slots::TemporalOrder { first, second } => {
            check_event(first)?;
            check_event(second)?;
            world.events.iter().filter(|a| event_matches(a, first)).any(|a| {
                world.events.iter().filter(|b| event_matches(b, second)).any(|b| a.id != b.id && a.time_index < b.time_index)
            })
        }
    };
    Ok(Answer::from_bool(holds))
}

/// Orders events by the caption's explicit assertions, breaking ties and
/// cycles by narration order.
fn believed_time_order(caption: &StructuredCaption) -> Vec<usize> {
    let n = caption.events.len();
    let index: BTreeMap<&str, usize> = caption.events.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for o in caption.orders.iter().filter(|o| o.explicit) {
        if let (Some(&b), Some(&a)) = (index.get(o.before.as_str()), index.get(o.after.as_str())) {
            if a != b {
                preds[a].insert(b);
            }
        }
    }
    let mut remaining: BTreeSet<(usize, usize)> = caption.events.iter().enumerate().map(|(i, e)| (e.order_index, i)).collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let next = remaining
            .iter()
            .find(|(_, i)| preds[*i].iter().all(|&p| placed[p]))
            .or_else(|| remaining.iter().next())
            .copied()
            .expect("non-empty");
        remaining.remove(&next);
        placed[next.1] = true;
        order.push(next.1);
    }
    order
}

fn fresh_ids<'a>(taken: impl Iterator<Item = &'a str>, split: fn(&str) -> Option<(&str, usize)>) -> BTreeMap<String, usize> {
    let mut top: BTreeMap<String, usize> = BTreeMap::new();
    for id in taken {
        if let Some((head, k)) = split(id) {
            let e = top.entry(head.to_string()).or_insert(0);
            *e = (*e).max(k);
        }
    }
    top
}

/// The world the generated caption claims, expressed in the reference
/// caption's anchor space. Unmapped objects and unmatched events get fresh
/// ids that cannot collide with reference anchors.
pub fn belief_world(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    object_map: &ObjectMap,
    event_matching: &EventMatching,
) -> WorldState {
    let mut next_obj =
        fresh_ids(reference.objects.iter().chain(&gen.objects).map(|o| o.id.as_str()), split_object_anchor);
    let mut rename: BTreeMap<&str, String> = BTreeMap::new();
    for o in &gen.objects {
        let id = match object_map.get(&o.id) {
            Some(r) => r.to_string(),
            None => {
                let k = next_obj.entry(o.head.clone()).or_insert(0);
                *k += 1;
                format!("{}_{}", o.head, k)
            }
        };
        rename.insert(&o.id, id);
    }
    let map = |id: &str| rename.get(id).cloned().unwrap_or_else(|| id.to_string());

    let entities = gen
        .objects
        .iter()
        .map(|o| Entity {
            id: map(&o.id),
            head: o.head.clone(),
            attributes: gen.attributes_of(&o.id).map(|a| a.value.clone()).collect(),
        })
        .collect();
    let mut relations: Vec<WorldRelation> = gen
        .relations
        .iter()
        .map(|r| WorldRelation { subject: map(&r.subject), predicate: r.predicate.clone(), object: map(&r.object) })
        .collect();
    relations.sort();
    relations.dedup();

    let mut next_event =
        fresh_ids(reference.events.iter().chain(&gen.events).map(|e| e.id.as_str()), split_event_anchor);
    let events = believed_time_order(gen)
        .into_iter()
        .enumerate()
        .map(|(t, i)| {
            let e = &gen.events[i];
            let id = event_matching.pairs.get(&e.id).cloned().unwrap_or_else(|| {
                let j = next_event.entry(e.predicate.clone()).or_insert(0);
                *j += 1;
                format!("{}#{}", e.predicate, j)
            });
            WorldEvent {
                id,
                predicate: e.predicate.clone(),
                participants: e.participants.iter().map(|p| map(p)).collect(),
                time_index: t + 1,
                explicit_order: false,
            }
        })
        .collect();
    WorldState { entities, relations, events, rng_seed: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar_parser::{parse_caption, Lexicon};
    use crate::question_gen::{Branch, Provenance, QuestionKind, Source};
    use crate::world_sim::world_from_caption;
    use std::net::TcpListener;

    fn world(text: &str) -> WorldState {
        let lex = Lexicon::builtin();
        world_from_caption(&parse_caption(text, &lex).unwrap(), &lex)
    }

    fn q(slots: Slots) -> VerificationQuestion {
        VerificationQuestion {
            branch: Branch::Factual,
            kind: slots.kind(),
            text: String::new(),
            label: Answer::Yes,
            provenance: Provenance { source: Source::ReferenceSupport, slots, gen_anchors: vec![] },
        }
    }

    fn ev(id: Option<&str>, p: &str, parts: &[&str]) -> EventSlot {
        EventSlot { id: id.map(str::to_string), predicate: p.into(), participants: parts.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn existence_and_attributes() {
        let w = world("A red cup is present.");
        let exists = |attrs: &[&str]| {
            oracle_answer(&w, &q(Slots::Existence { object: "cup_1".into(), head: "cup".into(), attributes: attrs.iter().map(|s| s.to_string()).collect() }))
        };
        assert_eq!(exists(&["red"]), Ok(Answer::Yes));
        assert_eq!(exists(&["blue"]), Ok(Answer::No));
        let attr = |o: &str| oracle_answer(&w, &q(Slots::Attribute { object: o.into(), value: "red".into() }));
        assert_eq!(attr("cup_1"), Ok(Answer::Yes));
        assert_eq!(attr("cup_7"), Ok(Answer::No));
        assert_eq!(attr("cup"), Err(VerifierError::UnknownSlotAnchor("cup".into())));
    }

    #[test]
    fn events_and_order() {
        let w = world("A man lifts a cup. Then the man sits.");
        let order = |a: EventSlot, b: EventSlot| oracle_answer(&w, &q(Slots::TemporalOrder { first: a, second: b }));
        assert_eq!(order(ev(None, "lift", &["man_1", "cup_1"]), ev(None, "sit", &["man_1"])), Ok(Answer::Yes));
        assert_eq!(order(ev(None, "sit", &["man_1"]), ev(None, "lift", &["man_1", "cup_1"])), Ok(Answer::No));
        assert_eq!(order(ev(Some("lift#1"), "lift", &["man_1", "cup_1"]), ev(Some("sit#1"), "sit", &["man_1"])), Ok(Answer::Yes));
        let occurs = |e: EventSlot| oracle_answer(&w, &q(Slots::EventOccurrence { event: e }));
        assert_eq!(occurs(ev(None, "lift", &["cup_1", "man_1"])), Ok(Answer::No));
        assert_eq!(occurs(ev(None, "lift", &["man_1", "cup_1"])), Ok(Answer::Yes));
        let rel = oracle_answer(&w, &q(Slots::Relation { subject: "man_1".into(), predicate: "lift".into(), object: "cup_1".into() }));
        assert_eq!(rel, Ok(Answer::Yes));
    }

    #[test]
    fn order_needs_two_distinct_events() {
        let w = world("A man jumps.");
        let slot = ev(None, "jump", &["man_1"]);
        assert_eq!(oracle_answer(&w, &q(Slots::TemporalOrder { first: slot.clone(), second: slot })), Ok(Answer::No));
    }

    #[test]
    fn belief_world_follows_asserted_order() {
        let lex = Lexicon::builtin();
        let mut gen = parse_caption("A man lifts a cup. Then the man sits.", &lex).unwrap();
        gen.orders[0] = crate::caption_ir::OrderAssertion { before: "sit#1".into(), after: "lift#1".into(), explicit: true };
        let map = ObjectMap::identity(&gen);
        let em = EventMatching {
            pairs: BTreeMap::from([("lift#1".into(), "lift#1".into()), ("sit#1".into(), "sit#1".into())]),
            ..Default::default()
        };
        let w = belief_world(&gen, &gen, &map, &em);
        assert_eq!(w.events.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), vec!["sit#1", "lift#1"]);
    }

    #[test]
    fn belief_world_fresh_ids_do_not_collide() {
        let lex = Lexicon::builtin();
        let reference = parse_caption("A cup is present. Another cup is present.", &lex).unwrap();
        let gen = parse_caption("A cup is present.", &lex).unwrap();
        let w = belief_world(&gen, &reference, &ObjectMap::default(), &EventMatching::default());
        assert_eq!(w.entities[0].id, "cup_3");
    }

    #[test]
    fn cycles_fall_back_to_narration() {
        let lex = Lexicon::builtin();
        let mut c = parse_caption("A man jumps. Then the man sits.", &lex).unwrap();
        c.orders.push(crate::caption_ir::OrderAssertion { before: "sit#1".into(), after: "jump#1".into(), explicit: true });
        assert_eq!(believed_time_order(&c), vec![0, 1]);
    }

    fn serve(reply: impl Fn(u64) -> String + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 {
                let v: serde_json::Value = serde_json::from_str(&line).unwrap();
                let id = v["id"].as_u64().unwrap();
                let out = reply(id);
                if !out.is_empty() && writer.write_all(out.as_bytes()).is_err() {
                    break;
                }
                line.clear();
            }
        });
        addr
    }

    fn text_q(text: &str) -> VerificationQuestion {
        let mut question = q(Slots::Attribute { object: "cup_1".into(), value: "red".into() });
        question.text = text.into();
        question.kind = QuestionKind::Attribute;
        question
    }

    #[test]
    fn external_round_trip() {
        let addr = serve(|id| format!("{{\"id\":{id},\"answer\":\"no\",\"extra\":1}}\n"));
        let b = VerifierBinding::External(Arc::new(ExternalVerifier::new(addr, Duration::from_secs(2))));
        assert_eq!(answer(&b, &text_q("Is the cup red?")), Ok(Answer::No));
        assert_eq!(answer(&b, &text_q("Is the cup red?")), Ok(Answer::No));
    }

    #[test]
    fn external_errors() {
        let addr = serve(|id| format!("{{\"id\":{},\"answer\":\"yes\"}}\n", id + 1));
        let b = ExternalVerifier::new(addr, Duration::from_secs(2));
        assert!(matches!(b.ask("x"), Err(VerifierError::MalformedResponse(_))));

        let addr = serve(|_| "not json\n".into());
        assert!(matches!(ExternalVerifier::new(addr, Duration::from_secs(2)).ask("x"), Err(VerifierError::MalformedResponse(_))));

        let addr = serve(|_| String::new());
        assert!(matches!(ExternalVerifier::new(addr, Duration::from_millis(100)).ask("x"), Err(VerifierError::Timeout(_))));

        let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
        assert!(matches!(
            ExternalVerifier::new(closed, Duration::from_millis(200)).ask("x"),
            Err(VerifierError::VerifierUnavailable(_))
        ));
    }
}
