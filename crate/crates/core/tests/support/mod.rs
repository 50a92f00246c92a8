//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use structreward::caption_ir::{object_anchor, AttributeUnit, ObjectUnit, RelationUnit, StructuredCaption};
use structreward::grammar_parser::{parse_caption, Lexicon};
use structreward::matcher::{build_object_map, match_events, match_typed_units, ObjectMap, UnitType};
use structreward::question_gen::{
    factual_negative_questions, factual_positive_questions, temporal_negative_questions, temporal_positive_questions,
    Answer, QuestionSet,
};
use structreward::reward_engine::{scene_graph_score, score_captions, RewardConfig};
use structreward::similarity::SimilarityProvider;
use structreward::trainer::{sample, Decision, TokenPolicy};
use structreward::verifier::{oracle_answer, VerifierBinding};
use structreward::world_sim::{corrupt, render_reference, sample_world, CorruptionKind, WorldConfig, WorldState};

/// Every partial injection rows -> cols above the cutoff, keeping the best
/// total and, among equal totals, the lexicographically smallest pair list.
pub fn brute_force_matching(w: &[Vec<f64>], min_weight: f64) -> (f64, Vec<(usize, usize)>) {
    fn go(
        w: &[Vec<f64>],
        min_weight: f64,
        row: usize,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if row == w.len() {
            let total: f64 = pairs.iter().map(|&(r, c)| w[r][c]).sum();
            if total > best.0 || (total == best.0 && *pairs < best.1) {
                *best = (total, pairs.clone());
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] && w[row][c] >= min_weight && w[row][c] > 0.0 {
                used[c] = true;
                pairs.push((row, c));
                go(w, min_weight, row + 1, used, pairs, best);
                pairs.pop();
                used[c] = false;
            }
        }
        go(w, min_weight, row + 1, used, pairs, best);
    }
    let cols = w.first().map_or(0, Vec::len);
    let mut best = (0.0, Vec::new());
    go(w, min_weight, 0, &mut vec![false; cols], &mut Vec::new(), &mut best);
    best
}

pub fn lexicon() -> Arc<Lexicon> {
    Arc::new(Lexicon::builtin())
}

/// Scenes with repeats and explicit order so every corruption can apply.
pub fn rich_worlds(lexicon: &Arc<Lexicon>) -> WorldConfig {
    WorldConfig {
        lexicon: lexicon.clone(),
        entities: (3, 5),
        attributes: (1, 2),
        relations: (1, 3),
        events: (2, 4),
        repeat_prob: 0.5,
        explicit_order_prob: 1.0,
    }
}

pub fn reference_of(world: &WorldState, lexicon: &Lexicon) -> StructuredCaption {
    parse_caption(&render_reference(world, lexicon).expect("renderable"), lexicon).expect("renderer output parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    Duplicate,
    NearSynonym,
}

fn typed_score(t: UnitType, s: &structreward::reward_engine::SceneGraphScore) -> f64 {
    match t {
        UnitType::Obj => s.q_obj,
        UnitType::Attr => s.q_attr,
        UnitType::Rel => s.q_rel,
    }
}

fn next_clause(c: &StructuredCaption) -> usize {
    c.objects
        .iter()
        .map(|o| o.clause)
        .chain(c.attributes.iter().map(|a| a.clause))
        .chain(c.relations.iter().map(|r| r.clause))
        .max()
        .map_or(0, |m| m + 1)
}

/// The injected unit: its canonical value and, for attr/rel, its anchors.
struct Injected {
    value: String,
    anchors: Vec<String>,
}

fn inject(gen: &StructuredCaption, t: UnitType, how: Injection, pick: usize, p: &SimilarityProvider) -> Option<(StructuredCaption, Injected)> {
    let mut out = gen.clone();
    let clause = next_clause(gen);
    let perturb = |s: &str| match how {
        Injection::Duplicate => s.to_string(),
        Injection::NearSynonym => format!("{s}x"),
    };
    let injected = match t {
        UnitType::Obj => {
            let o = gen.objects.get(pick % gen.objects.len().max(1))?;
            let id = object_anchor(&o.head, gen.instances_of(&o.head) + 1);
            let phrase = match how {
                Injection::Duplicate => o.phrase.clone(),
                Injection::NearSynonym => perturb(&o.head),
            };
            // Carry the twin's attributes so the alignment phrase matches too.
            let attrs: Vec<AttributeUnit> = gen.attributes_of(&o.id).cloned().collect();
            let unit = ObjectUnit { id: id.clone(), head: o.head.clone(), phrase, clause };
            out.objects.push(unit.clone());
            if how == Injection::Duplicate {
                for a in attrs {
                    out.attributes.push(AttributeUnit { object: id.clone(), value: a.value, clause });
                }
            }
            let value = structreward::matcher::alignment_phrase(&unit, &out, p);
            Injected { value, anchors: vec![] }
        }
        UnitType::Attr => {
            let a = gen.attributes.get(pick % gen.attributes.len().max(1))?;
            let value = perturb(&a.value);
            out.attributes.push(AttributeUnit { object: a.object.clone(), value: value.clone(), clause });
            Injected { value: p.canonicalize(&value), anchors: vec![a.object.clone()] }
        }
        UnitType::Rel => {
            let r = gen.relations.get(pick % gen.relations.len().max(1))?;
            let predicate = perturb(&r.predicate);
            out.relations.push(RelationUnit {
                subject: r.subject.clone(),
                predicate: predicate.clone(),
                object: r.object.clone(),
                clause,
            });
            Injected { value: p.canonicalize(&predicate), anchors: vec![r.subject.clone(), r.object.clone()] }
        }
    };
    Some((out.normalized(), injected))
}

/// Reference units of type `t` as (label, anchors, canonical value).
fn reference_units(t: UnitType, r: &StructuredCaption, p: &SimilarityProvider) -> Vec<(String, Vec<String>, String)> {
    match t {
        UnitType::Obj => r
            .objects
            .iter()
            .map(|o| (o.id.clone(), vec![], structreward::matcher::alignment_phrase(o, r, p)))
            .collect(),
        UnitType::Attr => r
            .attributes
            .iter()
            .map(|a| (format!("{}:{}", a.object, a.value), vec![a.object.clone()], p.canonicalize(&a.value)))
            .collect(),
        UnitType::Rel => r
            .relations
            .iter()
            .map(|x| {
                (format!("{} {} {}", x.subject, x.predicate, x.object), vec![x.subject.clone(), x.object.clone()], p.canonicalize(&x.predicate))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HackOutcome {
    /// The injected unit could still reach an unclaimed reference unit.
    Skipped,
    Checked { before: f64, after: f64 },
}

/// Injects one duplicate or near-synonymous generated unit whose every
/// admissible reference partner was already claimed exactly.
pub fn reward_hack_case(seed: u64, t: UnitType, how: Injection, pick: usize) -> HackOutcome {
    let lex = lexicon();
    let p = SimilarityProvider::lexical(lex.clone());
    let cfg = RewardConfig::default();
    let world = sample_world(&rich_worlds(&lex), seed).expect("world");
    let reference = reference_of(&world, &lex);
    let policy = TokenPolicy::uniform(&lex, 1.0);
    let gen = sample(&policy, &world, &lex, seed.wrapping_add(7)).expect("sample").caption;

    let Some((hacked, unit)) = inject(&gen, t, how, pick, &p) else { return HackOutcome::Skipped };
    let map: ObjectMap = build_object_map(&gen, &reference, &p, cfg.min_weight);
    let original = match_typed_units(t, &gen, &reference, &map, &p, cfg.min_weight);
    // Identical reference units share a label, so claims are counted.
    let mut unclaimed: BTreeMap<String, isize> = BTreeMap::new();
    for (label, ..) in reference_units(t, &reference, &p) {
        *unclaimed.entry(label).or_insert(0) += 1;
    }
    for x in &original.exact_pairs {
        *unclaimed.get_mut(&x.reference).expect("claimed label exists") -= 1;
    }
    let reachable_free = reference_units(t, &reference, &p).into_iter().any(|(label, anchors, value)| {
        let compatible = unit.anchors.iter().zip(&anchors).all(|(g, r)| map.get(g) == Some(r.as_str()));
        compatible && p.score(&unit.value, &value) >= cfg.min_weight && unclaimed[&label] > 0
    });
    if reachable_free {
        return HackOutcome::Skipped;
    }
    let before = typed_score(t, &scene_graph_score(&gen, &reference, &cfg, &p));
    let after = typed_score(t, &scene_graph_score(&hacked, &reference, &cfg, &p));
    HackOutcome::Checked { before, after }
}

/// Violations of label soundness for one world: positives that do not hold
/// and corruption negatives that do. Also returns negatives checked per kind.
pub fn label_violations(seed: u64) -> (Vec<String>, [usize; 5]) {
    let lex = lexicon();
    let p = SimilarityProvider::lexical(lex.clone());
    let world = sample_world(&rich_worlds(&lex), seed).expect("world");
    let reference = reference_of(&world, &lex);
    let mut bad = Vec::new();
    let positives = factual_positive_questions(&reference, &lex).union(temporal_positive_questions(&reference, &lex));
    for q in &positives.questions {
        if oracle_answer(&world, q).expect("anchors valid") != Answer::Yes {
            bad.push(format!("world {seed}: positive `{}` answered no", q.text));
        }
    }
    let mut counts = [0; 5];
    for (k, kind) in CorruptionKind::ALL.iter().enumerate() {
        let Ok(gen) = corrupt(&reference, *kind, &lex, seed) else { continue };
        let map = build_object_map(&gen, &reference, &p, 0.5);
        let em = match_events(&gen.events, &reference.events, &map, &p, 0.5);
        let negatives: QuestionSet = factual_negative_questions(&gen, &reference, &map, &em, &lex)
            .union(temporal_negative_questions(&gen, &reference, &map, &em, &lex));
        for q in &negatives.questions {
            counts[k] += 1;
            if oracle_answer(&world, q).expect("anchors valid") != Answer::No {
                bad.push(format!("world {seed} {kind}: negative `{}` answered yes", q.text));
            }
        }
    }
    (bad, counts)
}

/// (R of the corrupted caption, R of the reference itself), both answered
/// from each caption's own beliefs; `None` when the kind does not apply.
pub fn detectability(seed: u64, kind: CorruptionKind) -> Option<(f64, f64)> {
    let lex = lexicon();
    let p = SimilarityProvider::lexical(lex.clone());
    let world = sample_world(&rich_worlds(&lex), seed).expect("world");
    let reference = reference_of(&world, &lex);
    let gen = corrupt(&reference, kind, &lex, seed).ok()?;
    let cfg = RewardConfig { seed, ..RewardConfig::default() };
    let b = VerifierBinding::SelfBelief;
    let bad = score_captions(&gen, &reference, &cfg, &b, &p).expect("scores").reward;
    let good = score_captions(&reference, &reference, &cfg, &b, &p).expect("scores").reward;
    Some((bad, good))
}

/// Central differences of `f` around every logit of `policy`.
pub fn finite_difference(policy: &TokenPolicy, h: f64, f: impl Fn(&TokenPolicy) -> f64) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    for (c, z) in &policy.logits {
        for j in 0..z.len() {
            let mut plus = policy.clone();
            plus.logits.get_mut(c).unwrap()[j] += h;
            let mut minus = policy.clone();
            minus.logits.get_mut(c).unwrap()[j] -= h;
            out.push((c.clone(), j, (f(&plus) - f(&minus)) / (2.0 * h)));
        }
    }
    out
}

/// Softmax log-probability written out independently of the policy code.
pub fn log_softmax(z: &[f64], temperature: f64, j: usize) -> f64 {
    let s: f64 = z.iter().map(|v| (v / temperature).exp()).sum();
    z[j] / temperature - s.ln()
}

/// (1/B) sum_i c_i (1/L_i) sum_t log pi(a_t), evaluated from raw logits.
pub fn surrogate_by_hand(policy: &TokenPolicy, batch: &[(Vec<Decision>, f64)]) -> f64 {
    batch
        .iter()
        .map(|(ds, c)| {
            let l: f64 = ds.iter().map(|d| log_softmax(&policy.logits[&d.context], policy.temperature, d.choice)).sum();
            c * l / ds.len() as f64
        })
        .sum::<f64>()
        / batch.len() as f64
}
