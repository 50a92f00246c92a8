//! Top-down consistency metrics over a root claim and its support, plus the
//! normalized filename overlap check between training and evaluation lists.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{AttributeUnit, ObjectUnit, RelationUnit, StructuredCaption};
use crate::matcher::build_object_map;
use crate::similarity::SimilarityProvider;
use crate::world_sim::{Entity, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub sample_id: String,
    pub c_r: bool,
    pub c_a: bool,
    pub c_e: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_total: usize,
    pub n_root_correct: usize,
    pub n_root_and_attr_correct: usize,
    pub n_all_correct: usize,
    pub rra: Option<f64>,
    pub aca: Option<f64>,
    pub eca: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("EmptyInput: no audit records")]
    EmptyInput,
    #[error("NoRootRelation: sample `{0}` has no relation to audit")]
    NoRootRelation(String),
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn audit_metrics(records: &[AuditRecord]) -> Result<AuditSummary, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    let n_root_correct = records.iter().filter(|r| r.c_r).count();
    let n_root_and_attr_correct = records.iter().filter(|r| r.c_r && r.c_a).count();
    let n_all_correct = records.iter().filter(|r| r.c_r && r.c_a && r.c_e).count();
    Ok(AuditSummary {
        n_total: records.len(),
        n_root_correct,
        n_root_and_attr_correct,
        n_all_correct,
        rra: ratio(n_root_correct, records.len()),
        aca: ratio(n_root_and_attr_correct, n_root_correct),
        eca: ratio(n_all_correct, n_root_and_attr_correct),
    })
}

/// One generated caption to audit against its world. `root` indexes into
/// `caption.relations`; `None` means the first relation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSample<'a> {
    pub sample_id: String,
    pub caption: &'a StructuredCaption,
    pub world: &'a WorldState,
    pub root: Option<usize>,
}

/// The world's objects as a caption, for alignment only.
fn objects_of(world: &WorldState) -> StructuredCaption {
    let phrase = |e: &Entity| {
        let mut words: Vec<&str> = e.attributes.iter().map(String::as_str).collect();
        words.push(&e.head);
        words.join(" ")
    };
    StructuredCaption {
        objects: world
            .entities
            .iter()
            .map(|e| ObjectUnit { id: e.id.clone(), head: e.head.clone(), phrase: phrase(e), clause: 0 })
            .collect(),
        attributes: world
            .entities
            .iter()
            .flat_map(|e| e.attributes.iter().map(|a| AttributeUnit { object: e.id.clone(), value: a.clone(), clause: 0 }))
            .collect(),
        ..Default::default()
    }
}

/// Entity pairs that realize `predicate` as a prepositional fact or a
/// transitive event.
fn witnesses<'w>(world: &'w WorldState, predicate: &str) -> Vec<(&'w str, &'w str)> {
    let mut out: BTreeSet<(&str, &str)> = world
        .relations
        .iter()
        .filter(|r| r.predicate == predicate)
        .map(|r| (r.subject.as_str(), r.object.as_str()))
        .collect();
    out.extend(
        world
            .events
            .iter()
            .filter(|e| e.predicate == predicate && e.participants.len() == 2)
            .map(|e| (e.participants[0].as_str(), e.participants[1].as_str())),
    );
    out.into_iter().collect()
}

/// c_r: some world pair with the root's heads realizes its predicate.
/// c_a: one such pair also carries every generated attribute of both
/// endpoints. c_e: both endpoints align to distinct world entities.
pub fn derive_record(sample: &AuditSample, provider: &SimilarityProvider, min_weight: f64) -> Result<AuditRecord, AuditError> {
    let c = sample.caption;
    let root: &RelationUnit = c
        .relations
        .get(sample.root.unwrap_or(0))
        .ok_or_else(|| AuditError::NoRootRelation(sample.sample_id.clone()))?;
    let head = |id: &str| c.object(id).map(|o| o.head.as_str()).unwrap_or("");
    let attrs = |id: &str| c.attributes_of(id).map(|a| a.value.clone()).collect::<BTreeSet<_>>();
    let (s_attrs, o_attrs) = (attrs(&root.subject), attrs(&root.object));

    let world = sample.world;
    let entity = |id: &str| world.entity(id);
    let pairs: Vec<(&Entity, &Entity)> = witnesses(world, &root.predicate)
        .into_iter()
        .filter_map(|(s, o)| Some((entity(s)?, entity(o)?)))
        .filter(|(s, o)| s.head == head(&root.subject) && o.head == head(&root.object))
        .collect();
    let c_r = !pairs.is_empty();
    let c_a = pairs.iter().any(|(s, o)| s_attrs.is_subset(&s.attributes) && o_attrs.is_subset(&o.attributes));

    let map = build_object_map(c, &objects_of(world), provider, min_weight);
    let c_e = map.get(&root.subject).is_some() && map.get(&root.object).is_some();
    Ok(AuditRecord { sample_id: sample.sample_id.clone(), c_r, c_a, c_e })
}

pub fn derive_records(
    samples: &[AuditSample],
    provider: &SimilarityProvider,
    min_weight: f64,
) -> Result<Vec<AuditRecord>, AuditError> {
    samples.iter().map(|s| derive_record(s, provider, min_weight)).collect()
}

/// Lowercased file stem with any directory components removed.
pub fn normalize_name(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = match base.rfind('.') {
        Some(i) if i > 0 => &base[..i],
        _ => base,
    };
    stem.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetOverlap {
    pub name: String,
    pub overlap: usize,
    /// Distinct normalized names in the evaluation set.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub train_size: usize,
    pub sets: Vec<SetOverlap>,
    pub union_overlap: usize,
    pub union_size: usize,
}

impl OverlapReport {
    /// "0/8193"-style lines, one per set and one for the union.
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.sets.iter().map(|s| format!("{}: {}/{}", s.name, s.overlap, s.size)).collect();
        out.push(format!("union: {}/{}", self.union_overlap, self.union_size));
        out
    }
}

pub fn overlap_audit<S: AsRef<str>>(train: &[S], eval_sets: &[(String, Vec<S>)]) -> OverlapReport {
    let norm = |names: &[S]| names.iter().map(|n| normalize_name(n.as_ref())).collect::<BTreeSet<_>>();
    let train_set = norm(train);
    let mut union = BTreeSet::new();
    let sets = eval_sets
        .iter()
        .map(|(name, names)| {
            let set = norm(names);
            let overlap = set.intersection(&train_set).count();
            let size = set.len();
            union.extend(set);
            SetOverlap { name: name.clone(), overlap, size }
        })
        .collect();
    OverlapReport {
        train_size: train_set.len(),
        sets,
        union_overlap: union.intersection(&train_set).count(),
        union_size: union.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar_parser::{parse_caption, Lexicon};
    use crate::world_sim::{corrupt, world_from_caption, CorruptionKind};

    fn rec(c_r: bool, c_a: bool, c_e: bool) -> AuditRecord {
        AuditRecord { sample_id: "s".into(), c_r, c_a, c_e }
    }

    #[test]
    fn cascade_counts() {
        let records = [rec(true, true, true), rec(true, false, true), rec(false, true, true), rec(true, true, false)];
        let s = audit_metrics(&records).unwrap();
        assert_eq!((s.n_total, s.n_root_correct, s.n_root_and_attr_correct), (4, 3, 2));
        assert_eq!((s.rra, s.aca, s.eca), (Some(0.75), Some(2.0 / 3.0), Some(0.5)));
    }

    #[test]
    fn undefined_conditionals() {
        let s = audit_metrics(&[rec(true, false, true)]).unwrap();
        assert_eq!(s.eca, None);
        assert_eq!(s.n_root_and_attr_correct, 0);
        assert_eq!(audit_metrics(&[rec(false, true, true)]).unwrap().aca, None);
        assert_eq!(audit_metrics(&[]), Err(AuditError::EmptyInput));
    }

    const SCENE: &str = "A red cup is present. A wooden table is present. The cup is on the table. A man is present.";

    fn record_for(text: &str, world_text: &str) -> AuditRecord {
        let lex = Lexicon::builtin();
        let world = world_from_caption(&parse_caption(world_text, &lex).unwrap(), &lex);
        let caption = parse_caption(text, &lex).unwrap();
        let sample = AuditSample { sample_id: "s".into(), caption: &caption, world: &world, root: None };
        derive_record(&sample, &SimilarityProvider::default(), 0.5).unwrap()
    }

    #[test]
    fn records_from_worlds() {
        assert_eq!(record_for(SCENE, SCENE), rec(true, true, true));
        let lex = Lexicon::builtin();
        let truth = parse_caption(SCENE, &lex).unwrap();
        let swapped = corrupt(&truth, CorruptionKind::AttributeSwap, &lex, 3).unwrap();
        let world = world_from_caption(&truth, &lex);
        let sample = AuditSample { sample_id: "s".into(), caption: &swapped, world: &world, root: None };
        assert_eq!(derive_record(&sample, &SimilarityProvider::default(), 0.5).unwrap(), rec(true, false, true));
        let r = record_for("A red cup is present. A box is present. The cup is on the box.", SCENE);
        assert!(!r.c_e && !r.c_r);
    }

    #[test]
    fn hallucinated_instance_fails_existence_only() {
        let text = "A red cup is present. A wooden table is present. Another red cup is present. The second cup is on the table.";
        assert_eq!(record_for(text, SCENE), rec(true, true, false));
    }

    #[test]
    fn missing_root() {
        let lex = Lexicon::builtin();
        let caption = parse_caption("A cup is present.", &lex).unwrap();
        let world = world_from_caption(&caption, &lex);
        let sample = AuditSample { sample_id: "x".into(), caption: &caption, world: &world, root: None };
        assert_eq!(derive_record(&sample, &SimilarityProvider::default(), 0.5), Err(AuditError::NoRootRelation("x".into())));
    }

    #[test]
    fn name_normalization() {
        assert_eq!(normalize_name("clips/Video_001.mp4"), "video_001");
        assert_eq!(normalize_name("C:\\data\\A.B.avi"), "a.b");
        assert_eq!(normalize_name(".hidden"), ".hidden");
        let r = overlap_audit(&["Video_001.mp4"], &[("eval".into(), vec!["video_001.avi", "video_002.avi"])]);
        assert_eq!(r.lines(), vec!["eval: 1/2", "union: 1/2"]);
        let empty: [&str; 0] = [];
        let r = overlap_audit(&empty, &[("eval".into(), vec!["a.mp4"])]);
        assert_eq!((r.sets[0].overlap, r.union_overlap), (0, 0));
    }
}
