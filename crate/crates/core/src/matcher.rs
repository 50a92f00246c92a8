//! Maximum-weight partial bipartite matching and the typed unit matching
//! built on top of it.
//!
//! Object instances are aligned first. The resulting [`ObjectMap`] gates
//! which attributes, relations and events are allowed to pair up.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{EventMention, ObjectUnit, StructuredCaption};
use crate::similarity::SimilarityProvider;

/// Ties closer than this are treated as equal when fixing the tie-break.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("weight matrix has {found} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, found: usize },
    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::Shape { rows, cols, found: data.len() });
        }
        for (i, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MatrixError::OutOfRange { row: i / cols.max(1), col: i % cols.max(1), value });
            }
        }
        Ok(WeightMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(MatrixError::Shape { rows: rows.len(), cols, found: bad.len() });
        }
        WeightMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatrixError> {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        WeightMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Sorted by (row, col).
    pub pairs: Vec<(usize, usize)>,
    pub total_weight: f64,
}

/// Square min-cost assignment (potentials form of the Hungarian method).
/// Returns `assignment[row] = col`.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal total over the sub-matrix spanned by `rows` x `cols`.
fn optimum(w: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let n = rows.len().max(cols.len());
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let mut cost = vec![vec![0.0; n]; n];
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            cost[a][b] = -w[r][c];
        }
    }
    let assignment = hungarian_min(&cost);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (a, &b) in assignment.iter().enumerate().take(rows.len()) {
        if b < cols.len() && w[rows[a]][cols[b]] > 0.0 {
            pairs.push((rows[a], cols[b]));
        }
    }
    pairs.sort_unstable();
    pairs.iter().map(|&(r, c)| w[r][c]).sum()
}

/// Maximum-weight partial matching restricted to edges with weight
/// `>= min_weight`. Among optimal matchings the lexicographically smallest
/// sorted pair list wins.
pub fn max_weight_matching(w: &WeightMatrix, min_weight: f64) -> Matching {
    let eff: Vec<Vec<f64>> = (0..w.rows)
        .map(|r| {
            (0..w.cols)
                .map(|c| {
                    let x = w.get(r, c);
                    if x >= min_weight && x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let all_rows: Vec<usize> = (0..w.rows).collect();
    let all_cols: Vec<usize> = (0..w.cols).collect();
    let best = optimum(&eff, &all_rows, &all_cols);

    // Fix rows in order, each to the smallest column that keeps the optimum.
    let mut pairs = Vec::new();
    let mut fixed = 0.0;
    let mut free_cols: BTreeSet<usize> = all_cols.iter().copied().collect();
    let tol = TIE_EPS * best.abs().max(1.0);
    for r in 0..w.rows {
        let rest_rows: Vec<usize> = (r + 1..w.rows).collect();
        let mut chosen = None;
        for &c in &free_cols {
            if eff[r][c] <= 0.0 {
                continue;
            }
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            if fixed + eff[r][c] + optimum(&eff, &rest_rows, &cols) >= best - tol {
                chosen = Some(c);
                break;
            }
        }
        if let Some(c) = chosen {
            fixed += eff[r][c];
            free_cols.remove(&c);
            pairs.push((r, c));
        }
    }
    let total_weight = pairs.iter().map(|&(r, c)| eff[r][c]).sum();
    Matching { pairs, total_weight }
}

/// One-to-one alignment from generated to reference object ids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectMap {
    pub pairs: BTreeMap<String, String>,
    pub weights: BTreeMap<String, f64>,
}

impl ObjectMap {
    pub fn get(&self, gen_id: &str) -> Option<&str> {
        self.pairs.get(gen_id).map(String::as_str)
    }

    pub fn inverse(&self) -> BTreeMap<String, String> {
        self.pairs.iter().map(|(g, r)| (r.clone(), g.clone())).collect()
    }

    pub fn identity(caption: &StructuredCaption) -> ObjectMap {
        let pairs = caption.objects.iter().map(|o| (o.id.clone(), o.id.clone())).collect();
        let weights = caption.objects.iter().map(|o| (o.id.clone(), 1.0)).collect();
        ObjectMap { pairs, weights }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Canonical phrase used to align an object, with the object's own
/// attribute values removed since those are scored as attribute units.
pub fn alignment_phrase(object: &ObjectUnit, caption: &StructuredCaption, provider: &SimilarityProvider) -> String {
    let own: BTreeSet<String> =
        caption.attributes_of(&object.id).map(|a| provider.canonicalize(&a.value)).collect();
    let canonical = provider.canonicalize(&object.phrase);
    let kept: Vec<&str> = canonical.split(' ').filter(|t| !t.is_empty() && !own.contains(*t)).collect();
    if kept.is_empty() {
        provider.canonicalize(&object.head)
    } else {
        kept.join(" ")
    }
}

pub fn build_object_map(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    provider: &SimilarityProvider,
    min_weight: f64,
) -> ObjectMap {
    let g: Vec<String> = gen.objects.iter().map(|o| alignment_phrase(o, gen, provider)).collect();
    let r: Vec<String> = reference.objects.iter().map(|o| alignment_phrase(o, reference, provider)).collect();
    let w = WeightMatrix::from_fn(g.len(), r.len(), |i, j| provider.score(&g[i], &r[j])).expect("scores in [0,1]");
    let m = max_weight_matching(&w, min_weight);
    let mut map = ObjectMap::default();
    for (i, j) in m.pairs {
        let (gid, rid) = (&gen.objects[i].id, &reference.objects[j].id);
        map.pairs.insert(gid.clone(), rid.clone());
        map.weights.insert(gid.clone(), w.get(i, j));
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitType {
    Obj,
    Attr,
    Rel,
}

impl UnitType {
    pub const ALL: [UnitType; 3] = [UnitType::Obj, UnitType::Attr, UnitType::Rel];

    pub fn name(self) -> &'static str {
        match self {
            UnitType::Obj => "obj",
            UnitType::Attr => "attr",
            UnitType::Rel => "rel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPair {
    pub gen: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedMatchResult {
    pub unit_type: UnitType,
    pub exact_pairs: Vec<UnitPair>,
    pub residual_pairs: Vec<UnitPair>,
    pub matched_mass: f64,
    pub gen_count: usize,
    pub ref_count: usize,
    pub unmatched_gen: Vec<String>,
    pub unmatched_ref: Vec<String>,
}

/// A unit reduced to what matching needs.
struct Flat {
    label: String,
    /// Object anchors that must be paired in the object map. Objects
    /// themselves carry none, so their matching is not gated.
    anchors: Vec<String>,
    value: String,
}

fn flatten(t: UnitType, c: &StructuredCaption, provider: &SimilarityProvider) -> Vec<Flat> {
    match t {
        UnitType::Obj => c
            .objects
            .iter()
            .map(|o| Flat { label: o.id.clone(), anchors: vec![], value: alignment_phrase(o, c, provider) })
            .collect(),
        UnitType::Attr => c
            .attributes
            .iter()
            .map(|a| Flat {
                label: format!("{}:{}", a.object, a.value),
                anchors: vec![a.object.clone()],
                value: provider.canonicalize(&a.value),
            })
            .collect(),
        UnitType::Rel => c
            .relations
            .iter()
            .map(|r| Flat {
                label: format!("{} {} {}", r.subject, r.predicate, r.object),
                anchors: vec![r.subject.clone(), r.object.clone()],
                value: provider.canonicalize(&r.predicate),
            })
            .collect(),
    }
}

/// Exact-overlap removal followed by residual max-weight matching.
pub fn match_typed_units(
    unit_type: UnitType,
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    object_map: &ObjectMap,
    provider: &SimilarityProvider,
    min_weight: f64,
) -> TypedMatchResult {
    let g = flatten(unit_type, gen, provider);
    let r = flatten(unit_type, reference, provider);
    let compatible =
        |a: &Flat, b: &Flat| a.anchors.iter().zip(&b.anchors).all(|(x, y)| object_map.get(x) == Some(y.as_str()));

    let mut exact_pairs = Vec::new();
    let mut gen_used = vec![false; g.len()];
    let mut ref_used = vec![false; r.len()];
    for (i, a) in g.iter().enumerate() {
        if let Some(j) = (0..r.len()).find(|&j| !ref_used[j] && r[j].value == a.value && compatible(a, &r[j])) {
            gen_used[i] = true;
            ref_used[j] = true;
            exact_pairs.push(UnitPair { gen: a.label.clone(), reference: r[j].label.clone(), similarity: 1.0 });
        }
    }

    let gi: Vec<usize> = (0..g.len()).filter(|&i| !gen_used[i]).collect();
    let rj: Vec<usize> = (0..r.len()).filter(|&j| !ref_used[j]).collect();
    let w = WeightMatrix::from_fn(gi.len(), rj.len(), |a, b| {
        let (x, y) = (&g[gi[a]], &r[rj[b]]);
        if compatible(x, y) {
            provider.score(&x.value, &y.value)
        } else {
            0.0
        }
    })
    .expect("scores in [0,1]");
    let residual = max_weight_matching(&w, min_weight);
    let mut residual_pairs = Vec::new();
    for &(a, b) in &residual.pairs {
        gen_used[gi[a]] = true;
        ref_used[rj[b]] = true;
        residual_pairs.push(UnitPair {
            gen: g[gi[a]].label.clone(),
            reference: r[rj[b]].label.clone(),
            similarity: w.get(a, b),
        });
    }

    let matched_mass = exact_pairs.len() as f64 + residual_pairs.iter().map(|p| p.similarity).sum::<f64>();
    TypedMatchResult {
        unit_type,
        exact_pairs,
        residual_pairs,
        matched_mass,
        gen_count: g.len(),
        ref_count: r.len(),
        unmatched_gen: (0..g.len()).filter(|&i| !gen_used[i]).map(|i| g[i].label.clone()).collect(),
        unmatched_ref: (0..r.len()).filter(|&j| !ref_used[j]).map(|j| r[j].label.clone()).collect(),
    }
}

/// A generated event that lines up with a reference event on predicate and
/// arity but binds at least one participant to a different mapped anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConflict {
    pub gen: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventMatching {
    /// Strict pairs: every participant maps onto the reference binding.
    pub pairs: BTreeMap<String, String>,
    pub similarities: BTreeMap<String, f64>,
    /// One-to-one among the events left out of `pairs`.
    pub conflicts: Vec<EventConflict>,
}

impl EventMatching {
    pub fn matched_ref(&self, ref_id: &str) -> bool {
        self.pairs.values().any(|r| r == ref_id)
    }
}

pub fn match_events(
    gen_events: &[EventMention],
    ref_events: &[EventMention],
    object_map: &ObjectMap,
    provider: &SimilarityProvider,
    min_weight: f64,
) -> EventMatching {
    let mapped = |e: &EventMention| -> Option<Vec<&str>> { e.participants.iter().map(|p| object_map.get(p)).collect() };
    let pred_sim = |g: &EventMention, r: &EventMention| {
        provider.score(&provider.canonicalize(&g.predicate), &provider.canonicalize(&r.predicate))
    };

    let strict = WeightMatrix::from_fn(gen_events.len(), ref_events.len(), |i, j| {
        let (g, r) = (&gen_events[i], &ref_events[j]);
        match mapped(g) {
            Some(m) if m.len() == r.participants.len() && m.iter().zip(&r.participants).all(|(a, b)| *a == b) => {
                pred_sim(g, r)
            }
            _ => 0.0,
        }
    })
    .expect("scores in [0,1]");
    let mut out = EventMatching::default();
    let mut gen_used = vec![false; gen_events.len()];
    let mut ref_used = vec![false; ref_events.len()];
    for (i, j) in max_weight_matching(&strict, min_weight).pairs {
        gen_used[i] = true;
        ref_used[j] = true;
        out.pairs.insert(gen_events[i].id.clone(), ref_events[j].id.clone());
        out.similarities.insert(gen_events[i].id.clone(), strict.get(i, j));
    }

    let gi: Vec<usize> = (0..gen_events.len()).filter(|&i| !gen_used[i]).collect();
    let rj: Vec<usize> = (0..ref_events.len()).filter(|&j| !ref_used[j]).collect();
    let relaxed = WeightMatrix::from_fn(gi.len(), rj.len(), |a, b| {
        let (g, r) = (&gen_events[gi[a]], &ref_events[rj[b]]);
        let Some(m) = mapped(g) else { return 0.0 };
        if m.len() != r.participants.len() {
            return 0.0;
        }
        let sim = pred_sim(g, r);
        if sim < min_weight {
            return 0.0;
        }
        // Prefer the reference event whose binding is closest.
        let agree = m.iter().zip(&r.participants).filter(|(a, b)| **a == b.as_str()).count();
        sim * (agree + 1) as f64 / (m.len() + 1) as f64
    })
    .expect("scores in [0,1]");
    for (a, b) in max_weight_matching(&relaxed, 0.0).pairs {
        let (g, r) = (&gen_events[gi[a]], &ref_events[rj[b]]);
        out.conflicts.push(EventConflict { gen: g.id.clone(), reference: r.id.clone(), similarity: pred_sim(g, r) });
    }
    out
}
