//! REINFORCE with a sampled-decision KL penalty over a tabular caption
//! policy. The policy renders a world through a fixed sequence of binary
//! grammar decisions; choice 0 reproduces the reference renderer exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{audit_metrics, derive_record, AuditError, AuditSample};
use crate::caption_ir::{object_anchor, StructuredCaption};
use crate::grammar_parser::{parse_caption, Lexicon, ParseError};
use crate::reward_engine::{score_captions, RewardConfig, ScoreError};
use crate::similarity::SimilarityProvider;
use crate::verifier::VerifierBinding;
use crate::world_sim::{render_reference, sample_world, Entity, WorldConfig, WorldError, WorldEvent, WorldState};

/// Softmax policy over named decision contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPolicy {
    pub logits: BTreeMap<String, Vec<f64>>,
    pub temperature: f64,
}

pub const CORRECT: usize = 0;
pub const ERROR: usize = 1;

impl TokenPolicy {
    /// Uniform logits over every context the lexicon can produce.
    pub fn uniform(lexicon: &Lexicon, temperature: f64) -> TokenPolicy {
        let mut logits = BTreeMap::new();
        let mut add = |c: String| {
            logits.insert(c, vec![0.0; 2]);
        };
        lexicon.adjectives.iter().for_each(|a| add(format!("attr:{a}")));
        lexicon.prepositions.iter().for_each(|p| add(format!("rel:{p}")));
        lexicon.nouns.iter().for_each(|n| add(format!("endpoint:{n}")));
        for v in lexicon.verbs.keys() {
            add(format!("bind:{v}"));
            add(format!("collapse:{v}"));
        }
        add("order".into());
        TokenPolicy { logits, temperature }
    }

    pub fn probs(&self, context: &str) -> Vec<f64> {
        let z = &self.logits[context];
        if self.temperature == 0.0 {
            let best = argmax(z);
            return (0..z.len()).map(|j| if j == best { 1.0 } else { 0.0 }).collect();
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| ((v - m) / self.temperature).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn log_prob(&self, context: &str, choice: usize) -> f64 {
        let z = &self.logits[context];
        if self.temperature == 0.0 {
            return if argmax(z) == choice { 0.0 } else { f64::NEG_INFINITY };
        }
        let scaled: Vec<f64> = z.iter().map(|v| v / self.temperature).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        scaled[choice] - lse
    }

    fn draw(&self, context: &str, rng: &mut ChaCha8Rng) -> Decision {
        let p = self.probs(context);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut choice = p.len() - 1;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                choice = j;
                break;
            }
        }
        Decision { context: context.to_string(), choice, log_prob: self.log_prob(context, choice) }
    }

    pub fn error_rate(&self, context: &str) -> f64 {
        self.probs(context)[ERROR]
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub context: String,
    pub choice: usize,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCaption {
    pub text: String,
    pub caption: StructuredCaption,
    /// The scene the caption describes, errors included.
    pub belief: WorldState,
    pub decisions: Vec<Decision>,
    pub mean_logprob: f64,
    pub length: usize,
}

pub fn mean_logprob(policy: &TokenPolicy, decisions: &[Decision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().map(|d| policy.log_prob(&d.context, d.choice)).sum::<f64>() / decisions.len() as f64
}

fn next_other<'a>(items: &'a [&'a String], current: &str, avoid: impl Fn(&str) -> bool) -> Option<&'a String> {
    let start = items.iter().position(|x| *x == current).map_or(0, |i| i + 1);
    (0..items.len()).map(|k| items[(start + k) % items.len()]).find(|x| *x != current && !avoid(x))
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("rendered caption failed to parse: {0}")]
    Parse(#[from] ParseError),
}

/// Ancestral sampling through attribute, relation, binding, collapse and
/// order decisions, in that order.
pub fn sample(policy: &TokenPolicy, world: &WorldState, lexicon: &Lexicon, seed: u64) -> Result<SampledCaption, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decisions = Vec::new();
    let adjectives: Vec<&String> = lexicon.adjectives.iter().collect();
    let prepositions: Vec<&String> = lexicon.prepositions.iter().collect();
    let mut belief = world.clone();

    for e in &mut belief.entities {
        let original: Vec<String> = e.attributes.iter().cloned().collect();
        for a in original {
            let d = policy.draw(&format!("attr:{a}"), &mut rng);
            if d.choice == ERROR {
                let taken = |x: &str| e.attributes.contains(x);
                if let Some(wrong) = next_other(&adjectives, &a, taken) {
                    e.attributes.remove(&a);
                    e.attributes.insert(wrong.clone());
                }
            }
            decisions.push(d);
        }
    }

    let mut hallucinated: Vec<Entity> = Vec::new();
    for i in 0..belief.relations.len() {
        let prep = belief.relations[i].predicate.clone();
        let d = policy.draw(&format!("rel:{prep}"), &mut rng);
        if d.choice == ERROR {
            if let Some(wrong) = next_other(&prepositions, &prep, |_| false) {
                belief.relations[i].predicate = wrong.clone();
            }
        }
        decisions.push(d);
        let target = belief.relations[i].object.clone();
        let original = world.entity(&target).expect("valid world").clone();
        let d = policy.draw(&format!("endpoint:{}", original.head), &mut rng);
        if d.choice == ERROR {
            let k = belief.instances_of(&original.head) + hallucinated.iter().filter(|h| h.head == original.head).count() + 1;
            let copy = Entity { id: object_anchor(&original.head, k), ..belief.entity(&target).expect("valid world").clone() };
            belief.relations[i].object = copy.id.clone();
            hallucinated.push(copy);
        }
        decisions.push(d);
    }
    belief.entities.extend(hallucinated);

    let ids: Vec<String> = world.entities.iter().map(|e| e.id.clone()).collect();
    let id_refs: Vec<&String> = ids.iter().collect();
    for i in 0..belief.events.len() {
        let predicate = belief.events[i].predicate.clone();
        let transitive = belief.events[i].participants.len() == 2;
        if transitive || ids.len() > 1 {
            let d = policy.draw(&format!("bind:{predicate}"), &mut rng);
            if d.choice == ERROR {
                let p = &mut belief.events[i].participants;
                if transitive {
                    p.swap(0, 1);
                } else if let Some(other) = next_other(&id_refs, &p[0], |_| false) {
                    p[0] = other.clone();
                }
            }
            decisions.push(d);
        }
        let earlier = world.events[..i]
            .iter()
            .rposition(|e| e.predicate == predicate && e.participants != world.events[i].participants);
        if let Some(j) = earlier {
            let d = policy.draw(&format!("collapse:{predicate}"), &mut rng);
            if d.choice == ERROR {
                belief.events[i].participants = belief.events[j].participants.clone();
            }
            decisions.push(d);
        }
    }
    for i in 1..belief.events.len() {
        if world.events[i].explicit_order {
            let d = policy.draw("order", &mut rng);
            if d.choice == ERROR {
                let (a, b) = (belief.events[i - 1].clone(), belief.events[i].clone());
                belief.events[i - 1] = WorldEvent { explicit_order: a.explicit_order, ..b };
                belief.events[i] = WorldEvent { explicit_order: true, ..a };
            }
            decisions.push(d);
        }
    }
    for (t, e) in belief.events.iter_mut().enumerate() {
        e.time_index = t + 1;
    }

    let text = render_reference(&belief, lexicon)?;
    let caption = parse_caption(&text, lexicon)?;
    let length = decisions.len();
    let mean_logprob = if length == 0 { 0.0 } else { decisions.iter().map(|d| d.log_prob).sum::<f64>() / length as f64 };
    Ok(SampledCaption { text, caption, belief, decisions, mean_logprob, length })
}

/// Per-decision mean of log pi(a) - log pi_ref(a) over the sampled decisions.
pub fn kl_estimate(policy: &TokenPolicy, reference: &TokenPolicy, decisions: &[Decision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions
        .iter()
        .map(|d| policy.log_prob(&d.context, d.choice) - reference.log_prob(&d.context, d.choice))
        .sum::<f64>()
        / decisions.len() as f64
}

/// KL(pi || pi_ref) per context in closed form.
pub fn context_kl(policy: &TokenPolicy, reference: &TokenPolicy) -> BTreeMap<String, f64> {
    policy
        .logits
        .keys()
        .map(|c| {
            let p = policy.probs(c);
            let kl = (0..p.len())
                .filter(|&j| p[j] > 0.0)
                .map(|j| p[j] * (policy.log_prob(c, j) - reference.log_prob(c, j)))
                .sum();
            (c.clone(), kl)
        })
        .collect()
}

/// Gradient of (1/B) sum_i coef_i * mean_logprob_i with the coefficients
/// held fixed.
pub fn surrogate_gradient(policy: &TokenPolicy, batch: &[(&[Decision], f64)]) -> BTreeMap<String, Vec<f64>> {
    let mut grad: BTreeMap<String, Vec<f64>> = policy.logits.iter().map(|(c, z)| (c.clone(), vec![0.0; z.len()])).collect();
    let b = batch.len().max(1) as f64;
    for (decisions, coef) in batch {
        if decisions.is_empty() {
            continue;
        }
        let w = coef / (b * decisions.len() as f64 * policy.temperature);
        for d in decisions.iter() {
            let p = policy.probs(&d.context);
            let g = grad.get_mut(&d.context).expect("context in policy");
            for (j, pj) in p.iter().enumerate() {
                g[j] += w * (f64::from(u8::from(j == d.choice)) - pj);
            }
        }
    }
    grad
}

pub fn surrogate(policy: &TokenPolicy, batch: &[(&[Decision], f64)]) -> f64 {
    batch.iter().map(|(d, c)| c * mean_logprob(policy, d)).sum::<f64>() / batch.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    None,
    MovingAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Structured,
    SentenceBaseline,
}

/// Who answers the verification questions during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVerifier {
    SelfBelief,
    WorldOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub baseline: BaselineMode,
    pub mode: RewardMode,
    pub verifier: TrainVerifier,
    pub eval_every: usize,
    pub eval_worlds: usize,
    pub seed: u64,
    pub reward: RewardConfig,
    pub world: WorldConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            beta: 0.0,
            steps: 100,
            batch_size: 32,
            learning_rate: 20.0,
            temperature: 1.0,
            baseline: BaselineMode::None,
            mode: RewardMode::Structured,
            verifier: TrainVerifier::SelfBelief,
            eval_every: 10,
            eval_worlds: 100,
            seed: 0,
            reward: RewardConfig::default(),
            world: WorldConfig {
                entities: (3, 5),
                attributes: (1, 2),
                relations: (1, 3),
                events: (2, 4),
                repeat_prob: 0.5,
                explicit_order_prob: 1.0,
                ..WorldConfig::default()
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("NonFiniteGradient in context `{0}`")]
    NonFiniteGradient(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive for training");
        }
        if !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite");
        }
        if self.world.relations.0 == 0 {
            return bad("world.relations must start at 1 so every caption has a root relation");
        }
        self.reward.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.world.validate()?;
        Ok(())
    }
}

/// One rollout with both rewards computed.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub sample: SampledCaption,
    pub reward: f64,
    pub q_sg: f64,
    pub q_temp: Option<f64>,
    pub q_vqa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub loss: f64,
}

/// Bag-of-words F1 between two texts.
pub fn unigram_f1(a: &str, b: &str) -> f64 {
    let bag = |t: &str| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for w in t.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
            *m.entry(w.to_lowercase()).or_insert(0) += 1;
        }
        m
    };
    let (x, y) = (bag(a), bag(b));
    let (nx, ny): (usize, usize) = (x.values().sum(), y.values().sum());
    if nx + ny == 0 {
        return 1.0;
    }
    let common: usize = x.iter().map(|(w, c)| (*c).min(*y.get(w).unwrap_or(&0))).sum();
    2.0 * common as f64 / (nx + ny) as f64
}

/// The sentence-overlap reward under the same centering and total weight.
pub fn sentence_reward(gen: &str, reference: &str, config: &RewardConfig) -> f64 {
    config.lambda.iter().sum::<f64>() * config.rho * (unigram_f1(gen, reference) - config.kappa)
}

/// World with its reference text and parse.
#[derive(Debug, Clone)]
pub struct Task {
    pub world: Arc<WorldState>,
    pub text: String,
    pub caption: StructuredCaption,
}

impl Task {
    pub fn new(world: WorldState, lexicon: &Lexicon) -> Result<Task, SampleError> {
        let text = render_reference(&world, lexicon)?;
        let caption = parse_caption(&text, lexicon)?;
        Ok(Task { world: Arc::new(world), text, caption })
    }
}

pub fn rollout(
    policy: &TokenPolicy,
    task: &Task,
    config: &TrainerConfig,
    provider: &SimilarityProvider,
    seed: u64,
) -> Result<Rollout, TrainError> {
    let sample = sample(policy, &task.world, &provider.lexicon, seed)?;
    let binding = match config.verifier {
        TrainVerifier::SelfBelief => VerifierBinding::SelfBelief,
        TrainVerifier::WorldOracle => VerifierBinding::WorldOracle(task.world.clone()),
    };
    let b = score_captions(&sample.caption, &task.caption, &config.reward, &binding, provider)?;
    let reward = match config.mode {
        RewardMode::Structured => b.reward,
        RewardMode::SentenceBaseline => sentence_reward(&sample.text, &task.text, &config.reward),
    };
    Ok(Rollout { sample, reward, q_sg: b.q_sg, q_temp: b.q_temp, q_vqa: b.q_vqa })
}

/// One gradient ascent step on E[(R - b - beta k) mean_logprob].
pub fn step(
    policy: &TokenPolicy,
    reference: &TokenPolicy,
    batch: &[Rollout],
    baseline: f64,
    config: &TrainerConfig,
) -> Result<(TokenPolicy, StepMetrics), TrainError> {
    let kls: Vec<f64> = batch.iter().map(|r| kl_estimate(policy, reference, &r.sample.decisions)).collect();
    let coefs: Vec<(&[Decision], f64)> = batch
        .iter()
        .zip(&kls)
        .map(|(r, k)| (r.sample.decisions.as_slice(), r.reward - baseline - config.beta * k))
        .collect();
    let grad = surrogate_gradient(policy, &coefs);
    let mut next = policy.clone();
    for (c, g) in &grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(c.clone()));
        }
        for (z, gj) in next.logits.get_mut(c).expect("same contexts").iter_mut().zip(g) {
            *z += config.learning_rate * gj;
        }
    }
    let n = batch.len().max(1) as f64;
    let mean_reward = batch.iter().map(|r| r.reward).sum::<f64>() / n;
    let mean_kl = kls.iter().sum::<f64>() / n;
    let loss = -batch.iter().map(|r| r.reward * r.sample.mean_logprob).sum::<f64>() / n + config.beta * mean_kl;
    Ok((next, StepMetrics { mean_reward, mean_kl, loss }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    #[serde(rename = "mean_R")]
    pub mean_reward: Option<f64>,
    pub mean_kl: Option<f64>,
    pub loss: Option<f64>,
    pub q_sg: Option<f64>,
    pub q_temp: Option<f64>,
    pub q_vqa: Option<f64>,
    pub rra: Option<f64>,
    pub aca: Option<f64>,
    pub eca: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
    pub policy: TokenPolicy,
}

impl TrainingHistory {
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }

    /// Last record carrying audit metrics.
    pub fn final_eval(&self) -> Option<&HistoryRecord> {
        self.records.iter().rev().find(|r| r.rra.is_some())
    }
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the three inputs
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_WORLDS: u64 = 1;
const EVAL_WORLDS: u64 = 2;
const TRAIN_SAMPLES: u64 = 3;
const EVAL_SAMPLES: u64 = 4;

fn mean_present(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Audit metrics of one sampled caption per held-out world.
pub fn evaluate(
    policy: &TokenPolicy,
    tasks: &[Task],
    config: &TrainerConfig,
    provider: &SimilarityProvider,
) -> Result<(Option<f64>, Option<f64>, Option<f64>), TrainError> {
    let samples = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| sample(policy, &t.world, &provider.lexicon, mix(config.seed, EVAL_SAMPLES, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let records = samples
        .iter()
        .zip(tasks)
        .enumerate()
        .map(|(i, (s, t))| {
            let a = AuditSample { sample_id: i.to_string(), caption: &s.caption, world: &t.world, root: None };
            derive_record(&a, provider, config.reward.min_weight)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let s = audit_metrics(&records)?;
    Ok((s.rra, s.aca, s.eca))
}

pub fn train(config: &TrainerConfig, provider: &SimilarityProvider) -> Result<TrainingHistory, TrainError> {
    config.validate()?;
    let lexicon = provider.lexicon.clone();
    let world_config = WorldConfig { lexicon: lexicon.clone(), ..config.world.clone() };
    let make_task = |stream: u64, i: u64| -> Result<Task, TrainError> {
        Ok(Task::new(sample_world(&world_config, mix(config.seed, stream, i))?, &lexicon)?)
    };
    let eval_tasks = (0..config.eval_worlds as u64).into_par_iter().map(|i| make_task(EVAL_WORLDS, i)).collect::<Result<Vec<_>, _>>()?;

    let reference = TokenPolicy::uniform(&lexicon, config.temperature);
    let mut policy = reference.clone();
    let eval = |p: &TokenPolicy| if eval_tasks.is_empty() { Ok((None, None, None)) } else { evaluate(p, &eval_tasks, config, provider) };
    let (rra, aca, eca) = eval(&policy)?;
    let mut records = vec![HistoryRecord {
        step: 0,
        mean_reward: None,
        mean_kl: None,
        loss: None,
        q_sg: None,
        q_temp: None,
        q_vqa: None,
        rra,
        aca,
        eca,
    }];
    let mut baseline: Option<f64> = None;
    for s in 1..=config.steps {
        let offset = ((s - 1) * config.batch_size) as u64;
        let batch = (0..config.batch_size as u64)
            .into_par_iter()
            .map(|i| {
                let task = make_task(TRAIN_WORLDS, offset + i)?;
                rollout(&policy, &task, config, provider, mix(config.seed, TRAIN_SAMPLES, offset + i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let batch_mean = batch.iter().map(|r| r.reward).sum::<f64>() / batch.len() as f64;
        let b = match config.baseline {
            BaselineMode::None => 0.0,
            BaselineMode::MovingAverage => *baseline.get_or_insert(batch_mean),
        };
        let (next, m) = step(&policy, &reference, &batch, b, config)?;
        policy = next;
        if config.baseline == BaselineMode::MovingAverage {
            baseline = Some(0.9 * b + 0.1 * batch_mean);
        }
        let evaluate_now = s == config.steps || (config.eval_every > 0 && s % config.eval_every == 0);
        let (rra, aca, eca) = if evaluate_now { eval(&policy)? } else { (None, None, None) };
        records.push(HistoryRecord {
            step: s,
            mean_reward: Some(m.mean_reward),
            mean_kl: Some(m.mean_kl),
            loss: Some(m.loss),
            q_sg: mean_present(batch.iter().map(|r| Some(r.q_sg))),
            q_temp: mean_present(batch.iter().map(|r| r.q_temp)),
            q_vqa: mean_present(batch.iter().map(|r| r.q_vqa)),
            rra,
            aca,
            eca,
        });
    }
    Ok(TrainingHistory { records, policy })
}
