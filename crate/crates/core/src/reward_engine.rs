//! Scene-graph, temporal and factual branch scores, the shared affine
//! centering, and their weighted combination into one sequence reward.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_ir::{ingest, IngestError, StructuredCaption};
use crate::grammar_parser::{parse_caption, ParseError};
use crate::matcher::{build_object_map, match_events, match_typed_units, EventMatching, ObjectMap, TypedMatchResult, UnitType};
use crate::question_gen::{
    balance_and_cap, cap, factual_negative_questions, factual_positive_questions, temporal_negative_questions,
    temporal_positive_questions, Answer, QuestionSet, VerificationQuestion,
};
use crate::similarity::SimilarityProvider;
use crate::verifier::{answer, belief_world, VerifierBinding, VerifierError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// (obj, attr, rel) weights inside q_sg.
    pub alpha: [f64; 3],
    /// (sg, temp, vqa) branch weights.
    pub lambda: [f64; 3],
    pub rho: f64,
    pub kappa: f64,
    pub min_weight: f64,
    pub question_budget: Option<usize>,
    pub balance: bool,
    pub seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: [1.0 / 3.0; 3],
            lambda: [0.15, 0.25, 0.35],
            rho: 2.0,
            kappa: 0.5,
            min_weight: 0.5,
            question_budget: None,
            balance: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("alpha must be non-negative and sum to 1, got {0:?}")]
    Alpha([f64; 3]),
    #[error("lambda must be non-negative, got {0:?}")]
    Lambda([f64; 3]),
    #[error("rho must be positive, got {0}")]
    Rho(f64),
    #[error("kappa must lie in [0, 1], got {0}")]
    Kappa(f64),
    #[error("min_weight must lie in [0, 1], got {0}")]
    MinWeight(f64),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sum: f64 = self.alpha.iter().sum();
        if self.alpha.iter().any(|a| !(*a >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(ConfigError::Rho(self.rho));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(ConfigError::Kappa(self.kappa));
        }
        if !(0.0..=1.0).contains(&self.min_weight) {
            return Err(ConfigError::MinWeight(self.min_weight));
        }
        Ok(())
    }
}

/// 2m / (|gen| + |ref|), or 1 when the type is absent on both sides.
pub fn dice_score(matched_mass: f64, gen_count: usize, ref_count: usize) -> f64 {
    if gen_count + ref_count == 0 {
        1.0
    } else {
        2.0 * matched_mass / (gen_count + ref_count) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphScore {
    pub q_obj: f64,
    pub q_attr: f64,
    pub q_rel: f64,
    pub q_sg: f64,
    pub object_map: ObjectMap,
    pub typed: Vec<TypedMatchResult>,
}

pub fn scene_graph_score(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    config: &RewardConfig,
    provider: &SimilarityProvider,
) -> SceneGraphScore {
    let object_map = build_object_map(gen, reference, provider, config.min_weight);
    let typed: Vec<TypedMatchResult> = UnitType::ALL
        .iter()
        .map(|&t| match_typed_units(t, gen, reference, &object_map, provider, config.min_weight))
        .collect();
    let q: Vec<f64> = typed.iter().map(|r| dice_score(r.matched_mass, r.gen_count, r.ref_count)).collect();
    let q_sg = config.alpha.iter().zip(&q).map(|(a, q)| a * q).sum();
    SceneGraphScore { q_obj: q[0], q_attr: q[1], q_rel: q[2], q_sg, object_map, typed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsweredQuestion {
    #[serde(flatten)]
    pub question: VerificationQuestion,
    pub answer: Answer,
    pub correct: bool,
}

/// Mean agreement with the known labels; `None` for an empty set.
pub fn branch_accuracy(
    qs: &QuestionSet,
    binding: &VerifierBinding,
) -> Result<(Option<f64>, Vec<AnsweredQuestion>), VerifierError> {
    let answered = qs
        .questions
        .iter()
        .map(|q| {
            let a = answer(binding, q)?;
            Ok(AnsweredQuestion { question: q.clone(), answer: a, correct: a == q.label })
        })
        .collect::<Result<Vec<_>, VerifierError>>()?;
    if answered.is_empty() {
        return Ok((None, answered));
    }
    let correct = answered.iter().filter(|a| a.correct).count();
    Ok((Some(correct as f64 / answered.len() as f64), answered))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub r_sg: f64,
    pub r_temp: f64,
    pub r_vqa: f64,
    #[serde(rename = "R")]
    pub reward: f64,
}

/// r_b = rho (q_b - kappa) for present branches, 0 for absent ones.
pub fn combine(q_sg: Option<f64>, q_temp: Option<f64>, q_vqa: Option<f64>, config: &RewardConfig) -> Combined {
    let centered = |q: Option<f64>| q.map_or(0.0, |q| config.rho * (q - config.kappa));
    let (r_sg, r_temp, r_vqa) = (centered(q_sg), centered(q_temp), centered(q_vqa));
    let reward = config.lambda[0] * r_sg + config.lambda[1] * r_temp + config.lambda[2] * r_vqa;
    Combined { r_sg, r_temp, r_vqa, reward }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub q_obj: f64,
    pub q_attr: f64,
    pub q_rel: f64,
    pub q_sg: f64,
    pub q_temp: Option<f64>,
    pub q_vqa: Option<f64>,
    pub r_sg: f64,
    pub r_temp: f64,
    pub r_vqa: f64,
    #[serde(rename = "R")]
    pub reward: f64,
    pub object_map: ObjectMap,
    pub typed_match_results: Vec<TypedMatchResult>,
    pub event_matching: EventMatching,
    pub temporal_questions: Vec<AnsweredQuestion>,
    pub factual_questions: Vec<AnsweredQuestion>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptionInput {
    Text(String),
    Ir(StructuredCaption),
}

impl CaptionInput {
    pub fn resolve(&self, provider: &SimilarityProvider) -> Result<StructuredCaption, ScoreError> {
        match self {
            CaptionInput::Text(t) => Ok(parse_caption(t, &provider.lexicon)?),
            CaptionInput::Ir(c) => Ok(ingest(c.clone())?),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// The four question sets for one caption pair, balanced per config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairQuestions {
    pub temporal: QuestionSet,
    pub factual: QuestionSet,
}

pub fn build_questions(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    object_map: &ObjectMap,
    event_matching: &EventMatching,
    config: &RewardConfig,
    provider: &SimilarityProvider,
) -> PairQuestions {
    let lex = &provider.lexicon;
    let temporal = temporal_positive_questions(reference, lex)
        .union(temporal_negative_questions(gen, reference, object_map, event_matching, lex));
    let factual = factual_positive_questions(reference, lex)
        .union(factual_negative_questions(gen, reference, object_map, event_matching, lex));
    let finish = |qs: QuestionSet, salt: u64| {
        let seed = config.seed.wrapping_mul(2).wrapping_add(salt);
        match (config.balance, config.question_budget) {
            (true, budget) => balance_and_cap(&qs, budget, seed),
            (false, Some(budget)) => cap(&qs, budget, seed),
            (false, None) => qs,
        }
    };
    PairQuestions { temporal: finish(temporal, 0), factual: finish(factual, 1) }
}

/// Scores already-anchored captions.
pub fn score_captions(
    gen: &StructuredCaption,
    reference: &StructuredCaption,
    config: &RewardConfig,
    binding: &VerifierBinding,
    provider: &SimilarityProvider,
) -> Result<RewardBreakdown, ScoreError> {
    config.validate()?;
    let sg = scene_graph_score(gen, reference, config, provider);
    let event_matching = match_events(&gen.events, &reference.events, &sg.object_map, provider, config.min_weight);
    let questions = build_questions(gen, reference, &sg.object_map, &event_matching, config, provider);
    let resolved = match binding {
        VerifierBinding::SelfBelief => {
            VerifierBinding::WorldOracle(Arc::new(belief_world(gen, reference, &sg.object_map, &event_matching)))
        }
        other => other.clone(),
    };
    let (q_temp, temporal_questions) = branch_accuracy(&questions.temporal, &resolved)?;
    let (q_vqa, factual_questions) = branch_accuracy(&questions.factual, &resolved)?;
    let c = combine(Some(sg.q_sg), q_temp, q_vqa, config);
    Ok(RewardBreakdown {
        q_obj: sg.q_obj,
        q_attr: sg.q_attr,
        q_rel: sg.q_rel,
        q_sg: sg.q_sg,
        q_temp,
        q_vqa,
        r_sg: c.r_sg,
        r_temp: c.r_temp,
        r_vqa: c.r_vqa,
        reward: c.reward,
        object_map: sg.object_map,
        typed_match_results: sg.typed,
        event_matching,
        temporal_questions,
        factual_questions,
    })
}

/// Full pipeline from text or pre-parsed captions.
pub fn score_pair(
    gen: &CaptionInput,
    reference: &CaptionInput,
    config: &RewardConfig,
    binding: &VerifierBinding,
    provider: &SimilarityProvider,
) -> Result<RewardBreakdown, ScoreError> {
    let g = gen.resolve(provider)?;
    let r = reference.resolve(provider)?;
    score_captions(&g, &r, config, binding, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption_ir::ObjectUnit;
    use crate::grammar_parser::Lexicon;
    use crate::world_sim::world_from_caption;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn objects(ids: &[&str]) -> StructuredCaption {
        StructuredCaption {
            objects: ids
                .iter()
                .map(|id| {
                    let head = id.split('_').next().unwrap();
                    ObjectUnit { id: id.to_string(), head: head.into(), phrase: head.into(), clause: 0 }
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn dice_two_of_three() {
        let s = scene_graph_score(
            &objects(&["cup_1", "table_1"]),
            &objects(&["cup_1", "table_1", "chair_1"]),
            &RewardConfig::default(),
            &SimilarityProvider::default(),
        );
        assert!(close(s.q_obj, 0.8));
        assert_eq!(s.q_attr, 1.0);
        assert_eq!(s.q_rel, 1.0);
    }

    #[test]
    fn combine_examples() {
        let cfg = RewardConfig::default();
        assert!(close(combine(Some(0.5), Some(0.5), Some(0.5), &cfg).reward, 0.0));
        assert!(close(combine(Some(1.0), Some(1.0), Some(1.0), &cfg).reward, 0.75));
        assert!(close(combine(Some(1.0), None, Some(1.0), &cfg).reward, 0.5));
        let c = combine(Some(0.0), Some(0.0), None, &cfg);
        assert!(close(c.r_sg, -1.0) && close(c.r_temp, -1.0) && c.r_vqa == 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig { alpha: [0.3, 0.3, 0.3], ..Default::default() };
        assert!(matches!(bad.validate(), Err(ConfigError::Alpha(_))));
        assert!(RewardConfig { rho: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { kappa: 1.5, ..Default::default() }.validate().is_err());
    }

    fn text(t: &str) -> CaptionInput {
        CaptionInput::Text(t.into())
    }

    #[test]
    fn identical_pair_is_perfect() {
        let p = SimilarityProvider::default();
        let t = "A red cup is on a table. A man lifts the cup. Then the man sits.";
        let c = parse_caption(t, &Lexicon::builtin()).unwrap();
        let w = VerifierBinding::WorldOracle(Arc::new(world_from_caption(&c, &p.lexicon)));
        let b = score_pair(&text(t), &text(t), &RewardConfig::default(), &w, &p).unwrap();
        assert_eq!(b.q_sg, 1.0);
        assert_eq!((b.q_temp, b.q_vqa), (Some(1.0), Some(1.0)));
        assert!(b.temporal_questions.iter().chain(&b.factual_questions).all(|q| q.correct));
        assert!(close(b.reward, 0.75));
    }

    #[test]
    fn wrong_attribute_walkthrough() {
        let p = SimilarityProvider::default();
        let reference = "A red cup is on a table.";
        let c = parse_caption(reference, &Lexicon::builtin()).unwrap();
        let w = VerifierBinding::WorldOracle(Arc::new(world_from_caption(&c, &p.lexicon)));
        let cfg = RewardConfig { balance: false, ..Default::default() };
        let b = score_pair(&text("A blue cup is on a table."), &text(reference), &cfg, &w, &p).unwrap();
        assert_eq!(b.q_attr, 0.0);
        assert_eq!(b.q_obj, 1.0);
        let negatives: Vec<_> = b.factual_questions.iter().filter(|q| q.question.label == Answer::No).collect();
        assert_eq!(negatives.len(), 1);
        assert_eq!(negatives[0].question.text, "Is the cup blue?");
        assert!(negatives[0].correct);
        // 4 positives + 1 negative, all answered correctly by the world.
        assert_eq!(b.q_vqa, Some(1.0));
    }

    #[test]
    fn unparseable_generated_text() {
        let p = SimilarityProvider::default();
        let err = score_pair(&text("A cup is present. The cup flies."), &text("A cup is present."), &RewardConfig::default(), &VerifierBinding::SelfBelief, &p);
        assert!(matches!(err, Err(ScoreError::Parse(ParseError::UnknownToken { clause: 1, .. }))));
    }

    #[test]
    fn ranges_hold() {
        let cfg = RewardConfig::default();
        for q in [0.0, 0.25, 1.0] {
            let c = combine(Some(q), Some(q), Some(q), &cfg);
            for r in [c.r_sg, c.r_temp, c.r_vqa] {
                assert!((-cfg.rho * cfg.kappa..=cfg.rho * (1.0 - cfg.kappa)).contains(&r));
            }
        }
    }
}
