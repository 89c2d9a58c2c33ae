//! Synthetic corpora with known goal dynamics, the exact forward filter for a
//! discrete hidden-state chain, and a teacher/student recovery harness for the
//! constrained update.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Dialogue, TurnInput};
use crate::decoder::REQUEST_TOKEN;
use crate::embeddings::format_entry;
use crate::linalg::{l2_norm, Matrix};
use crate::ontology::{GoalLabel, Ontology, DONTCARE};
use crate::training::AdamState;
use crate::update::{ConstrainedParams, UpdateMechanism};

pub const VALUE_PLACEHOLDER: &str = "{value}";
pub const SLOT_PLACEHOLDER: &str = "{slot}";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("at least one dialogue and one turn are required")]
    Empty,
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("no template containing {VALUE_PLACEHOLDER} covers slot `{0}`")]
    TemplateCoverage(String),
    #[error("template names unknown slot `{0}`")]
    UnknownTemplateSlot(String),
    #[error("observation likelihoods are all zero")]
    ZeroLikelihood,
    #[error("filter inputs have inconsistent shapes")]
    Shape,
    #[error("likelihoods and probabilities must be finite and non-negative")]
    Negative,
    #[error("parameter recovery needs at least 100 samples and 2 values")]
    TooFewSamples,
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDynamics {
    pub goal_change_prob: f64,
    pub mention_prob: f64,
    /// Per requestable slot and turn.
    pub request_prob: f64,
    pub noise_vocab: Vec<String>,
    /// Filler tokens added to each turn, inclusive range.
    pub min_filler: usize,
    pub max_filler: usize,
    /// Templates for every slot; must contain `{value}` and may contain `{slot}`.
    pub templates: Vec<String>,
    /// Extra templates for particular slots.
    pub slot_templates: BTreeMap<String, Vec<String>>,
    pub seed: u64,
}

impl Default for SynthDynamics {
    fn default() -> Self {
        Self {
            goal_change_prob: 0.2,
            mention_prob: 0.8,
            request_prob: 0.0,
            noise_vocab: ["okay", "um", "so", "yes", "well", "hello", "thanks", "right"]
                .map(String::from)
                .to_vec(),
            min_filler: 1,
            max_filler: 3,
            templates: vec!["i want {value} please".to_string()],
            slot_templates: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl SynthDynamics {
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        for (name, value) in [
            ("goal_change_prob", self.goal_change_prob),
            ("mention_prob", self.mention_prob),
            ("request_prob", self.request_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Probability { name, value });
            }
        }
        for slot in self.slot_templates.keys() {
            if ontology.slot(slot).is_none() {
                return Err(SynthError::UnknownTemplateSlot(slot.clone()));
            }
        }
        for slot in ontology.informable() {
            if self.templates_for(slot.name()).is_empty() {
                return Err(SynthError::TemplateCoverage(slot.name().to_string()));
            }
        }
        Ok(())
    }

    fn templates_for(&self, slot: &str) -> Vec<&str> {
        self.templates
            .iter()
            .chain(self.slot_templates.get(slot).into_iter().flatten())
            .filter(|t| t.contains(VALUE_PLACEHOLDER))
            .map(String::as_str)
            .collect()
    }
}

fn realize(template: &str, slot: &str, value: &str) -> Vec<String> {
    tokenize(
        &template
            .replace(VALUE_PLACEHOLDER, value)
            .replace(SLOT_PLACEHOLDER, slot),
    )
}

/// Seeded corpus whose gold labels follow the latent goal of every slot.
///
/// Each slot's goal starts at a uniformly random value and, on later turns,
/// moves to a uniformly random other value with `goal_change_prob`. The turn
/// label names a slot on the first turn, whenever its goal changes, and
/// whenever the turn mentions it.
pub fn generate_dialogues(
    ontology: &Ontology,
    dynamics: &SynthDynamics,
    n_dialogues: usize,
    turns_per_dialogue: usize,
) -> Result<Vec<Dialogue>> {
    if n_dialogues == 0 || turns_per_dialogue == 0 {
        return Err(SynthError::Empty);
    }
    dynamics.validate(ontology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(dynamics.seed);
    let slots = ontology.informable();
    let templates: Vec<Vec<&str>> = slots.iter().map(|s| dynamics.templates_for(s.name())).collect();
    let mut out = Vec::with_capacity(n_dialogues);
    for d in 0..n_dialogues {
        let mut goals: Vec<usize> = slots.iter().map(|s| rng.random_range(0..s.num_values())).collect();
        let mut inputs = Vec::with_capacity(turns_per_dialogue);
        for t in 0..turns_per_dialogue {
            let mut tokens = Vec::new();
            let mut labels = Vec::new();
            let n_fill = rng.random_range(dynamics.min_filler..=dynamics.max_filler.max(dynamics.min_filler));
            for _ in 0..n_fill {
                if let Some(w) = dynamics.noise_vocab.choose(&mut rng) {
                    tokens.extend(tokenize(w));
                }
            }
            for (pos, slot) in slots.iter().enumerate() {
                let mut changed = t == 0;
                if t > 0 && slot.num_values() > 1 && rng.random_bool(dynamics.goal_change_prob) {
                    let other = rng.random_range(0..slot.num_values() - 1);
                    goals[pos] = if other >= goals[pos] { other + 1 } else { other };
                    changed = true;
                }
                let mentioned = rng.random_bool(dynamics.mention_prob);
                let value = &slot.values()[goals[pos]];
                if mentioned {
                    let template = templates[pos].choose(&mut rng).expect("coverage validated");
                    tokens.extend(realize(template, slot.name(), value));
                }
                if changed || mentioned {
                    labels.push((slot.name().to_string(), GoalLabel::Value(value.clone())));
                }
            }
            let mut requests = Vec::new();
            for req in ontology.requestable() {
                if dynamics.request_prob > 0.0 && rng.random_bool(dynamics.request_prob) {
                    tokens.extend(tokenize(&format!("what is the {req}")));
                    requests.push(req.clone());
                }
            }
            inputs.push(TurnInput {
                tokens,
                system_acts: Vec::new(),
                goal_labels: labels,
                requests,
            });
        }
        out.push(Dialogue::build(d.to_string(), ontology, inputs).expect("generated labels come from the ontology"));
    }
    Ok(out)
}

/// Every token the generator can emit, plus the candidate tokens of the ontology.
pub fn vocabulary(ontology: &Ontology, dynamics: &SynthDynamics) -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    for slot in ontology.informable() {
        words.extend(tokenize(slot.name()));
        for v in slot.values() {
            words.extend(tokenize(v));
        }
        for t in dynamics.templates_for(slot.name()) {
            words.extend(realize(t, "", ""));
        }
    }
    for r in ontology.requestable() {
        words.extend(tokenize(r));
        words.extend(tokenize(&format!("what is the {r}")));
    }
    for w in &dynamics.noise_vocab {
        words.extend(tokenize(w));
    }
    words.insert(DONTCARE.to_string());
    words.insert(REQUEST_TOKEN.to_string());
    words.into_iter().collect()
}

/// Writes unit-length random vectors for `vocab` in the text embedding format.
pub fn write_random_vectors<W: Write>(sink: &mut W, vocab: &[String], dim: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for token in vocab {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = l2_norm(&v).max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        sink.write_all(format_entry(token, &v).as_bytes())?;
    }
    Ok(())
}

/// Dynamics and seed recorded next to a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dynamics: SynthDynamics,
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    pub ontology_hash: String,
}

/// One step of exact filtering: `posterior_i ∝ L_i Σ_j T_ji prior_j`.
///
/// Row `j` of `transition` is the distribution of the next state given state `j`.
pub fn hmm_forward_filter(prior: &[f64], transition: &Matrix, likelihood: &[f64]) -> Result<Vec<f64>> {
    let n = prior.len();
    if transition.rows() != n || transition.cols() != n || likelihood.len() != n {
        return Err(SynthError::Shape);
    }
    let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
    if likelihood.iter().any(bad) || prior.iter().any(bad) || transition.as_slice().iter().any(bad) {
        return Err(SynthError::Negative);
    }
    if likelihood.iter().all(|&l| l == 0.0) {
        return Err(SynthError::ZeroLikelihood);
    }
    let predicted = transition.transpose_mul_vec(prior);
    let mut post: Vec<f64> = predicted.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 {
        return Err(SynthError::ZeroLikelihood);
    }
    post.iter_mut().for_each(|p| *p /= z);
    Ok(post)
}

/// Filters a sequence of observations, returning the posterior after each one.
pub fn hmm_filter_sequence(prior: &[f64], transition: &Matrix, likelihoods: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut belief = prior.to_vec();
    let mut out = Vec::with_capacity(likelihoods.len());
    for l in likelihoods {
        belief = hmm_forward_filter(&belief, transition, l)?;
        out.push(belief.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub n_values: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            n_values: 5,
            n_samples: 2000,
            seed: 0,
            learning_rate: 0.05,
            max_iterations: 5000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub fitted: ConstrainedParams,
    /// `|(â_c − b̂_c) − (a_c − b_c)|`.
    pub curr_gap_error: f64,
    /// `|(â_p − b̂_p) − (a_p − b_p)|`.
    pub past_gap_error: f64,
    pub initial_curr_gap_error: f64,
    pub initial_past_gap_error: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Random `(y, b_prev)` pair: independent `y ∈ (0,1)` and a random distribution.
pub fn random_update_inputs<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut b: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
    let z: f64 = b.iter().sum();
    b.iter_mut().for_each(|v| *v /= z);
    (y, b)
}

/// Fits a student constrained update to teacher outputs by full-batch Adam on
/// cross-entropy, starting from the default initialization.
pub fn recover_constrained_params(teacher: ConstrainedParams, opts: &RecoveryOptions) -> Result<RecoveryReport> {
    if opts.n_samples < 100 || opts.n_values < 2 {
        return Err(SynthError::TooFewSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let teacher_mech = UpdateMechanism::Constrained(teacher);
    let data: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..opts.n_samples)
        .map(|_| {
            let (y, b) = random_update_inputs(&mut rng, opts.n_values);
            let p = teacher_mech.apply(0, &y, &b).expect("shapes agree");
            (y, b, p)
        })
        .collect();

    let gap_errors = |s: &ConstrainedParams| {
        (
            (s.curr_gap() - teacher.curr_gap()).abs(),
            (s.past_gap() - teacher.past_gap()).abs(),
        )
    };
    let mut student = ConstrainedParams::INIT;
    let (initial_curr_gap_error, initial_past_gap_error) = gap_errors(&student);
    let mut adam = AdamState::new(4);
    let mut converged = false;
    let mut iterations = 0;
    let mut final_loss = f64::NAN;
    for it in 0..=opts.max_iterations {
        let mech = UpdateMechanism::Constrained(student);
        let mut grad = [0.0; 4];
        let mut loss = 0.0;
        for (y, b, p) in &data {
            let q = mech.apply(0, y, b).expect("shapes agree");
            let upstream: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| -pi / qi.max(1e-300)).collect();
            loss -= p.iter().zip(&q).map(|(pi, qi)| pi * qi.max(1e-300).ln()).sum::<f64>();
            if let crate::update::ParamGradients::Constrained(g) =
                mech.gradients(0, y, b, &upstream).expect("shapes agree").params
            {
                for (acc, v) in grad.iter_mut().zip(g.to_array()) {
                    *acc += v;
                }
            }
        }
        let n = data.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        final_loss = loss / n;
        iterations = it;
        if l2_norm(&grad) < opts.tolerance {
            converged = true;
            break;
        }
        if it == opts.max_iterations {
            break;
        }
        let mut flat = student.to_array();
        adam.step(&mut flat, &grad, opts.learning_rate);
        student = ConstrainedParams::from_array(flat);
    }
    let (curr_gap_error, past_gap_error) = gap_errors(&student);
    Ok(RecoveryReport {
        fitted: student,
        curr_gap_error,
        past_gap_error,
        initial_curr_gap_error,
        initial_past_gap_error,
        final_loss,
        iterations,
        converged,
    })
}
