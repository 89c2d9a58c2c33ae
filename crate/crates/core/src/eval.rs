//! Self-fed tracking and goal/request metrics.
//!
//! Unlike training, tracking feeds each turn the *predicted* previous belief.
//! Rule-based and interpolation trackers decide goals with [`decide_goal`]; the
//! softmax trackers take the argmax of their distribution.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{initial_state_vector, Dialogue, Turn};
use crate::decoder::{request_logit, slot_estimate, utterance_repr, CandidateTable, DecoderError, Projected};
use crate::embeddings::VectorStore;
use crate::linalg::sigmoid;
use crate::model::{Model, ModelError};
use crate::ontology::GoalLabel;
use crate::training::{self, TrainConfig, TrainError};
use crate::update::{argmax_goal, decide_goal, MechanismKind, UpdateError, UpdateMechanism};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no dialogues to evaluate")]
    Empty,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Turn-level decoder output for every informable slot and requestable slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnEstimates {
    pub slots: Vec<Vec<f64>>,
    pub requests: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnPrediction {
    /// Belief vector per informable slot, after the update.
    pub beliefs: Vec<Vec<f64>>,
    pub goals: Vec<GoalLabel>,
    pub requests: BTreeSet<String>,
}

/// Decoder bound to a vector store, with candidates precomputed.
pub struct Tracker<'a> {
    model: &'a Model,
    store: &'a VectorStore,
    table: CandidateTable,
    projected: Projected,
}

impl<'a> Tracker<'a> {
    pub fn new(model: &'a Model, store: &'a VectorStore) -> Result<Self> {
        model.validate()?;
        model.check_store(store)?;
        let table = CandidateTable::build(store, &model.ontology)?;
        let projected = table.project(&model.decoder);
        Ok(Self {
            model,
            store,
            table,
            projected,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn table(&self) -> &CandidateTable {
        &self.table
    }

    pub fn estimates(&self, turn: &Turn) -> TurnEstimates {
        let r = utterance_repr(self.store, turn.user_tokens());
        let p = &self.model.decoder;
        TurnEstimates {
            slots: self
                .model
                .ontology
                .informable()
                .iter()
                .enumerate()
                .map(|(pos, slot)| slot_estimate(p, &self.projected, &r, turn, pos, slot))
                .collect(),
            requests: (0..self.model.ontology.requestable().len())
                .map(|i| sigmoid(request_logit(p, &self.projected, &r, i)))
                .collect(),
        }
    }

    pub fn session(&self) -> Session<'_, 'a> {
        Session {
            tracker: self,
            state: TrackState::initial(self.model),
        }
    }

    pub fn track_dialogue(&self, dialogue: &Dialogue) -> Vec<TurnPrediction> {
        let mut session = self.session();
        dialogue.turns().iter().map(|t| session.step(t)).collect()
    }

    /// Tracks every dialogue; `workers > 1` spreads dialogues over a thread pool.
    /// Output order always follows input order.
    pub fn track_all(&self, dialogues: &[Dialogue], workers: usize) -> Result<Vec<Vec<TurnPrediction>>> {
        if workers <= 1 {
            return Ok(dialogues.iter().map(|d| self.track_dialogue(d)).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        Ok(pool.install(|| dialogues.par_iter().map(|d| self.track_dialogue(d)).collect()))
    }
}

/// Beliefs and goals carried across turns.
#[derive(Debug, Clone)]
struct TrackState {
    beliefs: Vec<Vec<f64>>,
    goals: Vec<GoalLabel>,
}

impl TrackState {
    fn initial(model: &Model) -> Self {
        let slots = model.ontology.informable();
        Self {
            beliefs: slots.iter().map(initial_state_vector).collect(),
            goals: vec![GoalLabel::None; slots.len()],
        }
    }
}

/// Advances the tracking state by one turn of decoder estimates.
fn advance(model: &Model, mechanism: &UpdateMechanism, state: &mut TrackState, est: &TurnEstimates) -> TurnPrediction {
    let softmax = mechanism.kind().is_softmax();
    for (pos, slot) in model.ontology.informable().iter().enumerate() {
        let b = mechanism
            .apply(pos, &est.slots[pos], &state.beliefs[pos])
            .expect("shapes validated when the tracker was built");
        state.goals[pos] = if softmax {
            argmax_goal(&b, slot)
        } else {
            decide_goal(&b, &state.goals[pos], slot)
        };
        state.beliefs[pos] = b;
    }
    let requests = model
        .ontology
        .requestable()
        .iter()
        .zip(&est.requests)
        .filter(|(_, &p)| p >= 0.5)
        .map(|(r, _)| r.clone())
        .collect();
    TurnPrediction {
        beliefs: state.beliefs.clone(),
        goals: state.goals.clone(),
        requests,
    }
}

/// Interactive or replayed tracking over successive turns.
pub struct Session<'t, 'a> {
    tracker: &'t Tracker<'a>,
    state: TrackState,
}

impl Session<'_, '_> {
    pub fn step(&mut self, turn: &Turn) -> TurnPrediction {
        let est = self.tracker.estimates(turn);
        let model = self.tracker.model;
        advance(model, &model.mechanism, &mut self.state, &est)
    }

    pub fn reset(&mut self) {
        self.state = TrackState::initial(self.tracker.model);
    }

    pub fn beliefs(&self) -> &[Vec<f64>] {
        &self.state.beliefs
    }

    pub fn goals(&self) -> &[GoalLabel] {
        &self.state.goals
    }
}

/// Replays cached decoder estimates under a different mechanism.
pub fn replay(model: &Model, mechanism: &UpdateMechanism, estimates: &[TurnEstimates]) -> Vec<TurnPrediction> {
    let mut state = TrackState::initial(model);
    estimates
        .iter()
        .map(|e| advance(model, mechanism, &mut state, e))
        .collect()
}

/// Candidate λ values for the rule-based tracker: 0.00, 0.05, ..., 1.00.
pub fn lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.05).collect()
}

/// Picks the rule-based λ with the best joint goal accuracy; ties keep the smaller λ.
pub fn tune_lambda(model: &Model, store: &VectorStore, dialogues: &[Dialogue]) -> Result<(f64, f64)> {
    if dialogues.is_empty() {
        return Err(EvalError::Empty);
    }
    let tracker = Tracker::new(model, store)?;
    let cached: Vec<Vec<TurnEstimates>> = dialogues
        .iter()
        .map(|d| d.turns().iter().map(|t| tracker.estimates(t)).collect())
        .collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for lambda in lambda_grid() {
        let mech = UpdateMechanism::RuleBased { lambda };
        let preds: Vec<_> = cached.iter().map(|e| replay(model, &mech, e)).collect();
        let acc = joint_goal_accuracy(&preds, dialogues);
        if acc > best.1 {
            best = (lambda, acc);
        }
    }
    Ok(best)
}

fn turn_pairs<'p>(
    preds: &'p [Vec<TurnPrediction>],
    dialogues: &'p [Dialogue],
) -> impl Iterator<Item = (&'p TurnPrediction, &'p Turn)> {
    preds.iter().zip(dialogues).flat_map(|(p, d)| p.iter().zip(d.turns()))
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of turns where every informable slot's goal matches gold.
pub fn joint_goal_accuracy(preds: &[Vec<TurnPrediction>], dialogues: &[Dialogue]) -> f64 {
    let (mut hits, mut total) = (0, 0);
    for (p, t) in turn_pairs(preds, dialogues) {
        total += 1;
        if p.goals.as_slice() == t.gold_goal_state() {
            hits += 1;
        }
    }
    fraction(hits, total)
}

/// Fraction of turns whose predicted request set equals the gold set.
pub fn request_accuracy(preds: &[Vec<TurnPrediction>], dialogues: &[Dialogue]) -> f64 {
    let (mut hits, mut total) = (0, 0);
    for (p, t) in turn_pairs(preds, dialogues) {
        total += 1;
        if &p.requests == t.gold_requests() {
            hits += 1;
        }
    }
    fraction(hits, total)
}

/// Per-slot goal accuracy, in ontology order.
pub fn slot_accuracy(preds: &[Vec<TurnPrediction>], dialogues: &[Dialogue], num_slots: usize) -> Vec<f64> {
    let mut hits = vec![0; num_slots];
    let mut total = 0;
    for (p, t) in turn_pairs(preds, dialogues) {
        total += 1;
        for (h, (g, gold)) in hits.iter_mut().zip(p.goals.iter().zip(t.gold_goal_state())) {
            if g == gold {
                *h += 1;
            }
        }
    }
    hits.into_iter().map(|h| fraction(h, total)).collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GoalError {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: String,
    pub predicted: GoalLabel,
    pub gold: GoalLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mechanism: MechanismKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub dialogues: usize,
    pub turns: usize,
    pub joint_goal_accuracy: f64,
    pub request_accuracy: f64,
    pub slot_accuracy: BTreeMap<String, f64>,
    pub errors: Vec<GoalError>,
}

pub fn evaluate(model: &Model, store: &VectorStore, dialogues: &[Dialogue], workers: usize) -> Result<EvalReport> {
    if dialogues.is_empty() {
        return Err(EvalError::Empty);
    }
    let tracker = Tracker::new(model, store)?;
    let preds = tracker.track_all(dialogues, workers)?;
    let slots = model.ontology.informable();
    let per_slot = slot_accuracy(&preds, dialogues, slots.len());
    let mut errors = Vec::new();
    for (p, d) in preds.iter().zip(dialogues) {
        for (t, (tp, turn)) in p.iter().zip(d.turns()).enumerate() {
            for (pos, slot) in slots.iter().enumerate() {
                if tp.goals[pos] != *turn.gold_goal(pos) {
                    errors.push(GoalError {
                        dialogue_id: d.id().to_string(),
                        turn: t,
                        slot: slot.name().to_string(),
                        predicted: tp.goals[pos].clone(),
                        gold: turn.gold_goal(pos).clone(),
                    });
                }
            }
        }
    }
    let lambda = match model.mechanism {
        UpdateMechanism::RuleBased { lambda } => Some(lambda),
        _ => None,
    };
    Ok(EvalReport {
        mechanism: model.kind(),
        lambda,
        dialogues: dialogues.len(),
        turns: dialogues.iter().map(|d| d.turns().len()).sum(),
        joint_goal_accuracy: joint_goal_accuracy(&preds, dialogues),
        request_accuracy: request_accuracy(&preds, dialogues),
        slot_accuracy: slots
            .iter()
            .zip(per_slot)
            .map(|(s, a)| (s.name().to_string(), a))
            .collect(),
        errors,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub joint_goal_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub mechanism: MechanismKind,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<SeedRun>,
}

/// Held-out splits shared by every mechanism in a comparison.
pub struct Splits<'a> {
    pub train: &'a [Dialogue],
    pub validation: &'a [Dialogue],
    pub test: &'a [Dialogue],
}

/// Trains and tests each mechanism once per seed under identical splits.
pub fn compare_mechanisms(
    splits: &Splits<'_>,
    ontology: &crate::ontology::Ontology,
    store: &VectorStore,
    base: &TrainConfig,
    mechanisms: &[MechanismKind],
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    if splits.test.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows = Vec::with_capacity(mechanisms.len());
    for &mechanism in mechanisms {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig {
                mechanism,
                seed,
                ..base.clone()
            };
            let outcome = training::train(splits.train, splits.validation, ontology, store, &config)
                .map_err(|e| EvalError::Train(Box::new(e)))?;
            let report = evaluate(&outcome.model, store, splits.test, 1)?;
            runs.push(SeedRun {
                seed,
                joint_goal_accuracy: report.joint_goal_accuracy,
                lambda: report.lambda,
            });
        }
        let (mean, std) = mean_std(runs.iter().map(|r| r.joint_goal_accuracy));
        rows.push(ComparisonRow {
            mechanism,
            mean,
            std,
            runs,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
