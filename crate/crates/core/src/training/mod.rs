//! Joint training of the decoder and update parameters.
//!
//! Examples are (turn, slot) pairs, one per informable slot and one per
//! requestable slot. Informable examples condition on the gold previous state,
//! so they are independent and can be shuffled freely.

mod adam;
mod gradcheck;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{grad_check, param_name, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};

use crate::corpus::{gold_state_vector, initial_state_vector, Dialogue, Turn};
use crate::decoder::{
    backward_request, backward_slot, request_logit, slot_logits, utterance_repr, CandidateTable, DecoderError,
    DecoderParams, Projected,
};
use crate::embeddings::VectorStore;
use crate::eval::{self, EvalError};
use crate::linalg::sigmoid;
use crate::model::{Model, ModelError};
use crate::ontology::Ontology;
use crate::update::{MechanismKind, UpdateError, UpdateMechanism};

/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Eval(#[from] Box<EvalError>),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    #[default]
    JointGoalAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub mechanism: MechanismKind,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 400,
            dropout_rate: 0.5,
            clip_norm: 5.0,
            seed: 0,
            mechanism: MechanismKind::Constrained,
            validation_metric: ValidationMetric::JointGoalAccuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// What an example predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Informable slot position.
    Slot(usize),
    /// Requestable slot position.
    Request(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub dialogue: usize,
    pub turn: usize,
    pub target: Target,
}

/// Every (turn, slot) example of a corpus, in corpus order.
pub fn enumerate_examples(dialogues: &[Dialogue], ontology: &Ontology) -> Vec<Example> {
    let mut out = Vec::new();
    for (d, dialogue) in dialogues.iter().enumerate() {
        for t in 0..dialogue.turns().len() {
            for s in 0..ontology.informable().len() {
                out.push(Example {
                    dialogue: d,
                    turn: t,
                    target: Target::Slot(s),
                });
            }
            for r in 0..ontology.requestable().len() {
                out.push(Example {
                    dialogue: d,
                    turn: t,
                    target: Target::Request(r),
                });
            }
        }
    }
    out
}

/// `−ln b[gold]`, with `b[gold]` clamped at [`LOG_CLAMP`].
pub fn turn_loss(b_pred: &[f64], gold: &[f64]) -> f64 {
    let g = crate::linalg::argmax(gold).expect("gold vector is non-empty");
    -b_pred[g].max(LOG_CLAMP).ln()
}

/// Binary cross-entropy on a logit, computed without forming the sigmoid.
pub fn bce_with_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Forward pass for one informable slot of one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnForward {
    /// Turn-level decoder estimate.
    pub y: Vec<f64>,
    /// Updated belief.
    pub b: Vec<f64>,
}

/// Decoder then update. `r` is the (possibly dropped-out) utterance vector.
pub fn forward_turn(
    model: &Model,
    projected: &Projected,
    r: &[f64],
    turn: &Turn,
    slot_pos: usize,
    b_prev: &[f64],
) -> Result<TurnForward> {
    let slot = &model.ontology.informable()[slot_pos];
    let y = crate::decoder::slot_estimate(&model.decoder, projected, r, turn, slot_pos, slot);
    let b = model.mechanism.apply(slot_pos, &y, b_prev)?;
    Ok(TurnForward { y, b })
}

/// Gradient accumulator shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub decoder: DecoderParams,
    pub mechanism: UpdateMechanism,
}

impl Gradients {
    pub fn zeros(model: &Model) -> Self {
        Self {
            decoder: DecoderParams::zeros(model.dim()),
            mechanism: model.mechanism.zeros_like(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.decoder.write_flat(&mut out);
        self.mechanism.write_flat(&mut out);
        out
    }
}

/// Read-only view of a corpus with utterance vectors precomputed.
pub struct PreparedCorpus<'a> {
    pub dialogues: &'a [Dialogue],
    reprs: Vec<Vec<Vec<f64>>>,
}

impl<'a> PreparedCorpus<'a> {
    pub fn new(dialogues: &'a [Dialogue], store: &VectorStore) -> Self {
        let reprs = dialogues
            .iter()
            .map(|d| {
                d.turns()
                    .iter()
                    .map(|t| utterance_repr(store, t.user_tokens()))
                    .collect()
            })
            .collect();
        Self { dialogues, reprs }
    }

    pub fn repr(&self, ex: &Example) -> &[f64] {
        &self.reprs[ex.dialogue][ex.turn]
    }
}

/// Loss of one example; adds its gradient into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn example_loss_grad(
    model: &Model,
    table: &CandidateTable,
    projected: &Projected,
    corpus: &PreparedCorpus<'_>,
    ex: &Example,
    r: &[f64],
    grads: &mut Gradients,
) -> Result<f64> {
    let dialogue = &corpus.dialogues[ex.dialogue];
    let turn = &dialogue.turns()[ex.turn];
    let params = &model.decoder;
    match ex.target {
        Target::Request(q) => {
            let z = request_logit(params, projected, r, q);
            let t = f64::from(u8::from(
                turn.gold_requests().contains(&model.ontology.requestable()[q]),
            ));
            backward_request(params, table, projected, r, q, sigmoid(z) - t, &mut grads.decoder);
            Ok(bce_with_logit(z, t))
        }
        Target::Slot(pos) => {
            let slot = &model.ontology.informable()[pos];
            let logits = slot_logits(params, projected, r, turn, pos, slot);
            if let UpdateMechanism::RuleBased { .. } = model.mechanism {
                // The rule-based decoder is trained on the turn-level labels alone.
                let said = turn.turn_goal_labels().get(slot.name());
                let mut loss = 0.0;
                let mut g = Vec::with_capacity(logits.len());
                for (z, label) in logits.iter().zip(slot.labels()) {
                    let t = f64::from(u8::from(said == Some(&label)));
                    loss += bce_with_logit(*z, t);
                    g.push(sigmoid(*z) - t);
                }
                let t_none = f64::from(u8::from(said.is_none()));
                loss += bce_with_logit(params.none_bias, t_none);
                let g_none = sigmoid(params.none_bias) - t_none;
                backward_slot(
                    params,
                    table,
                    projected,
                    r,
                    turn,
                    pos,
                    slot,
                    &g,
                    g_none,
                    &mut grads.decoder,
                );
                return Ok(loss);
            }
            let mut y: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
            y.push(sigmoid(params.none_bias));
            let b_prev = match ex.turn {
                0 => initial_state_vector(slot),
                t => gold_state_vector(&dialogue.turns()[t - 1], pos, slot),
            };
            let b = model.mechanism.apply(pos, &y, &b_prev)?;
            let gold = slot
                .value_index(turn.gold_goal(pos))
                .expect("gold labels were validated");
            let p = b[gold];
            let mut upstream = vec![0.0; b.len()];
            if p > LOG_CLAMP {
                upstream[gold] = -1.0 / p;
            }
            let ug = model.mechanism.gradients(pos, &y, &b_prev, &upstream)?;
            grads.mechanism.accumulate(pos, &ug.params);
            let n = y.len() - 1;
            let g: Vec<f64> = (0..n).map(|i| ug.y[i] * y[i] * (1.0 - y[i])).collect();
            let g_none = ug.y[n] * y[n] * (1.0 - y[n]);
            backward_slot(
                params,
                table,
                projected,
                r,
                turn,
                pos,
                slot,
                &g,
                g_none,
                &mut grads.decoder,
            );
            Ok(-p.max(LOG_CLAMP).ln())
        }
    }
}

/// Mean loss and its flat gradient over `examples`, without dropout.
pub fn loss_and_grad(
    model: &Model,
    table: &CandidateTable,
    corpus: &PreparedCorpus<'_>,
    examples: &[Example],
) -> Result<(f64, Vec<f64>)> {
    let projected = table.project(&model.decoder);
    let mut grads = Gradients::zeros(model);
    let mut total = 0.0;
    for ex in examples {
        total += example_loss_grad(model, table, &projected, corpus, ex, corpus.repr(ex), &mut grads)?;
    }
    let n = examples.len().max(1) as f64;
    let mut flat = grads.to_flat();
    flat.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, flat))
}

/// Mean loss over `examples`, without dropout.
pub fn mean_loss(
    model: &Model,
    table: &CandidateTable,
    corpus: &PreparedCorpus<'_>,
    examples: &[Example],
) -> Result<f64> {
    loss_and_grad(model, table, corpus, examples).map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_joint: f64,
    pub validation_request: f64,
    pub seconds: f64,
}

impl EpochLog {
    /// Tab-separated line: epoch, loss, joint accuracy, request accuracy, seconds.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.3}",
            self.epoch, self.train_loss, self.validation_joint, self.validation_request, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

pub fn train(
    train: &[Dialogue],
    validation: &[Dialogue],
    ontology: &Ontology,
    store: &VectorStore,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(train, validation, ontology, store, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch.
///
/// Model selection uses `validation`, or the training set when it is empty.
pub fn train_with_progress(
    train: &[Dialogue],
    validation: &[Dialogue],
    ontology: &Ontology,
    store: &VectorStore,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.iter().all(|d| d.turns().is_empty()) {
        return Err(TrainError::EmptyCorpus);
    }
    let selection = if validation.is_empty() { train } else { validation };
    let mut model = Model::init(ontology, store, config.mechanism, config.seed);
    let table = CandidateTable::build(store, ontology)?;
    let corpus = PreparedCorpus::new(train, store);
    let mut examples = enumerate_examples(train, ontology);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.num_params());
    let keep = 1.0 - config.dropout_rate;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in examples.chunks(config.batch_size) {
            let projected = table.project(&model.decoder);
            let mut grads = Gradients::zeros(&model);
            for ex in batch {
                let r = corpus.repr(ex);
                let dropped: Vec<f64> = if config.dropout_rate > 0.0 {
                    r.iter()
                        .map(|&x| if rng.random::<f64>() < keep { x / keep } else { 0.0 })
                        .collect()
                } else {
                    r.to_vec()
                };
                total += example_loss_grad(&model, &table, &projected, &corpus, ex, &dropped, &mut grads)?;
            }
            let mut flat_grad = grads.to_flat();
            let n = batch.len() as f64;
            flat_grad.iter_mut().for_each(|g| *g /= n);
            if !total.is_finite() || flat_grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            clip_global_norm(&mut flat_grad, config.clip_norm);
            let mut flat = model.to_flat();
            adam.step(&mut flat, &flat_grad, config.learning_rate);
            model.set_flat(&flat);
        }
        let train_loss = total / examples.len().max(1) as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        if let UpdateMechanism::RuleBased { .. } = model.mechanism {
            let (lambda, _) = eval::tune_lambda(&model, store, selection).map_err(Box::new)?;
            model.mechanism = UpdateMechanism::RuleBased { lambda };
        }
        let report = eval::evaluate(&model, store, selection, 1).map_err(Box::new)?;
        let entry = EpochLog {
            epoch,
            train_loss,
            validation_joint: report.joint_goal_accuracy,
            validation_request: report.request_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        if best.as_ref().is_none_or(|(acc, _, _)| entry.validation_joint > *acc) {
            best = Some((entry.validation_joint, epoch, model.clone()));
        }
        log.push(entry);
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(TrainOutcome { model, log, best_epoch })
}
