//! Belief-state update mechanisms `b_t = φ(y_t, b_{t-1})`.
//!
//! Four variants, in order of capacity:
//!
//! * rule-based: `λ y + (1 - λ) b_prev`, with λ tuned on validation data and goals
//!   picked by the detection rule in [`decide_goal`];
//! * learned interpolation: the same mix with `λ = sigmoid(θ)` trained, renormalized;
//! * one-step Markovian: `softmax(W_curr y + W_past b_prev)` with full per-slot matrices;
//! * constrained Markovian: the one-step form with each matrix tied to a diagonal
//!   and an off-diagonal scalar, four parameters shared by every slot.
//!
//! For the constrained form only `a_curr - b_curr` and `a_past - b_past` are
//! identifiable: the off-diagonal terms add `b_curr Σy + b_past Σb_prev` to every
//! logit, which softmax discards.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{argmax, dot, sigmoid, softmax, Matrix};
use crate::ontology::{GoalLabel, Ontology, Slot};

/// Detection threshold of the rule-based goal decision.
pub const DETECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum UpdateError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("lambda {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("no update parameters for slot position {0}")]
    SlotOutOfRange(usize),
    #[error("unknown mechanism `{0}` (expected rule, interp, one_step or constrained)")]
    UnknownMechanism(String),
    #[error("rule-based λ is tuned, not trained")]
    NotTrainable,
}

pub type Result<T> = std::result::Result<T, UpdateError>;

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(UpdateError::LengthMismatch { expected, found })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Rule,
    Interp,
    OneStep,
    Constrained,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [Self::Rule, Self::Interp, Self::OneStep, Self::Constrained];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rule => "rule",
            Self::Interp => "interp",
            Self::OneStep => "one_step",
            Self::Constrained => "constrained",
        }
    }

    /// Whether the output is a softmax distribution, decided by argmax.
    pub fn is_softmax(self) -> bool {
        matches!(self, Self::OneStep | Self::Constrained)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MechanismKind {
    type Err = UpdateError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UpdateError::UnknownMechanism(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedParams {
    pub a_curr: f64,
    pub b_curr: f64,
    pub a_past: f64,
    pub b_past: f64,
}

impl ConstrainedParams {
    pub const ZERO: Self = Self {
        a_curr: 0.0,
        b_curr: 0.0,
        a_past: 0.0,
        b_past: 0.0,
    };

    /// Identity-leaning start: trust both signals equally.
    pub const INIT: Self = Self {
        a_curr: 1.0,
        b_curr: 0.0,
        a_past: 1.0,
        b_past: 0.0,
    };

    pub fn curr_gap(&self) -> f64 {
        self.a_curr - self.b_curr
    }

    pub fn past_gap(&self) -> f64 {
        self.a_past - self.b_past
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a_curr, self.b_curr, self.a_past, self.b_past]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            a_curr: v[0],
            b_curr: v[1],
            a_past: v[2],
            b_past: v[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepParams {
    pub w_curr: Matrix,
    pub w_past: Matrix,
}

impl OneStepParams {
    /// `0.1 I` plus uniform noise in ±0.01 on every entry.
    pub fn init<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut noisy = || {
            let mut m = Matrix::scaled_identity(n, 0.1);
            for v in m.as_mut_slice() {
                *v += rng.random_range(-0.01..0.01);
            }
            m
        };
        let w_curr = noisy();
        let w_past = noisy();
        Self { w_curr, w_past }
    }

    pub fn dim(&self) -> usize {
        self.w_curr.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateMechanism {
    RuleBased {
        lambda: f64,
    },
    LearnedInterpolation {
        lambda_logit: f64,
    },
    /// One parameter pair per informable slot, in ontology order.
    OneStep {
        slots: Vec<OneStepParams>,
    },
    Constrained(ConstrainedParams),
}

impl UpdateMechanism {
    pub fn init<R: Rng>(kind: MechanismKind, ontology: &Ontology, rng: &mut R) -> Self {
        match kind {
            MechanismKind::Rule => Self::RuleBased { lambda: 0.5 },
            MechanismKind::Interp => Self::LearnedInterpolation { lambda_logit: 0.0 },
            MechanismKind::OneStep => Self::OneStep {
                slots: ontology
                    .informable()
                    .iter()
                    .map(|s| OneStepParams::init(s.dim(), rng))
                    .collect(),
            },
            MechanismKind::Constrained => Self::Constrained(ConstrainedParams::INIT),
        }
    }

    pub fn kind(&self) -> MechanismKind {
        match self {
            Self::RuleBased { .. } => MechanismKind::Rule,
            Self::LearnedInterpolation { .. } => MechanismKind::Interp,
            Self::OneStep { .. } => MechanismKind::OneStep,
            Self::Constrained(_) => MechanismKind::Constrained,
        }
    }

    /// Checks parameter shapes against the ontology.
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        match self {
            Self::RuleBased { lambda } if !(0.0..=1.0).contains(lambda) => Err(UpdateError::LambdaOutOfRange(*lambda)),
            Self::OneStep { slots } => {
                check_len(ontology.informable().len(), slots.len())?;
                for (p, slot) in slots.iter().zip(ontology.informable()) {
                    for m in [&p.w_curr, &p.w_past] {
                        check_len(slot.dim(), m.rows())?;
                        check_len(slot.dim(), m.cols())?;
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, slot_pos: usize, y: &[f64], b_prev: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::RuleBased { lambda } => rule_based_update(y, b_prev, *lambda),
            Self::LearnedInterpolation { lambda_logit } => learned_interpolation_update(y, b_prev, *lambda_logit),
            Self::OneStep { slots } => {
                let p = slots.get(slot_pos).ok_or(UpdateError::SlotOutOfRange(slot_pos))?;
                one_step_update(y, b_prev, &p.w_curr, &p.w_past)
            }
            Self::Constrained(p) => constrained_update(y, b_prev, p),
        }
    }

    /// Exact gradients of `upstream · φ(y, b_prev)`.
    pub fn gradients(&self, slot_pos: usize, y: &[f64], b_prev: &[f64], upstream: &[f64]) -> Result<UpdateGradients> {
        match self {
            Self::RuleBased { lambda } => rule_based_gradients(y, b_prev, *lambda, upstream),
            Self::LearnedInterpolation { lambda_logit } => interpolation_gradients(y, b_prev, *lambda_logit, upstream),
            Self::OneStep { slots } => {
                let p = slots.get(slot_pos).ok_or(UpdateError::SlotOutOfRange(slot_pos))?;
                one_step_gradients(y, b_prev, &p.w_curr, &p.w_past, upstream)
            }
            Self::Constrained(p) => constrained_gradients(y, b_prev, p, upstream),
        }
    }

    /// Number of trainable scalars. Rule-based λ is tuned, so it has none.
    pub fn num_params(&self) -> usize {
        match self {
            Self::RuleBased { .. } => 0,
            Self::LearnedInterpolation { .. } => 1,
            Self::OneStep { slots } => slots.iter().map(|p| 2 * p.dim() * p.dim()).sum(),
            Self::Constrained(_) => 4,
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        match self {
            Self::RuleBased { .. } => {}
            Self::LearnedInterpolation { lambda_logit } => out.push(*lambda_logit),
            Self::OneStep { slots } => {
                for p in slots {
                    out.extend_from_slice(p.w_curr.as_slice());
                    out.extend_from_slice(p.w_past.as_slice());
                }
            }
            Self::Constrained(p) => out.extend(p.to_array()),
        }
    }

    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        match self {
            Self::RuleBased { .. } => 0,
            Self::LearnedInterpolation { lambda_logit } => {
                *lambda_logit = src[0];
                1
            }
            Self::OneStep { slots } => {
                let mut k = 0;
                for p in slots {
                    for m in [&mut p.w_curr, &mut p.w_past] {
                        let len = m.as_slice().len();
                        m.as_mut_slice().copy_from_slice(&src[k..k + len]);
                        k += len;
                    }
                }
                k
            }
            Self::Constrained(p) => {
                *p = ConstrainedParams::from_array([src[0], src[1], src[2], src[3]]);
                4
            }
        }
    }

    /// A zero-valued mechanism with the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        match self {
            Self::RuleBased { .. } => Self::RuleBased { lambda: 0.0 },
            Self::LearnedInterpolation { .. } => Self::LearnedInterpolation { lambda_logit: 0.0 },
            Self::OneStep { slots } => Self::OneStep {
                slots: slots
                    .iter()
                    .map(|p| OneStepParams {
                        w_curr: Matrix::zeros(p.dim(), p.dim()),
                        w_past: Matrix::zeros(p.dim(), p.dim()),
                    })
                    .collect(),
            },
            Self::Constrained(_) => Self::Constrained(ConstrainedParams::ZERO),
        }
    }

    /// Adds parameter gradients for `slot_pos` into this accumulator.
    pub fn accumulate(&mut self, slot_pos: usize, grads: &ParamGradients) {
        match (self, grads) {
            (Self::LearnedInterpolation { lambda_logit }, ParamGradients::LambdaLogit(g)) => *lambda_logit += g,
            (Self::OneStep { slots }, ParamGradients::OneStep { w_curr, w_past }) => {
                let p = &mut slots[slot_pos];
                for (a, b) in p.w_curr.as_mut_slice().iter_mut().zip(w_curr.as_slice()) {
                    *a += b;
                }
                for (a, b) in p.w_past.as_mut_slice().iter_mut().zip(w_past.as_slice()) {
                    *a += b;
                }
            }
            (Self::Constrained(p), ParamGradients::Constrained(g)) => {
                p.a_curr += g.a_curr;
                p.b_curr += g.b_curr;
                p.a_past += g.a_past;
                p.b_past += g.b_past;
            }
            _ => {}
        }
    }
}

/// Parameter part of an update gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGradients {
    /// Rule-based λ is not trained.
    None,
    LambdaLogit(f64),
    OneStep {
        w_curr: Matrix,
        w_past: Matrix,
    },
    Constrained(ConstrainedParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateGradients {
    pub params: ParamGradients,
    pub y: Vec<f64>,
    pub b_prev: Vec<f64>,
}

/// `λ y + (1 - λ) b_prev`, not normalized.
pub fn rule_based_update(y: &[f64], b_prev: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_len(y.len(), b_prev.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(UpdateError::LambdaOutOfRange(lambda));
    }
    Ok(y.iter()
        .zip(b_prev)
        .map(|(yi, bi)| lambda * yi + (1.0 - lambda) * bi)
        .collect())
}

fn rule_based_gradients(y: &[f64], b_prev: &[f64], lambda: f64, upstream: &[f64]) -> Result<UpdateGradients> {
    check_len(y.len(), b_prev.len())?;
    check_len(y.len(), upstream.len())?;
    Ok(UpdateGradients {
        params: ParamGradients::None,
        y: upstream.iter().map(|g| lambda * g).collect(),
        b_prev: upstream.iter().map(|g| (1.0 - lambda) * g).collect(),
    })
}

/// Goal decision over a rule-based belief vector.
///
/// Detected values are the non-NONE indices with `b_i ≥ 0.5`. The most probable
/// detected value wins; with nothing detected the previous goal is kept.
pub fn decide_goal(b: &[f64], prev_goal: &GoalLabel, slot: &Slot) -> GoalLabel {
    let none = slot.none_index();
    let mut best: Option<usize> = None;
    for (i, &p) in b.iter().enumerate() {
        if i == none || p < DETECTION_THRESHOLD {
            continue;
        }
        if best.is_none_or(|j| p > b[j]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => slot.label_at(i).expect("index within slot dimension"),
        None => prev_goal.clone(),
    }
}

/// Goal decision over a softmax distribution: the argmax, ties to the lowest index.
pub fn argmax_goal(b: &[f64], slot: &Slot) -> GoalLabel {
    let i = argmax(b).unwrap_or(slot.none_index());
    slot.label_at(i).expect("index within slot dimension")
}

/// `softmax(W_curr y + W_past b_prev)`.
pub fn one_step_update(y: &[f64], b_prev: &[f64], w_curr: &Matrix, w_past: &Matrix) -> Result<Vec<f64>> {
    Ok(softmax(&one_step_logits(y, b_prev, w_curr, w_past)?))
}

fn one_step_logits(y: &[f64], b_prev: &[f64], w_curr: &Matrix, w_past: &Matrix) -> Result<Vec<f64>> {
    let n = y.len();
    check_len(n, b_prev.len())?;
    for m in [w_curr, w_past] {
        check_len(n, m.rows())?;
        check_len(n, m.cols())?;
    }
    let mut z = w_curr.mul_vec(y);
    for (zi, p) in z.iter_mut().zip(w_past.mul_vec(b_prev)) {
        *zi += p;
    }
    Ok(z)
}

/// Softmax backward: `∂L/∂z = b ⊙ (g - b·g)`.
fn softmax_backward(b: &[f64], upstream: &[f64]) -> Vec<f64> {
    let bg = dot(b, upstream);
    b.iter().zip(upstream).map(|(bi, gi)| bi * (gi - bg)).collect()
}

fn one_step_gradients(
    y: &[f64],
    b_prev: &[f64],
    w_curr: &Matrix,
    w_past: &Matrix,
    upstream: &[f64],
) -> Result<UpdateGradients> {
    let n = y.len();
    check_len(n, upstream.len())?;
    let b = softmax(&one_step_logits(y, b_prev, w_curr, w_past)?);
    let gz = softmax_backward(&b, upstream);
    let mut gw_curr = Matrix::zeros(n, n);
    gw_curr.add_outer(1.0, &gz, y);
    let mut gw_past = Matrix::zeros(n, n);
    gw_past.add_outer(1.0, &gz, b_prev);
    Ok(UpdateGradients {
        params: ParamGradients::OneStep {
            w_curr: gw_curr,
            w_past: gw_past,
        },
        y: w_curr.transpose_mul_vec(&gz),
        b_prev: w_past.transpose_mul_vec(&gz),
    })
}

/// `M_ij = a` on the diagonal, `b` elsewhere.
pub fn build_constrained_matrix(a: f64, b: f64, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, if i == j { a } else { b });
        }
    }
    m
}

/// Closed form of the tied update, O(n):
/// `z_i = (a_c - b_c) y_i + b_c Σy + (a_p - b_p) b_i + b_p Σb`.
pub fn constrained_update(y: &[f64], b_prev: &[f64], p: &ConstrainedParams) -> Result<Vec<f64>> {
    Ok(softmax(&constrained_logits(y, b_prev, p)?))
}

fn constrained_logits(y: &[f64], b_prev: &[f64], p: &ConstrainedParams) -> Result<Vec<f64>> {
    check_len(y.len(), b_prev.len())?;
    let sy: f64 = y.iter().sum();
    let sb: f64 = b_prev.iter().sum();
    let (gc, gp) = (p.curr_gap(), p.past_gap());
    let shift = p.b_curr * sy + p.b_past * sb;
    Ok(y.iter().zip(b_prev).map(|(yi, bi)| gc * yi + gp * bi + shift).collect())
}

fn constrained_gradients(
    y: &[f64],
    b_prev: &[f64],
    p: &ConstrainedParams,
    upstream: &[f64],
) -> Result<UpdateGradients> {
    check_len(y.len(), upstream.len())?;
    let b = softmax(&constrained_logits(y, b_prev, p)?);
    let gz = softmax_backward(&b, upstream);
    let sy: f64 = y.iter().sum();
    let sb: f64 = b_prev.iter().sum();
    let sg: f64 = gz.iter().sum();
    let gy = dot(&gz, y);
    let gb = dot(&gz, b_prev);
    let params = ConstrainedParams {
        a_curr: gy,
        b_curr: sg * sy - gy,
        a_past: gb,
        b_past: sg * sb - gb,
    };
    Ok(UpdateGradients {
        params: ParamGradients::Constrained(params),
        y: gz.iter().map(|g| p.curr_gap() * g + p.b_curr * sg).collect(),
        b_prev: gz.iter().map(|g| p.past_gap() * g + p.b_past * sg).collect(),
    })
}

/// `σ(θ) y + (1 - σ(θ)) b_prev`, renormalized to sum to one.
pub fn learned_interpolation_update(y: &[f64], b_prev: &[f64], lambda_logit: f64) -> Result<Vec<f64>> {
    check_len(y.len(), b_prev.len())?;
    let lambda = sigmoid(lambda_logit);
    let mix: Vec<f64> = y
        .iter()
        .zip(b_prev)
        .map(|(yi, bi)| lambda * yi + (1.0 - lambda) * bi)
        .collect();
    let z: f64 = mix.iter().sum();
    Ok(mix.into_iter().map(|m| m / z).collect())
}

fn interpolation_gradients(y: &[f64], b_prev: &[f64], lambda_logit: f64, upstream: &[f64]) -> Result<UpdateGradients> {
    check_len(y.len(), b_prev.len())?;
    check_len(y.len(), upstream.len())?;
    let lambda = sigmoid(lambda_logit);
    let b = learned_interpolation_update(y, b_prev, lambda_logit)?;
    let sy: f64 = y.iter().sum();
    let sp: f64 = b_prev.iter().sum();
    let z = lambda * sy + (1.0 - lambda) * sp;
    let gb = dot(&b, upstream);
    // b_i = u_i / Z, so ∂L/∂u_j = (g_j - g·b) / Z.
    let gu: Vec<f64> = upstream.iter().map(|g| (g - gb) / z).collect();
    let g_lambda: f64 = gu
        .iter()
        .zip(y.iter().zip(b_prev))
        .map(|(g, (yi, pi))| g * (yi - pi))
        .sum();
    Ok(UpdateGradients {
        params: ParamGradients::LambdaLogit(g_lambda * lambda * (1.0 - lambda)),
        y: gu.iter().map(|g| lambda * g).collect(),
        b_prev: gu.iter().map(|g| (1.0 - lambda) * g).collect(),
    })
}
