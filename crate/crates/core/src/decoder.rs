//! Turn-level semantic decoder.
//!
//! A bag-of-embeddings utterance vector `r` interacts with each candidate
//! slot-value vector `c` through a bilinear gate:
//!
//! ```text
//! logit_v = w_out · (r ⊙ (W_sem c_v)) + bias_out + gate_v
//! y_v     = sigmoid(logit_v)
//! y_NONE  = sigmoid(none_bias)
//! ```
//!
//! `gate_v` adds `w_req_gate` when the system just requested the slot and
//! `w_conf_gate` when it just confirmed `v`. Requestable slots use the same
//! readout against `embed(slot) + embed("request")` with no gates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Turn;
use crate::embeddings::{EmbeddingError, VectorStore};
use crate::linalg::{add_assign, dot, sigmoid, Matrix};
use crate::ontology::{GoalLabel, Ontology, Slot, DONTCARE};

pub const REQUEST_TOKEN: &str = "request";

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("NONE is not a decodable candidate")]
    NoneCandidate,
    #[error("unknown requestable slot `{0}`")]
    UnknownRequestable(String),
    #[error("decoder parameters contain non-finite values")]
    NonFinite,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Ontology(#[from] crate::ontology::OntologyError),
}

pub type Result<T> = std::result::Result<T, DecoderError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub w_sem: Matrix,
    pub w_out: Vec<f64>,
    pub bias_out: f64,
    pub w_req_gate: f64,
    pub w_conf_gate: f64,
    pub none_bias: f64,
}

impl DecoderParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_sem: Matrix::zeros(dim, dim),
            w_out: vec![0.0; dim],
            bias_out: 0.0,
            w_req_gate: 0.0,
            w_conf_gate: 0.0,
            none_bias: 0.0,
        }
    }

    /// `W_sem = I`, `w_out` uniform in ±0.1, scalars zero.
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Self {
            w_sem: Matrix::identity(dim),
            w_out: (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect(),
            ..Self::zeros(dim)
        }
    }

    pub fn dim(&self) -> usize {
        self.w_out.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for found in [self.w_sem.rows(), self.w_sem.cols(), self.w_out.len()] {
            if found != dim {
                return Err(DecoderError::DimensionMismatch { expected: dim, found });
            }
        }
        let scalars = [self.bias_out, self.w_req_gate, self.w_conf_gate, self.none_bias];
        if !self.w_sem.all_finite() || !self.w_out.iter().chain(&scalars).all(|v| v.is_finite()) {
            return Err(DecoderError::NonFinite);
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let d = self.dim();
        d * d + d + 4
    }

    /// Appends parameters in a fixed order: `W_sem` (row-major), `w_out`, then
    /// `bias_out`, `w_req_gate`, `w_conf_gate`, `none_bias`.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_sem.as_slice());
        out.extend_from_slice(&self.w_out);
        out.extend([self.bias_out, self.w_req_gate, self.w_conf_gate, self.none_bias]);
    }

    /// Inverse of [`DecoderParams::write_flat`]; returns the number of scalars consumed.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let d = self.dim();
        let mut k = 0;
        self.w_sem.as_mut_slice().copy_from_slice(&src[k..k + d * d]);
        k += d * d;
        self.w_out.copy_from_slice(&src[k..k + d]);
        k += d;
        self.bias_out = src[k];
        self.w_req_gate = src[k + 1];
        self.w_conf_gate = src[k + 2];
        self.none_bias = src[k + 3];
        k + 4
    }
}

/// Sum of token embeddings; zero for an empty utterance.
pub fn utterance_repr<S: AsRef<str>>(store: &VectorStore, tokens: &[S]) -> Vec<f64> {
    let mut r = vec![0.0; store.dim()];
    for t in tokens {
        add_assign(&mut r, &store.embed_token(t.as_ref()));
    }
    r
}

/// `embed_phrase(slot name) + embed_phrase(value)`; `dontcare` uses its literal token.
pub fn candidate_repr(store: &VectorStore, slot: &Slot, label: &GoalLabel) -> Result<Vec<f64>> {
    let value_tokens: Vec<&str> = match label {
        GoalLabel::None => return Err(DecoderError::NoneCandidate),
        GoalLabel::DontCare => vec![DONTCARE],
        GoalLabel::Value(v) => v.split_whitespace().collect(),
    };
    slot.value_index(label)?;
    let slot_tokens: Vec<&str> = slot.name().split_whitespace().collect();
    let mut c = store.embed_phrase(&slot_tokens)?;
    add_assign(&mut c, &store.embed_phrase(&value_tokens)?);
    Ok(c)
}

pub fn request_repr(store: &VectorStore, slot_name: &str) -> Result<Vec<f64>> {
    let slot_tokens: Vec<&str> = slot_name.split_whitespace().collect();
    let mut c = store.embed_phrase(&slot_tokens)?;
    add_assign(&mut c, &store.embed_token(REQUEST_TOKEN));
    Ok(c)
}

/// Candidate vectors for every informable candidate and requestable slot of an ontology.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    dim: usize,
    /// Per slot: one vector per value, then `dontcare`.
    slots: Vec<Vec<Vec<f64>>>,
    requests: Vec<Vec<f64>>,
}

impl CandidateTable {
    pub fn build(store: &VectorStore, ontology: &Ontology) -> Result<Self> {
        let slots = ontology
            .informable()
            .iter()
            .map(|slot| {
                slot.labels()
                    .filter(|l| !l.is_none())
                    .map(|l| candidate_repr(store, slot, &l))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let requests = ontology
            .requestable()
            .iter()
            .map(|r| request_repr(store, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: store.dim(),
            slots,
            requests,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies `W_sem` to every candidate. Valid until the parameters change.
    pub fn project(&self, params: &DecoderParams) -> Projected {
        let proj = |c: &Vec<f64>| params.w_sem.mul_vec(c);
        Projected {
            slots: self.slots.iter().map(|cs| cs.iter().map(proj).collect()).collect(),
            requests: self.requests.iter().map(proj).collect(),
        }
    }

    pub fn slot_candidates(&self, slot_pos: usize) -> &[Vec<f64>] {
        &self.slots[slot_pos]
    }

    pub fn request_candidate(&self, req_pos: usize) -> &[f64] {
        &self.requests[req_pos]
    }
}

/// Candidates after multiplication by `W_sem`.
#[derive(Debug, Clone)]
pub struct Projected {
    slots: Vec<Vec<Vec<f64>>>,
    requests: Vec<Vec<f64>>,
}

/// Per-candidate logit gates from the preceding system acts.
pub fn candidate_gates(params: &DecoderParams, turn: &Turn, slot: &Slot) -> Vec<f64> {
    let req = if turn.has_request_act(slot.name()) {
        params.w_req_gate
    } else {
        0.0
    };
    slot.labels()
        .filter(|l| !l.is_none())
        .map(|l| {
            if turn.has_confirm_act(slot.name(), &l) {
                req + params.w_conf_gate
            } else {
                req
            }
        })
        .collect()
}

/// Logits for the `|V_s| + 1` non-NONE candidates of one slot. `r` may carry dropout.
pub fn slot_logits(
    params: &DecoderParams,
    projected: &Projected,
    r: &[f64],
    turn: &Turn,
    slot_pos: usize,
    slot: &Slot,
) -> Vec<f64> {
    let q: Vec<f64> = params.w_out.iter().zip(r).map(|(w, x)| w * x).collect();
    projected.slots[slot_pos]
        .iter()
        .zip(candidate_gates(params, turn, slot))
        .map(|(u, gate)| dot(&q, u) + params.bias_out + gate)
        .collect()
}

/// Full turn estimate `y` of length `|V_s| + 2`.
pub fn slot_estimate(
    params: &DecoderParams,
    projected: &Projected,
    r: &[f64],
    turn: &Turn,
    slot_pos: usize,
    slot: &Slot,
) -> Vec<f64> {
    let mut y: Vec<f64> = slot_logits(params, projected, r, turn, slot_pos, slot)
        .into_iter()
        .map(sigmoid)
        .collect();
    y.push(sigmoid(params.none_bias));
    y
}

pub fn request_logit(params: &DecoderParams, projected: &Projected, r: &[f64], req_pos: usize) -> f64 {
    let q: Vec<f64> = params.w_out.iter().zip(r).map(|(w, x)| w * x).collect();
    dot(&q, &projected.requests[req_pos]) + params.bias_out
}

/// Decodes one slot of one turn from scratch.
pub fn decode_turn(
    params: &DecoderParams,
    store: &VectorStore,
    turn: &Turn,
    ontology: &Ontology,
    slot_pos: usize,
) -> Result<Vec<f64>> {
    params.validate(store.dim())?;
    let slot = &ontology.informable()[slot_pos];
    let r = utterance_repr(store, turn.user_tokens());
    let q: Vec<f64> = params.w_out.iter().zip(&r).map(|(w, x)| w * x).collect();
    let gates = candidate_gates(params, turn, slot);
    let mut y = Vec::with_capacity(slot.dim());
    for (label, gate) in slot.labels().filter(|l| !l.is_none()).zip(gates) {
        let u = params.w_sem.mul_vec(&candidate_repr(store, slot, &label)?);
        y.push(sigmoid(dot(&q, &u) + params.bias_out + gate));
    }
    y.push(sigmoid(params.none_bias));
    Ok(y)
}

/// Probability that the user requested `slot_name` this turn.
pub fn decode_request(
    params: &DecoderParams,
    store: &VectorStore,
    turn: &Turn,
    ontology: &Ontology,
    slot_name: &str,
) -> Result<f64> {
    params.validate(store.dim())?;
    if !ontology.is_requestable(slot_name) {
        return Err(DecoderError::UnknownRequestable(slot_name.to_string()));
    }
    let r = utterance_repr(store, turn.user_tokens());
    let u = params.w_sem.mul_vec(&request_repr(store, slot_name)?);
    let q: Vec<f64> = params.w_out.iter().zip(&r).map(|(w, x)| w * x).collect();
    Ok(sigmoid(dot(&q, &u) + params.bias_out))
}

/// Accumulates parameter gradients from upstream gradients on the slot logits.
///
/// `g_logits` covers the `|V_s| + 1` non-NONE candidates; `g_none` is the
/// gradient on the NONE logit (`none_bias`).
#[allow(clippy::too_many_arguments)]
pub fn backward_slot(
    params: &DecoderParams,
    table: &CandidateTable,
    projected: &Projected,
    r: &[f64],
    turn: &Turn,
    slot_pos: usize,
    slot: &Slot,
    g_logits: &[f64],
    g_none: f64,
    grads: &mut DecoderParams,
) {
    let total: f64 = g_logits.iter().sum();
    grads.bias_out += total;
    grads.none_bias += g_none;
    if turn.has_request_act(slot.name()) {
        grads.w_req_gate += total;
    }
    for (label, g) in slot.labels().filter(|l| !l.is_none()).zip(g_logits) {
        if turn.has_confirm_act(slot.name(), &label) {
            grads.w_conf_gate += g;
        }
    }
    let d = r.len();
    let mut sum_u = vec![0.0; d];
    let mut sum_c = vec![0.0; d];
    for ((u, c), &g) in projected.slots[slot_pos]
        .iter()
        .zip(table.slot_candidates(slot_pos))
        .zip(g_logits)
    {
        for k in 0..d {
            sum_u[k] += g * u[k];
            sum_c[k] += g * c[k];
        }
    }
    readout_backward(params, r, &sum_u, &sum_c, grads);
}

pub fn backward_request(
    params: &DecoderParams,
    table: &CandidateTable,
    projected: &Projected,
    r: &[f64],
    req_pos: usize,
    g_logit: f64,
    grads: &mut DecoderParams,
) {
    grads.bias_out += g_logit;
    let sum_u: Vec<f64> = projected.requests[req_pos].iter().map(|u| g_logit * u).collect();
    let sum_c: Vec<f64> = table.request_candidate(req_pos).iter().map(|c| g_logit * c).collect();
    readout_backward(params, r, &sum_u, &sum_c, grads);
}

/// Shared tail: `∂w_out = r ⊙ Σ g u`, `∂W_sem = (w_out ⊙ r) (Σ g c)ᵀ`.
fn readout_backward(params: &DecoderParams, r: &[f64], sum_u: &[f64], sum_c: &[f64], grads: &mut DecoderParams) {
    for ((gw, x), su) in grads.w_out.iter_mut().zip(r).zip(sum_u) {
        *gw += x * su;
    }
    let q: Vec<f64> = params.w_out.iter().zip(r).map(|(w, x)| w * x).collect();
    grads.w_sem.add_outer(1.0, &q, sum_c);
}
