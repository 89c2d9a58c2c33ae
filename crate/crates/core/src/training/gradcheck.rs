//! Central finite-difference check of every trainable scalar.

use serde::Serialize;

use super::{loss_and_grad, mean_loss, Example, PreparedCorpus, Result};
use crate::decoder::CandidateTable;
use crate::model::Model;
use crate::update::UpdateMechanism;

/// Denominator floor for the relative error, so that gradients that are zero
/// on both sides do not divide by zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub num_examples: usize,
    pub eps: f64,
    pub max_relative_error: f64,
    /// The worst parameter, absent when the model has none.
    pub worst: Option<ParamCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Human-readable name of flat parameter `index`.
pub fn param_name(model: &Model, index: usize) -> String {
    let d = model.dim();
    let mut i = index;
    if i < d * d {
        return format!("decoder.w_sem[{}][{}]", i / d, i % d);
    }
    i -= d * d;
    if i < d {
        return format!("decoder.w_out[{i}]");
    }
    i -= d;
    let scalars = [
        "decoder.bias_out",
        "decoder.w_req_gate",
        "decoder.w_conf_gate",
        "decoder.none_bias",
    ];
    if i < scalars.len() {
        return scalars[i].to_string();
    }
    i -= scalars.len();
    match &model.mechanism {
        UpdateMechanism::RuleBased { .. } => format!("param[{index}]"),
        UpdateMechanism::LearnedInterpolation { .. } => "update.lambda_logit".to_string(),
        UpdateMechanism::Constrained(_) => {
            ["update.a_curr", "update.b_curr", "update.a_past", "update.b_past"][i.min(3)].to_string()
        }
        UpdateMechanism::OneStep { slots } => {
            for (s, p) in slots.iter().enumerate() {
                let n = p.dim();
                let slot = model.ontology.informable()[s].name();
                for which in ["w_curr", "w_past"] {
                    if i < n * n {
                        return format!("update.{slot}.{which}[{}][{}]", i / n, i % n);
                    }
                    i -= n * n;
                }
            }
            format!("param[{index}]")
        }
    }
}

/// Compares the analytic gradient of the mean loss over `examples` against
/// central differences with step `eps`, for every trainable scalar.
pub fn grad_check(
    model: &Model,
    table: &CandidateTable,
    corpus: &PreparedCorpus<'_>,
    examples: &[Example],
    eps: f64,
) -> Result<GradCheckReport> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let (_, analytic) = loss_and_grad(model, table, corpus, examples)?;
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut worst: Option<ParamCheck> = None;
    for (i, &a) in analytic.iter().enumerate() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + eps;
        probe.set_flat(&shifted);
        let up = mean_loss(&probe, table, corpus, examples)?;
        shifted[i] = base[i] - eps;
        probe.set_flat(&shifted);
        let down = mean_loss(&probe, table, corpus, examples)?;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(a, numeric);
        if worst.as_ref().is_none_or(|w| err > w.relative_error) {
            worst = Some(ParamCheck {
                index: i,
                name: param_name(model, i),
                analytic: a,
                numeric,
                relative_error: err,
            });
        }
    }
    Ok(GradCheckReport {
        num_params: analytic.len(),
        num_examples: examples.len(),
        eps,
        max_relative_error: worst.as_ref().map_or(0.0, |w| w.relative_error),
        worst,
    })
}
