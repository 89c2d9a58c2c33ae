//! Oracles and fixtures shared by the integration tests. Everything here is
//! written from the defining formulas, independently of the library code.
#![allow(dead_code)]

use dst_core::corpus::{Dialogue, TurnInput};
use dst_core::{GoalLabel, Ontology, VectorStore};
use rand::Rng;

pub fn softmax_ref(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Constrained update through explicit matrices built element by element.
pub fn constrained_ref(y: &[f64], b: &[f64], a_c: f64, b_c: f64, a_p: f64, b_p: f64) -> Vec<f64> {
    let n = y.len();
    let z: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let wc = if i == j { a_c } else { b_c };
                    let wp = if i == j { a_p } else { b_p };
                    wc * y[j] + wp * b[j]
                })
                .sum()
        })
        .collect();
    softmax_ref(&z)
}

pub fn one_step_ref(y: &[f64], b: &[f64], wc: &[Vec<f64>], wp: &[Vec<f64>]) -> Vec<f64> {
    let z: Vec<f64> = (0..y.len())
        .map(|i| (0..y.len()).map(|j| wc[i][j] * y[j] + wp[i][j] * b[j]).sum())
        .collect();
    softmax_ref(&z)
}

/// Posterior over the final state by summing the joint over every state path.
pub fn brute_force_filter(prior: &[f64], t: &[Vec<f64>], likelihoods: &[Vec<f64>]) -> Vec<f64> {
    let n = prior.len();
    let k = likelihoods.len();
    let mut marginal = vec![0.0; n];
    // path = (x0, x1, ..., xk); x0 is the prior state, x1..xk are observed.
    let total_paths = n.pow(k as u32 + 1);
    for code in 0..total_paths {
        let mut path = Vec::with_capacity(k + 1);
        let mut c = code;
        for _ in 0..=k {
            path.push(c % n);
            c /= n;
        }
        let mut p = prior[path[0]];
        for step in 1..=k {
            p *= t[path[step - 1]][path[step]] * likelihoods[step - 1][path[step]];
        }
        marginal[path[k]] += p;
    }
    let z: f64 = marginal.iter().sum();
    marginal.into_iter().map(|v| v / z).collect()
}

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn benchmark_ontology() -> Ontology {
    Ontology::from_json_str(
        r#"{"informable":{"food":["indian","chinese","italian","thai","french"],
            "area":["north","south","east","west","centre"]},
            "requestable":["phone","address"]}"#,
    )
    .unwrap()
}

/// One orthonormal basis vector per token.
pub fn one_hot_store(vocab: &[String]) -> VectorStore {
    let d = vocab.len();
    VectorStore::from_entries(
        d,
        0,
        vocab.iter().enumerate().map(|(i, w)| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            (w.clone(), v)
        }),
    )
    .unwrap()
}

pub fn turn(text: &str, labels: &[(&str, &str)], requests: &[&str]) -> TurnInput {
    TurnInput {
        tokens: dst_core::tokenize(text),
        system_acts: vec![],
        goal_labels: labels
            .iter()
            .map(|(s, v)| (s.to_string(), GoalLabel::parse(v)))
            .collect(),
        requests: requests.iter().map(|r| r.to_string()).collect(),
    }
}

pub fn dialogue(id: &str, o: &Ontology, turns: Vec<TurnInput>) -> Dialogue {
    Dialogue::build(id, o, turns).unwrap()
}
