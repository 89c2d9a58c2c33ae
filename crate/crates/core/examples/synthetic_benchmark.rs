//! Trains every mechanism on a seeded synthetic benchmark and prints test joint accuracy.
//!
//! Usage: cargo run --release -p dst-core --example synthetic_benchmark -- [epochs] [seeds] [dim]

use std::time::Instant;

use dst_core::eval::{compare_mechanisms, Splits};
use dst_core::synth::{generate_dialogues, vocabulary, write_random_vectors, SynthDynamics};
use dst_core::{MechanismKind, Ontology, TrainConfig, VectorStore};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let epochs = args.first().copied().unwrap_or(30);
    let n_seeds = args.get(1).copied().unwrap_or(2);
    let dim = args.get(2).copied().unwrap_or(32);
    let ontology = Ontology::from_json_str(
        r#"{"informable":{"food":["indian","chinese","italian","thai","french"],
            "area":["north","south","east","west","centre"]},"requestable":["phone","address"]}"#,
    )
    .unwrap();
    let dynamics = SynthDynamics {
        goal_change_prob: 0.2,
        mention_prob: 0.8,
        request_prob: 0.2,
        seed: 7,
        ..Default::default()
    };
    let all = generate_dialogues(&ontology, &dynamics, 700, 6).unwrap();
    let (train, rest) = all.split_at(500);
    let (validation, test) = rest.split_at(100);
    let mut buf = Vec::new();
    write_random_vectors(&mut buf, &vocabulary(&ontology, &dynamics), dim, 1).unwrap();
    let store = VectorStore::load(buf.as_slice(), Some(dim), 0).unwrap();
    let lr: f64 = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = std::env::var("BATCH").map(|v| v.parse().unwrap()).unwrap_or(256);
    let dropout: f64 = std::env::var("DROPOUT").map(|v| v.parse().unwrap()).unwrap_or(0.5);
    let base = TrainConfig {
        epochs,
        learning_rate: lr,
        batch_size: batch,
        dropout_rate: dropout,
        ..Default::default()
    };
    if std::env::var("SHOW_LAMBDA").is_ok() {
        let config = TrainConfig {
            mechanism: MechanismKind::Interp,
            ..base.clone()
        };
        let out = dst_core::train(train, validation, &ontology, &store, &config).unwrap();
        if let dst_core::UpdateMechanism::LearnedInterpolation { lambda_logit } = out.model.mechanism {
            println!("learned lambda {:.4}", 1.0 / (1.0 + (-lambda_logit).exp()));
        }
        return;
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    for kind in MechanismKind::ALL {
        let start = Instant::now();
        let rows = compare_mechanisms(
            &Splits {
                train,
                validation,
                test,
            },
            &ontology,
            &store,
            &base,
            &[kind],
            &seeds,
        )
        .unwrap();
        println!(
            "{}  {:.1}s",
            serde_json::to_string(&rows[0]).unwrap(),
            start.elapsed().as_secs_f64()
        );
    }
}
