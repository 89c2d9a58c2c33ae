//! Fixtures shared by the criterion benchmarks in `benches/`.

use dst_core::synth::{generate_dialogues, vocabulary, write_random_vectors, SynthDynamics};
use dst_core::{Dialogue, Ontology, VectorStore};

/// Two slots with five values each and two requestables.
pub fn ontology() -> Ontology {
    Ontology::from_json_str(
        r#"{"informable":{"food":["indian","chinese","italian","thai","french"],
            "area":["north","south","east","west","centre"]},
            "requestable":["phone","address"]}"#,
    )
    .expect("fixture ontology")
}

/// A seeded corpus of `n` six-turn dialogues with random `dim`-d vectors.
pub fn corpus(n: usize, dim: usize) -> (Ontology, Vec<Dialogue>, VectorStore) {
    let o = ontology();
    let dynamics = SynthDynamics {
        request_prob: 0.2,
        seed: 7,
        ..Default::default()
    };
    let dialogues = generate_dialogues(&o, &dynamics, n, 6).expect("fixture corpus");
    let mut buf = Vec::new();
    write_random_vectors(&mut buf, &vocabulary(&o, &dynamics), dim, 1).expect("in-memory write");
    let store = VectorStore::load(buf.as_slice(), Some(dim), 0).expect("fixture vectors");
    (o, dialogues, store)
}
