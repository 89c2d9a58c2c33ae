mod common;

use common::{benchmark_ontology, dialogue, one_hot_store, turn};
use dst_core::corpus::{gold_state_vector, load_woz, write_woz, SystemAct};
use dst_core::decoder::{slot_logits, utterance_repr, CandidateTable, DecoderParams};
use dst_core::eval::{joint_goal_accuracy, slot_accuracy, Tracker};
use dst_core::linalg::{l2_norm, Matrix};
use dst_core::synth::{generate_dialogues, hmm_forward_filter, vocabulary, SynthDynamics};
use dst_core::training::{
    clip_global_norm, enumerate_examples, loss_and_grad, turn_loss, Example, PreparedCorpus, Target,
};
use dst_core::{ConstrainedParams, MechanismKind, Model, Ontology, UpdateMechanism, VectorStore};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synth_corpus(seed: u64, n: usize, turns: usize) -> (Ontology, Vec<dst_core::Dialogue>) {
    let o = benchmark_ontology();
    let dynamics = SynthDynamics {
        seed,
        request_prob: 0.2,
        ..Default::default()
    };
    let ds = generate_dialogues(&o, &dynamics, n, turns).unwrap();
    (o, ds)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_index_round_trips(values in prop::collection::btree_set("[a-z]{1,6}", 1..8)) {
        let values: Vec<String> = values.into_iter().filter(|v| v != "none" && v != "dontcare").collect();
        prop_assume!(!values.is_empty());
        let slot = dst_core::Slot::new("s", &values).unwrap();
        for i in 0..slot.dim() {
            prop_assert_eq!(slot.value_index(&slot.label_at(i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn embed_token_is_finite_and_phrase_is_order_free(tokens in prop::collection::vec("[a-z]{1,8}", 1..6), seed: u64) {
        let store = VectorStore::from_entries(6, seed, [("alpha", vec![0.5, -1.0, 2.0, 0.0, 1e-3, 7.0])]).unwrap();
        for t in &tokens {
            prop_assert!(store.embed_token(t).iter().all(|v| v.is_finite()));
        }
        let fwd = store.embed_phrase(&tokens).unwrap();
        let rev: Vec<String> = tokens.iter().rev().cloned().collect();
        let back = store.embed_phrase(&rev).unwrap();
        for (a, b) in fwd.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gold_states_change_only_where_labelled(seed in 0u64..500) {
        let (o, ds) = synth_corpus(seed, 5, 6);
        for d in &ds {
            for (pos, slot) in o.informable().iter().enumerate() {
                for w in d.turns().windows(2) {
                    let changed = gold_state_vector(&w[0], pos, slot) != gold_state_vector(&w[1], pos, slot);
                    if changed {
                        prop_assert!(w[1].turn_goal_labels().contains_key(slot.name()));
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_round_trips_through_json(seed in 0u64..500) {
        let (o, ds) = synth_corpus(seed, 4, 5);
        let mut buf = Vec::new();
        write_woz(&ds, &o, &mut buf).unwrap();
        prop_assert_eq!(load_woz(buf.as_slice(), &o).unwrap(), ds);
    }

    #[test]
    fn decoder_outputs_stay_in_the_open_unit_interval(seed: u64, scale in 0.0f64..3.0) {
        let (o, ds) = synth_corpus(seed % 100, 2, 3);
        let store = VectorStore::empty(8, seed).unwrap();
        let mut m = Model::init(&o, &store, MechanismKind::Constrained, seed);
        m.decoder.w_out.iter_mut().for_each(|w| *w *= scale);
        let tracker = Tracker::new(&m, &store).unwrap();
        for t in ds.iter().flat_map(|d| d.turns()) {
            for y in tracker.estimates(t).slots {
                prop_assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn clipping_bounds_the_norm(g in prop::collection::vec(-1e3f64..1e3, 1..50), max in 1e-3f64..10.0) {
        let mut g = g;
        clip_global_norm(&mut g, max);
        prop_assert!(l2_norm(&g) <= max + 1e-9);
    }

    #[test]
    fn turn_loss_is_non_negative(b in prop::collection::vec(0.0f64..1.0, 2..10), idx in 0usize..10) {
        let idx = idx % b.len();
        let mut gold = vec![0.0; b.len()];
        gold[idx] = 1.0;
        let s: f64 = b.iter().sum::<f64>().max(1e-9);
        let b: Vec<f64> = b.iter().map(|v| v / s).collect();
        prop_assert!(turn_loss(&b, &gold) >= 0.0);
    }

    #[test]
    fn filter_output_is_a_distribution(
        (prior, t, l) in (2usize..=6).prop_flat_map(|n| (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n),
            prop::collection::vec(0.0f64..3.0, n),
        ))
    ) {
        prop_assume!(l.iter().any(|&x| x > 0.0));
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let prior = norm(&prior);
        let rows: Vec<Vec<f64>> = t.iter().map(|r| norm(r)).collect();
        let post = hmm_forward_filter(&prior, &Matrix::from_rows(&rows).unwrap(), &l).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(post.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn metrics_ignore_dialogue_order(seed in 0u64..200, rotate in 0usize..10) {
        let (o, ds) = synth_corpus(seed, 10, 4);
        let store = VectorStore::empty(6, 1).unwrap();
        let m = Model::init(&o, &store, MechanismKind::Rule, seed);
        let tracker = Tracker::new(&m, &store).unwrap();
        let preds: Vec<_> = ds.iter().map(|d| tracker.track_dialogue(d)).collect();
        let mut ds2 = ds.clone();
        let mut preds2 = preds.clone();
        ds2.rotate_left(rotate);
        preds2.rotate_left(rotate);
        prop_assert_eq!(joint_goal_accuracy(&preds, &ds), joint_goal_accuracy(&preds2, &ds2));
        let joint = joint_goal_accuracy(&preds, &ds);
        let min_slot = slot_accuracy(&preds, &ds, 2).into_iter().fold(1.0, f64::min);
        prop_assert!(joint <= min_slot + 1e-15);
    }
}

#[test]
fn appending_a_value_leaves_existing_scores_unchanged() {
    let small = Ontology::from_json_str(r#"{"informable":{"food":["indian","chinese"]}}"#).unwrap();
    let big = Ontology::from_json_str(r#"{"informable":{"food":["indian","chinese","korean"]}}"#).unwrap();
    let store = VectorStore::empty(5, 3).unwrap();
    let params = DecoderParams::init(5, &mut ChaCha8Rng::seed_from_u64(2));
    let d = dialogue(
        "0",
        &small,
        vec![turn("i want indian food", &[("food", "indian")], &[])],
    );
    let t = &d.turns()[0];
    let r = utterance_repr(&store, t.user_tokens());
    let score = |o: &Ontology| {
        let table = CandidateTable::build(&store, o).unwrap();
        slot_logits(&params, &table.project(&params), &r, t, 0, &o.informable()[0])
    };
    let (a, b) = (score(&small), score(&big));
    assert_eq!(a[..2], b[..2]);
    // dontcare sits after the values in both
    assert_eq!(a[2], b[3]);
}

#[test]
fn request_act_shifts_every_candidate_logit_by_the_gate() {
    let o = benchmark_ontology();
    let store = VectorStore::empty(4, 3).unwrap();
    let mut params = DecoderParams::init(4, &mut ChaCha8Rng::seed_from_u64(9));
    params.w_req_gate = 0.37;
    let plain = dialogue("0", &o, vec![turn("i want thai", &[], &[])]);
    let mut with = turn("i want thai", &[], &[]);
    with.system_acts = vec![SystemAct::Request { slot: "food".into() }];
    let asked = dialogue("1", &o, vec![with]);
    let table = CandidateTable::build(&store, &o).unwrap();
    let proj = table.project(&params);
    let r = utterance_repr(&store, plain.turns()[0].user_tokens());
    let slot = &o.informable()[0];
    let a = slot_logits(&params, &proj, &r, &plain.turns()[0], 0, slot);
    let b = slot_logits(&params, &proj, &r, &asked.turns()[0], 0, slot);
    for (x, y) in a.iter().zip(&b) {
        assert!((y - x - 0.37).abs() < 1e-12);
    }
    // the other slot is untouched
    let slot = &o.informable()[1];
    assert_eq!(
        slot_logits(&params, &proj, &r, &plain.turns()[0], 1, slot),
        slot_logits(&params, &proj, &r, &asked.turns()[0], 1, slot)
    );
}

#[test]
fn turn_gradients_ignore_earlier_turns() {
    let o = benchmark_ontology();
    let store = VectorStore::empty(6, 5).unwrap();
    let m = Model::init(&o, &store, MechanismKind::Constrained, 3);
    let labels: &[(&str, &str)] = &[("food", "thai")];
    let build = |first: &str| {
        vec![dialogue(
            "0",
            &o,
            vec![
                turn(first, &[("area", "north")], &[]),
                turn("i want thai please", labels, &[]),
                turn("okay so north", &[("area", "north")], &[]),
            ],
        )]
    };
    let a = build("hello there");
    let b = build("completely different words here");
    let table = CandidateTable::build(&store, &o).unwrap();
    let examples: Vec<Example> = (0..2)
        .map(|s| Example {
            dialogue: 0,
            turn: 2,
            target: Target::Slot(s),
        })
        .collect();
    let (la, ga) = loss_and_grad(&m, &table, &PreparedCorpus::new(&a, &store), &examples).unwrap();
    let (lb, gb) = loss_and_grad(&m, &table, &PreparedCorpus::new(&b, &store), &examples).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ga, gb);
    // whereas the turn itself matters
    let all = enumerate_examples(&a, &o);
    assert_eq!(all.len(), 3 * 4);
}

#[test]
fn rule_with_lambda_one_is_turn_level_with_carry_over() {
    let (o, ds) = synth_corpus(4, 20, 6);
    let store = VectorStore::empty(8, 2).unwrap();
    let mut m = Model::init(&o, &store, MechanismKind::Rule, 1);
    m.mechanism = UpdateMechanism::RuleBased { lambda: 1.0 };
    let tracker = Tracker::new(&m, &store).unwrap();
    for d in &ds {
        let preds = tracker.track_dialogue(d);
        let mut prev = vec![dst_core::GoalLabel::None; 2];
        for (t, p) in d.turns().iter().zip(&preds) {
            let est = tracker.estimates(t);
            for (pos, slot) in o.informable().iter().enumerate() {
                assert_eq!(p.beliefs[pos], est.slots[pos]);
                let expect = dst_core::update::decide_goal(&est.slots[pos], &prev[pos], slot);
                assert_eq!(p.goals[pos], expect);
                prev[pos] = expect;
            }
        }
    }
}

#[test]
fn hand_set_constrained_model_is_perfect_on_clean_data() {
    let o = benchmark_ontology();
    let dynamics = SynthDynamics {
        goal_change_prob: 0.0,
        mention_prob: 1.0,
        seed: 21,
        ..Default::default()
    };
    let ds = generate_dialogues(&o, &dynamics, 50, 6).unwrap();
    let vocab = vocabulary(&o, &dynamics);
    let store = one_hot_store(&vocab);
    let mut m = Model::init(&o, &store, MechanismKind::Constrained, 0);
    // With orthonormal vectors r·c counts the slot and value tokens in the utterance.
    let k = 20.0;
    m.decoder = DecoderParams::zeros(store.dim());
    m.decoder.w_sem = Matrix::identity(store.dim());
    m.decoder.w_out = vec![k; store.dim()];
    m.decoder.bias_out = -0.5 * k;
    m.decoder.none_bias = -k;
    m.mechanism = UpdateMechanism::Constrained(ConstrainedParams {
        a_curr: 10.0,
        b_curr: 0.0,
        a_past: 3.0,
        b_past: 0.0,
    });
    let report = dst_core::evaluate(&m, &store, &ds, 1).unwrap();
    assert_eq!(report.joint_goal_accuracy, 1.0);
}
