//! Dialogue corpora in the WOZ 2.0 JSON layout.
//!
//! Gold goal states are cumulative: the state at turn `t` is the state at `t-1`
//! overridden by the labels asserted in turn `t`. Requests are per turn only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ontology::{normalize, GoalLabel, Ontology, Slot};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dialogue {dialogue}, turn {turn}: label `{slot}={label}` is not in the ontology")]
    LabelNotInOntology {
        dialogue: String,
        turn: usize,
        slot: String,
        label: String,
    },
    #[error("dialogue {dialogue}, turn {turn}: malformed system act {act}")]
    MalformedAct { dialogue: String, turn: usize, act: String },
    #[error("dialogue {0} has no turns")]
    EmptyDialogue(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Preceding system act. Only requests and confirmations are modelled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SystemAct {
    Request { slot: String },
    Confirm { slot: String, value: GoalLabel },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    user_tokens: Vec<String>,
    system_acts: Vec<SystemAct>,
    turn_goal_labels: BTreeMap<String, GoalLabel>,
    gold_goal_state: Vec<GoalLabel>,
    gold_requests: BTreeSet<String>,
}

impl Turn {
    pub fn user_tokens(&self) -> &[String] {
        &self.user_tokens
    }

    pub fn system_acts(&self) -> &[SystemAct] {
        &self.system_acts
    }

    /// Labels asserted this turn, keyed by slot name.
    pub fn turn_goal_labels(&self) -> &BTreeMap<String, GoalLabel> {
        &self.turn_goal_labels
    }

    /// Cumulative gold goal per informable slot, in ontology order.
    pub fn gold_goal_state(&self) -> &[GoalLabel] {
        &self.gold_goal_state
    }

    pub fn gold_goal(&self, slot_pos: usize) -> &GoalLabel {
        &self.gold_goal_state[slot_pos]
    }

    pub fn gold_requests(&self) -> &BTreeSet<String> {
        &self.gold_requests
    }

    pub fn has_request_act(&self, slot: &str) -> bool {
        self.system_acts
            .iter()
            .any(|a| matches!(a, SystemAct::Request { slot: s } if s == slot))
    }

    pub fn has_confirm_act(&self, slot: &str, value: &GoalLabel) -> bool {
        self.system_acts
            .iter()
            .any(|a| matches!(a, SystemAct::Confirm { slot: s, value: v } if s == slot && v == value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    id: String,
    turns: Vec<Turn>,
}

impl Dialogue {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }
}

/// One turn's raw content before cumulative states are resolved.
#[derive(Debug, Clone, Default)]
pub struct TurnInput {
    pub tokens: Vec<String>,
    pub system_acts: Vec<SystemAct>,
    pub goal_labels: Vec<(String, GoalLabel)>,
    pub requests: Vec<String>,
}

impl Dialogue {
    /// Validates turn inputs against the ontology and resolves cumulative gold states.
    pub fn build(id: impl Into<String>, ontology: &Ontology, inputs: Vec<TurnInput>) -> Result<Self> {
        let id = id.into();
        if inputs.is_empty() {
            return Err(CorpusError::EmptyDialogue(id));
        }
        let mut state = vec![GoalLabel::None; ontology.informable().len()];
        let mut turns = Vec::with_capacity(inputs.len());
        for (t, input) in inputs.into_iter().enumerate() {
            let not_in = |slot: &str, label: &str| CorpusError::LabelNotInOntology {
                dialogue: id.clone(),
                turn: t,
                slot: slot.to_string(),
                label: label.to_string(),
            };
            let mut labels = BTreeMap::new();
            for (slot, label) in input.goal_labels {
                let slot = normalize(&slot);
                let pos = ontology
                    .slot_position(&slot)
                    .ok_or_else(|| not_in(&slot, label.as_str()))?;
                ontology.informable()[pos]
                    .value_index(&label)
                    .map_err(|_| not_in(&slot, label.as_str()))?;
                state[pos] = label.clone();
                labels.insert(slot, label);
            }
            let mut requests = BTreeSet::new();
            for r in input.requests {
                let r = normalize(&r);
                if !ontology.is_requestable(&r) {
                    return Err(not_in("request", &r));
                }
                requests.insert(r);
            }
            let mut acts = Vec::with_capacity(input.system_acts.len());
            for act in input.system_acts {
                let act = match act {
                    SystemAct::Request { slot } => {
                        let slot = normalize(&slot);
                        if ontology.slot(&slot).is_none() && !ontology.is_requestable(&slot) {
                            return Err(not_in(&slot, "request"));
                        }
                        SystemAct::Request { slot }
                    }
                    SystemAct::Confirm { slot, value } => {
                        let slot = normalize(&slot);
                        let s = ontology.slot(&slot).ok_or_else(|| not_in(&slot, value.as_str()))?;
                        if value.is_none() || s.value_index(&value).is_err() {
                            return Err(not_in(&slot, value.as_str()));
                        }
                        SystemAct::Confirm { slot, value }
                    }
                };
                acts.push(act);
            }
            turns.push(Turn {
                user_tokens: input.tokens,
                system_acts: acts,
                turn_goal_labels: labels,
                gold_goal_state: state.clone(),
                gold_requests: requests,
            });
        }
        Ok(Self { id, turns })
    }
}

/// Lowercases, strips ASCII punctuation, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// One-hot vector on the gold label of `slot` at this turn.
pub fn gold_state_vector(turn: &Turn, slot_pos: usize, slot: &Slot) -> Vec<f64> {
    let idx = slot
        .value_index(turn.gold_goal(slot_pos))
        .expect("gold labels are validated on load");
    one_hot(slot.dim(), idx)
}

/// Initial belief: all mass on NONE.
pub fn initial_state_vector(slot: &Slot) -> Vec<f64> {
    one_hot(slot.dim(), slot.none_index())
}

pub(crate) fn one_hot(n: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[idx] = 1.0;
    v
}

#[derive(Deserialize)]
struct RawDialogue {
    dialogue_idx: serde_json::Value,
    dialogue: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    transcript: String,
    #[serde(default)]
    system_acts: Vec<serde_json::Value>,
    #[serde(default)]
    turn_label: Vec<(String, String)>,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads a WOZ-shaped JSON corpus.
pub fn load_woz<R: Read>(source: R, ontology: &Ontology) -> Result<Vec<Dialogue>> {
    let raw: Vec<RawDialogue> = serde_json::from_reader(source).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .map(|d| {
            let id = id_string(&d.dialogue_idx);
            let inputs = d
                .dialogue
                .into_iter()
                .enumerate()
                .map(|(t, turn)| raw_turn_input(&id, t, turn))
                .collect::<Result<Vec<_>>>()?;
            Dialogue::build(id, ontology, inputs)
        })
        .collect()
}

fn raw_turn_input(id: &str, t: usize, turn: RawTurn) -> Result<TurnInput> {
    let mut input = TurnInput {
        tokens: tokenize(&turn.transcript),
        ..TurnInput::default()
    };
    for act in turn.system_acts {
        let malformed = || CorpusError::MalformedAct {
            dialogue: id.to_string(),
            turn: t,
            act: act.to_string(),
        };
        let parsed = match &act {
            serde_json::Value::String(slot) => SystemAct::Request { slot: slot.clone() },
            serde_json::Value::Array(pair) => match pair.as_slice() {
                [serde_json::Value::String(slot), serde_json::Value::String(value)] => SystemAct::Confirm {
                    slot: slot.clone(),
                    value: GoalLabel::parse(value),
                },
                _ => return Err(malformed()),
            },
            _ => return Err(malformed()),
        };
        input.system_acts.push(parsed);
    }
    for (slot, value) in turn.turn_label {
        if normalize(&slot) == "request" {
            input.requests.push(value);
        } else {
            input.goal_labels.push((slot, GoalLabel::parse(&value)));
        }
    }
    Ok(input)
}

#[derive(Serialize)]
struct OutTurn {
    turn_idx: usize,
    transcript: String,
    system_acts: Vec<serde_json::Value>,
    turn_label: Vec<(String, String)>,
    belief_state: Vec<serde_json::Value>,
}

/// Writes dialogues in the WOZ-shaped layout that [`load_woz`] reads.
pub fn write_woz<W: Write>(dialogues: &[Dialogue], ontology: &Ontology, mut sink: W) -> Result<()> {
    let out: Vec<serde_json::Value> = dialogues
        .iter()
        .map(|d| {
            let turns: Vec<OutTurn> = d
                .turns
                .iter()
                .enumerate()
                .map(|(t, turn)| to_out_turn(t, turn, ontology))
                .collect();
            let idx = match d.id.parse::<u64>() {
                Ok(n) if n.to_string() == d.id => json!(n),
                _ => json!(d.id),
            };
            json!({ "dialogue_idx": idx, "dialogue": turns })
        })
        .collect();
    serde_json::to_writer(&mut sink, &out).map_err(|e| CorpusError::Io(e.into()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

fn to_out_turn(t: usize, turn: &Turn, ontology: &Ontology) -> OutTurn {
    let system_acts = turn
        .system_acts
        .iter()
        .map(|a| match a {
            SystemAct::Request { slot } => json!(slot),
            SystemAct::Confirm { slot, value } => json!([slot, value.as_str()]),
        })
        .collect();
    let mut turn_label: Vec<(String, String)> = turn
        .turn_goal_labels
        .iter()
        .map(|(s, l)| (s.clone(), l.as_str().to_string()))
        .collect();
    turn_label.extend(turn.gold_requests.iter().map(|r| ("request".to_string(), r.clone())));
    let mut belief_state: Vec<serde_json::Value> = ontology
        .informable()
        .iter()
        .zip(&turn.gold_goal_state)
        .filter(|(_, l)| !l.is_none())
        .map(|(s, l)| json!({ "slots": [[s.name(), l.as_str()]], "act": "inform" }))
        .collect();
    belief_state.extend(
        turn.gold_requests
            .iter()
            .map(|r| json!({ "slots": [["request", r]], "act": "request" })),
    );
    OutTurn {
        turn_idx: t,
        transcript: turn.user_tokens.join(" "),
        system_acts,
        turn_label,
        belief_state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ontology() -> Ontology {
        Ontology::from_json_str(
            r#"{"informable":{"food":["indian","chinese"],"price range":["cheap","expensive"]},"requestable":["phone","address"]}"#,
        )
        .unwrap()
    }

    const TWO_TURNS: &str = r#"[{"dialogue_idx": 7, "dialogue": [
        {"turn_idx": 0, "transcript": "I want Indian food!", "system_acts": [], "turn_label": [["food", "indian"]],
         "belief_state": [{"slots": [["food", "indian"]], "act": "inform"}]},
        {"turn_idx": 1, "transcript": "What's the phone number?", "system_acts": ["price range", ["food", "indian"]],
         "turn_label": [["request", "phone"]], "belief_state": []}
    ]}]"#;

    #[test]
    fn tokenizes_like_the_embedding_lookup_expects() {
        assert_eq!(tokenize("I want Indian food!"), ["i", "want", "indian", "food"]);
        assert_eq!(tokenize("  don't   care. "), ["dont", "care"]);
        assert!(tokenize("?!").is_empty());
    }

    #[test]
    fn loads_woz_turns() {
        let o = ontology();
        let ds = load_woz(TWO_TURNS.as_bytes(), &o).unwrap();
        assert_eq!(ds.len(), 1);
        let d = &ds[0];
        assert_eq!(d.id(), "7");
        assert_eq!(d.turns().len(), 2);
        let t1 = &d.turns()[1];
        assert_eq!(t1.gold_goal(0), &GoalLabel::parse("indian"));
        assert_eq!(t1.gold_goal(1), &GoalLabel::None);
        assert!(t1.gold_requests().contains("phone"));
        assert!(d.turns()[0].gold_requests().is_empty());
        assert!(t1.has_request_act("price range"));
        assert!(t1.has_confirm_act("food", &GoalLabel::parse("indian")));
        assert!(!t1.has_confirm_act("food", &GoalLabel::parse("chinese")));
    }

    #[test]
    fn override_rule() {
        let o = ontology();
        let label = |v: &str| vec![("food".to_string(), GoalLabel::parse(v))];
        let d = Dialogue::build(
            "x",
            &o,
            vec![
                TurnInput {
                    goal_labels: label("indian"),
                    ..Default::default()
                },
                TurnInput::default(),
                TurnInput {
                    goal_labels: label("chinese"),
                    ..Default::default()
                },
            ],
        )
        .unwrap();
        let golds: Vec<_> = d.turns().iter().map(|t| t.gold_goal(0).as_str().to_string()).collect();
        assert_eq!(golds, ["indian", "indian", "chinese"]);
    }

    #[test]
    fn rejects_labels_outside_ontology() {
        let o = ontology();
        let bad = TWO_TURNS.replace(
            r#""turn_label": [["food", "indian"]]"#,
            r#""turn_label": [["food", "thai"]]"#,
        );
        let err = load_woz(bad.as_bytes(), &o).unwrap_err();
        match err {
            CorpusError::LabelNotInOntology {
                dialogue,
                turn,
                slot,
                label,
            } => {
                assert_eq!(
                    (dialogue.as_str(), turn, slot.as_str(), label.as_str()),
                    ("7", 0, "food", "thai")
                );
            }
            other => panic!("unexpected {other}"),
        }
        let bad = TWO_TURNS.replace(r#"["request", "phone"]"#, r#"["request", "postcode"]"#);
        assert!(matches!(
            load_woz(bad.as_bytes(), &o),
            Err(CorpusError::LabelNotInOntology { turn: 1, .. })
        ));
        assert!(matches!(load_woz("[{]".as_bytes(), &o), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn rejects_empty_dialogue_and_bad_acts() {
        let o = ontology();
        let err = load_woz(r#"[{"dialogue_idx": 1, "dialogue": []}]"#.as_bytes(), &o).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyDialogue(_)));
        let bad = TWO_TURNS.replace(r#"["price range", ["food", "indian"]]"#, r#"["price range", ["food"]]"#);
        assert!(matches!(
            load_woz(bad.as_bytes(), &o),
            Err(CorpusError::MalformedAct { .. })
        ));
    }

    #[test]
    fn state_vectors() {
        let o = ontology();
        let food = &o.informable()[0];
        let d = load_woz(TWO_TURNS.as_bytes(), &o).unwrap();
        assert_eq!(gold_state_vector(&d[0].turns()[0], 0, food), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(initial_state_vector(food), vec![0.0, 0.0, 0.0, 1.0]);
        let dc = Dialogue::build(
            "d",
            &o,
            vec![TurnInput {
                goal_labels: vec![("food".into(), GoalLabel::DontCare)],
                ..Default::default()
            }],
        )
        .unwrap();
        assert_eq!(gold_state_vector(&dc.turns()[0], 0, food), vec![0.0, 0.0, 1.0, 0.0]);
        let area = Slot::new("area", &["a", "b", "c", "d", "e"]).unwrap();
        let init = initial_state_vector(&area);
        assert_eq!(init[6], 1.0);
        assert_eq!(init.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn write_then_load_is_identity() {
        let o = ontology();
        let ds = load_woz(TWO_TURNS.as_bytes(), &o).unwrap();
        let mut buf = Vec::new();
        write_woz(&ds, &o, &mut buf).unwrap();
        let again = load_woz(buf.as_slice(), &o).unwrap();
        assert_eq!(ds, again);
    }
}
