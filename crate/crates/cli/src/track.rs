//! Line protocol for the tracking console.

use dst_core::{GoalLabel, Ontology, SystemAct};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, PartialEq)]
pub enum Line {
    Reset,
    System(Vec<SystemAct>),
    User(String),
}

/// `reset`, `sys: request <slot>; confirm <slot>=<value>`, or an utterance.
pub fn parse_line(line: &str, ontology: &Ontology) -> Result<Line, String> {
    let trimmed = line.trim();
    if trimmed == "reset" {
        return Ok(Line::Reset);
    }
    let Some(rest) = trimmed.strip_prefix("sys:") else {
        return Ok(Line::User(trimmed.to_string()));
    };
    let mut acts = Vec::new();
    for part in rest.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (verb, arg) = part
            .split_once(char::is_whitespace)
            .ok_or_else(|| format!("act `{part}` has no argument"))?;
        let arg = arg.trim();
        match verb {
            "request" => {
                if ontology.slot(arg).is_none() && !ontology.is_requestable(arg) {
                    return Err(format!("unknown slot `{arg}`"));
                }
                acts.push(SystemAct::Request { slot: arg.to_string() });
            }
            "confirm" => {
                let (slot, value) = arg
                    .split_once('=')
                    .ok_or_else(|| format!("confirm needs slot=value, got `{arg}`"))?;
                let (slot, value) = (slot.trim(), GoalLabel::parse(value.trim()));
                let s = ontology.slot(slot).ok_or_else(|| format!("unknown slot `{slot}`"))?;
                if value.is_none() || s.value_index(&value).is_err() {
                    return Err(format!("`{}` is not a value of {slot}", value.as_str()));
                }
                acts.push(SystemAct::Confirm {
                    slot: slot.to_string(),
                    value,
                });
            }
            other => return Err(format!("unknown act `{other}`")),
        }
    }
    Ok(Line::System(acts))
}

#[derive(Debug, Serialize)]
pub struct SlotView {
    pub goal: String,
    pub beliefs: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub turn: usize,
    pub slots: BTreeMap<String, SlotView>,
    pub requests: Vec<String>,
}

pub fn state_view(
    ontology: &Ontology,
    turn: usize,
    beliefs: &[Vec<f64>],
    goals: &[GoalLabel],
    requests: Vec<String>,
) -> StateView {
    let slots = ontology
        .informable()
        .iter()
        .zip(beliefs.iter().zip(goals))
        .map(|(slot, (b, g))| {
            let beliefs = slot
                .labels()
                .map(|l| l.as_str().to_string())
                .zip(b.iter().copied())
                .collect();
            (
                slot.name().to_string(),
                SlotView {
                    goal: g.as_str().to_string(),
                    beliefs,
                },
            )
        })
        .collect();
    StateView { turn, slots, requests }
}
