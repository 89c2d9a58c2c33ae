//! Domain schema: informable slots with their value inventories, and requestable slots.
//!
//! Every informable slot `s` owns a distribution of dimension `|V_s| + 2`. Values occupy
//! indices `0..|V_s|`, followed by `dontcare` at `|V_s|` and `NONE` at `|V_s| + 1`.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DONTCARE: &str = "dontcare";
pub const NONE: &str = "none";

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("ontology parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate slot `{0}`")]
    DuplicateSlot(String),
    #[error("duplicate value `{value}` in slot `{slot}`")]
    DuplicateValue { slot: String, value: String },
    #[error("duplicate requestable slot `{0}`")]
    DuplicateRequestable(String),
    #[error("slot `{0}` has an empty value list")]
    EmptyValues(String),
    #[error("slot `{slot}` lists reserved value `{value}`")]
    ReservedValue { slot: String, value: String },
    #[error("unknown value `{label}` for slot `{slot}`")]
    UnknownValue { slot: String, label: String },
    #[error("unknown informable slot `{0}`")]
    UnknownSlot(String),
    #[error("index {index} is out of range for slot `{slot}`")]
    IndexOutOfRange { slot: String, index: usize },
}

pub type Result<T> = std::result::Result<T, OntologyError>;

/// A goal label: an ontology value or one of the two special values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GoalLabel {
    Value(String),
    DontCare,
    None,
}

impl GoalLabel {
    /// Parses a label, lowercasing it. `dontcare` and `none` map to the special values.
    pub fn parse(raw: &str) -> Self {
        let s = normalize(raw);
        match s.as_str() {
            DONTCARE => GoalLabel::DontCare,
            NONE => GoalLabel::None,
            _ => GoalLabel::Value(s),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            GoalLabel::Value(v) => v,
            GoalLabel::DontCare => DONTCARE,
            GoalLabel::None => NONE,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, GoalLabel::None)
    }
}

impl fmt::Display for GoalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for GoalLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for GoalLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(GoalLabel::parse(&s))
    }
}

pub(crate) fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Slot {
    name: String,
    values: Vec<String>,
}

impl Slot {
    /// Builds a slot, normalizing case and enforcing the inventory invariants.
    pub fn new(name: &str, values: &[impl AsRef<str>]) -> Result<Self> {
        let name = normalize(name);
        if values.is_empty() {
            return Err(OntologyError::EmptyValues(name));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(values.len());
        for v in values {
            let v = normalize(v.as_ref());
            if v == DONTCARE || v == NONE {
                return Err(OntologyError::ReservedValue { slot: name, value: v });
            }
            if !seen.insert(v.clone()) {
                return Err(OntologyError::DuplicateValue { slot: name, value: v });
            }
            out.push(v);
        }
        Ok(Self { name, values: out })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    /// Distribution dimension, `|V_s| + 2`.
    pub fn dim(&self) -> usize {
        self.values.len() + 2
    }

    pub fn dontcare_index(&self) -> usize {
        self.values.len()
    }

    pub fn none_index(&self) -> usize {
        self.values.len() + 1
    }

    pub fn value_index(&self, label: &GoalLabel) -> Result<usize> {
        match label {
            GoalLabel::DontCare => Ok(self.dontcare_index()),
            GoalLabel::None => Ok(self.none_index()),
            GoalLabel::Value(v) => self
                .values
                .iter()
                .position(|x| x == v)
                .ok_or_else(|| OntologyError::UnknownValue {
                    slot: self.name.clone(),
                    label: v.clone(),
                }),
        }
    }

    /// Inverse of [`Slot::value_index`].
    pub fn label_at(&self, index: usize) -> Result<GoalLabel> {
        let n = self.values.len();
        match index {
            i if i < n => Ok(GoalLabel::Value(self.values[i].clone())),
            i if i == n => Ok(GoalLabel::DontCare),
            i if i == n + 1 => Ok(GoalLabel::None),
            index => Err(OntologyError::IndexOutOfRange {
                slot: self.name.clone(),
                index,
            }),
        }
    }

    /// Labels in index order: values, then dontcare, then NONE.
    pub fn labels(&self) -> impl Iterator<Item = GoalLabel> + '_ {
        self.values
            .iter()
            .map(|v| GoalLabel::Value(v.clone()))
            .chain([GoalLabel::DontCare, GoalLabel::None])
    }
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    informable: Vec<Slot>,
    requestable: Vec<String>,
}

impl Ontology {
    pub fn new(informable: Vec<Slot>, requestable: Vec<String>) -> Result<Self> {
        let mut names = HashSet::new();
        for slot in &informable {
            if !names.insert(slot.name.clone()) {
                return Err(OntologyError::DuplicateSlot(slot.name.clone()));
            }
        }
        let mut req_seen = HashSet::new();
        let mut req = Vec::with_capacity(requestable.len());
        for r in requestable {
            let r = normalize(&r);
            if !req_seen.insert(r.clone()) {
                return Err(OntologyError::DuplicateRequestable(r));
            }
            req.push(r);
        }
        Ok(Self {
            informable,
            requestable: req,
        })
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let raw: RawOntology = serde_json::from_reader(source).map_err(|e| OntologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::load(s.as_bytes())
    }

    fn from_raw(raw: RawOntology) -> Result<Self> {
        let mut slots = Vec::with_capacity(raw.informable.0.len());
        let mut names = HashSet::new();
        for (name, values) in raw.informable.0 {
            let slot = Slot::new(&name, &values)?;
            if !names.insert(slot.name.clone()) {
                return Err(OntologyError::DuplicateSlot(slot.name));
            }
            slots.push(slot);
        }
        Self::new(slots, raw.requestable)
    }

    pub fn informable(&self) -> &[Slot] {
        &self.informable
    }

    pub fn requestable(&self) -> &[String] {
        &self.requestable
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        let name = normalize(name);
        self.informable.iter().find(|s| s.name == name)
    }

    pub fn slot_position(&self, name: &str) -> Option<usize> {
        let name = normalize(name);
        self.informable.iter().position(|s| s.name == name)
    }

    pub fn is_requestable(&self, name: &str) -> bool {
        let name = normalize(name);
        self.requestable.contains(&name)
    }

    /// Canonical JSON encoding in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&OrderedOntology(self)).expect("ontology encodes")
    }

    /// SHA-256 of the canonical encoding, hex.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl Serialize for Ontology {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        OrderedOntology(self).serialize(serializer)
    }
}

struct OrderedOntology<'a>(&'a Ontology);

impl Serialize for OrderedOntology<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::{SerializeMap, SerializeStruct};
        struct Slots<'a>(&'a [Slot]);
        impl Serialize for Slots<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for slot in self.0 {
                    m.serialize_entry(&slot.name, &slot.values)?;
                }
                m.end()
            }
        }
        let mut st = serializer.serialize_struct("Ontology", 2)?;
        st.serialize_field("informable", &Slots(&self.0.informable))?;
        st.serialize_field("requestable", &self.0.requestable)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Ontology {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawOntology::deserialize(deserializer)?;
        Ontology::from_raw(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
struct RawOntology {
    informable: OrderedPairs,
    #[serde(default)]
    requestable: Vec<String>,
}

/// A JSON object read as an ordered list of entries, keeping duplicate keys visible.
struct OrderedPairs(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PairsVisitor;
        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = OrderedPairs;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping slot names to value arrays")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(OrderedPairs(out))
            }
        }
        deserializer.deserialize_map(PairsVisitor)
    }
}
