//! The full tracker: ontology, decoder parameters, and update mechanism, plus the
//! JSON model file.
//!
//! The model file is a single JSON document with an explicit dimension header,
//! row-major matrices, the ontology it was trained against (and its hash), and the
//! content hash of the embedding file used for training.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{DecoderError, DecoderParams};
use crate::embeddings::VectorStore;
use crate::linalg::Matrix;
use crate::ontology::Ontology;
use crate::update::{ConstrainedParams, MechanismKind, OneStepParams, UpdateError, UpdateMechanism};

pub const MODEL_FORMAT: &str = "dst-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model format `{format}` version {version}")]
    Format { format: String, version: u32 },
    #[error("model ontology hash {stored} does not match its contents ({computed})")]
    OntologyHash { stored: String, computed: String },
    #[error("model was trained against a different ontology (model {model}, given {given})")]
    OntologyMismatch { model: String, given: String },
    #[error("model dimension {model} does not match the vectors ({store})")]
    DimensionMismatch { model: usize, store: usize },
    #[error("one-step parameters name slot `{found}` where `{expected}` was expected")]
    SlotOrder { expected: String, found: String },
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Update(#[from] UpdateError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub ontology: Ontology,
    pub decoder: DecoderParams,
    pub mechanism: UpdateMechanism,
    pub oov_seed: u64,
    pub embedding_hash: String,
}

impl Model {
    /// Fresh parameters for `kind`, seeded.
    pub fn init(ontology: &Ontology, store: &VectorStore, kind: MechanismKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoder = DecoderParams::init(store.dim(), &mut rng);
        let mechanism = UpdateMechanism::init(kind, ontology, &mut rng);
        Self {
            ontology: ontology.clone(),
            decoder,
            mechanism,
            oov_seed: store.oov_seed(),
            embedding_hash: store.content_hash().to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.decoder.dim()
    }

    pub fn kind(&self) -> MechanismKind {
        self.mechanism.kind()
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate(self.dim())?;
        self.mechanism.validate(&self.ontology)?;
        Ok(())
    }

    /// Errors on a dimension mismatch; returns `false` when the embedding hash differs.
    pub fn check_store(&self, store: &VectorStore) -> Result<bool> {
        if store.dim() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                model: self.dim(),
                store: store.dim(),
            });
        }
        Ok(store.content_hash() == self.embedding_hash)
    }

    pub fn check_ontology(&self, ontology: &Ontology) -> Result<()> {
        let (model, given) = (self.ontology.content_hash(), ontology.content_hash());
        if model != given {
            return Err(ModelError::OntologyMismatch { model, given });
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.decoder.num_params() + self.mechanism.num_params()
    }

    /// All trainable scalars: decoder first, then the update mechanism.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.decoder.write_flat(&mut out);
        self.mechanism.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let k = self.decoder.read_flat(flat);
        self.mechanism.read_flat(&flat[k..]);
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut sink, &ModelFile::from_model(self))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(source)?;
        file.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dimension: usize,
    ontology_hash: String,
    embedding_hash: String,
    oov_seed: u64,
    ontology: Ontology,
    decoder: DecoderParams,
    mechanism: MechanismFile,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum MechanismFile {
    Rule { lambda: f64 },
    Interp { lambda_logit: f64 },
    OneStep { slots: Vec<OneStepSlotFile> },
    Constrained(ConstrainedParams),
}

#[derive(Serialize, Deserialize)]
struct OneStepSlotFile {
    slot: String,
    w_curr: Matrix,
    w_past: Matrix,
}

impl ModelFile {
    fn from_model(m: &Model) -> Self {
        let mechanism = match &m.mechanism {
            UpdateMechanism::RuleBased { lambda } => MechanismFile::Rule { lambda: *lambda },
            UpdateMechanism::LearnedInterpolation { lambda_logit } => MechanismFile::Interp {
                lambda_logit: *lambda_logit,
            },
            UpdateMechanism::OneStep { slots } => MechanismFile::OneStep {
                slots: slots
                    .iter()
                    .zip(m.ontology.informable())
                    .map(|(p, s)| OneStepSlotFile {
                        slot: s.name().to_string(),
                        w_curr: p.w_curr.clone(),
                        w_past: p.w_past.clone(),
                    })
                    .collect(),
            },
            UpdateMechanism::Constrained(p) => MechanismFile::Constrained(*p),
        };
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            dimension: m.dim(),
            ontology_hash: m.ontology.content_hash(),
            embedding_hash: m.embedding_hash.clone(),
            oov_seed: m.oov_seed,
            ontology: m.ontology.clone(),
            decoder: m.decoder.clone(),
            mechanism,
        }
    }

    fn into_model(self) -> Result<Model> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(ModelError::Format {
                format: self.format,
                version: self.version,
            });
        }
        let computed = self.ontology.content_hash();
        if computed != self.ontology_hash {
            return Err(ModelError::OntologyHash {
                stored: self.ontology_hash,
                computed,
            });
        }
        let mechanism = match self.mechanism {
            MechanismFile::Rule { lambda } => UpdateMechanism::RuleBased { lambda },
            MechanismFile::Interp { lambda_logit } => UpdateMechanism::LearnedInterpolation { lambda_logit },
            MechanismFile::OneStep { slots } => {
                for (f, s) in slots.iter().zip(self.ontology.informable()) {
                    if f.slot != s.name() {
                        return Err(ModelError::SlotOrder {
                            expected: s.name().to_string(),
                            found: f.slot.clone(),
                        });
                    }
                }
                UpdateMechanism::OneStep {
                    slots: slots
                        .into_iter()
                        .map(|f| OneStepParams {
                            w_curr: f.w_curr,
                            w_past: f.w_past,
                        })
                        .collect(),
                }
            }
            MechanismFile::Constrained(p) => UpdateMechanism::Constrained(p),
        };
        let model = Model {
            ontology: self.ontology,
            decoder: self.decoder,
            mechanism,
            oov_seed: self.oov_seed,
            embedding_hash: self.embedding_hash,
        };
        if model.dim() != self.dimension {
            return Err(ModelError::DimensionMismatch {
                model: self.dimension,
                store: model.dim(),
            });
        }
        model.validate()?;
        Ok(model)
    }
}
