//! Fixed word vectors with deterministic out-of-vocabulary fallback.
//!
//! The text format is one entry per line: `token c1 c2 ... cd`. A leading
//! `<count> <dim>` header line (word2vec text layout) is accepted and skipped.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Half-width of the uniform range used for out-of-vocabulary vectors.
pub const OOV_RANGE: f64 = 0.25;

pub const DEFAULT_OOV_SEED: u64 = 0x005e_ed0f_0a0b;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error reading vectors: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: component `{field}` is not a finite number")]
    NonNumeric { line: usize, field: String },
    #[error("line {line}: entry has no components")]
    EmptyEntry { line: usize },
    #[error("vector file is empty and no dimension was given")]
    UnknownDimension,
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("cannot embed an empty phrase")]
    EmptyPhrase,
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Read-only token → vector table.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    oov_seed: u64,
    content_hash: String,
}

impl VectorStore {
    /// A store with no entries: every token takes the OOV path.
    pub fn empty(dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(Self {
            dim,
            table: HashMap::new(),
            oov_seed,
            content_hash: hex::encode(Sha256::digest(b"")),
        })
    }

    pub fn from_entries<I, S>(dim: usize, oov_seed: u64, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store = Self::empty(dim, oov_seed)?;
        let mut text = String::new();
        for (i, (tok, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonNumeric {
                    line: i + 1,
                    field: bad.to_string(),
                });
            }
            let tok = tok.into();
            text.push_str(&format_entry(&tok, &v));
            store.table.entry(tok).or_insert(v);
        }
        store.content_hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(store)
    }

    /// Parses the text format. The dimension comes from the first entry unless
    /// `expected_dim` is given. The content hash covers the raw bytes read.
    pub fn load<R: Read>(source: R, expected_dim: Option<usize>, oov_seed: u64) -> Result<Self> {
        if expected_dim == Some(0) {
            return Err(EmbeddingError::ZeroDimension);
        }
        let mut hashing = HashingReader {
            inner: source,
            hasher: Sha256::new(),
        };
        let mut dim = expected_dim;
        let mut table = HashMap::new();
        {
            let reader = BufReader::new(&mut hashing);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let lineno = i + 1;
                let mut fields = line.split_ascii_whitespace();
                let Some(token) = fields.next() else {
                    continue;
                };
                let rest: Vec<&str> = fields.collect();
                if lineno == 1 && is_header(token, &rest) {
                    if dim.is_none() {
                        dim = rest[0].parse().ok();
                    }
                    continue;
                }
                if rest.is_empty() {
                    return Err(EmbeddingError::EmptyEntry { line: lineno });
                }
                let d = *dim.get_or_insert(rest.len());
                if rest.len() != d {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: lineno,
                        expected: d,
                        found: rest.len(),
                    });
                }
                let mut v = Vec::with_capacity(d);
                for field in rest {
                    match field.parse::<f64>() {
                        Ok(x) if x.is_finite() => v.push(x),
                        _ => {
                            return Err(EmbeddingError::NonNumeric {
                                line: lineno,
                                field: field.to_string(),
                            })
                        }
                    }
                }
                table.entry(token.to_string()).or_insert(v);
            }
        }
        let dim = dim.ok_or(EmbeddingError::UnknownDimension)?;
        Ok(Self {
            dim,
            table,
            oov_seed,
            content_hash: hex::encode(hashing.hasher.finalize()),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    /// SHA-256 of the loaded bytes, hex.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn contains(&self, token: &str) -> bool {
        self.table.contains_key(token)
    }

    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.oov_vector(token),
        }
    }

    /// Component-wise mean of the token embeddings.
    pub fn embed_phrase<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyPhrase);
        }
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            crate::linalg::add_assign(&mut acc, &self.embed_token(t.as_ref()));
        }
        let n = tokens.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Ok(acc)
    }

    fn oov_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ splitmix(self.oov_seed));
        (0..self.dim)
            .map(|_| rng.random_range(-OOV_RANGE..=OOV_RANGE))
            .collect()
    }
}

/// Formats one line of the text format.
pub fn format_entry(token: &str, v: &[f64]) -> String {
    let mut s = String::from(token);
    for x in v {
        s.push(' ');
        s.push_str(&x.to_string());
    }
    s.push('\n');
    s
}

fn is_header(first: &str, rest: &[&str]) -> bool {
    rest.len() == 1 && first.parse::<u64>().is_ok() && rest[0].parse::<u64>().map(|d| d > 0).unwrap_or(false)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}
