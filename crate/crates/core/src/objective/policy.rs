use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;

use super::ObjectiveError;

/// Key of a conditioning context: the first 64 bits of the SHA-256 of the
/// serialized history prefix. Serialized as 16 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey(pub u64);

impl ContextKey {
    pub fn from_history(history: &str) -> Self {
        let mut h = HistoryHasher::default();
        h.update(history);
        h.key()
    }
}

/// Incremental form of [`ContextKey::from_history`] for keying many
/// prefixes of one growing text.
#[derive(Debug, Clone, Default)]
pub struct HistoryHasher(Sha256);

impl HistoryHasher {
    pub fn update(&mut self, text: &str) {
        self.0.update(text.as_bytes());
    }

    /// Key of everything fed so far.
    pub fn key(&self) -> ContextKey {
        let digest = self.0.clone().finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        ContextKey(u64::from_be_bytes(b))
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for ContextKey {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(ContextKey)
    }
}

impl Serialize for ContextKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContextKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom("context key must be 16 hex digits"));
        }
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tabular softmax policy over a fixed vocabulary. Contexts without a row
/// behave as an all-zero row, i.e. the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    vocab_size: usize,
    temperature: f64,
    rows: BTreeMap<ContextKey, Vec<f64>>,
}

/// Gradient with the same layout as the policy table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyGradient {
    pub rows: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyGradient {
    pub(crate) fn row_mut(&mut self, ctx: ContextKey, vocab: usize) -> &mut [f64] {
        self.rows.entry(ctx).or_insert_with(|| vec![0.0; vocab])
    }

    pub fn get(&self, ctx: ContextKey, token: usize) -> f64 {
        self.rows.get(&ctx).map_or(0.0, |r| r[token])
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

impl ToyPolicy {
    pub fn new(vocab_size: usize, temperature: f64) -> Result<Self, ObjectiveError> {
        if vocab_size == 0 {
            return Err(ObjectiveError::EmptyVocabulary);
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(ObjectiveError::InvalidTemperature(temperature));
        }
        Ok(Self {
            vocab_size,
            temperature,
            rows: BTreeMap::new(),
        })
    }

    /// Policy with uniform distribution everywhere and temperature 1.
    pub fn uniform(vocab_size: usize) -> Self {
        Self::new(vocab_size, 1.0).expect("vocab_size > 0")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn contexts(&self) -> impl Iterator<Item = &ContextKey> {
        self.rows.keys()
    }

    pub fn row(&self, ctx: ContextKey) -> Option<&[f64]> {
        self.rows.get(&ctx).map(Vec::as_slice)
    }

    pub fn set_row(&mut self, ctx: ContextKey, logits: Vec<f64>) -> Result<(), ObjectiveError> {
        if logits.len() != self.vocab_size {
            return Err(ObjectiveError::RowWidth {
                expected: self.vocab_size,
                got: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(ObjectiveError::NonFinite);
        }
        self.rows.insert(ctx, logits);
        Ok(())
    }

    pub fn log_probs(&self, ctx: ContextKey) -> Vec<f64> {
        match self.rows.get(&ctx) {
            Some(r) => log_softmax(r, self.temperature),
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        }
    }

    pub fn probs(&self, ctx: ContextKey) -> Vec<f64> {
        self.log_probs(ctx).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, ctx: ContextKey, token: u32) -> Result<f64, ObjectiveError> {
        let t = token as usize;
        if t >= self.vocab_size {
            return Err(ObjectiveError::TokenOutOfRange {
                token,
                vocab: self.vocab_size,
            });
        }
        Ok(self.log_probs(ctx)[t])
    }

    /// Draws a token with the policy's logits divided by an extra decoding
    /// temperature.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: ContextKey, decode_temperature: f64, rng: &mut R) -> u32 {
        let probs: Vec<f64> = match self.rows.get(&ctx) {
            Some(r) => log_softmax(r, self.temperature * decode_temperature)
                .into_iter()
                .map(f64::exp)
                .collect(),
            None => vec![1.0 / self.vocab_size as f64; self.vocab_size],
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        // Rounding left `u` above the cumulative sum; pick the last token
        // with non-zero mass.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
    }

    /// `theta + step * gradient` as a new policy.
    pub fn ascent_step(&self, grad: &PolicyGradient, step: f64) -> Result<ToyPolicy, ObjectiveError> {
        if !step.is_finite() {
            return Err(ObjectiveError::NonFinite);
        }
        let mut next = self.clone();
        for (ctx, g) in &grad.rows {
            if g.len() != self.vocab_size {
                return Err(ObjectiveError::RowWidth {
                    expected: self.vocab_size,
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ObjectiveError::NonFinite);
            }
            if step == 0.0 {
                continue;
            }
            let v = self.vocab_size;
            let row = next.rows.entry(*ctx).or_insert_with(|| vec![0.0; v]);
            for (l, gv) in row.iter_mut().zip(g) {
                *l += step * gv;
            }
        }
        Ok(next)
    }
}
