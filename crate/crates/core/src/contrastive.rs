//! Reference InfoNCE over temperature-scaled cosine similarity, with analytic
//! gradients. Operates on already-pooled vectors; negatives are exactly the
//! explicit list on the instance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::vector::{dot, EmbeddingVector, VectorError};

pub const DEFAULT_TEMPERATURE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LossError {
    #[error("temperature must be positive and finite")]
    Temperature,
    #[error("{which}: zero-norm vector")]
    ZeroNorm { which: String },
    #[error("{which}: {source}")]
    Dim { which: String, source: VectorError },
    #[error("at least one negative is required")]
    EmptyNegatives,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<T> {
    pub temperature: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            temperature: T::from_f64_lossy(DEFAULT_TEMPERATURE),
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(temperature: T) -> Result<Self, LossError> {
        let cfg = Self { temperature };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), LossError> {
        if self.temperature > T::zero() && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(LossError::Temperature)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct LossInstance<T: Scalar> {
    pub q: EmbeddingVector<T>,
    pub pos: EmbeddingVector<T>,
    pub negs: Vec<EmbeddingVector<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients<T> {
    pub q: Vec<T>,
    pub pos: Vec<T>,
    pub negs: Vec<Vec<T>>,
}

fn checked_cosine<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
    which: &str,
) -> Result<T, LossError> {
    a.cosine(b).map_err(|e| match e {
        VectorError::ZeroNorm => LossError::ZeroNorm {
            which: which.to_string(),
        },
        source => LossError::Dim {
            which: which.to_string(),
            source,
        },
    })
}

/// cos(a, b) / τ.
pub fn scaled_sim<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
    cfg: &LossConfig<T>,
) -> Result<T, LossError> {
    cfg.validate()?;
    Ok(checked_cosine(a, b, "inputs")? / cfg.temperature)
}

struct Logits<T> {
    /// Cosines: index 0 is the positive.
    cos: Vec<T>,
    /// s_j - s_0 for each negative.
    diffs: Vec<T>,
}

fn logits<T: Scalar>(inst: &LossInstance<T>, cfg: &LossConfig<T>) -> Result<Logits<T>, LossError> {
    cfg.validate()?;
    if inst.negs.is_empty() {
        return Err(LossError::EmptyNegatives);
    }
    if inst.q.norm() == T::zero() {
        return Err(LossError::ZeroNorm { which: "q".into() });
    }
    let mut cos = Vec::with_capacity(inst.negs.len() + 1);
    cos.push(checked_cosine(&inst.q, &inst.pos, "pos")?);
    for (j, n) in inst.negs.iter().enumerate() {
        cos.push(checked_cosine(&inst.q, n, &format!("neg[{j}]"))?);
    }
    let s0 = cos[0] / cfg.temperature;
    let diffs = cos[1..].iter().map(|&c| c / cfg.temperature - s0).collect();
    Ok(Logits { cos, diffs })
}

/// `-log softmax(s)_0` written relative to the positive logit so that a
/// dominant positive keeps full relative precision (`log1p` of a tiny sum).
fn loss_from_diffs<T: Scalar>(diffs: &[T]) -> T {
    let m = diffs.iter().copied().fold(T::neg_infinity(), T::max);
    if m <= T::zero() {
        diffs.iter().map(|&d| d.exp()).sum::<T>().ln_1p()
    } else {
        let tail: T = diffs.iter().map(|&d| (d - m).exp()).sum();
        m + ((-m).exp() + tail).ln()
    }
}

pub fn infonce_loss<T: Scalar>(inst: &LossInstance<T>, cfg: &LossConfig<T>) -> Result<T, LossError> {
    Ok(loss_from_diffs(&logits(inst, cfg)?.diffs))
}

/// d cos(a, b) / d a = b/(|a||b|) - cos * a/|a|^2.
fn cosine_grad<T: Scalar>(a: &[T], b: &[T], cos: T) -> Vec<T> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let inv = T::one() / (na * nb);
    let self_coef = cos / (na * na);
    a.iter()
        .zip(b)
        .map(|(&ai, &bi)| bi * inv - self_coef * ai)
        .collect()
}

pub fn infonce_grad<T: Scalar>(
    inst: &LossInstance<T>,
    cfg: &LossConfig<T>,
) -> Result<Gradients<T>, LossError> {
    let Logits { cos, diffs } = logits(inst, cfg)?;
    // softmax over [0, diffs...] shifted by max(0, max diff)
    let shift = diffs.iter().copied().fold(T::zero(), T::max);
    let w0 = (-shift).exp();
    let w: Vec<T> = diffs.iter().map(|&d| (d - shift).exp()).collect();
    let z = w0 + w.iter().copied().sum::<T>();
    let p_neg: Vec<T> = w.iter().map(|&x| x / z).collect();
    // dL/ds_0 = p_0 - 1 = -sum(p_neg), exact even when p_0 rounds to 1
    let ds0 = -p_neg.iter().copied().sum::<T>();
    let inv_t = T::one() / cfg.temperature;
    let dc: Vec<T> = std::iter::once(ds0)
        .chain(p_neg.iter().copied())
        .map(|g| g * inv_t)
        .collect();

    let q = inst.q.as_slice();
    let docs: Vec<&[T]> = std::iter::once(inst.pos.as_slice())
        .chain(inst.negs.iter().map(|n| n.as_slice()))
        .collect();

    let mut gq = vec![T::zero(); q.len()];
    let mut gdocs = Vec::with_capacity(docs.len());
    for (j, d) in docs.iter().enumerate() {
        for (acc, g) in gq.iter_mut().zip(cosine_grad(q, d, cos[j])) {
            *acc = *acc + dc[j] * g;
        }
        gdocs.push(
            cosine_grad(d, q, cos[j])
                .into_iter()
                .map(|g| dc[j] * g)
                .collect::<Vec<T>>(),
        );
    }
    let pos = gdocs.remove(0);
    Ok(Gradients {
        q: gq,
        pos,
        negs: gdocs,
    })
}
