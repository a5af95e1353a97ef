//! Online stage: target attention over a user's offline interests, and a
//! logistic scoring head over `[I; x_t; I⊙x_t; (r̄); 1]`.

use crate::error::{Error, Result};
use crate::interest::InterestSet;
use crate::numerics::{dot, sigmoid, softmax, weighted_sum, Relevance, Rng};
use crate::optim::Adam;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the
/// cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub between_weights: Vec<f64>,
    /// `within × between` per behavior; empty if the interest set carries no
    /// within-cluster weights.
    pub behavior_weights: Vec<f64>,
}

/// `I = Σᵢ softmax(rel(u_i, x_t)) · u_i` and the between-cluster weights.
/// Performs exactly `K'` metric evaluations and touches nothing of size `L`.
pub fn attend(set: &InterestSet, target: &[f64], relevance: Relevance) -> Result<(Vec<f64>, Vec<f64>)> {
    if set.interests.is_empty() {
        return Err(Error::EmptyInput("infer_interest"));
    }
    if target.len() != set.dim() {
        return Err(Error::dim(set.dim(), target.len()));
    }
    let logits = set
        .interests
        .iter()
        .map(|u| relevance.logit(u, target))
        .collect::<Result<Vec<f64>>>()?;
    let between = softmax(&logits)?;
    let interest = weighted_sum(
        target.len(),
        between.iter().zip(&set.interests).map(|(&w, u)| (w, u.as_slice())),
    );
    Ok((interest, between))
}

/// [`attend`] plus the per-behavior `within × between` weights.
pub fn infer_interest(
    set: &InterestSet,
    target: &[f64],
    relevance: Relevance,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let (interest, between) = attend(set, target, relevance)?;
    let behavior_weights = set
        .within_weights
        .iter()
        .map(|w| w.weight * between[w.cluster as usize])
        .collect();
    Ok((
        interest,
        AttentionTrace {
            between_weights: between,
            behavior_weights,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    pub weights: Vec<f64>,
    pub d: usize,
    pub realtime: bool,
    pub trained: bool,
}

impl ScoringHead {
    pub fn zeros(d: usize, realtime: bool) -> Self {
        ScoringHead {
            weights: vec![0.0; Self::feature_len(d, realtime)],
            d,
            realtime,
            trained: false,
        }
    }

    pub fn feature_len(d: usize, realtime: bool) -> usize {
        if realtime {
            4 * d + 1
        } else {
            3 * d + 1
        }
    }

    /// `[I; x_t; I⊙x_t; r̄ (if enabled); 1]`.
    pub fn features(&self, interest: &[f64], target: &[f64], recent: Option<&[f64]>) -> Result<Vec<f64>> {
        if interest.len() != self.d {
            return Err(Error::dim(self.d, interest.len()));
        }
        if target.len() != self.d {
            return Err(Error::dim(self.d, target.len()));
        }
        let mut f = Vec::with_capacity(self.weights.len());
        f.extend_from_slice(interest);
        f.extend_from_slice(target);
        f.extend(interest.iter().zip(target).map(|(a, b)| a * b));
        if self.realtime {
            let r = recent.ok_or_else(|| Error::Config("head expects a real-time feature".into()))?;
            if r.len() != self.d {
                return Err(Error::dim(self.d, r.len()));
            }
            f.extend_from_slice(r);
        }
        f.push(1.0);
        Ok(f)
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, features))
    }

    pub fn score(&self, interest: &[f64], target: &[f64], recent: Option<&[f64]>) -> Result<f64> {
        Ok(self.predict(&self.features(interest, target, recent)?))
    }

    /// `"ENCH" | u16 version | u32 d | u8 realtime | n f64 | u32 CRC32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ENCH");
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.push(u8::from(self.realtime));
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptStore(format!("scoring head: {m}"));
        if bytes.len() < 15 || &bytes[..4] != b"ENCH" {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("CRC mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != 1 {
            return Err(Error::Version {
                expected: 1,
                found: version as u32,
            });
        }
        let d = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
        let realtime = body[10] != 0;
        let payload = &body[11..];
        if payload.len() != 8 * Self::feature_len(d, realtime) {
            return Err(corrupt("weight count does not match d"));
        }
        Ok(ScoringHead {
            weights: payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            d,
            realtime,
            trained: true,
        })
    }
}

/// One training row: precomputed head features and the click label.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample {
    pub features: Vec<f64>,
    pub label: u8,
}

/// Mean binary cross-entropy over `batch` and its gradient w.r.t. the head
/// weights.
pub fn ce_loss_and_grad(head: &ScoringHead, batch: &[&HeadExample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; head.weights.len()];
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for ex in batch {
        let z = dot(&head.weights, &ex.features);
        let p = sigmoid(z);
        let y = f64::from(ex.label);
        // probability of the observed label, evaluated without cancellation
        let p_label = if ex.label == 1 { p } else { sigmoid(-z) };
        loss -= p_label.max(PROB_CLAMP).ln();
        let r = (p - y) / n;
        for (g, f) in grad.iter_mut().zip(&ex.features) {
            *g += r * f;
        }
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Logistic regression by Adam over shuffled mini-batches. Returns the head
/// and the per-step training losses.
pub fn train_head(
    mut head: ScoringHead,
    examples: &[HeadExample],
    cfg: &HeadTrainConfig,
    rng: &mut Rng,
) -> Result<(ScoringHead, Vec<f64>)> {
    if cfg.epochs == 0 {
        return Ok((head, Vec::new()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("train_head"));
    }
    if let Some(ex) = examples.iter().find(|e| e.features.len() != head.weights.len()) {
        return Err(Error::dim(head.weights.len(), ex.features.len()));
    }
    let mut adam = Adam::new(head.weights.len(), cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&HeadExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = ce_loss_and_grad(&head, &batch);
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: losses.len(),
                    loss,
                });
            }
            adam.step(&mut head.weights, &grad);
            losses.push(loss);
        }
    }
    head.trained = true;
    Ok((head, losses))
}
