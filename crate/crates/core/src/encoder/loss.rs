//! Cross-entropy variants over per-position `(preserve, discard)` pairs.
//!
//! Positions `0..boundary` hold the prepended instruction (and separator),
//! the remaining positions hold the original words. Label 1 means preserve.

use thiserror::Error;

use super::config::LossVariant;
use crate::scalar::Scalar;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{probs} probability pairs for boundary {boundary} and {labels} labels")]
pub struct LengthMismatch {
    pub probs: usize,
    pub labels: usize,
    pub boundary: usize,
}

/// Probability assigned to `label`, clamped to `[1e-12, 1 - 1e-12]`.
fn clamped<T: Scalar>(p: [T; 2], label: u8) -> (T, bool) {
    let raw = if label == 1 { p[0] } else { p[1] };
    let lo = T::lit(PROB_FLOOR);
    let hi = T::one() - lo;
    if raw < lo {
        (lo, true)
    } else if raw > hi {
        (hi, true)
    } else {
        (raw, false)
    }
}

pub fn cross_entropy<T: Scalar>(p: [T; 2], label: u8) -> T {
    -clamped(p, label).0.ln()
}

fn mean_ce<T: Scalar>(terms: impl Iterator<Item = ([T; 2], u8)>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for (p, y) in terms {
        sum += cross_entropy(p, y);
        n += 1;
    }
    if n == 0 {
        T::zero()
    } else {
        sum / T::lit(n as f64)
    }
}

fn check(probs: usize, labels: usize, boundary: usize) -> Result<(), LengthMismatch> {
    if probs != boundary + labels {
        return Err(LengthMismatch {
            probs,
            labels,
            boundary,
        });
    }
    Ok(())
}

/// Mean CE over all positions; the input carries no instruction.
pub fn loss_agnostic<T: Scalar>(probs: &[[T; 2]], labels: &[u8]) -> Result<T, LengthMismatch> {
    check(probs.len(), labels.len(), 0)?;
    Ok(mean_ce(probs.iter().copied().zip(labels.iter().copied())))
}

/// Mean CE over every position, instruction positions labeled discard.
pub fn loss_drop<T: Scalar>(
    probs: &[[T; 2]],
    labels: &[u8],
    boundary: usize,
) -> Result<T, LengthMismatch> {
    check(probs.len(), labels.len(), boundary)?;
    let all = std::iter::repeat_n(0u8, boundary).chain(labels.iter().copied());
    Ok(mean_ce(probs.iter().copied().zip(all)))
}

/// Mean CE over original-word positions only.
pub fn loss_mask<T: Scalar>(
    probs: &[[T; 2]],
    labels: &[u8],
    boundary: usize,
) -> Result<T, LengthMismatch> {
    check(probs.len(), labels.len(), boundary)?;
    Ok(mean_ce(
        probs[boundary..].iter().copied().zip(labels.iter().copied()),
    ))
}

pub fn loss<T: Scalar>(
    variant: LossVariant,
    probs: &[[T; 2]],
    labels: &[u8],
    boundary: usize,
) -> Result<T, LengthMismatch> {
    match variant {
        LossVariant::Agnostic => {
            check(probs.len(), labels.len(), boundary)?;
            loss_agnostic(&probs[boundary..], labels)
        }
        LossVariant::Drop => loss_drop(probs, labels, boundary),
        LossVariant::Mask => loss_mask(probs, labels, boundary),
    }
}

/// Gradient of [`loss`] with respect to the pre-softmax logits, per position.
/// Positions that do not enter the loss get a zero row; so do clamped ones.
pub fn logit_grads<T: Scalar>(
    variant: LossVariant,
    probs: &[[T; 2]],
    labels: &[u8],
    boundary: usize,
) -> Result<Vec<[T; 2]>, LengthMismatch> {
    check(probs.len(), labels.len(), boundary)?;
    let mut grads = vec![[T::zero(); 2]; probs.len()];
    let (first, count) = match variant {
        LossVariant::Drop => (0, probs.len()),
        LossVariant::Mask | LossVariant::Agnostic => (boundary, labels.len()),
    };
    if count == 0 {
        return Ok(grads);
    }
    let w = T::one() / T::lit(count as f64);
    for i in first..probs.len() {
        let y = if i < boundary { 0 } else { labels[i - boundary] };
        let p = probs[i];
        if clamped(p, y).1 {
            continue;
        }
        let target = if y == 1 { [T::one(), T::zero()] } else { [T::zero(), T::one()] };
        grads[i] = [w * (p[0] - target[0]), w * (p[1] - target[1])];
    }
    Ok(grads)
}
