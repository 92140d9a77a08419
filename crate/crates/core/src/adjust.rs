//! Learning-free combination of the per-level probability vectors into a
//! single finest-level score vector, plus decoding to regression values.
//!
//! The coarse vectors vote on the finest classes by being spread over the
//! fine classes of their group — additively on probabilities, or additively
//! on clamped log-probabilities. The combined vectors are scores, not
//! probabilities; only the argmax is consumed downstream, and normalizing
//! would not change it.

use crate::error::{Error, Result};
use crate::quantize::{Hierarchy, TransitionMatrix};
use crate::util;

fn check_ensemble(level_probs: &[Vec<f64>], transitions: &[TransitionMatrix]) -> Result<usize> {
    if level_probs.is_empty() {
        return Err(Error::EmptyInput("ensemble probability vectors"));
    }
    if transitions.len() + 1 != level_probs.len() {
        return Err(Error::DimMismatch {
            expected: level_probs.len() - 1,
            got: transitions.len(),
            context: "one transition per coarse level",
        });
    }
    let fine = level_probs.last().unwrap().len();
    for (h, (p, t)) in level_probs.iter().zip(transitions).enumerate() {
        if t.rows() != p.len() {
            return Err(Error::DimMismatch {
                expected: t.rows(),
                got: p.len(),
                context: "coarse vector vs transition rows",
            });
        }
        if t.cols() != fine {
            return Err(Error::DimMismatch {
                expected: fine,
                got: t.cols(),
                context: "transition columns vs finest classes",
            });
        }
        let _ = h;
    }
    Ok(fine)
}

/// Additive adjustment: the finest vector plus every coarse vector spread
/// over its groups. Entries land in `[0, H]`.
pub fn hca_add(
    level_probs: &[Vec<f64>],
    transitions: &[TransitionMatrix],
) -> Result<Vec<f64>> {
    let fine = check_ensemble(level_probs, transitions)?;
    let mut scores = level_probs.last().unwrap().clone();
    for (p, t) in level_probs[..level_probs.len() - 1].iter().zip(transitions) {
        let up = t.upsample(p)?;
        for (s, u) in scores.iter_mut().zip(&up) {
            *s += u;
        }
    }
    debug_assert_eq!(scores.len(), fine);
    Ok(scores)
}

/// Multiplicative adjustment: sum of clamped log-probabilities across
/// levels, in the shape of a logit adjustment driven by the coarse heads.
pub fn hca_mul(
    level_probs: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log clamp eps must be positive, got {eps}"
        )));
    }
    check_ensemble(level_probs, transitions)?;
    let mut scores: Vec<f64> = level_probs
        .last()
        .unwrap()
        .iter()
        .map(|&p| p.max(eps).ln())
        .collect();
    for (p, t) in level_probs[..level_probs.len() - 1].iter().zip(transitions) {
        let logs: Vec<f64> = p.iter().map(|&x| x.max(eps).ln()).collect();
        let up = t.upsample(&logs)?;
        for (s, u) in scores.iter_mut().zip(&up) {
            *s += u;
        }
    }
    Ok(scores)
}

/// Plain ensemble average: each coarse vector is upsampled with its mass
/// divided equally among the fine classes of the group, then all levels are
/// averaged.
pub fn average_ensemble(
    level_probs: &[Vec<f64>],
    transitions: &[TransitionMatrix],
) -> Result<Vec<f64>> {
    check_ensemble(level_probs, transitions)?;
    let mut scores = level_probs.last().unwrap().clone();
    for (p, t) in level_probs[..level_probs.len() - 1].iter().zip(transitions) {
        let sizes = t.group_sizes();
        let split: Vec<f64> = p
            .iter()
            .zip(&sizes)
            .map(|(&x, &n)| x / n.max(1) as f64)
            .collect();
        let up = t.upsample(&split)?;
        for (s, u) in scores.iter_mut().zip(&up) {
            *s += u;
        }
    }
    let h = level_probs.len() as f64;
    Ok(scores.into_iter().map(|s| s / h).collect())
}

/// Argmax (lowest index on ties) decoded through the level's representative
/// values.
pub fn decode(scores: &[f64], hier: &Hierarchy, level: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score vector"));
    }
    let classes = hier.classes_at(level)?;
    if scores.len() != classes {
        return Err(Error::DimMismatch {
            expected: classes,
            got: scores.len(),
            context: "decode scores",
        });
    }
    hier.class_to_value(util::argmax(scores), level)
}
