//! Distillation of the frozen hierarchical ensemble into a single head.
//!
//! The student predicts over the finest classes; to compare it against a
//! coarse teacher its probability vector must be pooled down to the
//! teacher's resolution. Summing group members is the conventional choice
//! but does not preserve the predicted range: the coarse argmax of the
//! pooled vector can point at a different group than the one containing the
//! student's own fine argmax. Taking the group maximum (then renormalizing)
//! does preserve it — the pooled argmax is always the group of the fine
//! argmax, with ties broken toward lower indices on both sides.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::{
    softmax_backward, Classifier, LinearHead, OptState, TrainConfig, TrainLog, TwoLayerHead,
};
use crate::quantize::{Hierarchy, TransitionMatrix};
use crate::util::{self, LOG_EPS};

/// Pooling used to align a fine vector with a coarse level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Sum the group members; not range-preserving.
    Sum,
    /// Take the group maximum and renormalize; range-preserving.
    Max,
}

impl Alignment {
    pub fn name(&self) -> &'static str {
        match self {
            Alignment::Sum => "sum",
            Alignment::Max => "max",
        }
    }
}

fn check_fine(fine: &[f64], t: &TransitionMatrix) -> Result<()> {
    if fine.len() != t.cols() {
        return Err(Error::DimMismatch {
            expected: t.cols(),
            got: fine.len(),
            context: "pooling input",
        });
    }
    Ok(())
}

/// Downsample by summing each group's entries. Keeps normalization since
/// the groups partition the fine classes.
pub fn sum_pool(fine: &[f64], t: &TransitionMatrix) -> Result<Vec<f64>> {
    check_fine(fine, t)?;
    let mut coarse = vec![0.0; t.rows()];
    for (u, &p) in fine.iter().enumerate() {
        coarse[t.group_of()[u]] += p;
    }
    Ok(coarse)
}

/// Downsample by taking each group's maximum, then renormalize.
pub fn max_pool_norm(fine: &[f64], t: &TransitionMatrix) -> Result<Vec<f64>> {
    check_fine(fine, t)?;
    let mut coarse = vec![f64::NEG_INFINITY; t.rows()];
    for (u, &p) in fine.iter().enumerate() {
        let g = t.group_of()[u];
        if p > coarse[g] {
            coarse[g] = p;
        }
    }
    let total: f64 = coarse.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "max pooling needs a positive entry".into(),
        ));
    }
    Ok(coarse.into_iter().map(|m| m / total).collect())
}

/// Pool `fine` down to the coarse resolution of `t`.
pub fn align(fine: &[f64], t: &TransitionMatrix, alignment: Alignment) -> Result<Vec<f64>> {
    match alignment {
        Alignment::Sum => sum_pool(fine, t),
        Alignment::Max => max_pool_norm(fine, t),
    }
}

/// `KL(teacher || student)` with both log arguments clamped at 1e-12.
/// Gradients flow to the student only; teachers are frozen.
pub fn kl_div(teacher: &[f64], student: &[f64]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::DimMismatch {
            expected: teacher.len(),
            got: student.len(),
            context: "KL divergence",
        });
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| {
            if t > 0.0 {
                t * (t.max(LOG_EPS).ln() - s.max(LOG_EPS).ln())
            } else {
                0.0
            }
        })
        .sum())
}

/// Distillation loss: sum over levels of the KL between each teacher and
/// the aligned student vector. The finest teacher is compared against the
/// student directly.
pub fn hd_loss(
    student_fine: &[f64],
    teachers: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> Result<f64> {
    if teachers.len() != transitions.len() + 1 {
        return Err(Error::DimMismatch {
            expected: transitions.len() + 1,
            got: teachers.len(),
            context: "one teacher per level",
        });
    }
    let mut total = 0.0;
    for (teacher, t) in teachers[..teachers.len() - 1].iter().zip(transitions) {
        let pooled = align(student_fine, t, alignment)?;
        total += kl_div(teacher, &pooled)?;
    }
    total += kl_div(teachers.last().unwrap(), student_fine)?;
    Ok(total)
}

/// Gradient of [`hd_loss`] at the student's fine probability vector.
fn hd_dprobs(
    student_fine: &[f64],
    teachers: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> Result<Vec<f64>> {
    let fine = student_fine.len();
    let mut dprobs = vec![0.0; fine];

    // finest level: d/ds KL(t||s) = -t/s (zero where the log is clamped)
    for ((d, &s), &t) in dprobs
        .iter_mut()
        .zip(student_fine)
        .zip(teachers.last().unwrap())
    {
        if s > LOG_EPS && t > 0.0 {
            *d -= t / s;
        }
    }

    for (teacher, t) in teachers[..teachers.len() - 1].iter().zip(transitions) {
        match alignment {
            Alignment::Sum => {
                let pooled = sum_pool(student_fine, t)?;
                for (u, d) in dprobs.iter_mut().enumerate() {
                    let v = t.group_of()[u];
                    if pooled[v] > LOG_EPS && teacher[v] > 0.0 {
                        *d -= teacher[v] / pooled[v];
                    }
                }
            }
            Alignment::Max => {
                // recompute the group maxima and their (lowest-index) argmax
                let rows = t.rows();
                let mut maxima = vec![f64::NEG_INFINITY; rows];
                let mut arg = vec![0usize; rows];
                for (u, &p) in student_fine.iter().enumerate() {
                    let g = t.group_of()[u];
                    if p > maxima[g] {
                        maxima[g] = p;
                        arg[g] = u;
                    }
                }
                let total: f64 = maxima.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::InvalidArgument(
                        "max pooling needs a positive entry".into(),
                    ));
                }
                let pooled: Vec<f64> = maxima.iter().map(|&m| m / total).collect();
                let dq: Vec<f64> = pooled
                    .iter()
                    .zip(teacher)
                    .map(|(&q, &tv)| {
                        if q > LOG_EPS && tv > 0.0 {
                            -tv / q
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let dot: f64 = dq.iter().zip(&pooled).map(|(&g, &q)| g * q).sum();
                for v in 0..rows {
                    // quotient rule through the normalization, routed only to
                    // each group's argmax entry
                    dprobs[arg[v]] += (dq[v] - dot) / total;
                }
            }
        }
    }
    Ok(dprobs)
}

/// Distillation loss and flat parameter gradient for one sample.
pub fn grad_hd(
    head: &dyn Classifier,
    f: &[f64],
    teachers: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> Result<(f64, Vec<f64>)> {
    let probs = head.forward(f)?;
    let loss = hd_loss(&probs, teachers, transitions, alignment)?;
    let dprobs = hd_dprobs(&probs, teachers, transitions, alignment)?;
    let dlogits = softmax_backward(&probs, &dprobs);
    let grads = head.grad_from_dlogits(f, &dlogits);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("distillation gradient"));
    }
    Ok((loss, grads))
}

/// Range consistency of `fine` against a single coarse level: true when the
/// aligned coarse argmax is the group containing the fine argmax.
pub fn range_preserving_at(fine: &[f64], t: &TransitionMatrix, alignment: Alignment) -> bool {
    let Ok(pooled) = align(fine, t, alignment) else {
        return false;
    };
    let u = util::argmax(fine);
    let v = util::argmax(&pooled);
    t.entry(v, u) == 1
}

/// Range consistency across every coarse level.
pub fn check_range_preserving(
    fine: &[f64],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> bool {
    transitions
        .iter()
        .all(|t| range_preserving_at(fine, t, alignment))
}

/// Run the frozen stage-1 heads over a feature set once, producing
/// per-sample per-level teacher distributions.
pub fn cache_teacher_outputs(
    heads: &[LinearHead],
    features: &[&[f64]],
) -> Result<Vec<Vec<Vec<f64>>>> {
    features
        .iter()
        .map(|f| heads.iter().map(|h| h.forward(f)).collect())
        .collect()
}

/// Stage-2 epoch budget: 20% of the stage-1 epochs.
pub fn stage2_epochs(stage1_epochs: usize) -> usize {
    (stage1_epochs / 5).max(1)
}

/// Early-stop plateau window for stage 2 (epochs without relative
/// improvement of the epoch loss).
pub const STAGE2_PLATEAU_WINDOW: usize = 10;
pub const STAGE2_PLATEAU_REL: f64 = 1e-4;

/// Distill cached teacher outputs into a fresh two-layer head.
///
/// Teachers and features are frozen; only the student head trains. Stops
/// early once the epoch loss plateaus (no relative improvement of
/// [`STAGE2_PLATEAU_REL`] for [`STAGE2_PLATEAU_WINDOW`] epochs).
pub fn train_stage2(
    features: &[&[f64]],
    teacher_probs: &[Vec<Vec<f64>>],
    hier: &Hierarchy,
    alignment: Alignment,
    cfg: &TrainConfig,
) -> Result<(TwoLayerHead, TrainLog)> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyInput("stage-2 features"));
    }
    if features.len() != teacher_probs.len() {
        return Err(Error::DimMismatch {
            expected: features.len(),
            got: teacher_probs.len(),
            context: "cached teacher outputs",
        });
    }
    let dim = features[0].len();
    let classes = hier.finest_classes();
    let transitions = hier.transitions();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = TwoLayerHead::init(classes, dim, &mut rng);
    let mut params = head.params();
    let mut opt = OptState::new(cfg.optimizer, params.len());

    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            head.set_params(&params);
            let scale = 1.0 / batch.len() as f64;
            let mut grad_acc = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g) = grad_hd(
                    &head,
                    features[i],
                    &teacher_probs[i],
                    &transitions,
                    alignment,
                )
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        batch: batch_idx,
                    },
                    other => other,
                })?;
                batch_loss += loss;
                for (acc, gi) in grad_acc.iter_mut().zip(&g) {
                    *acc += gi * scale;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss;
            opt.apply(&mut params, &grad_acc, cfg.learning_rate, cfg.weight_decay);
        }
        head.set_params(&params);
        let mean_loss = epoch_loss / n as f64;
        log.epoch_loss.push(mean_loss);

        if mean_loss < best * (1.0 - STAGE2_PLATEAU_REL) {
            best = mean_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= STAGE2_PLATEAU_WINDOW {
                log.stopped_early = true;
                break;
            }
        }
    }

    Ok((head, log))
}
