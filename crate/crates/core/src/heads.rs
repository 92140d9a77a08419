//! Softmax classifier heads over fixed feature vectors: forward passes,
//! cross-entropy losses, closed-form gradients, and the first-stage
//! training loop that fits one head per hierarchy level.
//!
//! Feature extraction is out of scope; features arrive precomputed. That
//! makes the per-level heads parameter-independent, so training them
//! jointly under the summed loss equals training them side by side — the
//! loop still sums the per-level losses to keep one loss curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::labels::{self, LabelMode, SoftLabel};
use crate::quantize::Hierarchy;
use crate::util::{self, LOG_EPS};

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// A classifier head: logits over classes from a feature vector, with flat
/// parameter access for optimizers and finite-difference checks.
pub trait Classifier {
    fn feature_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    fn logits(&self, f: &[f64]) -> Result<Vec<f64>>;

    /// Softmax probabilities; always strictly positive and normalized.
    fn forward(&self, f: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(f)?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("classifier logits"));
        }
        Ok(util::softmax(&z))
    }

    /// Parameter gradient given the loss gradient at the logits, flattened
    /// in `params()` order.
    fn grad_from_dlogits(&self, f: &[f64], dlogits: &[f64]) -> Vec<f64>;
}

/// Single linear layer mapping features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// 1-based hierarchy level this head classifies.
    pub level: usize,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn init(level: usize, classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            level,
            weight: Matrix::uniform(classes, dim, bound, rng),
            bias: (0..classes).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }
}

impl Classifier for LinearHead {
    fn feature_dim(&self) -> usize {
        self.weight.cols
    }

    fn num_classes(&self) -> usize {
        self.weight.rows
    }

    fn param_count(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.weight.data.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let nw = self.weight.data.len();
        self.weight.data.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
    }

    fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                expected: self.feature_dim(),
                got: f.len(),
                context: "linear head input",
            });
        }
        let mut z = self.weight.matvec(f);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }

    fn grad_from_dlogits(&self, f: &[f64], dlogits: &[f64]) -> Vec<f64> {
        // dW = dlogits ⊗ f, db = dlogits
        let mut g = Vec::with_capacity(self.param_count());
        for &dz in dlogits {
            g.extend(f.iter().map(|&x| dz * x));
        }
        g.extend_from_slice(dlogits);
        g
    }
}

fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Two fully connected layers with a softplus hidden activation; the head
/// the hierarchical stack is distilled into.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerHead {
    pub hidden_weight: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

impl TwoLayerHead {
    /// Hidden width is `max(dim / 4, 1)`.
    pub fn init(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = (dim / 4).max(1);
        let b1 = 1.0 / (dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        Self {
            hidden_weight: Matrix::uniform(hidden, dim, b1, rng),
            hidden_bias: (0..hidden).map(|_| rng.gen_range(-b1..b1)).collect(),
            out_weight: Matrix::uniform(classes, hidden, b2, rng),
            out_bias: (0..classes).map(|_| rng.gen_range(-b2..b2)).collect(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_weight.rows
    }

    fn hidden_pre(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.hidden_weight.matvec(f);
        for (yi, bi) in y.iter_mut().zip(&self.hidden_bias) {
            *yi += bi;
        }
        y
    }
}

impl Classifier for TwoLayerHead {
    fn feature_dim(&self) -> usize {
        self.hidden_weight.cols
    }

    fn num_classes(&self) -> usize {
        self.out_weight.rows
    }

    fn param_count(&self) -> usize {
        self.hidden_weight.data.len()
            + self.hidden_bias.len()
            + self.out_weight.data.len()
            + self.out_bias.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.hidden_weight.data.clone();
        p.extend_from_slice(&self.hidden_bias);
        p.extend_from_slice(&self.out_weight.data);
        p.extend_from_slice(&self.out_bias);
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &params[at..at + n];
            at += n;
            s
        };
        let n1 = self.hidden_weight.data.len();
        self.hidden_weight.data.copy_from_slice(take(n1));
        let nb1 = self.hidden_bias.len();
        self.hidden_bias.copy_from_slice(take(nb1));
        let n2 = self.out_weight.data.len();
        self.out_weight.data.copy_from_slice(take(n2));
        let nb2 = self.out_bias.len();
        self.out_bias.copy_from_slice(take(nb2));
    }

    fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                expected: self.feature_dim(),
                got: f.len(),
                context: "two-layer head input",
            });
        }
        let act: Vec<f64> = self.hidden_pre(f).iter().map(|&y| softplus(y)).collect();
        let mut z = self.out_weight.matvec(&act);
        for (zi, bi) in z.iter_mut().zip(&self.out_bias) {
            *zi += bi;
        }
        Ok(z)
    }

    fn grad_from_dlogits(&self, f: &[f64], dlogits: &[f64]) -> Vec<f64> {
        let pre = self.hidden_pre(f);
        let act: Vec<f64> = pre.iter().map(|&y| softplus(y)).collect();

        // output layer
        let mut g_out_w = Vec::with_capacity(self.out_weight.data.len());
        for &dz in dlogits {
            g_out_w.extend(act.iter().map(|&a| dz * a));
        }
        // back through the hidden activation (softplus' = logistic)
        let mut d_act = vec![0.0; act.len()];
        for (c, &dz) in dlogits.iter().enumerate() {
            for (j, da) in d_act.iter_mut().enumerate() {
                *da += dz * self.out_weight.row(c)[j];
            }
        }
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&pre)
            .map(|(&da, &y)| da * logistic(y))
            .collect();

        let mut g = Vec::with_capacity(self.param_count());
        for &dy in &d_pre {
            g.extend(f.iter().map(|&x| dy * x));
        }
        g.extend_from_slice(&d_pre);
        g.extend(g_out_w);
        g.extend_from_slice(dlogits);
        g
    }
}

// ---------------------------------------------------------------------------
// losses and gradients
// ---------------------------------------------------------------------------

/// Weighted cross entropy `-w * Σ_j t_j log p_j` with the log argument
/// clamped at 1e-12.
pub fn ce_loss(pred: &[f64], target: &SoftLabel, weight: f64) -> Result<f64> {
    if pred.len() != target.probs.len() {
        return Err(Error::DimMismatch {
            expected: target.probs.len(),
            got: pred.len(),
            context: "cross entropy",
        });
    }
    Ok(-weight
        * target
            .probs
            .iter()
            .zip(pred)
            .map(|(&t, &p)| if t > 0.0 { t * p.max(LOG_EPS).ln() } else { 0.0 })
            .sum::<f64>())
}

/// Gradient of the weighted softmax cross entropy at the logits:
/// `w * (p - t)`.
pub fn ce_grad_logits(pred: &[f64], target: &SoftLabel, weight: f64) -> Vec<f64> {
    pred.iter()
        .zip(&target.probs)
        .map(|(&p, &t)| weight * (p - t))
        .collect()
}

/// Cross-entropy loss and flat parameter gradient for one sample.
pub fn grad_ce(
    head: &dyn Classifier,
    f: &[f64],
    target: &SoftLabel,
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let pred = head.forward(f)?;
    let loss = ce_loss(&pred, target, weight)?;
    let dlogits = ce_grad_logits(&pred, target, weight);
    let grads = head.grad_from_dlogits(f, &dlogits);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("cross-entropy gradient"));
    }
    Ok((loss, grads))
}

/// Back-propagate a gradient at the probability vector through the softmax:
/// `dz_k = p_k (g_k - Σ_j g_j p_j)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(dprobs)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}

/// Central finite-difference gradient of an arbitrary scalar loss over a
/// head's flat parameters. This is the independent oracle every analytic
/// gradient in the crate is checked against.
pub fn finite_difference_grad<C: Classifier + Clone>(
    head: &C,
    loss_fn: &mut dyn FnMut(&C) -> f64,
    step: f64,
) -> Vec<f64> {
    let base = head.params();
    let mut probe = head.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + step;
        probe.set_params(&p);
        let up = loss_fn(&probe);
        p[i] = base[i] - step;
        probe.set_params(&p);
        let down = loss_fn(&probe);
        p[i] = base[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Largest elementwise relative disagreement between two gradients, with an
/// absolute floor of 1e-8 on the denominator.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Unweighted sum of per-level cross entropies: one head and one label per
/// level, ordered coarse to fine.
pub fn total_stage1_loss(
    heads: &[LinearHead],
    f: &[f64],
    targets: &[SoftLabel],
    weight: f64,
) -> Result<f64> {
    if heads.len() != targets.len() {
        return Err(Error::DimMismatch {
            expected: heads.len(),
            got: targets.len(),
            context: "per-level labels",
        });
    }
    let mut total = 0.0;
    for (head, label) in heads.iter().zip(targets) {
        if head.level != label.level {
            return Err(Error::InvalidArgument(format!(
                "label for level {} paired with head for level {}",
                label.level, head.level
            )));
        }
        let pred = head.forward(f)?;
        total += ce_loss(&pred, label, weight)?;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// optimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
    Adam,
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::SgdMomentum => "sgd-momentum",
            Optimizer::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "epochs, batch size, and learning rate must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-head optimizer state over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    kind: Optimizer,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptState {
    pub fn new(kind: Optimizer, n: usize) -> Self {
        Self {
            kind,
            step: 0,
            first: vec![0.0; n],
            second: if kind == Optimizer::Adam {
                vec![0.0; n]
            } else {
                Vec::new()
            },
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for ((p, &g), _) in params.iter_mut().zip(grads).zip(0..) {
                    *p -= lr * (g + weight_decay * *p);
                }
            }
            Optimizer::SgdMomentum => {
                for ((p, &g), m) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    *m = 0.9 * *m + g + weight_decay * *p;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - 0.9f64.powi(t);
                let bc2 = 1.0 - 0.999f64.powi(t);
                for (i, (p, &g0)) in params.iter_mut().zip(grads).enumerate() {
                    let g = g0 + weight_decay * *p;
                    self.first[i] = 0.9 * self.first[i] + 0.1 * g;
                    self.second[i] = 0.999 * self.second[i] + 0.001 * g * g;
                    let m_hat = self.first[i] / bc1;
                    let v_hat = self.second[i] / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + 1e-8);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// stage-1 training
// ---------------------------------------------------------------------------

/// Inverse-frequency reweighting parameters (see [`labels::lds_weights`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdsParams {
    pub kernel_half_width: usize,
    pub sigma: f64,
}

impl Default for LdsParams {
    fn default() -> Self {
        Self {
            kernel_half_width: 2,
            sigma: 1.0,
        }
    }
}

/// Loss curve and per-level validation accuracy, one entry per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    /// `val_accuracy[epoch][level-1]`; empty when the dataset has no val split.
    pub val_accuracy: Vec<Vec<f64>>,
    pub stopped_early: bool,
}

/// Train one linear head per hierarchy level under the summed per-level
/// cross entropy. Deterministic given `cfg.seed`.
pub fn train_stage1(
    dataset: &Dataset,
    hier: &Hierarchy,
    label_mode: LabelMode,
    lds: Option<LdsParams>,
    cfg: &TrainConfig,
) -> Result<(Vec<LinearHead>, TrainLog)> {
    cfg.validate()?;
    let features = dataset.features_of(Split::Train);
    let targets = dataset.targets_of(Split::Train);
    if features.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    let dim = dataset.feature_dim;
    let h_total = hier.num_levels();

    // per-sample per-level labels, computed once
    let label_of = |v: f64, level: usize| -> Result<SoftLabel> {
        match label_mode {
            LabelMode::OneHot => labels::one_hot(v, hier, level),
            LabelMode::Soft { sigma } => labels::sord_soft(v, hier, level, sigma),
        }
    };
    let mut sample_labels: Vec<Vec<SoftLabel>> = Vec::with_capacity(targets.len());
    for &v in &targets {
        let per_level = (1..=h_total)
            .map(|h| label_of(v, h))
            .collect::<Result<Vec<_>>>()?;
        sample_labels.push(per_level);
    }

    let weights = match lds {
        Some(p) => labels::lds_weights(&targets, hier, p.kernel_half_width, p.sigma)?,
        None => vec![1.0; targets.len()],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut heads: Vec<LinearHead> = (1..=h_total)
        .map(|h| LinearHead::init(h, hier.classes_at(h).expect("level"), dim, &mut rng))
        .collect();
    let mut params: Vec<Vec<f64>> = heads.iter().map(|h| h.params()).collect();
    let mut opt: Vec<OptState> = heads
        .iter()
        .map(|h| OptState::new(cfg.optimizer, h.param_count()))
        .collect();

    let val_features = dataset.features_of(Split::Val);
    let val_targets = dataset.targets_of(Split::Val);

    let mut log = TrainLog::default();
    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for (k, head) in heads.iter_mut().enumerate() {
                head.set_params(&params[k]);
                let mut grad_acc = vec![0.0; head.param_count()];
                let mut batch_loss = 0.0;
                for &i in batch {
                    let label = &sample_labels[i][k];
                    // runaway parameters show up as non-finite logits; report
                    // them as divergence with the epoch/batch diagnostic
                    let pred = head.forward(features[i]).map_err(|e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            epoch,
                            batch: batch_idx,
                        },
                        other => other,
                    })?;
                    batch_loss += ce_loss(&pred, label, weights[i])?;
                    let dlogits = ce_grad_logits(&pred, label, weights[i] * scale);
                    let g = head.grad_from_dlogits(features[i], &dlogits);
                    for (acc, gi) in grad_acc.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss += batch_loss;
                opt[k].apply(&mut params[k], &grad_acc, cfg.learning_rate, cfg.weight_decay);
            }
        }
        for (head, p) in heads.iter_mut().zip(&params) {
            head.set_params(p);
        }
        log.epoch_loss.push(epoch_loss / n as f64);

        if !val_features.is_empty() {
            let mut accs = Vec::with_capacity(h_total);
            for (k, head) in heads.iter().enumerate() {
                let mut hit = 0usize;
                for (f, &v) in val_features.iter().zip(&val_targets) {
                    let pred = head.forward(f)?;
                    let (truth, _) = hier.value_to_class(v, k + 1)?;
                    if util::argmax(&pred) == truth {
                        hit += 1;
                    }
                }
                accs.push(hit as f64 / val_features.len() as f64);
            }
            log.val_accuracy.push(accs);
        }
    }

    Ok((heads, log))
}
