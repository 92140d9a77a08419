//! Per-level classification targets and optional inverse-frequency sample
//! weights.
//!
//! Targets come in two flavors: hard one-hot vectors, and soft ordinal
//! labels that place a Gaussian over the distance between the target value
//! and each class representative, preserving ordinal proximity between
//! neighboring classes.

use crate::error::{Error, Result};
use crate::quantize::Hierarchy;
use crate::util;

/// Distribution over the classes of one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
    /// 1-based hierarchy level the label targets.
    pub level: usize,
}

/// Label construction mode for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelMode {
    OneHot,
    /// Gaussian-smoothed ordinal labels with bandwidth `sigma` in target units.
    Soft { sigma: f64 },
}

/// Hard one-hot label of `v` at `level` (out-of-range values clamp to the
/// boundary class).
pub fn one_hot(v: f64, hier: &Hierarchy, level: usize) -> Result<SoftLabel> {
    let (class, _) = hier.value_to_class(v, level)?;
    let classes = hier.classes_at(level)?;
    let mut probs = vec![0.0; classes];
    probs[class] = 1.0;
    Ok(SoftLabel { probs, level })
}

/// Gaussian-smoothed ordinal label: softmax of `-(v - r_j)^2 / (2 sigma^2)`
/// over the level's class representatives `r_j`.
pub fn sord_soft(v: f64, hier: &Hierarchy, level: usize, sigma: f64) -> Result<SoftLabel> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sord sigma must be positive, got {sigma}"
        )));
    }
    if v.is_nan() {
        return Err(Error::NonFinite("sord target value"));
    }
    let reps = hier.representatives(level)?;
    let scores: Vec<f64> = reps
        .iter()
        .map(|&r| -(v - r) * (v - r) / (2.0 * sigma * sigma))
        .collect();
    Ok(SoftLabel {
        probs: util::softmax(&scores),
        level,
    })
}

/// Default soft-label bandwidth: half the median finest-bin width, which
/// keeps the smoothing local to a class and its neighbors.
pub fn default_sord_sigma(hier: &Hierarchy) -> f64 {
    let edges = hier.finest().edges();
    let mut widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    widths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    0.5 * widths[widths.len() / 2]
}

/// Inverse smoothed-frequency sample weights (label distribution smoothing).
///
/// Finest-class counts are smoothed with a truncated Gaussian kernel over
/// class indices; each sample is weighted by the inverse smoothed count of
/// its class, then weights are rescaled to mean 1 over the training set.
pub fn lds_weights(
    train_values: &[f64],
    hier: &Hierarchy,
    kernel_half_width: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    if train_values.is_empty() {
        return Err(Error::EmptyInput("lds_weights train_values"));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lds sigma must be positive, got {sigma}"
        )));
    }
    let finest_level = hier.num_levels();
    let classes = hier.finest_classes();
    let mut counts = vec![0.0f64; classes];
    let mut sample_class = Vec::with_capacity(train_values.len());
    for &v in train_values {
        let (c, _) = hier.value_to_class(v, finest_level)?;
        counts[c] += 1.0;
        sample_class.push(c);
    }

    // truncated Gaussian kernel over class indices
    let kernel: Vec<f64> = (0..=kernel_half_width)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut smoothed = vec![0.0f64; classes];
    for (c, s) in smoothed.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (d, &k) in kernel.iter().enumerate() {
            if d == 0 {
                acc += k * counts[c];
                norm += k;
            } else {
                if c >= d {
                    acc += k * counts[c - d];
                    norm += k;
                }
                if c + d < classes {
                    acc += k * counts[c + d];
                    norm += k;
                }
            }
        }
        *s = acc / norm;
    }

    let raw: Vec<f64> = sample_class
        .iter()
        .map(|&c| {
            assert!(smoothed[c] > 0.0, "smoothed density vanished for class {c}");
            1.0 / smoothed[c]
        })
        .collect();
    let mean = util::mean(&raw);
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{build_finest_bins, build_hierarchy, BinEdges, BinScheme, SplitMode};

    fn uniform_hier(classes: usize, levels: usize) -> Hierarchy {
        let values: Vec<f64> = (0..2048).map(|i| i as f64 / 2047.0).collect();
        let finest = build_finest_bins(&values, BinScheme::Linear, classes).unwrap();
        build_hierarchy(finest, &values, levels, SplitMode::EqualCount).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn one_hot_marks_single_class() {
        let hier = uniform_hier(4, 3);
        // third bin of four covers (0.5, 0.75]
        let l = one_hot(0.6, &hier, 3).unwrap();
        assert_eq!(l.probs, vec![0.0, 0.0, 1.0, 0.0]);
        let lo = one_hot(hier.finest().v_min(), &hier, 3).unwrap();
        assert_eq!(lo.probs, vec![1.0, 0.0, 0.0, 0.0]);
        let clamped = one_hot(9.0, &hier, 3).unwrap();
        assert_eq!(clamped.probs, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(one_hot(f64::NAN, &hier, 3).is_err());
    }

    #[test]
    fn sord_symmetric_between_two_representatives() {
        // representatives exactly at 0 and 1
        let values = vec![0.0, 0.0, 1.0, 1.0];
        let finest = BinEdges::from_edges(vec![0.0, 0.5, 1.0], BinScheme::Linear).unwrap();
        let hier = build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap();
        for sigma in [0.1, 0.5, 2.0] {
            let l = sord_soft(0.5, &hier, 2, sigma).unwrap();
            assert_close(l.probs[0], 0.5, 1e-12);
            assert_close(l.probs[1], 0.5, 1e-12);
        }
    }

    #[test]
    fn sord_concentrates_to_one_hot_as_sigma_shrinks() {
        let hier = uniform_hier(4, 3);
        let v = 0.6;
        let l = sord_soft(v, &hier, 3, 1e-3).unwrap();
        let hard = one_hot(v, &hier, 3).unwrap();
        let am = crate::util::argmax(&l.probs);
        assert_eq!(am, crate::util::argmax(&hard.probs));
        assert!(l.probs[am] > 1.0 - 1e-9);
    }

    #[test]
    fn sord_matches_direct_formula() {
        // representatives 0, 1, 2; v = 0; sigma = 1:
        // softmax of [0, -0.5, -2]
        let values = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let finest = BinEdges::from_edges(vec![-0.5, 0.5, 1.5, 2.5], BinScheme::Linear).unwrap();
        let hier = build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap();
        assert_eq!(hier.representatives(2).unwrap(), &[0.0, 1.0, 2.0]);
        let l = sord_soft(0.0, &hier, 2, 1.0).unwrap();
        let e = [1.0, (-0.5f64).exp(), (-2.0f64).exp()];
        let s: f64 = e.iter().sum();
        assert_close(l.probs[0], e[0] / s, 1e-15);
        assert_close(l.probs[1], e[1] / s, 1e-15);
        assert_close(l.probs[2], e[2] / s, 1e-15);
        // frozen values of softmax([0, -0.5, -2])
        assert_close(l.probs[0], 0.574096992968, 1e-11);
        assert_close(l.probs[1], 0.348207427884, 1e-11);
        assert_close(l.probs[2], 0.077695579149, 1e-11);
    }

    #[test]
    fn sord_rejects_nonpositive_sigma() {
        let hier = uniform_hier(4, 3);
        assert!(sord_soft(0.5, &hier, 3, 0.0).is_err());
        assert!(sord_soft(0.5, &hier, 3, -1.0).is_err());
    }

    #[test]
    fn labels_normalize_to_one() {
        let hier = uniform_hier(8, 4);
        for &v in &[0.01, 0.3, 0.77, 0.999] {
            for h in 1..=4 {
                let l = sord_soft(v, &hier, h, 0.2).unwrap();
                assert!(crate::util::is_normalized(&l.probs, 1e-9));
                let o = one_hot(v, &hier, h).unwrap();
                assert!(crate::util::is_normalized(&o.probs, 1e-9));
            }
        }
    }

    #[test]
    fn sord_argmax_matches_class_at_representatives() {
        let hier = uniform_hier(8, 4);
        let reps = hier.representatives(4).unwrap().to_vec();
        for &r in &reps {
            let l = sord_soft(r, &hier, 4, 0.05).unwrap();
            let o = one_hot(r, &hier, 4).unwrap();
            assert_eq!(crate::util::argmax(&l.probs), crate::util::argmax(&o.probs));
        }
    }

    #[test]
    fn lds_uniform_counts_give_unit_weights() {
        let hier = uniform_hier(4, 3);
        let values: Vec<f64> = (0..400).map(|i| (i as f64 + 0.5) / 400.0).collect();
        let w = lds_weights(&values, &hier, 2, 1.0).unwrap();
        for &x in &w {
            assert_close(x, 1.0, 1e-9);
        }
    }

    #[test]
    fn lds_inverse_frequency_mean_normalized() {
        // two classes with counts 9 and 1, no smoothing: raw weights are
        // 1/9 and 1; rescaled to mean 1 over all ten samples they become
        // 5/9 and 5
        let mut values = vec![0.25; 9];
        values.push(0.75);
        let finest = BinEdges::from_edges(vec![0.0, 0.5, 1.0], BinScheme::Linear).unwrap();
        let hier = build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap();
        let w = lds_weights(&values, &hier, 0, 1.0).unwrap();
        for x in &w[..9] {
            assert_close(*x, 5.0 / 9.0, 1e-12);
        }
        assert_close(w[9], 5.0, 1e-12);
        assert_close(crate::util::mean(&w), 1.0, 1e-12);
    }

    #[test]
    fn lds_wide_kernel_flattens_weights() {
        let hier = uniform_hier(8, 4);
        // mildly uneven sample, heavily smoothed
        let mut values: Vec<f64> = (0..300).map(|i| (i as f64 + 0.5) / 300.0).collect();
        values.extend((0..40).map(|i| 0.1 + 0.8 * (i as f64 / 40.0)));
        let w = lds_weights(&values, &hier, 8, 50.0).unwrap();
        for &x in &w {
            assert!((x - 1.0).abs() < 0.1, "weight {x} should be near 1");
        }
    }

    #[test]
    fn lds_weight_order_reverses_count_order() {
        let mut values = Vec::new();
        values.extend(std::iter::repeat(0.1).take(30));
        values.extend(std::iter::repeat(0.4).take(10));
        values.extend(std::iter::repeat(0.9).take(3));
        let finest = BinEdges::from_edges(vec![0.0, 0.25, 0.6, 1.0], BinScheme::Linear).unwrap();
        let hier = build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap();
        let w = lds_weights(&values, &hier, 0, 1.0).unwrap();
        assert!(w[0] < w[30]);
        assert!(w[30] < w[40]);
        assert!(w.iter().all(|&x| x > 0.0 && x.is_finite()));
    }
}
