//! Regression and imbalance-aware evaluation: MAE, RMSE, balanced MAE over
//! target bins, many/medium/few-shot slicing by training count, the
//! quantization-error floor of each level, and range-consistency rates of
//! pooled predictions.

use crate::distill::{range_preserving_at, Alignment};
use crate::error::{Error, Result};
use crate::quantize::{Hierarchy, TransitionMatrix};
use crate::util;

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_paired(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_paired(preds, targets)?;
    Ok((preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
        .sqrt())
}

fn check_paired(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if preds.len() != targets.len() {
        return Err(Error::DimMismatch {
            expected: targets.len(),
            got: preds.len(),
            context: "predictions vs targets",
        });
    }
    Ok(())
}

/// Balanced MAE: group test targets by their finest bin and average the
/// per-bin MAE over the non-empty bins, weighting rare target ranges the
/// same as dense ones.
pub fn bmae(preds: &[f64], targets: &[f64], hier: &Hierarchy) -> Result<f64> {
    let per_class = per_class_mae(preds, targets, hier)?;
    let (sum, bins) = per_class
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &m| (s + m, n + 1));
    if bins == 0 {
        return Err(Error::EmptyInput("no populated bins"));
    }
    Ok(sum / bins as f64)
}

/// Per-finest-bin MAE of the test targets; `None` for bins without samples.
pub fn per_class_mae(
    preds: &[f64],
    targets: &[f64],
    hier: &Hierarchy,
) -> Result<Vec<Option<f64>>> {
    check_paired(preds, targets)?;
    let classes = hier.finest_classes();
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &t) in preds.iter().zip(targets) {
        let (c, _) = hier.finest().class_of(t)?;
        sums[c] += (p - t).abs();
        counts[c] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| if n > 0 { Some(s / n as f64) } else { None })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shot {
    Many,
    Medium,
    Few,
}

impl Shot {
    pub fn name(&self) -> &'static str {
        match self {
            Shot::Many => "many",
            Shot::Medium => "medium",
            Shot::Few => "few",
        }
    }
}

/// Training-count thresholds: `many` strictly above `hi`, `few` strictly
/// below `lo`, `medium` in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotThresholds {
    pub hi: usize,
    pub lo: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self { hi: 100, lo: 20 }
    }
}

/// Assign each finest bin a shot category from its training count.
pub fn shot_split(train_counts: &[usize], th: &ShotThresholds) -> Result<Vec<Shot>> {
    if th.lo >= th.hi {
        return Err(Error::InvalidArgument(format!(
            "shot thresholds need lo < hi, got lo={} hi={}",
            th.lo, th.hi
        )));
    }
    Ok(train_counts
        .iter()
        .map(|&c| {
            if c > th.hi {
                Shot::Many
            } else if c < th.lo {
                Shot::Few
            } else {
                Shot::Medium
            }
        })
        .collect())
}

/// MAE between targets and their own bin representatives at `level`: the
/// error floor of a perfect classifier at that granularity.
pub fn quantization_error(targets: &[f64], hier: &Hierarchy, level: usize) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("quantization_error targets"));
    }
    let mut total = 0.0;
    for &t in targets {
        let (c, _) = hier.value_to_class(t, level)?;
        total += (t - hier.class_to_value(c, level)?).abs();
    }
    Ok(total / targets.len() as f64)
}

/// Fraction of samples whose fine prediction violates range consistency at
/// each coarse level or any coarser one, so the series is non-decreasing
/// by construction. All zeros under max alignment.
pub fn inconsistency_rate(
    batch: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("inconsistency batch"));
    }
    let mut counts = vec![0usize; transitions.len()];
    for fine in batch {
        let mut violated = false;
        for (h, t) in transitions.iter().enumerate() {
            violated = violated || !range_preserving_at(fine, t, alignment);
            if violated {
                counts[h] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / batch.len() as f64)
        .collect())
}

/// Mean maximum entry of the batch pooled to each coarse level (the finest
/// level is included last).
pub fn mean_max_prob(
    batch: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    alignment: Alignment,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("mean_max_prob batch"));
    }
    let mut out = Vec::with_capacity(transitions.len() + 1);
    for t in transitions {
        let mut acc = 0.0;
        for fine in batch {
            let pooled = crate::distill::align(fine, t, alignment)?;
            acc += pooled[util::argmax(&pooled)];
        }
        out.push(acc / batch.len() as f64);
    }
    let acc: f64 = batch.iter().map(|f| f[util::argmax(f)]).sum();
    out.push(acc / batch.len() as f64);
    Ok(out)
}

/// Scalar per shot category; a category without samples carries `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotScalars {
    pub all: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShotCounts {
    pub all: usize,
    pub many: usize,
    pub medium: usize,
    pub few: usize,
}

/// Full evaluation of decoded predictions on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: ShotScalars,
    pub bmae: ShotScalars,
    pub rmse: f64,
    pub per_class_mae: Vec<Option<f64>>,
    /// Error floor of the finest quantization on these targets.
    pub quantization_error: f64,
    pub counts: ShotCounts,
    /// Test targets outside the training range, clamped into boundary bins.
    pub clamped: usize,
}

/// Evaluate predictions against targets with per-shot breakdowns driven by
/// the training counts per finest bin.
pub fn evaluate(
    preds: &[f64],
    targets: &[f64],
    hier: &Hierarchy,
    train_counts: &[usize],
    th: &ShotThresholds,
) -> Result<EvalReport> {
    check_paired(preds, targets)?;
    let classes = hier.finest_classes();
    if train_counts.len() != classes {
        return Err(Error::DimMismatch {
            expected: classes,
            got: train_counts.len(),
            context: "train counts per finest bin",
        });
    }
    let shots = shot_split(train_counts, th)?;
    let finest_level = hier.num_levels();

    let mut clamped = 0usize;
    let mut bin_of = Vec::with_capacity(targets.len());
    for &t in targets {
        let (c, was_clamped) = hier.finest().class_of(t)?;
        clamped += usize::from(was_clamped);
        bin_of.push(c);
    }

    let mut err_sum = vec![0.0; classes];
    let mut err_n = vec![0usize; classes];
    let mut sq_sum = 0.0;
    for ((&p, &t), &c) in preds.iter().zip(targets).zip(&bin_of) {
        let e = (p - t).abs();
        err_sum[c] += e;
        err_n[c] += 1;
        sq_sum += e * e;
    }

    let slice = |keep: &dyn Fn(usize) -> bool| -> (Option<f64>, Option<f64>, usize) {
        // (mae, bmae, sample count) over the kept bins
        let mut sample_sum = 0.0;
        let mut samples = 0usize;
        let mut bin_sum = 0.0;
        let mut bins = 0usize;
        for c in 0..classes {
            if keep(c) && err_n[c] > 0 {
                sample_sum += err_sum[c];
                samples += err_n[c];
                bin_sum += err_sum[c] / err_n[c] as f64;
                bins += 1;
            }
        }
        if samples == 0 {
            (None, None, 0)
        } else {
            (
                Some(sample_sum / samples as f64),
                Some(bin_sum / bins as f64),
                samples,
            )
        }
    };

    let (mae_all, bmae_all, n_all) = slice(&|_| true);
    let (mae_many, bmae_many, n_many) = slice(&|c| shots[c] == Shot::Many);
    let (mae_med, bmae_med, n_med) = slice(&|c| shots[c] == Shot::Medium);
    let (mae_few, bmae_few, n_few) = slice(&|c| shots[c] == Shot::Few);

    Ok(EvalReport {
        mae: ShotScalars {
            all: mae_all.expect("non-empty test set"),
            many: mae_many,
            medium: mae_med,
            few: mae_few,
        },
        bmae: ShotScalars {
            all: bmae_all.expect("non-empty test set"),
            many: bmae_many,
            medium: bmae_med,
            few: bmae_few,
        },
        rmse: (sq_sum / preds.len() as f64).sqrt(),
        per_class_mae: err_sum
            .iter()
            .zip(&err_n)
            .map(|(&s, &n)| if n > 0 { Some(s / n as f64) } else { None })
            .collect(),
        quantization_error: quantization_error(targets, hier, finest_level)?,
        counts: ShotCounts {
            all: n_all,
            many: n_many,
            medium: n_med,
            few: n_few,
        },
        clamped,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "method,bmae_all,bmae_many,bmae_medium,bmae_few,mae_all,mae_many,mae_medium,mae_few,\
         rmse,quantization_error,n_all,n_many,n_medium,n_few,clamped";

    pub fn csv_row(&self, method: &str) -> String {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
        format!(
            "{method},{:.6},{},{},{},{:.6},{},{},{},{:.6},{:.6},{},{},{},{},{}",
            self.bmae.all,
            opt(self.bmae.many),
            opt(self.bmae.medium),
            opt(self.bmae.few),
            self.mae.all,
            opt(self.mae.many),
            opt(self.mae.medium),
            opt(self.mae.few),
            self.rmse,
            self.quantization_error,
            self.counts.all,
            self.counts.many,
            self.counts.medium,
            self.counts.few,
            self.clamped
        )
    }

    pub const MARKDOWN_HEADER: &'static str = "| Method | bMAE All | bMAE Many | bMAE Med. | bMAE Few | MAE All | MAE Many | MAE Med. | MAE Few | RMSE |\n|---|---|---|---|---|---|---|---|---|---|";

    pub fn markdown_row(&self, method: &str) -> String {
        format!(
            "| {method} | {:.4} | {} | {} | {} | {:.4} | {} | {} | {} | {:.4} |",
            self.bmae.all,
            fmt_opt(self.bmae.many),
            fmt_opt(self.bmae.medium),
            fmt_opt(self.bmae.few),
            self.mae.all,
            fmt_opt(self.mae.many),
            fmt_opt(self.mae.medium),
            fmt_opt(self.mae.few),
            self.rmse,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{build_finest_bins, build_hierarchy, BinEdges, BinScheme, SplitMode};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn hier_two_bins() -> Hierarchy {
        let values = vec![0.25, 0.3, 0.75, 0.8];
        let finest = BinEdges::from_edges(vec![0.0, 0.5, 1.0], BinScheme::Linear).unwrap();
        build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap()
    }

    #[test]
    fn mae_basics() {
        assert_close(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0, 0.0);
        assert_close(mae(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 1.0, 1e-15);
        // constant offset
        let t = [0.5, 1.5, 7.0];
        let p: Vec<f64> = t.iter().map(|x| x + 0.3).collect();
        assert_close(mae(&p, &t).unwrap(), 0.3, 1e-12);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_basics() {
        assert_close(rmse(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0, 0.0);
        assert_close(
            rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(),
            12.5f64.sqrt(),
            1e-12,
        );
    }

    #[test]
    fn rmse_dominates_mae() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..30);
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() - 1e-12);
        }
    }

    #[test]
    fn bmae_averages_per_bin_errors() {
        let hier = hier_two_bins();
        // bin A gets errors {1, 1}, bin B gets {3}
        let targets = [0.25, 0.3, 0.75];
        let preds = [1.25, 1.3, 3.75];
        assert_close(bmae(&preds, &targets, &hier).unwrap(), 2.0, 1e-12);
        assert_close(mae(&preds, &targets).unwrap(), 5.0 / 3.0, 1e-12);
    }

    #[test]
    fn bmae_equals_mae_on_balanced_bins() {
        let hier = hier_two_bins();
        let targets = [0.2, 0.4, 0.6, 0.9];
        let preds = [0.25, 0.31, 0.77, 1.02];
        assert_close(
            bmae(&preds, &targets, &hier).unwrap(),
            mae(&preds, &targets).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn bmae_equals_mae_on_single_bin() {
        let hier = hier_two_bins();
        let targets = [0.1, 0.2, 0.3];
        let preds = [0.15, 0.1, 0.45];
        assert_close(
            bmae(&preds, &targets, &hier).unwrap(),
            mae(&preds, &targets).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn shot_split_applies_thresholds() {
        let th = ShotThresholds::default();
        let shots = shot_split(&[500, 50, 5], &th).unwrap();
        assert_eq!(shots, vec![Shot::Many, Shot::Medium, Shot::Few]);
        // everything above hi
        let shots = shot_split(&[101, 5000, 200], &th).unwrap();
        assert!(shots.iter().all(|s| *s == Shot::Many));
        // boundary count equals hi -> medium (strict inequality)
        let shots = shot_split(&[100, 20], &th).unwrap();
        assert_eq!(shots, vec![Shot::Medium, Shot::Medium]);
        assert!(shot_split(&[1], &ShotThresholds { hi: 10, lo: 10 }).is_err());
    }

    #[test]
    fn quantization_error_zero_at_representatives() {
        let hier = hier_two_bins();
        let reps = hier.representatives(2).unwrap().to_vec();
        assert_close(quantization_error(&reps, &hier, 2).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn quantization_error_uniform_single_bin() {
        // uniform targets on [0,2] with one bin: the representative is the
        // sample mean (~1), so the error approaches E|u - 1| = 0.5
        let values: Vec<f64> = (0..4000).map(|i| 2.0 * (i as f64 + 0.5) / 4000.0).collect();
        let finest = BinEdges::from_edges(vec![0.0, 2.0], BinScheme::Linear).unwrap();
        let hier = build_hierarchy(finest, &values, 2, SplitMode::EqualLength).unwrap();
        let q = quantization_error(&values, &hier, 1).unwrap();
        assert_close(q, 0.5, 1e-2);
        // and it matches an independent mean-absolute-deviation loop exactly
        let rep = hier.class_to_value(0, 1).unwrap();
        let mad = values.iter().map(|v| (v - rep).abs()).sum::<f64>() / values.len() as f64;
        assert_close(q, mad, 1e-12);
    }

    #[test]
    fn quantization_error_monotone_in_level() {
        let values: Vec<f64> = (0..3000)
            .map(|i| {
                let u = (i as f64 + 0.5) / 3000.0;
                -6.0 * (1.0 - u).ln()
            })
            .collect();
        let finest = build_finest_bins(&values, BinScheme::Linear, 16).unwrap();
        let hier = build_hierarchy(finest, &values, 5, SplitMode::EqualCount).unwrap();
        let mut prev = f64::INFINITY;
        for h in 1..=hier.num_levels() {
            let q = quantization_error(&values, &hier, h).unwrap();
            assert!(q <= prev + 1e-12, "level {h}: {q} > {prev}");
            prev = q;
        }
    }

    #[test]
    fn inconsistency_zero_under_max_alignment() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let transitions = vec![
            TransitionMatrix::from_group_of(2, vec![0, 0, 0, 0, 1, 1, 1, 1]),
            TransitionMatrix::from_group_of(4, vec![0, 0, 1, 1, 2, 2, 3, 3]),
        ];
        let batch: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let mut v: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            })
            .collect();
        let rates = inconsistency_rate(&batch, &transitions, Alignment::Max).unwrap();
        assert_eq!(rates, vec![0.0, 0.0]);
        // one-hot batch is consistent even under sum alignment
        let onehots: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let mut v = vec![0.0; 8];
                v[i] = 1.0;
                v
            })
            .collect();
        let rates = inconsistency_rate(&onehots, &transitions, Alignment::Sum).unwrap();
        assert_eq!(rates, vec![0.0, 0.0]);
        // sum alignment on diffuse vectors violates somewhere, and the
        // cumulative series never decreases
        let rates = inconsistency_rate(&batch, &transitions, Alignment::Sum).unwrap();
        assert!(rates[1] >= rates[0]);
    }

    #[test]
    fn evaluate_builds_consistent_report() {
        let hier = hier_two_bins();
        let targets = [0.2, 0.4, 0.6, 0.9, 1.4];
        let preds = [0.25, 0.31, 0.77, 1.02, 0.9];
        let report = evaluate(&preds, &targets, &hier, &[150, 6], &ShotThresholds::default())
            .unwrap();
        assert_eq!(report.counts.all, 5);
        assert_eq!(
            report.counts.many + report.counts.medium + report.counts.few,
            report.counts.all
        );
        assert_eq!(report.counts.many, 2);
        assert_eq!(report.counts.few, 3);
        assert_eq!(report.clamped, 1); // 1.4 exceeds the training range
        assert!(report.rmse >= report.mae.all);
        assert!(report.mae.medium.is_none());
        let csv = report.csv_row("cls");
        assert!(csv.starts_with("cls,"));
        let md = report.markdown_row("cls");
        assert!(md.contains("| cls |"));
    }
}
