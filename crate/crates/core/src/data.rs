//! Synthetic imbalanced regression data, resampling protocols, and CSV I/O.
//!
//! Features are a fixed random projection of the smooth basis
//! `[z, z^2, sin(v)]` (with `z` the target rescaled to `[0, 1]`) plus
//! isotropic Gaussian noise, so a linear probe can recover the target from
//! noiseless features while classification stays non-trivial under noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quantize::Hierarchy;
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
    pub split: Split,
}

/// A fixed-dimension feature/target collection with split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    /// Provenance: generator spec and seed, or source path.
    pub metadata: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.iter_split(split).count()
    }

    pub fn targets_of(&self, split: Split) -> Vec<f64> {
        self.iter_split(split).map(|s| s.target).collect()
    }

    pub fn features_of(&self, split: Split) -> Vec<&[f64]> {
        self.iter_split(split).map(|s| s.features.as_slice()).collect()
    }

    /// Training-sample count per finest bin (out-of-range values clamp).
    pub fn train_counts(&self, hier: &Hierarchy) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; hier.finest_classes()];
        for s in self.iter_split(Split::Train) {
            let (c, _) = hier.finest().class_of(s.target)?;
            counts[c] += 1;
        }
        Ok(counts)
    }

    fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.features.len() != self.feature_dim {
                return Err(Error::DimMismatch {
                    expected: self.feature_dim,
                    got: s.features.len(),
                    context: "dataset feature dimension",
                });
            }
            if !s.target.is_finite() {
                return Err(Error::NonFinite("dataset target"));
            }
        }
        Ok(())
    }
}

/// Target distribution of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetDist {
    Uniform { lo: f64, hi: f64 },
    /// `lo + Exp(scale)` truncated at `hi`: density strictly decreasing
    /// over the range, mimicking a long-tailed count distribution.
    ExpTail { lo: f64, hi: f64, scale: f64 },
    /// Mixture of a dense head `U(lo, split)` (probability `head_frac`)
    /// and a sparse tail `U(split, hi)`.
    HeadTail {
        lo: f64,
        split: f64,
        hi: f64,
        head_frac: f64,
    },
}

impl TargetDist {
    pub fn range(&self) -> (f64, f64) {
        match *self {
            TargetDist::Uniform { lo, hi } => (lo, hi),
            TargetDist::ExpTail { lo, hi, .. } => (lo, hi),
            TargetDist::HeadTail { lo, hi, .. } => (lo, hi),
        }
    }

    fn describe(&self) -> String {
        match *self {
            TargetDist::Uniform { lo, hi } => format!("uniform[{lo},{hi}]"),
            TargetDist::ExpTail { lo, hi, scale } => {
                format!("exp-tail[{lo},{hi}] scale={scale}")
            }
            TargetDist::HeadTail {
                lo,
                split,
                hi,
                head_frac,
            } => format!("head-tail[{lo},{split},{hi}] head_frac={head_frac}"),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            TargetDist::Uniform { lo, hi } => rng.gen_range(lo..hi),
            TargetDist::ExpTail { lo, hi, scale } => loop {
                let u: f64 = rng.gen_range(0.0..1.0);
                let v = lo - scale * (1.0 - u).ln();
                if v <= hi {
                    return v;
                }
            },
            TargetDist::HeadTail {
                lo,
                split,
                hi,
                head_frac,
            } => {
                if rng.gen_range(0.0..1.0) < head_frac {
                    rng.gen_range(lo..split)
                } else {
                    rng.gen_range(split..hi)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TargetDist::Uniform { lo, hi } => lo < hi,
            TargetDist::ExpTail { lo, hi, scale } => lo < hi && scale > 0.0,
            TargetDist::HeadTail {
                lo,
                split,
                hi,
                head_frac,
            } => lo < split && split < hi && (0.0..=1.0).contains(&head_frac),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid target distribution {self:?}"
            )))
        }
    }
}

fn embed(v: f64, lo: f64, hi: f64) -> [f64; 3] {
    let z = (v - lo) / (hi - lo);
    [z, z * z, v.sin()]
}

/// Generate a synthetic dataset: targets from `dist`, features a fixed
/// random projection of the `[z, z^2, sin v]` basis plus Gaussian noise of
/// standard deviation `noise`. Deterministic per seed. Splits default to
/// 70/10/20 train/val/test, stratified over the target order.
pub fn gen_synthetic(
    dist: &TargetDist,
    n: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    dist.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if dim < 1 {
        return Err(Error::InvalidArgument("feature dim must be >= 1".into()));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::InvalidArgument("noise must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // fixed projection, scaled so each feature has roughly unit signal variance
    let projection: Vec<[f64; 3]> = (0..dim)
        .map(|_| {
            [
                normal.sample(&mut rng) / 3f64.sqrt(),
                normal.sample(&mut rng) / 3f64.sqrt(),
                normal.sample(&mut rng) / 3f64.sqrt(),
            ]
        })
        .collect();

    let targets: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    let (lo, hi) = dist.range();
    let mut samples: Vec<Sample> = targets
        .iter()
        .map(|&v| {
            let basis = embed(v, lo, hi);
            let features = projection
                .iter()
                .map(|row| {
                    let signal: f64 = row.iter().zip(basis).map(|(p, b)| p * b).sum();
                    signal + noise * normal.sample(&mut rng)
                })
                .collect();
            Sample {
                features,
                target: v,
                split: Split::Train,
            }
        })
        .collect();

    assign_splits(&mut samples, &mut rng);

    let ds = Dataset {
        samples,
        feature_dim: dim,
        metadata: format!("gen_synthetic dist={} n={n} dim={dim} noise={noise} seed={seed}", dist.describe()),
    };
    ds.validate()?;
    Ok(ds)
}

/// 70/10/20 split, stratified by walking samples in target order and dealing
/// a shuffled 7/1/2 pattern per block of ten.
fn assign_splits(samples: &mut [Sample], rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].target.partial_cmp(&samples[b].target).unwrap());
    let mut pattern = [
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Val,
        Split::Test,
        Split::Test,
    ];
    for block in order.chunks(10) {
        pattern.shuffle(rng);
        for (&idx, &split) in block.iter().zip(pattern.iter()) {
            samples[idx].split = split;
        }
    }
    // evaluation runs need at least one train and one test sample
    if !samples.iter().any(|s| s.split == Split::Test) {
        let last = samples.len() - 1;
        samples[last].split = Split::Test;
    }
    if !samples.iter().any(|s| s.split == Split::Train) {
        samples[0].split = Split::Train;
    }
}

/// Largest-remainder apportionment of `total` into parts proportional to
/// `weights`.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut out: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut short = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        out[i] += 1;
        short -= 1;
    }
    out
}

/// Resample the training split into a head:tail imbalance protocol.
///
/// The head and tail ranges are each divided into `bins_per_side`
/// equal-length bins; `total` training samples are apportioned so the
/// head:tail ratio is `ratio` (largest-remainder rounding when not exactly
/// divisible) and uniformly across bins within each side. Validation and
/// test samples inside the combined range are carried over unchanged.
#[allow(clippy::too_many_arguments)]
pub fn subsample_imbalanced(
    src: &Dataset,
    head: (f64, f64),
    tail: (f64, f64),
    ratio: f64,
    total: usize,
    bins_per_side: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(ratio > 0.0) || total == 0 || bins_per_side == 0 {
        return Err(Error::InvalidArgument(
            "subsample needs ratio > 0, total > 0, bins_per_side > 0".into(),
        ));
    }
    let side_totals = largest_remainder(total, &[ratio, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Sample> = Vec::with_capacity(total);

    for (side, (range, side_total)) in [(head, side_totals[0]), (tail, side_totals[1])]
        .into_iter()
        .enumerate()
    {
        let (lo, hi) = range;
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "invalid subsample range [{lo}, {hi}]"
            )));
        }
        // largest-remainder quota per bin, assigned to bins in seeded random
        // order so leftover samples do not pile onto the lowest bins
        let quotas = largest_remainder(side_total, &vec![1.0; bins_per_side]);
        let mut bin_order: Vec<usize> = (0..bins_per_side).collect();
        bin_order.shuffle(&mut rng);
        let mut per_bin = vec![0usize; bins_per_side];
        for (q, &b) in quotas.iter().zip(&bin_order) {
            per_bin[b] = *q;
        }
        let width = (hi - lo) / bins_per_side as f64;
        for (b, &want) in per_bin.iter().enumerate() {
            let last = b + 1 == bins_per_side;
            let b_lo = lo + b as f64 * width;
            let b_hi = if last { hi } else { lo + (b + 1) as f64 * width };
            let mut pool: Vec<&Sample> = src
                .iter_split(Split::Train)
                .filter(|s| s.target >= b_lo && (s.target < b_hi || (last && s.target <= b_hi)))
                .collect();
            if pool.len() < want {
                return Err(Error::InsufficientData(format!(
                    "bin [{b_lo:.3}, {b_hi:.3}) of side {side} has {} train samples, need {want}",
                    pool.len()
                )));
            }
            pool.shuffle(&mut rng);
            picked.extend(pool.into_iter().take(want).cloned());
        }
    }

    let (h_lo, h_hi) = head;
    let (t_lo, t_hi) = tail;
    let in_range =
        |v: f64| (v >= h_lo && v < h_hi) || (v >= t_lo && v < t_hi) || v == t_hi || v == h_hi;
    let carried = src
        .samples
        .iter()
        .filter(|s| s.split != Split::Train && in_range(s.target))
        .cloned();
    let mut samples = picked;
    samples.extend(carried);

    Ok(Dataset {
        samples,
        feature_dim: src.feature_dim,
        metadata: format!(
            "{}; subsample head=[{h_lo},{h_hi}] tail=[{t_lo},{t_hi}] ratio={ratio} \
             total={total} bins={bins_per_side} seed={seed}",
            src.metadata
        ),
    })
}

/// Write `target,split,f0..f{d-1}` rows; floats carry 17 significant digits
/// so a save/load round trip is value-exact.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["target".to_string(), "split".to_string()];
    header.extend((0..ds.feature_dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in &ds.samples {
        let mut rec = vec![fmt_f64(s.target), s.split.as_str().to_string()];
        rec.extend(s.features.iter().map(|&f| fmt_f64(f)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("cannot read header: {e}"),
        })?
        .clone();
    if header.is_empty() || header.iter().all(|f| f.trim().is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file: expected header `target,split,f0..`".into(),
        });
    }
    let fields: Vec<&str> = header.iter().map(|f| f.trim()).collect();
    if fields.first() != Some(&"target") {
        return Err(Error::Parse {
            line: 1,
            message: format!("missing `target` column, found `{}`", fields.first().unwrap_or(&"")),
        });
    }
    if fields.get(1) != Some(&"split") {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "missing `split` column, found `{}`",
                fields.get(1).unwrap_or(&"")
            ),
        });
    }
    let dim = fields.len() - 2;
    for (i, name) in fields[2..].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected feature column `f{i}`, found `{name}`"),
            });
        }
    }

    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2; // 1-based, after header
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != dim + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", dim + 2, rec.len()),
            });
        }
        let target: f64 = rec[0].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad target value `{}`", &rec[0]),
        })?;
        let split = Split::parse(rec[1].trim()).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad split tag `{}` (want train|val|test)", &rec[1]),
        })?;
        let features = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(j, f)| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad value in column f{j}: `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            features,
            target,
            split,
        });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let ds = Dataset {
        samples,
        feature_dim: dim,
        metadata: format!("loaded from {}", path.display()),
    };
    ds.validate()?;
    Ok(ds)
}
