//! Experiment pipelines: data preparation, the two training stages, method
//! evaluation, and the report-emitting subcommands.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use hca_core::adjust;
use hca_core::checkpoint::Checkpoint;
use hca_core::data::{self, Dataset, Split};
use hca_core::distill::{self, Alignment};
use hca_core::heads::{self, Classifier, LinearHead, TrainLog, TwoLayerHead};
use hca_core::metrics::{self, EvalReport};
use hca_core::quantize::{self, Hierarchy, TransitionMatrix};
use hca_core::util;

use crate::config::Config;
use crate::report::{config_footer, RunDir};
use crate::CliError;

/// Methods the runner can evaluate.
pub const METHODS: [&str; 7] = [
    "cls",
    "same-clss",
    "average",
    "hca-add",
    "hca-mul",
    "hca-d",
    "hca-sum",
];

/// Build the working dataset: synthetic generation or CSV ingestion, plus
/// the optional head:tail resampling protocol.
pub fn prepare_data(cfg: &Config) -> Result<Dataset, CliError> {
    let ds = match cfg.data.source.as_str() {
        "csv" => data::load_csv(std::path::Path::new(&cfg.data.csv_path))?,
        _ => data::gen_synthetic(
            &cfg.target_dist()?,
            cfg.data.n,
            cfg.data.dim,
            cfg.data.noise,
            cfg.data.seed,
        )?,
    };
    if cfg.subsample.enabled {
        let s = &cfg.subsample;
        Ok(data::subsample_imbalanced(
            &ds,
            (s.head_lo, s.head_hi),
            (s.tail_lo, s.tail_hi),
            s.ratio,
            s.total,
            s.bins_per_side,
            s.seed,
        )?)
    } else {
        Ok(ds)
    }
}

/// Quantize the training targets into the configured hierarchy.
pub fn build_hierarchy(cfg: &Config, ds: &Dataset) -> Result<Hierarchy, CliError> {
    let targets = ds.targets_of(Split::Train);
    if targets.is_empty() {
        return Err(CliError::Runtime("dataset has no train split".into()));
    }
    let finest = quantize::build_finest_bins(&targets, cfg.bin_scheme()?, cfg.quantize.classes)?;
    Ok(quantize::build_hierarchy(
        finest,
        &targets,
        cfg.quantize.levels,
        cfg.split_mode()?,
    )?)
}

fn lds_params(cfg: &Config) -> Option<heads::LdsParams> {
    cfg.labels.lds.then_some(heads::LdsParams {
        kernel_half_width: cfg.labels.lds_half_width,
        sigma: cfg.labels.lds_sigma,
    })
}

/// Everything a single experiment trains.
pub struct Trained {
    pub hier: Hierarchy,
    pub stage1: Vec<LinearHead>,
    pub stage1_log: TrainLog,
    pub stage2_max: Option<TwoLayerHead>,
    pub stage2_sum: Option<TwoLayerHead>,
    pub same_cls: Vec<LinearHead>,
}

/// Train stage 1 (and optionally the distilled heads and the duplicated
/// finest heads used by the `same-clss` row).
pub fn train_all(
    cfg: &Config,
    ds: &Dataset,
    hier: &Hierarchy,
    with_stage2: bool,
    with_same_cls: bool,
) -> Result<Trained, CliError> {
    let label_mode = cfg.label_mode(hier);
    let lds = lds_params(cfg);
    let train_cfg = cfg.train_config()?;
    let (stage1, stage1_log) = heads::train_stage1(ds, hier, label_mode, lds, &train_cfg)?;

    let (stage2_max, stage2_sum) = if with_stage2 {
        let feats = ds.features_of(Split::Train);
        let teachers = distill::cache_teacher_outputs(&stage1, &feats)?;
        let stage2_cfg = cfg.stage2_config()?;
        let (max_head, _) =
            distill::train_stage2(&feats, &teachers, hier, Alignment::Max, &stage2_cfg)?;
        let (sum_head, _) =
            distill::train_stage2(&feats, &teachers, hier, Alignment::Sum, &stage2_cfg)?;
        (Some(max_head), Some(sum_head))
    } else {
        (None, None)
    };

    let same_cls = if with_same_cls {
        let targets = ds.targets_of(Split::Train);
        let single = quantize::single_level_hierarchy(hier.finest().clone(), &targets)?;
        let levels = hier.num_levels();
        let mut heads_out = Vec::with_capacity(levels);
        for k in 0..levels {
            let mut dup_cfg = train_cfg;
            dup_cfg.seed = train_cfg.seed.wrapping_add(1000 + k as u64);
            let (mut hs, _) =
                heads::train_stage1(ds, &single, cfg.label_mode(&single), lds, &dup_cfg)?;
            heads_out.push(hs.pop().expect("one head"));
        }
        heads_out
    } else {
        Vec::new()
    };

    Ok(Trained {
        hier: hier.clone(),
        stage1,
        stage1_log,
        stage2_max,
        stage2_sum,
        same_cls,
    })
}

/// Decode one method's prediction for a feature vector.
pub fn predict(
    method: &str,
    features: &[f64],
    trained: &Trained,
    transitions: &[TransitionMatrix],
    identity: &[TransitionMatrix],
) -> Result<f64, CliError> {
    let hier = &trained.hier;
    let finest_level = hier.num_levels();
    let value = match method {
        "cls" => {
            let probs = trained.stage1.last().unwrap().forward(features)?;
            adjust::decode(&probs, hier, finest_level)?
        }
        "same-clss" => {
            let probs: Vec<Vec<f64>> = trained
                .same_cls
                .iter()
                .map(|h| h.forward(features))
                .collect::<hca_core::Result<_>>()?;
            let scores = adjust::hca_add(&probs, identity)?;
            adjust::decode(&scores, hier, finest_level)?
        }
        "average" | "hca-add" | "hca-mul" => {
            let probs: Vec<Vec<f64>> = trained
                .stage1
                .iter()
                .map(|h| h.forward(features))
                .collect::<hca_core::Result<_>>()?;
            let scores = match method {
                "average" => adjust::average_ensemble(&probs, transitions)?,
                "hca-add" => adjust::hca_add(&probs, transitions)?,
                _ => adjust::hca_mul(&probs, transitions, util::LOG_EPS)?,
            };
            adjust::decode(&scores, hier, finest_level)?
        }
        "hca-d" => {
            let head = trained
                .stage2_max
                .as_ref()
                .ok_or_else(|| CliError::Runtime("hca-d needs a distilled head".into()))?;
            let probs = head.forward(features)?;
            adjust::decode(&probs, hier, finest_level)?
        }
        "hca-sum" => {
            let head = trained
                .stage2_sum
                .as_ref()
                .ok_or_else(|| CliError::Runtime("hca-sum needs a distilled head".into()))?;
            let probs = head.forward(features)?;
            adjust::decode(&probs, hier, finest_level)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown method `{other}` (want one of {})",
                METHODS.join("|")
            )))
        }
    };
    Ok(value)
}

/// Evaluate one method over the test split.
pub fn evaluate_method(
    cfg: &Config,
    method: &str,
    ds: &Dataset,
    trained: &Trained,
) -> Result<EvalReport, CliError> {
    let transitions = trained.hier.transitions();
    let identity: Vec<TransitionMatrix> = (1..trained.hier.num_levels())
        .map(|_| TransitionMatrix::identity(trained.hier.finest_classes()))
        .collect();
    let test_targets = ds.targets_of(Split::Test);
    if test_targets.is_empty() {
        return Err(CliError::Runtime("dataset has no test split".into()));
    }
    let preds = ds
        .features_of(Split::Test)
        .iter()
        .map(|f| predict(method, f, trained, &transitions, &identity))
        .collect::<Result<Vec<f64>, CliError>>()?;
    let counts = ds.train_counts(&trained.hier)?;
    Ok(metrics::evaluate(
        &preds,
        &test_targets,
        &trained.hier,
        &counts,
        &cfg.shot_thresholds(),
    )?)
}

fn train_log_csv(log: &TrainLog, levels: usize) -> String {
    let mut out = String::from("epoch,loss");
    for h in 1..=levels {
        let _ = write!(out, ",val_acc_l{h}");
    }
    out.push('\n');
    for (i, loss) in log.epoch_loss.iter().enumerate() {
        let _ = write!(out, "{},{loss:.8}", i + 1);
        if let Some(accs) = log.val_accuracy.get(i) {
            for a in accs {
                let _ = write!(out, ",{a:.6}");
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

pub fn cmd_gen(cfg: &Config) -> Result<PathBuf, CliError> {
    let run = RunDir::create(cfg)?;
    let ds = prepare_data(cfg)?;
    let path = run.file("dataset.csv");
    data::save_csv(&ds, &path)?;
    Ok(path)
}

pub fn cmd_train(cfg: &Config) -> Result<PathBuf, CliError> {
    let run = RunDir::create(cfg)?;
    let ds = prepare_data(cfg)?;
    let hier = build_hierarchy(cfg, &ds)?;
    let trained = train_all(cfg, &ds, &hier, false, false)?;
    run.write_plain(
        "train_log.csv",
        &train_log_csv(&trained.stage1_log, hier.num_levels()),
    )?;
    let ckpt = Checkpoint {
        hierarchy: hier,
        stage1: trained.stage1,
        stage2: None,
    };
    let path = run.file("checkpoint.ckpt");
    ckpt.save(&path)?;
    Ok(path)
}

pub fn cmd_distill(cfg: &Config) -> Result<PathBuf, CliError> {
    let run = RunDir::create(cfg)?;
    let path = run.file("checkpoint.ckpt");
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "checkpoint not found at {}; run `hca train` with this config first",
            path.display()
        )));
    }
    let mut ckpt = Checkpoint::load(&path)?;
    let ds = prepare_data(cfg)?;
    let feats = ds.features_of(Split::Train);
    let teachers = distill::cache_teacher_outputs(&ckpt.stage1, &feats)?;
    let stage2_cfg = cfg.stage2_config()?;
    let (head, log) = distill::train_stage2(
        &feats,
        &teachers,
        &ckpt.hierarchy,
        cfg.alignment()?,
        &stage2_cfg,
    )?;
    run.write_plain("distill_log.csv", &train_log_csv(&log, 0))?;
    ckpt.stage2 = Some(head);
    ckpt.save(&path)?;
    Ok(path)
}

pub fn cmd_eval(cfg: &Config, method: &str) -> Result<PathBuf, CliError> {
    let run = RunDir::create(cfg)?;
    let ckpt_path = run.file("checkpoint.ckpt");
    if !ckpt_path.exists() {
        return Err(CliError::Runtime(format!(
            "checkpoint not found at {}; run `hca train` (and `hca distill` for hca-d) first",
            ckpt_path.display()
        )));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ds = prepare_data(cfg)?;
    let trained = Trained {
        hier: ckpt.hierarchy,
        stage1: ckpt.stage1,
        stage1_log: TrainLog::default(),
        stage2_max: ckpt.stage2.clone(),
        stage2_sum: ckpt.stage2,
        same_cls: Vec::new(),
    };
    if method == "same-clss" {
        return Err(CliError::Config(
            "`same-clss` is only available under `hca compare`".into(),
        ));
    }
    let report = evaluate_method(cfg, method, &ds, &trained)?;

    let mut body = format!("# Evaluation: {method}\n\n");
    let _ = writeln!(body, "{}", EvalReport::MARKDOWN_HEADER);
    let _ = writeln!(body, "{}", report.markdown_row(method));
    let _ = writeln!(
        body,
        "\nquantization error (finest): {:.4}; clamped test targets: {}",
        report.quantization_error, report.clamped
    );
    body.push_str(&config_footer(cfg));
    let md = run.write_markdown(&format!("eval_{method}.md"), &body)?;
    let csv = format!(
        "{}\n{}\n",
        EvalReport::CSV_HEADER,
        report.csv_row(method)
    );
    run.write_plain(&format!("eval_{method}.csv"), &csv)?;
    Ok(md)
}

pub struct CompareOutcome {
    pub reports: Vec<(String, EvalReport)>,
    pub run_dir: PathBuf,
    pub markdown: PathBuf,
}

pub fn cmd_compare(cfg: &Config) -> Result<CompareOutcome, CliError> {
    let run = RunDir::create(cfg)?;
    let ds = prepare_data(cfg)?;
    let hier = build_hierarchy(cfg, &ds)?;
    let trained = train_all(cfg, &ds, &hier, true, true)?;

    let mut reports = Vec::new();
    for method in METHODS {
        reports.push((method.to_string(), evaluate_method(cfg, method, &ds, &trained)?));
    }

    let mut body = String::from("# Method comparison\n\n");
    let _ = writeln!(
        body,
        "dataset: {} | train {} / val {} / test {}\n",
        ds.metadata,
        ds.count_split(Split::Train),
        ds.count_split(Split::Val),
        ds.count_split(Split::Test)
    );
    let _ = writeln!(body, "{}", EvalReport::MARKDOWN_HEADER);
    for (method, report) in &reports {
        let _ = writeln!(body, "{}", report.markdown_row(method));
    }
    let _ = writeln!(
        body,
        "\nquantization error (finest): {:.4}",
        reports[0].1.quantization_error
    );
    if !hier.warnings.is_empty() {
        let _ = writeln!(body, "\nhierarchy warnings: {}", hier.warnings.join("; "));
    }
    body.push_str(&config_footer(cfg));
    let markdown = run.write_markdown("compare.md", &body)?;

    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for (method, report) in &reports {
        csv.push_str(&report.csv_row(method));
        csv.push('\n');
    }
    run.write_plain("compare.csv", &csv)?;

    Ok(CompareOutcome {
        reports,
        run_dir: run.path,
        markdown,
    })
}

pub fn cmd_analyze(cfg: &Config) -> Result<PathBuf, CliError> {
    let run = RunDir::create(cfg)?;
    let ds = prepare_data(cfg)?;
    let hier = build_hierarchy(cfg, &ds)?;
    let trained = train_all(cfg, &ds, &hier, true, false)?;
    let alignment = cfg.alignment()?;
    let levels = hier.num_levels();
    let test_targets = ds.targets_of(Split::Test);
    let test_features = ds.features_of(Split::Test);
    if test_targets.is_empty() {
        return Err(CliError::Runtime("dataset has no test split".into()));
    }

    // per-level error floors and per-head decoded errors
    let mut levels_csv = String::from("level,classes,quantization_error,bmae_head,mean_max_prob\n");
    for h in 1..=levels {
        let q = metrics::quantization_error(&test_targets, &hier, h)?;
        let mut preds = Vec::with_capacity(test_features.len());
        let mut max_acc = 0.0;
        for f in &test_features {
            let probs = trained.stage1[h - 1].forward(f)?;
            max_acc += probs[util::argmax(&probs)];
            preds.push(adjust::decode(&probs, &hier, h)?);
        }
        let b = metrics::bmae(&preds, &test_targets, &hier)?;
        let _ = writeln!(
            levels_csv,
            "{h},{},{q:.6},{b:.6},{:.6}",
            hier.classes_at(h)?,
            max_acc / test_features.len() as f64
        );
    }
    run.write_plain("analyze_levels.csv", &levels_csv)?;

    // consistency of the distilled head's predictions under the configured
    // alignment, cumulative over coarse levels
    let student = trained.stage2_max.as_ref().expect("stage 2 trained");
    let batch: Vec<Vec<f64>> = test_features
        .iter()
        .map(|f| student.forward(f))
        .collect::<hca_core::Result<_>>()?;
    let transitions = hier.transitions();
    let rates = metrics::inconsistency_rate(&batch, &transitions, alignment)?;
    let max_probs = metrics::mean_max_prob(&batch, &transitions, alignment)?;
    let mut cons_csv = String::from("level,classes,inconsistency_rate,mean_max_aligned\n");
    for (i, rate) in rates.iter().enumerate() {
        let _ = writeln!(
            cons_csv,
            "{},{},{rate:.6},{:.6}",
            i + 1,
            hier.classes_at(i + 1)?,
            max_probs[i]
        );
    }
    let path = run.write_plain("analyze_consistency.csv", &cons_csv)?;
    Ok(path)
}

pub struct CellResult {
    pub label: String,
    pub ratio: f64,
    pub total: usize,
    /// Per-seed overall bMAE.
    pub cls: Vec<f64>,
    pub hca_d: Vec<f64>,
}

pub struct Table5Outcome {
    pub cells: Vec<CellResult>,
    pub markdown: PathBuf,
}

/// One subset-protocol cell for one seed: resample, train both stages,
/// evaluate CLS and the distilled head. Returns their overall bMAE.
pub fn table5_cell(cfg: &Config, ratio: f64, total: usize, rep: u64) -> Result<(f64, f64), CliError> {
    let mut cell_cfg = cfg.clone();
    cell_cfg.subsample.enabled = true;
    cell_cfg.subsample.ratio = ratio;
    cell_cfg.subsample.total = total;
    cell_cfg.subsample.seed = cfg.subsample.seed.wrapping_add(rep);
    cell_cfg.data.seed = cfg.data.seed.wrapping_add(rep);
    cell_cfg.train.seed = cfg.train.seed.wrapping_add(rep);
    let ds = prepare_data(&cell_cfg)?;
    let hier = build_hierarchy(&cell_cfg, &ds)?;
    let trained = train_all(&cell_cfg, &ds, &hier, true, false)?;
    let cls = evaluate_method(&cell_cfg, "cls", &ds, &trained)?;
    let hca_d = evaluate_method(&cell_cfg, "hca-d", &ds, &trained)?;
    Ok((cls.bmae.all, hca_d.bmae.all))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = util::mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

pub fn cmd_table5(cfg: &Config) -> Result<Table5Outcome, CliError> {
    let run = RunDir::create(cfg)?;
    let seeds = cfg.table5.seeds.max(1);
    let mut cells: Vec<(f64, usize)> = Vec::new();
    for &t in &cfg.table5.totals {
        cells.push((1.0, t));
    }
    for &t in &cfg.table5.totals {
        cells.push((cfg.table5.ratio, t));
    }

    // every (cell, seed) job is independent and seed-isolated
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..seeds as u64).map(move |s| (c, s)))
        .collect();
    let results: Vec<(usize, u64, Result<(f64, f64), CliError>)> = jobs
        .into_par_iter()
        .map(|(c, s)| {
            let (ratio, total) = cells[c];
            (c, s, table5_cell(cfg, ratio, total, s))
        })
        .collect();

    let mut per_cell: Vec<CellResult> = cells
        .iter()
        .map(|&(ratio, total)| {
            let head = ((total as f64) * ratio / (1.0 + ratio)).round() as usize;
            CellResult {
                label: format!("{head}:{}", total - head),
                ratio,
                total,
                cls: vec![0.0; seeds],
                hca_d: vec![0.0; seeds],
            }
        })
        .collect();
    for (c, s, outcome) in results {
        let (cls, hca_d) = outcome?;
        per_cell[c].cls[s as usize] = cls;
        per_cell[c].hca_d[s as usize] = hca_d;
    }

    let mut body = String::from("# Balanced and imbalanced subset protocol\n\n");
    let _ = writeln!(
        body,
        "overall bMAE, mean±std over {seeds} seeds; balanced cells use ratio 1, imbalanced ratio {}\n",
        cfg.table5.ratio
    );
    body.push_str("| Method |");
    for cell in &per_cell {
        let _ = write!(body, " {} |", cell.label);
    }
    body.push('\n');
    body.push_str("|---|");
    for _ in &per_cell {
        body.push_str("---|");
    }
    body.push('\n');
    for (name, pick) in [
        ("CLS", &|c: &CellResult| c.cls.clone() as Vec<f64>),
        ("HCA-d", &|c: &CellResult| c.hca_d.clone() as Vec<f64>),
    ] as [(&str, &dyn Fn(&CellResult) -> Vec<f64>); 2]
    {
        let _ = write!(body, "| {name} |");
        for cell in &per_cell {
            let (m, s) = mean_std(&pick(cell));
            let _ = write!(body, " {m:.3}±{s:.3} |");
        }
        body.push('\n');
    }
    body.push_str(&config_footer(cfg));
    let markdown = run.write_markdown("table5.md", &body)?;

    let mut csv = String::from("cell,ratio,total,seed,cls_bmae,hcad_bmae\n");
    for cell in &per_cell {
        for s in 0..seeds {
            let _ = writeln!(
                csv,
                "{},{},{},{s},{:.6},{:.6}",
                cell.label, cell.ratio, cell.total, cell.cls[s], cell.hca_d[s]
            );
        }
    }
    run.write_plain("table5.csv", &csv)?;

    Ok(Table5Outcome {
        cells: per_cell,
        markdown,
    })
}
