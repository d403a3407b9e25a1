//! The operator commands. Each writes its outputs and a manifest into the
//! configured output directory, and every error names the failing stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bmlp_core::data::{
    audit_leakage, dedup_earliest, exclude_time_range, gen_instances, group_users, intent_testset,
    iterative_filter, ratings_to_behaviors, split, EvalSample, InstanceOptions,
};
use bmlp_core::encoding::{build_vocab, Variant};
use bmlp_core::eval::{evaluate, evaluate_grouped, group_examined, EvalReport, Group, TimingCurve};
use bmlp_core::model::{param_count, Ablation, HyperParams, ModelParams, TrainingInstance};
use bmlp_core::numerics::ParamSet;
use bmlp_core::Error as CoreError;
use serde::Serialize;

use crate::bench::{bench_scaling, ConstantWorkload, ModelWorkload};
use crate::checkpoint::{self, check_architecture};
use crate::config::RunConfig;
use crate::exec::RayonExecutor;
use crate::ingest::ingest;
use crate::manifest::{hash_file, version_string, InputHash, Manifest};
use crate::report::{write_json, write_reports, write_timing};
use crate::splits::SplitDir;
use crate::trainer::{train, LogRow, TrainInput, TrainOutcome};

pub const SPLIT_FILES: [&str; 5] = ["vocab.bin", "train.bin", "valid.bin", "test.bin", "intent.bin"];
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_CHECKPOINT_FILE: &str = "last.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const TIMING_LOG_FILE: &str = "timing.tsv";

fn manifest<C: Serialize>(cfg: &RunConfig, command: &str, inputs: Vec<InputHash>, counts: C) -> Manifest<C> {
    Manifest {
        version: version_string(),
        command: command.into(),
        seed: cfg.model.seed,
        config: cfg.to_json(),
        inputs,
        counts,
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))
}

fn executor(cfg: &RunConfig) -> Result<RayonExecutor> {
    RayonExecutor::new(cfg.threads)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct PreprocessCounts {
    pub records_read: usize,
    pub malformed_lines: usize,
    pub time_excluded: usize,
    pub dedup_removed: usize,
    pub filter_rounds: usize,
    pub records_after_filter: usize,
    pub users: usize,
    pub items: usize,
    pub behaviors: Vec<String>,
    pub train_users: usize,
    pub train_events: usize,
    pub validation: usize,
    pub test: usize,
    pub validation_cold_start: usize,
    pub test_cold_start: usize,
    pub skipped_users: usize,
    pub training_instances: usize,
    pub examined: usize,
    pub unexamined: usize,
    pub examined_rate: f64,
    pub intent_users: usize,
    pub leakage_violations: usize,
}

/// ingest → optional transforms → dedup → filter → split → files.
pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessCounts> {
    cfg.validate_preprocess().context("preprocess: validating config")?;
    let d = &cfg.data;
    let ing = ingest(&d.path, &d.ingest_options()).context("preprocess: ingest")?;
    let mut c = PreprocessCounts {
        records_read: ing.records.len(),
        malformed_lines: ing.malformed.len(),
        ..PreprocessCounts::default()
    };
    let mut records = ing.records;
    if let Some(t) = &d.rating_transform {
        records = ratings_to_behaviors(&records, t.purchase_rating, &t.purchase, &t.auxiliary)
            .context("preprocess: rating transform")?;
    }
    if let Some(r) = d.exclude_time {
        let before = records.len();
        records = exclude_time_range(&records, r.start, r.end);
        c.time_excluded = before - records.len();
    }
    let before = records.len();
    let records = dedup_earliest(&records);
    c.dedup_removed = before - records.len();
    let (records, fs) = iterative_filter(&records, d.min_item_purchases, d.min_user_purchases, &d.target_behavior)
        .context("preprocess: filter")?;
    c.filter_rounds = fs.rounds;
    c.records_after_filter = records.len();

    let vocab = build_vocab(&records, &d.target_behavior).context("preprocess: vocabulary")?;
    let ds = split(&records, &vocab).context("preprocess: split")?;
    let (_, seqs) = group_users(&records, &vocab).context("preprocess: grouping")?;
    let intent = match intent_testset(&seqs, &vocab) {
        Ok(s) => s,
        Err(CoreError::EmptySplit(_)) => Vec::new(),
        Err(e) => return Err(e).context("preprocess: intent test set"),
    };
    let instances = gen_instances(&ds.train, &vocab, instance_options(&cfg.model));
    let mut held: Vec<EvalSample> = ds.validation.clone();
    held.extend(ds.test.iter().cloned());
    held.extend(intent.iter().cloned());
    let audit = audit_leakage(&seqs, &instances, &held);
    if !audit.is_clean() {
        bail!("preprocess: leakage audit failed: {}", audit.violations.join("; "));
    }
    let (ex, un) = group_examined(&ds.test, cfg.model.len);

    c.users = ds.users.len();
    c.items = vocab.num_items();
    c.behaviors = vocab.behaviors().to_vec();
    c.train_users = ds.stats.users;
    c.train_events = ds.stats.train_events;
    c.validation = ds.stats.validation;
    c.test = ds.stats.test;
    c.validation_cold_start = ds.stats.validation_cold_start;
    c.test_cold_start = ds.stats.test_cold_start;
    c.skipped_users = ds.stats.skipped_users;
    c.training_instances = instances.len();
    c.examined = ex.len();
    c.unexamined = un.len();
    c.examined_rate = if ds.test.is_empty() { 0.0 } else { ex.len() as f64 / ds.test.len() as f64 };
    c.intent_users = intent.len();
    c.leakage_violations = audit.violations.len();

    prepare_out(cfg).context("preprocess: output")?;
    SplitDir {
        vocab,
        split: ds,
        intent,
    }
    .save(&cfg.out)
    .context("preprocess: writing splits")?;
    let inputs = vec![hash_file(&d.path).context("preprocess: hashing input")?];
    manifest(cfg, "preprocess", inputs, &c).write(&cfg.out).context("preprocess: manifest")?;
    Ok(c)
}

pub fn instance_options(h: &HyperParams) -> InstanceOptions {
    InstanceOptions {
        len: h.len,
        aux_len: h.aux_len,
        all_targets: h.all_targets,
    }
}

fn split_inputs(dir: &Path) -> Result<Vec<InputHash>> {
    SPLIT_FILES.iter().map(|f| hash_file(&dir.join(f))).collect()
}

/// A loaded split directory plus the instances for `hyper`.
pub struct Prepared {
    pub splits: SplitDir,
    pub instances: Vec<TrainingInstance>,
    pub inputs: Vec<InputHash>,
}

pub fn load_splits(cfg: &RunConfig, hyper: &HyperParams) -> Result<Prepared> {
    let dir = cfg.split_dir();
    let splits = SplitDir::load(dir)?;
    let instances = gen_instances(&splits.split.train, &splits.vocab, instance_options(hyper));
    Ok(Prepared {
        inputs: split_inputs(dir)?,
        splits,
        instances,
    })
}

fn fit(p: &Prepared, hyper: &HyperParams, cfg: &RunConfig, exec: &RayonExecutor, log: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    train(
        &TrainInput {
            instances: &p.instances,
            validation: &p.splits.split.validation,
            vocab: &p.splits.vocab,
            hyper,
            eval_every: cfg.train.eval_every,
        },
        exec,
        log,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainCounts {
    pub training_instances: usize,
    pub validation: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_hr10: Option<f64>,
    pub stopped_early: bool,
    pub param_count: usize,
}

pub fn write_train_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut s = String::from(LogRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.tsv());
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_timing_log(path: &Path, ms: &[f64]) -> Result<()> {
    let mut s = String::from("epoch\telapsed_ms\n");
    let mut total = 0.0;
    for (k, m) in ms.iter().enumerate() {
        total += m;
        s.push_str(&format!("{}\t{total:.3}\n", k + 1));
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate().context("train: validating config")?;
    let exec = executor(cfg).context("train: worker pool")?;
    let p = load_splits(cfg, &cfg.model).context("train: loading splits")?;
    prepare_out(cfg).context("train: output")?;
    let out = fit(&p, &cfg.model, cfg, &exec, |_| {}).context("train")?;
    let v = &p.splits.vocab;
    checkpoint::save(&cfg.out.join(CHECKPOINT_FILE), &cfg.model, v, &out.best).context("train: saving checkpoint")?;
    checkpoint::save(&cfg.out.join(LAST_CHECKPOINT_FILE), &cfg.model, v, &out.last)
        .context("train: saving checkpoint")?;
    write_train_log(&cfg.out.join(TRAIN_LOG_FILE), &out.log).context("train: log")?;
    write_timing_log(&cfg.out.join(TIMING_LOG_FILE), &out.epoch_ms).context("train: log")?;
    let counts = TrainCounts {
        training_instances: p.instances.len(),
        validation: p.splits.split.validation.len(),
        epochs_run: out.log.len(),
        best_epoch: out.best_epoch,
        best_val_hr10: out.best_val_hr10,
        stopped_early: out.stopped_early,
        param_count: out.best.num_params(),
    };
    manifest(cfg, "train", p.inputs, &counts).write(&cfg.out).context("train: manifest")?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalCounts {
    pub test: usize,
    pub examined: usize,
    pub unexamined: usize,
    pub examined_rate: f64,
    pub intent: usize,
}

/// Every report for `params` over the test split, plus the intent split
/// when requested and non-empty.
pub fn evaluate_all(
    params: &ModelParams,
    hyper: &HyperParams,
    splits: &SplitDir,
    ks: &[usize],
    intent: bool,
    exec: &RayonExecutor,
) -> Result<(Vec<EvalReport>, EvalCounts)> {
    let test = &splits.split.test;
    let (mut reports, rate) = evaluate_grouped(params, hyper, &splits.vocab, test, ks, exec)?;
    let (ex, un) = group_examined(test, hyper.len);
    if intent && !splits.intent.is_empty() {
        reports.push(evaluate(params, hyper, &splits.vocab, &splits.intent, Group::Intent, ks, exec)?);
    }
    Ok((
        reports,
        EvalCounts {
            test: test.len(),
            examined: ex.len(),
            unexamined: un.len(),
            examined_rate: rate,
            intent: if intent { splits.intent.len() } else { 0 },
        },
    ))
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    cfg.validate().context("evaluate: validating config")?;
    let path: PathBuf = match &cfg.eval.checkpoint {
        Some(p) => p.clone(),
        None => bail!("evaluate: no checkpoint given (use --checkpoint or eval.checkpoint)"),
    };
    let exec = executor(cfg).context("evaluate: worker pool")?;
    let ck = checkpoint::load(&path).context("evaluate: loading checkpoint")?;
    check_architecture(&ck.hyper, &cfg.model).context("evaluate: checking checkpoint")?;
    let dir = cfg.split_dir();
    let splits = SplitDir::load(dir).context("evaluate: loading splits")?;
    if splits.vocab != ck.vocab {
        bail!("evaluate: checkpoint vocabulary differs from the split directory's");
    }
    let (reports, counts) =
        evaluate_all(&ck.params, &ck.hyper, &splits, &cfg.eval.ks, cfg.eval.intent, &exec).context("evaluate")?;
    prepare_out(cfg).context("evaluate: output")?;
    write_reports(&cfg.out, &reports).context("evaluate: writing reports")?;
    let mut inputs = split_inputs(dir).context("evaluate: hashing inputs")?;
    inputs.push(hash_file(&path).context("evaluate: hashing inputs")?);
    manifest(cfg, "evaluate", inputs, &counts).write(&cfg.out).context("evaluate: manifest")?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub ablation: String,
    pub variant: Variant,
    pub param_count: usize,
    pub allocated_params: usize,
    pub best_epoch: usize,
    pub val_hr10: Option<f64>,
    pub test: Vec<EvalReport>,
}

pub fn ablation_grid() -> Vec<(&'static str, Ablation, Variant)> {
    let mut out = Vec::new();
    for (name, ab) in Ablation::standard() {
        for v in Variant::ALL {
            out.push((name, ab, v));
        }
    }
    out
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate().context("ablate: validating config")?;
    let exec = executor(cfg).context("ablate: worker pool")?;
    let p = load_splits(cfg, &cfg.model).context("ablate: loading splits")?;
    let (ni, nb) = (p.splits.vocab.num_items(), p.splits.vocab.num_behaviors());
    let mut rows = Vec::new();
    for (name, ablation, variant) in ablation_grid() {
        let hyper = HyperParams {
            ablation,
            variant,
            ..cfg.model.clone()
        };
        let stage = format!("ablate: {name}/{variant:?}");
        let out = fit(&p, &hyper, cfg, &exec, |_| {}).context(stage.clone())?;
        let (test, _) = evaluate_all(&out.best, &hyper, &p.splits, &cfg.eval.ks, false, &exec).context(stage)?;
        rows.push(AblationRow {
            ablation: name.into(),
            variant,
            param_count: param_count(&hyper, ni, nb),
            allocated_params: out.best.num_params(),
            best_epoch: out.best_epoch,
            val_hr10: out.best_val_hr10,
            test,
        });
    }
    prepare_out(cfg).context("ablate: output")?;
    write_json(&cfg.out.join("ablation.json"), &rows).context("ablate: writing table")?;
    write_table(&cfg.out.join("ablation.tsv"), &rows, &cfg.eval.ks).context("ablate: writing table")?;
    let counts = BTreeMap::from([("cells", rows.len())]);
    manifest(cfg, "ablate", p.inputs, counts).write(&cfg.out).context("ablate: manifest")?;
    Ok(rows)
}

fn write_table(path: &Path, rows: &[AblationRow], ks: &[usize]) -> Result<()> {
    let mut s = String::from("ablation\tvariant\tparam_count\tval_hr10");
    for k in ks {
        s.push_str(&format!("\ttest_hr{k}\ttest_ndcg{k}"));
    }
    s.push('\n');
    for r in rows {
        let val = r.val_hr10.map_or("-".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!("{}\t{:?}\t{}\t{val}", r.ablation, r.variant, r.param_count));
        let all = r.test.iter().find(|t| t.group == Group::All);
        for &k in ks {
            match all.and_then(|t| t.at(k)) {
                Some(m) => s.push_str(&format!("\t{:.6}\t{:.6}", m.hr, m.ndcg)),
                None => s.push_str("\t-\t-"),
            }
        }
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub heads: usize,
    pub aux_len: usize,
    pub len: usize,
    pub d: usize,
    pub lr: f64,
    pub dropout_rate: f64,
    pub blocks: usize,
    pub best_epoch: usize,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best: usize,
    pub best_config: HyperParams,
}

fn axis<T: Copy>(v: &[T], default: T, cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
    let mut v = if v.is_empty() { vec![default] } else { v.to_vec() };
    v.sort_by(cmp);
    v
}

/// Grid points in lexicographic order of (heads, aux_len, len, d, lr,
/// dropout_rate, blocks), each axis ascending.
pub fn sweep_grid(cfg: &RunConfig) -> Vec<HyperParams> {
    let s = &cfg.sweep;
    let m = &cfg.model;
    let mut out = Vec::new();
    for &heads in &axis(&s.heads, m.heads, Ord::cmp) {
        for &aux_len in &axis(&s.aux_len, m.aux_len, Ord::cmp) {
            for &len in &axis(&s.len, m.len, Ord::cmp) {
                for &d in &axis(&s.d, m.d, Ord::cmp) {
                    for &lr in &axis(&s.lr, m.lr, f64::total_cmp) {
                        for &dropout_rate in &axis(&s.dropout_rate, m.dropout_rate, f64::total_cmp) {
                            for &blocks in &axis(&s.blocks, m.blocks, Ord::cmp) {
                                out.push(HyperParams {
                                    heads,
                                    aux_len,
                                    len,
                                    d,
                                    lr,
                                    dropout_rate,
                                    blocks,
                                    ..m.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate().context("sweep: validating config")?;
    let grid = sweep_grid(cfg);
    for (k, h) in grid.iter().enumerate() {
        h.validate().with_context(|| format!("sweep: grid point {k}"))?;
    }
    let exec = executor(cfg).context("sweep: worker pool")?;
    let dir = cfg.split_dir();
    let splits = SplitDir::load(dir).context("sweep: loading splits")?;
    if splits.split.validation.is_empty() {
        bail!("sweep: the validation split is empty");
    }
    let inputs = split_inputs(dir).context("sweep: hashing inputs")?;
    let mut rows = Vec::with_capacity(grid.len());
    for (index, hyper) in grid.iter().enumerate() {
        let stage = format!("sweep: grid point {index}");
        let instances = gen_instances(&splits.split.train, &splits.vocab, instance_options(hyper));
        let p = Prepared {
            splits: splits.clone(),
            instances,
            inputs: Vec::new(),
        };
        let out = fit(&p, hyper, cfg, &exec, |_| {}).context(stage.clone())?;
        let r = evaluate(&out.best, hyper, &splits.vocab, &splits.split.validation, Group::All, &[10], &exec)
            .context(stage)?;
        let m = r.at(10).expect("k = 10 requested");
        rows.push(SweepRow {
            index,
            heads: hyper.heads,
            aux_len: hyper.aux_len,
            len: hyper.len,
            d: hyper.d,
            lr: hyper.lr,
            dropout_rate: hyper.dropout_rate,
            blocks: hyper.blocks,
            best_epoch: out.best_epoch,
            val_hr10: m.hr,
            val_ndcg10: m.ndcg,
        });
    }
    let mut best = 0;
    for (k, r) in rows.iter().enumerate() {
        if r.val_hr10 > rows[best].val_hr10 {
            best = k;
        }
    }
    let result = SweepResult {
        best,
        best_config: grid[best].clone(),
        rows,
    };
    prepare_out(cfg).context("sweep: output")?;
    write_json(&cfg.out.join("sweep.json"), &result).context("sweep: writing results")?;
    let counts = BTreeMap::from([("grid_points", result.rows.len()), ("best", best)]);
    manifest(cfg, "sweep", inputs, counts).write(&cfg.out).context("sweep: manifest")?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub model: TimingCurve,
    pub quadratic: TimingCurve,
    pub constant: TimingCurve,
}

/// Times the model, the quadratic control and the constant control. Runs
/// on the calling thread.
pub fn bench_cmd(cfg: &RunConfig) -> Result<BenchResult> {
    cfg.validate().context("bench: validating config")?;
    let b = &cfg.bench;
    if b.lens.len() < 4 {
        bail!("bench: at least 4 lengths are needed");
    }
    let seed = cfg.model.seed;
    let model = bench_scaling(&mut ModelWorkload::new(b, seed)?, &b.lens, b.repetitions, b.warmup)
        .context("bench: model")?;
    let quadratic = bench_scaling(&mut ModelWorkload::quadratic(b, seed)?, &b.lens, b.repetitions, b.warmup)
        .context("bench: quadratic control")?;
    let constant = bench_scaling(&mut ConstantWorkload::default(), &b.lens, b.repetitions, b.warmup)
        .context("bench: constant control")?;
    prepare_out(cfg).context("bench: output")?;
    write_timing(&cfg.out, "timing", &model).context("bench: writing curves")?;
    write_timing(&cfg.out, "timing_quadratic", &quadratic).context("bench: writing curves")?;
    write_timing(&cfg.out, "timing_constant", &constant).context("bench: writing curves")?;
    let counts = BTreeMap::from([("lengths", b.lens.len()), ("repetitions", b.repetitions)]);
    manifest(cfg, "bench", Vec::new(), counts).write(&cfg.out).context("bench: manifest")?;
    Ok(BenchResult {
        model,
        quadratic,
        constant,
    })
}

