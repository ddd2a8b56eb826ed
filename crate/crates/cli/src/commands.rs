use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use scan_core::checkpoint::{load_checkpoint, save_checkpoint};
use scan_core::config::RunConfig;
use scan_core::dataset::{save_dataset, Dataset, FoodPairRecord};
use scan_core::encoders::{AttentionMaps, ModelParams};
use scan_core::experiment::{run_split, AblationCell, Outcome};
use scan_core::gradcheck::{full_loss_check, GradCheckOptions, LossCheckSetup};
use scan_core::retrieval::{intra_class_distance_report, sampled_eval, DirectionMetrics, EvalReport, IntraClassReport};
use scan_core::trainer::{EpochRecord, Trainer};

use crate::config::FileConfig;
use crate::CliError;

pub const RUN_REPORT: &str = "run_report.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const INTRA_CLASS: &str = "intra_class.json";
pub const ATTENTION: &str = "attention.json";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth_data(cfg: &FileConfig, out: &Path) -> Result<(), CliError> {
    if cfg.data.dir.is_some() {
        return Err(CliError::Usage(anyhow::anyhow!(
            "synth-data generates data; remove data.dir from the config"
        )));
    }
    let split = cfg.data()?;
    create_dir(out)?;
    for part in [&split.train, &split.val, &split.test] {
        let path = out.join(format!("{}.bin", part.manifest.split));
        save_dataset(&path, part)?;
        eprintln!("wrote {} ({} records)", path.display(), part.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct AttentionDump {
    pair_id: u64,
    class_label: usize,
    tokens: Vec<u32>,
    /// Attention each ingredient position receives, averaged over queries.
    ingredient_received: Option<Vec<f64>>,
    ingredient_weights: Option<Vec<Vec<f64>>>,
    instruction_received: Option<Vec<f64>>,
    instruction_weights: Option<Vec<Vec<f64>>>,
}

fn attention_dump(
    params: &ModelParams,
    records: &[FoodPairRecord],
    samples: usize,
) -> anyhow::Result<Vec<AttentionDump>> {
    let rows = |t: &scan_core::Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    records
        .iter()
        .take(samples)
        .map(|r| {
            let maps: AttentionMaps = params.attention_maps(r)?;
            Ok(AttentionDump {
                pair_id: r.pair_id,
                class_label: r.class_label,
                tokens: maps.tokens,
                ingredient_received: maps.ingredient.as_ref().map(AttentionMaps::received),
                ingredient_weights: maps.ingredient.as_ref().map(rows),
                instruction_received: maps.instruction.as_ref().map(AttentionMaps::received),
                instruction_weights: maps.instruction.as_ref().map(rows),
            })
        })
        .collect()
}

/// Evaluation report and intra-class table for `params` on `data`.
fn evaluate(params: &ModelParams, run: &RunConfig, data: &Dataset) -> anyhow::Result<(EvalReport, IntraClassReport)> {
    if data.is_empty() {
        bail!("{} split is empty; nothing to evaluate", data.manifest.split);
    }
    let refs: Vec<&FoodPairRecord> = data.records.iter().collect();
    let (images, recipes) = params.embed_records(&refs)?;
    let size = run.eval.subset_size.min(refs.len());
    let report = sampled_eval(&images, &recipes, size, run.eval.subsets, run.eval.seed)?;
    let labels: Vec<usize> = refs.iter().map(|r| r.class_label).collect();
    let intra = intra_class_distance_report(&labels, &images, &recipes)?;
    Ok((report, intra))
}

fn write_eval(
    out: &Path,
    params: &ModelParams,
    run: &RunConfig,
    data: &Dataset,
    attention: Option<usize>,
) -> anyhow::Result<()> {
    let (report, intra) = evaluate(params, run, data)?;
    write_json(&out.join(EVAL_REPORT), &report)?;
    write_json(&out.join(INTRA_CLASS), &intra)?;
    if let Some(n) = attention {
        write_json(&out.join(ATTENTION), &attention_dump(params, &data.records, n)?)?;
    }
    println!(
        "{} split, {} subset(s) of {}:",
        data.manifest.split,
        report.subsets.len(),
        report.subset_size
    );
    print!("{}", report.to_table());
    Ok(())
}

pub fn train(cfg: &FileConfig, out: &Path, resume: bool, attention: Option<usize>) -> Result<(), CliError> {
    let run = cfg.run();
    let ckpt = out.join(CHECKPOINT);
    let mut trainer = if resume {
        let (saved, state) = load_checkpoint(&ckpt)?;
        if saved.model != run.model {
            return Err(CliError::Usage(anyhow::anyhow!(
                "model section differs from the one stored in {}",
                ckpt.display()
            )));
        }
        Trainer::from_state(run.clone(), state)?
    } else {
        Trainer::new(run.clone())?
    };
    let split = cfg.data()?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let report_path = out.join(RUN_REPORT);
    let mut report = File::create(&report_path).with_context(|| format!("cannot create {}", report_path.display()))?;
    let mut line = |rec: &EpochRecord| -> std::io::Result<()> {
        writeln!(report, "{}", serde_json::to_string(rec).expect("record serializes"))
    };
    for rec in &trainer.state().history {
        line(rec).with_context(|| format!("cannot write {}", report_path.display()))?;
    }
    trainer.fit(&split.train, Some(&split.val), |rec| {
        let val = rec
            .val
            .map(|v| {
                format!(
                    " val medR {:.1} R@1 {:.1}",
                    v.image_to_recipe.medr, v.image_to_recipe.r1
                )
            })
            .unwrap_or_default();
        eprintln!(
            "epoch {:>3} lr {:.0e} loss {:.5}{val}",
            rec.epoch, rec.lr, rec.loss.total
        );
        line(rec).map_err(|e| scan_core::Error::Io {
            path: report_path.clone(),
            source: e,
        })
    })?;
    save_checkpoint(&ckpt, trainer.config(), trainer.state())?;

    let params = trainer.selected_params()?;
    if let Some(best) = &trainer.state().best {
        eprintln!("selected epoch {}", best.epoch);
    }
    write_eval(out, &params, &run, &split.test, attention)?;
    Ok(())
}

pub fn eval(
    cfg: &FileConfig,
    checkpoint: &Path,
    out: &Path,
    split: &str,
    attention: Option<usize>,
) -> Result<(), CliError> {
    let (saved, state) = load_checkpoint(checkpoint)?;
    let params = match &state.best {
        Some(best) => ModelParams::from_tensors(&saved.model, best.params.clone())?,
        None => state.params,
    };
    let mut run = cfg.run();
    run.model = saved.model;
    let data = cfg.data()?;
    let part = match split {
        "train" => &data.train,
        "val" => &data.val,
        _ => &data.test,
    };
    create_dir(out)?;
    write_eval(out, &params, &run, part, attention)?;
    Ok(())
}

pub fn gradcheck(setup: LossCheckSetup, step: f64, tolerance: f64, out: Option<&Path>) -> Result<(), CliError> {
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..GradCheckOptions::default()
    };
    let outcome = full_loss_check(&setup, &opts)?;
    for (p, name) in outcome.report.params.iter().zip(&outcome.parameter_names) {
        println!(
            "{name:<24} {:>6} coords  max rel err {:.3e}",
            p.coords_checked, p.max_rel_error
        );
    }
    println!(
        "max rel err {:.3e} (h = {:e}, tolerance {:e}, kink gap {:.2e}): {}",
        outcome.report.max_rel_error,
        step,
        tolerance,
        outcome.kink_gap,
        if outcome.report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(path) = out {
        write_json(path, &outcome)?;
    }
    if !outcome.report.passed {
        return Err(CliError::Runtime(anyhow::anyhow!("gradient check failed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    name: String,
    lambda: f64,
    attention: bool,
    selected_epoch: usize,
    image_to_recipe: DirectionMetrics,
    recipe_to_image: DirectionMetrics,
    intra_class_mean: f64,
}

impl ComparisonRow {
    fn new(name: String, o: &Outcome) -> Self {
        Self {
            name,
            lambda: o.lambda,
            attention: o.attention,
            selected_epoch: o.selected_epoch,
            image_to_recipe: o.test.mean.image_to_recipe,
            recipe_to_image: o.test.mean.recipe_to_image,
            intra_class_mean: o.intra_class.overall_mean,
        }
    }
}

fn comparison_table(label: &str, rows: &[ComparisonRow]) -> String {
    let mut t = format!(
        "{label:<10} | {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} | {:>9}\n",
        "medR", "R@1", "R@5", "R@10", "medR", "R@1", "R@5", "R@10", "intra"
    );
    let _ = writeln!(
        t,
        "{:<10} | {:^27} | {:^27} |",
        "", "image-to-recipe", "recipe-to-image"
    );
    for r in rows {
        let (a, b) = (r.image_to_recipe, r.recipe_to_image);
        let _ = writeln!(
            t,
            "{:<10} | {:>6.1} {:>6.1} {:>6.1} {:>6.1} | {:>6.1} {:>6.1} {:>6.1} {:>6.1} | {:>9.4}",
            r.name, a.medr, a.r1, a.r5, a.r10, b.medr, b.r1, b.r5, b.r10, r.intra_class_mean
        );
    }
    t
}

pub fn ablate(cfg: &FileConfig, out: &Path, triplet_only: bool) -> Result<(), CliError> {
    let base = cfg.run();
    let split = cfg.data()?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for cell in AblationCell::all() {
        if triplet_only && cell.retrieval != scan_core::config::RetrievalLoss::Triplet {
            continue;
        }
        eprintln!("training {}", cell.name());
        let outcome = run_split(&cell.apply(&base), &split, |_| {})?;
        rows.push(ComparisonRow::new(cell.name(), &outcome));
    }
    let table = comparison_table("variant", &rows);
    write_json(&out.join("ablation.json"), &rows)?;
    write_text(&out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn lambda_sweep(cfg: &FileConfig, out: &Path, lambdas: &[f64]) -> Result<(), CliError> {
    if let Some(bad) = lambdas.iter().find(|l| l.is_nan() || **l < 0.0) {
        return Err(CliError::Usage(anyhow::anyhow!("lambda {bad} must be nonnegative")));
    }
    let base = cfg.run();
    let split = cfg.data()?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        eprintln!("training lambda = {lambda}");
        let mut run = base.clone();
        run.loss.lambda = lambda;
        let outcome = run_split(&run, &split, |_| {})?;
        rows.push(ComparisonRow::new(lambda.to_string(), &outcome));
    }
    let table = comparison_table("lambda", &rows);
    write_json(&out.join("lambda_sweep.json"), &rows)?;
    write_text(&out.join("lambda_sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    lr: f64,
    total: f64,
    retrieval: f64,
    cls_image: f64,
    cls_recipe: f64,
    kl_rec_img: f64,
    kl_img_rec: f64,
    semantic: f64,
    val_i2r_medr: Option<f64>,
    val_i2r_r1: Option<f64>,
    val_i2r_r5: Option<f64>,
    val_i2r_r10: Option<f64>,
    val_r2i_medr: Option<f64>,
    val_r2i_r1: Option<f64>,
    val_r2i_r5: Option<f64>,
    val_r2i_r10: Option<f64>,
}

impl From<&EpochRecord> for MetricsRow {
    fn from(e: &EpochRecord) -> Self {
        let a = e.val.map(|v| v.image_to_recipe);
        let b = e.val.map(|v| v.recipe_to_image);
        Self {
            epoch: e.epoch,
            lr: e.lr,
            total: e.loss.total,
            retrieval: e.loss.retrieval,
            cls_image: e.loss.cls_image,
            cls_recipe: e.loss.cls_recipe,
            kl_rec_img: e.loss.kl_rec_img,
            kl_img_rec: e.loss.kl_img_rec,
            semantic: e.loss.semantic,
            val_i2r_medr: a.map(|m| m.medr),
            val_i2r_r1: a.map(|m| m.r1),
            val_i2r_r5: a.map(|m| m.r5),
            val_i2r_r10: a.map(|m| m.r10),
            val_r2i_medr: b.map(|m| m.medr),
            val_r2i_r1: b.map(|m| m.r1),
            val_r2i_r5: b.map(|m| m.r5),
            val_r2i_r10: b.map(|m| m.r10),
        }
    }
}

pub fn report(run: &Path, out: &Path) -> Result<(), CliError> {
    let path = run.join(RUN_REPORT);
    let file = File::open(&path).with_context(|| format!("no run report at {}", path.display()))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpochRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed record", path.display(), n + 1))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("{} has no epochs", path.display())));
    }
    create_dir(out)?;
    let csv_path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    for rec in &records {
        w.serialize(MetricsRow::from(rec)).context("csv row")?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    eprintln!("wrote {} ({} epochs)", csv_path.display(), records.len());

    let eval_path = run.join(EVAL_REPORT);
    if eval_path.exists() {
        let text = fs::read_to_string(&eval_path).with_context(|| format!("cannot read {}", eval_path.display()))?;
        let eval: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("malformed {}", eval_path.display()))?;
        print!("{}", eval.to_table());
    }
    let intra_path = run.join(INTRA_CLASS);
    if intra_path.exists() {
        let text = fs::read_to_string(&intra_path).with_context(|| format!("cannot read {}", intra_path.display()))?;
        let intra: IntraClassReport =
            serde_json::from_str(&text).with_context(|| format!("malformed {}", intra_path.display()))?;
        let table = intra.to_table();
        write_text(&out.join("intra_class.txt"), &table)?;
        print!("{table}");
    }
    Ok(())
}
