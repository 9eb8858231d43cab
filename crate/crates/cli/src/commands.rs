//! Subcommand pipelines.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use laglm::analysis::plot::{bnsl_fit_svg, pca_scatter_svg};
use laglm::analysis::{bnsl_fit, dataset_feature_matrix, feature_set_registry, pca_project};
use laglm::data::synthetic::{pretraining_corpus, unseen_period_dataset};
use laglm::data::{
    load_dataset, make_splits, restrict_history, write_dataset, CorpusManifest, Dataset, ManifestEntry, SplitMode,
};
use laglm::eval::{evaluate, write_reports_csv, MetricReport, SeedSummary};
use laglm::forecast::{forecast_svg, predict, ForecastRecord};
use laglm::model::Checkpoint;
use laglm::train::{finetune, pretrain, EpochRecord};

use crate::config::{check_config, load_config, RunConfig};
use crate::manifest::RunManifest;
use crate::{Cli, CliError, Command, Common, ConfigArgs, DatasetArgs};

type Res<T> = Result<T, CliError>;

/// Accepted few-shot history percentages.
pub const FEW_SHOT_PERCENTS: [u32; 5] = [20, 40, 60, 80, 100];

pub fn dispatch(cli: Cli) -> Res<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Pretrain {
            corpus,
            prediction_length,
            config,
            common,
        } => cmd_pretrain(&corpus, prediction_length, &config, &common),
        Command::Finetune {
            checkpoint,
            data,
            few_shot_percent,
            config,
            common,
        } => cmd_finetune(&checkpoint, &data, few_shot_percent, &config, &common),
        Command::Evaluate {
            checkpoint,
            data,
            samples,
            repeats,
            unscaled,
            common,
        } => cmd_evaluate(&checkpoint, &data, samples, repeats, !unscaled, &common),
        Command::Forecast {
            checkpoint,
            data,
            samples,
            quantiles,
            include_samples,
            plot,
            common,
        } => cmd_forecast(&checkpoint, &data, samples, &quantiles, include_samples, plot, &common),
        Command::AnalyzeDiversity {
            corpus,
            prediction_length,
            feature_set,
            components,
            plot,
            common,
        } => cmd_diversity(&corpus, prediction_length, &feature_set, components, plot, &common),
        Command::FitScalingLaw {
            log,
            x_column,
            y_column,
            plot,
            common,
        } => cmd_scaling_law(&log, &x_column, &y_column, plot, &common),
        Command::GenSynthetic { common } => cmd_gen_synthetic(&common),
    }
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_out_dir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>, outputs: &mut Vec<PathBuf>) -> Res<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| runtime(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| runtime(path, e))?;
    outputs.push(path.to_path_buf());
    Ok(())
}

/// Loads a manifest (`.toml`) or a single JSON-lines file, recording every
/// file read in `manifest`.
fn load_datasets(path: &Path, prediction_length: Option<usize>, manifest: &mut RunManifest) -> Res<Vec<Dataset>> {
    if path.extension().is_some_and(|e| e == "toml") {
        let (corpus, dir) = CorpusManifest::read(path)?;
        manifest.input(path)?;
        for e in &corpus.datasets {
            manifest.input(&dir.join(&e.path))?;
        }
        let datasets = CorpusManifest::load_all(path)?;
        if datasets.is_empty() {
            return Err(CliError::Config(format!("{}: manifest lists no datasets", path.display())));
        }
        Ok(datasets)
    } else {
        let p = prediction_length.ok_or_else(|| {
            CliError::Config(format!(
                "{}: --prediction-length is required for JSON-lines input",
                path.display()
            ))
        })?;
        if p == 0 {
            return Err(CliError::Config("--prediction-length must be positive".into()));
        }
        manifest.input(path)?;
        Ok(vec![load_dataset(path, p)?])
    }
}

fn resolve_config(args: &ConfigArgs, seed: u64) -> Res<RunConfig> {
    let mut cfg = load_config(&args.config)?;
    cfg.train.seed = seed;
    if let Some(m) = args.max_epochs {
        cfg.train.max_epochs = m;
    }
    check_config(&cfg, args.allow_off_grid)?;
    Ok(cfg)
}

/// Training log without wall-clock times, so reruns are byte-identical.
fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    if let Some(first) = history.first() {
        let cols: Vec<String> = first
            .validation
            .per_dataset
            .iter()
            .map(|(d, _)| format!("val_nll[{d}]"))
            .collect();
        out.push_str(&format!("epoch,train_nll,{},val_nll_mean\n", cols.join(",")));
    }
    for r in history {
        let vals: Vec<String> = r.validation.per_dataset.iter().map(|(_, v)| format!("{v:.6}")).collect();
        out.push_str(&format!(
            "{},{:.6},{},{:.6}\n",
            r.epoch,
            r.train_nll,
            vals.join(","),
            r.validation.mean
        ));
    }
    out
}

fn save_training(
    ck: &Checkpoint,
    history: &[EpochRecord],
    common: &Common,
    mut manifest: RunManifest,
) -> Res<()> {
    let mut outputs = Vec::new();
    let ck_path = common.out_dir.join("checkpoint.lglm");
    write_file(&ck_path, ck.to_bytes()?, &mut outputs)?;
    write_file(&common.out_dir.join("train_log.csv"), history_csv(history), &mut outputs)?;
    manifest.option("epochs_run", ck.training.epochs_run);
    manifest.option("best_epoch", ck.training.best_epoch);
    log::info!(
        "wrote {} (best epoch {}, val {:?})",
        ck_path.display(),
        ck.training.best_epoch,
        ck.training.best_val_loss
    );
    manifest.finish(&common.out_dir, &outputs)
}

fn cmd_pretrain(corpus: &Path, p: Option<usize>, args: &ConfigArgs, common: &Common) -> Res<()> {
    let cfg = resolve_config(args, common.seed)?;
    let mut manifest = RunManifest::new("pretrain", common.seed);
    manifest.set_config(&cfg);
    let datasets = load_datasets(corpus, p, &mut manifest)?;
    create_out_dir(&common.out_dir)?;
    let outcome = pretrain(&cfg.model, &datasets, &cfg.train, None)?;
    save_training(&outcome.checkpoint, &outcome.history, common, manifest)
}

fn single_dataset(data: &DatasetArgs, manifest: &mut RunManifest) -> Res<Dataset> {
    let mut ds = load_datasets(&data.dataset, data.prediction_length, manifest)?;
    if ds.len() != 1 {
        return Err(CliError::Config(format!(
            "{}: expected one dataset, found {}",
            data.dataset.display(),
            ds.len()
        )));
    }
    Ok(ds.remove(0))
}

fn cmd_finetune(ck_path: &Path, data: &DatasetArgs, percent: Option<u32>, args: &ConfigArgs, common: &Common) -> Res<()> {
    let cfg = resolve_config(args, common.seed)?;
    let mut manifest = RunManifest::new("finetune", common.seed);
    manifest.set_config(&cfg.train);
    manifest.input(ck_path)?;
    let ck = Checkpoint::load(ck_path)?;
    let mut dataset = single_dataset(data, &mut manifest)?;
    if let Some(k) = percent {
        if !FEW_SHOT_PERCENTS.contains(&k) {
            return Err(CliError::Config(format!(
                "--few-shot-percent must be one of {FEW_SHOT_PERCENTS:?}, got {k}"
            )));
        }
        // Finetuning splits need a validation and a test window plus one point.
        dataset = restrict_history(&dataset, k, 2 * dataset.prediction_length + 2)?;
        manifest.option("few_shot_percent", k);
    }
    create_out_dir(&common.out_dir)?;
    let outcome = finetune(&ck, &dataset, &cfg.train, None)?;
    save_training(&outcome.checkpoint, &outcome.history, common, manifest)
}

fn cmd_evaluate(
    ck_path: &Path,
    data: &DatasetArgs,
    samples: usize,
    repeats: usize,
    scaled: bool,
    common: &Common,
) -> Res<()> {
    if samples == 0 || repeats == 0 {
        return Err(CliError::Config("--samples and --repeats must be positive".into()));
    }
    let mut manifest = RunManifest::new("evaluate", common.seed);
    manifest.option("samples", samples);
    manifest.option("repeats", repeats);
    manifest.option("scaled", scaled);
    manifest.input(ck_path)?;
    let ck = Checkpoint::load(ck_path)?;
    let datasets = load_datasets(&data.dataset, data.prediction_length, &mut manifest)?;
    let model_id = ck_path
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let mut reports: Vec<MetricReport> = Vec::new();
    let mut summary = String::from("model,dataset,n_seeds,mean,std,cell\n");
    for ds in &datasets {
        let splits = make_splits(ds, SplitMode::Finetune);
        let mut values = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let report = evaluate(&ck.model, &model_id, &splits, samples, common.seed + r as u64, scaled)?;
            values.push(report.value);
            reports.push(report);
        }
        let s = SeedSummary::new(values)?;
        summary.push_str(&format!(
            "{model_id},{},{repeats},{:.9},{:.9},{}\n",
            ds.name,
            s.mean,
            s.std,
            s.cell()
        ));
        log::info!("{}: CRPS {}", ds.name, s.cell());
    }
    create_out_dir(&common.out_dir)?;
    let mut outputs = Vec::new();
    let mut csv = Vec::new();
    write_reports_csv(&mut csv, &reports).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&common.out_dir.join("metrics.csv"), csv, &mut outputs)?;
    write_file(&common.out_dir.join("summary.csv"), summary, &mut outputs)?;
    let json = serde_json::to_string_pretty(&reports).expect("reports serialise");
    write_file(&common.out_dir.join("metrics.json"), json + "\n", &mut outputs)?;
    manifest.finish(&common.out_dir, &outputs)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_forecast(
    ck_path: &Path,
    data: &DatasetArgs,
    samples: usize,
    qs: &[f64],
    include_samples: bool,
    plot: bool,
    common: &Common,
) -> Res<()> {
    if samples == 0 {
        return Err(CliError::Config("--samples must be positive".into()));
    }
    if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(CliError::Config(format!("--quantiles: {q} is not in (0, 1)")));
    }
    let mut manifest = RunManifest::new("forecast", common.seed);
    manifest.option("samples", samples);
    manifest.option("quantiles", format!("{qs:?}"));
    manifest.input(ck_path)?;
    let ck = Checkpoint::load(ck_path)?;
    let datasets = load_datasets(&data.dataset, data.prediction_length, &mut manifest)?;
    create_out_dir(&common.out_dir)?;
    let mut outputs = Vec::new();
    let mut lines = String::new();
    for ds in &datasets {
        for (i, rec) in ds.records.iter().enumerate() {
            let seed = common.seed.wrapping_add((i as u64) << 32);
            let f = predict(&ck.model, rec, ds.prediction_length, samples, seed)?;
            lines.push_str(&ForecastRecord::new(&f, qs, include_samples)?.to_json_line()?);
            lines.push('\n');
            if plot {
                let svg = forecast_svg(&rec.target, &f, None)?;
                let path = common
                    .out_dir
                    .join("plots")
                    .join(file_safe(&ds.name))
                    .join(format!("{}.svg", file_safe(&rec.item_id)));
                write_file(&path, svg, &mut outputs)?;
            }
        }
    }
    write_file(&common.out_dir.join("forecasts.jsonl"), lines, &mut outputs)?;
    manifest.finish(&common.out_dir, &outputs)
}

/// Domain label for colouring: the dataset name up to its first `-`.
fn domain_of(name: &str) -> String {
    name.split('-').next().unwrap_or(name).to_string()
}

fn cmd_diversity(
    corpus: &Path,
    p: Option<usize>,
    set_name: &str,
    k: usize,
    plot: bool,
    common: &Common,
) -> Res<()> {
    if k == 0 {
        return Err(CliError::Config("--components must be positive".into()));
    }
    let set = feature_set_registry().get(set_name)?;
    let mut manifest = RunManifest::new("analyze-diversity", common.seed);
    manifest.option("feature_set", set_name);
    manifest.option("components", k);
    let datasets = load_datasets(corpus, p.or(Some(1)), &mut manifest)?;
    let m = dataset_feature_matrix(&datasets, set.as_ref())?;
    for c in &m.constant_columns {
        log::warn!("feature {c} is constant across datasets");
    }
    let pca = pca_project(&m.rows, k)?;
    create_out_dir(&common.out_dir)?;
    let mut outputs = Vec::new();
    let mut feats = format!("dataset,{}\n", m.features.join(","));
    for (name, row) in m.datasets.iter().zip(&m.rows) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        feats.push_str(&format!("{name},{}\n", vals.join(",")));
    }
    write_file(&common.out_dir.join("features.csv"), feats, &mut outputs)?;
    let cols: Vec<String> = (1..=k).map(|c| format!("pc{c}")).collect();
    let mut proj = format!("dataset,{}\n", cols.join(","));
    for (name, row) in m.datasets.iter().zip(&pca.projections) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        proj.push_str(&format!("{name},{}\n", vals.join(",")));
    }
    write_file(&common.out_dir.join("pca.csv"), proj, &mut outputs)?;
    let info = serde_json::json!({
        "features": m.features,
        "constant_columns": m.constant_columns,
        "explained_ratio": pca.explained_ratio,
        "components": pca.components,
    });
    write_file(
        &common.out_dir.join("pca.json"),
        serde_json::to_string_pretty(&info).expect("json") + "\n",
        &mut outputs,
    )?;
    if plot {
        let domains: BTreeMap<String, String> = m.datasets.iter().map(|d| (d.clone(), domain_of(d))).collect();
        let svg = pca_scatter_svg(&m.datasets, &pca, &domains);
        write_file(&common.out_dir.join("pca.svg"), svg, &mut outputs)?;
    }
    manifest.finish(&common.out_dir, &outputs)
}

/// Reads two named numeric columns from a CSV file with a header row.
pub fn read_columns(path: &Path, x: &str, y: &str) -> Res<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| runtime(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| {
            CliError::Config(format!("{}: no column {name:?} (have {})", path.display(), header.join(", ")))
        })
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |i: usize| -> Res<f64> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| runtime(path, format!("line {}: bad value in column {}", n + 2, i + 1)))
        };
        xs.push(parse(xi)?);
        ys.push(parse(yi)?);
    }
    Ok((xs, ys))
}

fn cmd_scaling_law(log_path: &Path, x: &str, y: &str, plot: bool, common: &Common) -> Res<()> {
    let mut manifest = RunManifest::new("fit-scaling-law", common.seed);
    manifest.option("x_column", x);
    manifest.option("y_column", y);
    manifest.input(log_path)?;
    let (xs, ys) = read_columns(log_path, x, y)?;
    let fit = bnsl_fit(&xs, &ys, common.seed)?;
    log::info!(
        "fit: val SSE {:.3e}, test SSE {:.3e}, converged {}",
        fit.val_sse,
        fit.test_sse,
        fit.converged
    );
    create_out_dir(&common.out_dir)?;
    let mut outputs = Vec::new();
    let json = serde_json::to_string_pretty(&fit).expect("fit serialises");
    write_file(&common.out_dir.join("bnsl.json"), json + "\n", &mut outputs)?;
    if plot {
        write_file(&common.out_dir.join("bnsl.svg"), bnsl_fit_svg(&xs, &ys, &fit), &mut outputs)?;
    }
    manifest.finish(&common.out_dir, &outputs)
}

fn cmd_gen_synthetic(common: &Common) -> Res<()> {
    let mut manifest = RunManifest::new("gen-synthetic", common.seed);
    create_out_dir(&common.out_dir)?;
    let mut outputs = Vec::new();
    let groups = [
        ("corpus.toml", pretraining_corpus(common.seed)),
        ("heldout.toml", vec![unseen_period_dataset(common.seed)]),
    ];
    for (manifest_name, specs) in groups {
        let mut corpus = CorpusManifest::default();
        for spec in specs {
            let ds = spec.generate()?;
            let file = format!("{}.jsonl", spec.name);
            let path = common.out_dir.join(&file);
            write_dataset(&ds, &path)?;
            outputs.push(path);
            corpus.datasets.push(ManifestEntry {
                name: spec.name.clone(),
                path: file.into(),
                prediction_length: spec.prediction_length,
            });
        }
        let path = common.out_dir.join(manifest_name);
        corpus.write(&path)?;
        outputs.push(path);
    }
    manifest.set_config(&(pretraining_corpus(common.seed), unseen_period_dataset(common.seed)));
    manifest.finish(&common.out_dir, &outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_csv_has_no_timing() {
        assert_eq!(history_csv(&[]), "");
    }

    #[test]
    fn domains_split_on_dash() {
        assert_eq!(domain_of("sine-hourly"), "sine");
        assert_eq!(domain_of("plain"), "plain");
    }
}
