//! File-based commands. Every output lands under `config.output`; stages hand
//! off through files there, and each command writes `manifests/<command>.json`.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::Serialize;

use seirgrad::encoder::DiffPoolModel;
use seirgrad::estimator::FitResult;
use seirgrad::nn::{load_json, save_json};
use seirgrad::rng::Domain;
use seirgrad::seir::{SimCounter, SimulationDataset};
use seirgrad::surrogate::{SurrogateModel, TrainingCurve};

use crate::config::RunConfig;
use crate::data::{build_dataset, split_path, Dataset};
use crate::experiment::{self, Ablation, AblationRow, CompareRow, Evaluation};
use crate::manifest::RunManifest;
use crate::plot::{line_chart, moving_average, Series};

pub const SIMULATIONS: &str = "simulations.jsonl";
pub const ENCODER: &str = "encoder.json";
pub const SURROGATE: &str = "surrogate.json";
pub const TRAINING_CURVE: &str = "training_curve.csv";
pub const FIT: &str = "fit.json";
pub const FIT_TRACE: &str = "fit_trace.csv";
pub const METRICS: &str = "metrics.csv";
pub const COMPARE: &str = "compare.csv";

pub fn ablation_file(which: Ablation) -> String {
    format!("ablation_{}.csv", which.name())
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    let out = config.output.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    Ok(out)
}

fn record_seeds(m: &mut RunManifest, config: &RunConfig) {
    let seeds = [
        ("generate", config.stage_seed(Domain::Generate, 0)),
        ("observe", config.stage_seed(Domain::Observe, 0)),
        ("split", config.stage_seed(Domain::Split, 0)),
        ("simulate", experiment::simulate_seed(config)),
        ("grid_search", experiment::grid_seed(config)),
        ("evaluate", experiment::evaluate_seed(config)),
        ("encoder", config.encoder_config().seed),
        ("surrogate", config.surrogate_config().seed),
        ("fit", config.fit_config().seed),
    ];
    for (k, v) in seeds {
        m.seeds.insert(k.to_string(), v);
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_dataset(config: &RunConfig, out: &Path) -> Result<(Dataset, Vec<PathBuf>)> {
    let data = build_dataset(config)?;
    let files = data.write(out)?;
    Ok((data, files))
}

/// Generates episodes with observations and the train/dev/test split.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("generate", config);
    record_seeds(&mut m, config);
    let (_, files) = m.stage(out, "generate", |_| write_dataset(config, out))?;
    m.finish(out)?;
    Ok(files)
}

/// The dataset under `out`, generated first when it does not exist yet.
fn dataset_or_generate(config: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<Dataset> {
    if split_path(out).exists() {
        Dataset::load(out)
    } else {
        m.stage(out, "generate", |_| Ok(write_dataset(config, out)?.0))
    }
}

fn simulate_stage(config: &RunConfig, data: &Dataset, out: &Path, m: &mut RunManifest) -> Result<SimulationDataset> {
    m.stage(out, "simulate", |m| {
        data.require_parts(false)?;
        let counter = SimCounter::new();
        let sims = experiment::simulate_train(config, data, config.simulation.k, &counter)?;
        m.record_simulations("simulate", counter.runs());
        sims.write_jsonl(out.join(SIMULATIONS))?;
        Ok(sims)
    })
}

fn encoder_stage(config: &RunConfig, data: &Dataset, out: &Path, m: &mut RunManifest) -> Result<Option<DiffPoolModel>> {
    m.stage(out, "train-encoder", |_| {
        if !experiment::needs_encoder(&config.surrogate) {
            return Ok(None);
        }
        let (model, report) = experiment::train_encoder(config, data)?;
        save_json(&model, out.join(ENCODER))?;
        save_json(&report, out.join("encoder_report.json"))?;
        Ok(Some(model))
    })
}

fn surrogate_stage(
    config: &RunConfig,
    data: &Dataset,
    sims: &SimulationDataset,
    encoder: Option<&DiffPoolModel>,
    out: &Path,
    m: &mut RunManifest,
) -> Result<(SurrogateModel, TrainingCurve)> {
    m.stage(out, "train-surrogate", |_| {
        let (model, curve) = experiment::train_surrogate_on(config, data, sims, encoder, &config.surrogate_config())?;
        save_json(&model, out.join(SURROGATE))?;
        curve.write_csv(out.join(TRAINING_CURVE))?;
        Ok((model, curve))
    })
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    loss: f64,
    best_loss: f64,
}

fn fit_stage(config: &RunConfig, data: &Dataset, model: &SurrogateModel, out: &Path, m: &mut RunManifest) -> Result<FitResult> {
    m.stage(out, "fit", |_| {
        let fit = experiment::fit(config, data, model, config.estimation.lambda)?;
        save_json(&fit, out.join(FIT))?;
        let trace: Vec<TraceRow> = fit
            .loss_trace
            .iter()
            .zip(&fit.best_trace)
            .enumerate()
            .map(|(iteration, (&loss, &best_loss))| TraceRow { iteration, loss, best_loss })
            .collect();
        write_csv(&out.join(FIT_TRACE), &trace)?;
        Ok(fit)
    })
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    episode: &'a str,
    sq_error: f64,
    rmse: f64,
    surrogate_sq_error: Option<f64>,
    observed_total: u64,
    simulated_total: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    t: usize,
    observed: u64,
    simulated: f64,
    surrogate: Option<f64>,
    observed_smooth: f64,
    simulated_smooth: f64,
    surrogate_smooth: Option<f64>,
}

fn write_evaluation(config: &RunConfig, eval: &Evaluation, out: &Path) -> Result<()> {
    let rows: Vec<MetricsRow> = eval
        .episodes
        .iter()
        .map(|e| MetricsRow {
            episode: &e.id,
            sq_error: e.sq_error,
            rmse: (e.sq_error / e.observed.len() as f64).sqrt(),
            surrogate_sq_error: e.surrogate_sq_error,
            observed_total: e.observed.iter().sum(),
            simulated_total: e.simulated.iter().sum(),
        })
        .collect();
    write_csv(&out.join(METRICS), &rows)?;

    let plots = out.join("plots");
    std::fs::create_dir_all(&plots)?;
    for e in &eval.episodes {
        let observed: Vec<f64> = e.observed.iter().map(|&o| o as f64).collect();
        let obs_s = moving_average(&observed, 5);
        let sim_s = moving_average(&e.simulated, 5);
        let sur_s = e.surrogate.as_ref().map(|s| moving_average(s, 5));
        let series: Vec<SeriesRow> = (0..observed.len())
            .map(|t| SeriesRow {
                t: t + 1,
                observed: e.observed[t],
                simulated: e.simulated[t],
                surrogate: e.surrogate.as_ref().map(|s| s[t]),
                observed_smooth: obs_s[t],
                simulated_smooth: sim_s[t],
                surrogate_smooth: sur_s.as_ref().map(|s| s[t]),
            })
            .collect();
        write_csv(&out.join("series").join(format!("{}.csv", e.id)), &series)?;

        let mut lines = vec![
            Series { label: "observed", color: "#222222", dashed: false, values: observed },
            Series { label: "simulated (fitted θ)", color: "#1f77b4", dashed: false, values: e.simulated.clone() },
        ];
        if let Some(s) = &e.surrogate {
            lines.push(Series { label: "surrogate", color: "#ff7f0e", dashed: true, values: s.clone() });
        }
        let svg = line_chart(&format!("{}: daily infections", e.id), &lines, config.plots.smooth);
        std::fs::write(plots.join(format!("{}.svg", e.id)), svg)?;
    }
    Ok(())
}

fn evaluate_stage(
    config: &RunConfig,
    data: &Dataset,
    fit: &FitResult,
    model: Option<&SurrogateModel>,
    out: &Path,
    m: &mut RunManifest,
) -> Result<Evaluation> {
    m.stage(out, "evaluate", |m| {
        let counter = SimCounter::new();
        let eval = experiment::evaluate_episodes(config, &data.test(), &fit.theta()?, model, &counter)?;
        m.record_simulations("evaluate", counter.runs());
        write_evaluation(config, &eval, out)?;
        Ok(eval)
    })
}

fn load_checkpoint<T: serde::de::DeserializeOwned>(out: &Path, name: &str, producer: &str) -> Result<T> {
    let path = out.join(name);
    ensure!(path.exists(), "{} is missing (run `{producer}` first)", path.display());
    Ok(load_json(&path)?)
}

fn load_encoder(config: &RunConfig, out: &Path) -> Result<Option<DiffPoolModel>> {
    if !experiment::needs_encoder(&config.surrogate) {
        return Ok(None);
    }
    let enc: DiffPoolModel = load_checkpoint(out, ENCODER, "train-encoder")?;
    enc.validate()?;
    Ok(Some(enc))
}

fn load_surrogate(out: &Path) -> Result<SurrogateModel> {
    let model: SurrogateModel = load_checkpoint(out, SURROGATE, "train-surrogate")?;
    model.validate()?;
    Ok(model)
}

pub fn cmd_simulate(config: &RunConfig) -> Result<PathBuf> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("simulate", config);
    record_seeds(&mut m, config);
    let data = Dataset::load(out)?;
    simulate_stage(config, &data, out, &mut m)?;
    m.finish(out)?;
    Ok(out.join(SIMULATIONS))
}

pub fn cmd_train_encoder(config: &RunConfig) -> Result<Option<PathBuf>> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("train-encoder", config);
    record_seeds(&mut m, config);
    let data = Dataset::load(out)?;
    let enc = encoder_stage(config, &data, out, &mut m)?;
    m.finish(out)?;
    Ok(enc.map(|_| out.join(ENCODER)))
}

pub fn cmd_train_surrogate(config: &RunConfig) -> Result<TrainingCurve> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("train-surrogate", config);
    record_seeds(&mut m, config);
    let data = Dataset::load(out)?;
    let sims_path = out.join(SIMULATIONS);
    ensure!(sims_path.exists(), "{} is missing (run `simulate` first)", sims_path.display());
    let sims = SimulationDataset::read_jsonl(&sims_path)?;
    let encoder = load_encoder(config, out)?;
    let (_, curve) = surrogate_stage(config, &data, &sims, encoder.as_ref(), out, &mut m)?;
    m.finish(out)?;
    Ok(curve)
}

pub fn cmd_fit(config: &RunConfig) -> Result<FitResult> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("fit", config);
    record_seeds(&mut m, config);
    let data = Dataset::load(out)?;
    let model = load_surrogate(out)?;
    let fit = fit_stage(config, &data, &model, out, &mut m)?;
    m.finish(out)?;
    Ok(fit)
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<Evaluation> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("evaluate", config);
    record_seeds(&mut m, config);
    let data = Dataset::load(out)?;
    let fit: FitResult = load_checkpoint(out, FIT, "fit")?;
    let model = if out.join(SURROGATE).exists() { Some(load_surrogate(out)?) } else { None };
    let eval = evaluate_stage(config, &data, &fit, model.as_ref(), out, &mut m)?;
    m.finish(out)?;
    Ok(eval)
}

/// simulate → train-encoder → train-surrogate → fit → evaluate, generating
/// the dataset first if `out` has none.
pub fn cmd_pipeline(config: &RunConfig) -> Result<(FitResult, Evaluation)> {
    let out = out_dir(config)?;
    let mut m = RunManifest::new("pipeline", config);
    record_seeds(&mut m, config);
    let data = dataset_or_generate(config, out, &mut m)?;
    let sims = simulate_stage(config, &data, out, &mut m)?;
    let encoder = encoder_stage(config, &data, out, &mut m)?;
    let (model, _) = surrogate_stage(config, &data, &sims, encoder.as_ref(), out, &mut m)?;
    let fit = fit_stage(config, &data, &model, out, &mut m)?;
    let eval = evaluate_stage(config, &data, &fit, Some(&model), out, &mut m)?;
    m.finish(out)?;
    Ok((fit, eval))
}

/// Budget-matched comparison of grid search and the surrogate at each K.
pub fn cmd_compare(config: &RunConfig, k_grid: Option<&[usize]>) -> Result<Vec<CompareRow>> {
    let out = out_dir(config)?;
    let k_grid = k_grid.unwrap_or(&config.compare.k_grid).to_vec();
    ensure!(!k_grid.is_empty(), "K grid is empty");
    let mut m = RunManifest::new("compare", config);
    record_seeds(&mut m, config);
    let data = dataset_or_generate(config, out, &mut m)?;
    data.require_parts(false)?;
    let encoder = m.stage(out, "train-encoder", |_| {
        Ok(if experiment::needs_encoder(&config.surrogate) {
            Some(experiment::train_encoder(config, &data)?.0)
        } else {
            None
        })
    })?;
    let mut rows = Vec::new();
    for k in k_grid {
        let row = m.stage(out, &format!("compare.k{k}"), |_| experiment::compare_k(config, &data, encoder.as_ref(), k))?;
        m.record_simulations(format!("k{k}.vanilla"), row.vanilla_simulations);
        m.record_simulations(format!("k{k}.surrogate"), row.surrogate_simulations);
        rows.push(row);
    }
    write_csv(&out.join(COMPARE), &rows)?;
    m.finish(out)?;
    Ok(rows)
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    ablation: &'a str,
    variant: &'a str,
    dev_error: Option<f64>,
    test_error: f64,
    val_loss: f64,
}

pub fn cmd_ablate(config: &RunConfig, which: &str) -> Result<Vec<AblationRow>> {
    let which: Ablation = which.parse()?;
    let out = out_dir(config)?;
    let command = format!("ablate-{}", which.name());
    let mut m = RunManifest::new(&command, config);
    record_seeds(&mut m, config);
    let data = dataset_or_generate(config, out, &mut m)?;
    data.require_parts(which == Ablation::Lambda)?;
    let rows = m.stage(out, which.name(), |m| {
        let counter = SimCounter::new();
        let rows = experiment::ablate(config, &data, which, &counter)?;
        m.record_simulations("simulate", counter.runs());
        Ok(rows)
    })?;
    let csv_rows: Vec<AblationCsvRow> = rows
        .iter()
        .map(|r| AblationCsvRow {
            ablation: which.name(),
            variant: &r.variant,
            dev_error: r.dev_error,
            test_error: r.test_error,
            val_loss: r.val_loss,
        })
        .collect();
    write_csv(&out.join(ablation_file(which)), &csv_rows)?;
    m.finish(out)?;
    Ok(rows)
}
