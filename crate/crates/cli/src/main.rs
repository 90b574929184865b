use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use pv_disagg::checkpoint::{load_checkpoint, save_checkpoint};
use pv_disagg::config::RunConfig;
use pv_disagg::data::dataset_file::{load_dataset, save_dataset};
use pv_disagg::data::meter::load_meter_csv;
use pv_disagg::data::synth::{synth_generate, SynthConfig};
use pv_disagg::data::weather::load_weather_csv;
use pv_disagg::data::{assemble_days, percentile_filter, DailySample, ProsumerSplit};
use pv_disagg::eval::{emit_day_series, predict_all, season_metrics, Method, SeasonReport};
use pv_disagg::model::consumption_from;
use pv_disagg::train::{repeated_runs, train, validation_metrics};

/// Disaggregate rooftop PV generation from net-metered household load.
#[derive(Parser, Debug)]
#[command(name = "pvdisagg", version)]
struct Cli {
    /// Key-value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, repeats and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 forces serial execution).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a configuration key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble meter and weather CSVs into a dataset file.
    Ingest(IngestArgs),
    /// Write a synthetic dataset with full ground truth.
    Synth(SynthArgs),
    /// Train on the training partition and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint and the baselines on the test partition.
    Eval(EvalArgs),
    /// Predict PV and consumption for every day in a dataset.
    Predict(PredictArgs),
    /// Repeated seeded train/eval runs aggregated into a season report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, required_unless_present = "dataset", requires = "weather")]
    meter: Option<PathBuf>,
    #[arg(long, requires = "meter")]
    weather: Option<PathBuf>,
    /// Re-read an existing dataset file and write it back in canonical form.
    #[arg(long, conflicts_with_all = ["meter", "weather"])]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    prosumers: usize,
    #[arg(long)]
    days: usize,
    /// First calendar day.
    #[arg(long, default_value = "2011-01-01")]
    start: NaiveDate,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a two-day series for PROSUMER,DATE (DATE is the first day).
    #[arg(long, value_name = "PROSUMER,DATE", requires = "day_series_out")]
    day_series: Option<String>,
    #[arg(long)]
    day_series_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prediction CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.train.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cfg.train.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.train.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Synth(a) => synth(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Predict(a) => predict_cmd(a),
        Command::Report(a) => report_cmd(&cfg, a),
    }
}

fn read_dataset(path: &Path) -> Result<Vec<DailySample>> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_truth(samples: Vec<DailySample>) -> Vec<DailySample> {
    samples.into_iter().filter(DailySample::has_truth).collect()
}

fn ingest(cfg: &RunConfig, a: &IngestArgs) -> Result<()> {
    if let Some(path) = &a.dataset {
        let samples = read_dataset(path)?;
        save_dataset(&a.out, &samples)?;
        println!("samples: {}", samples.len());
        return Ok(());
    }
    let (meter, weather) = (a.meter.as_ref().expect("clap"), a.weather.as_ref().expect("clap"));
    let records = load_meter_csv(meter)?;
    let weather = load_weather_csv(weather)?;
    let (records, filtered) = percentile_filter(&records, cfg.data.filter_low_pct, cfg.data.filter_high_pct);
    let split = ProsumerSplit::by_fraction(
        records.iter().map(|r| r.prosumer_id.as_str()),
        cfg.data.p2_fraction,
        cfg.data.split_seed,
    )?;
    let (samples, summary) = assemble_days(&records, &weather.days, &split)?;
    save_dataset(&a.out, &samples)?;
    if weather.dropped_days > 0 {
        log::warn!("{} weather days dropped for missing slots", weather.dropped_days);
    }
    println!("days_kept: {}", summary.days_kept);
    println!("dropped_no_weather: {}", summary.dropped_no_weather);
    println!("dropped_incomplete_meter: {}", summary.dropped_incomplete_meter);
    println!("weather_days_dropped: {}", weather.dropped_days);
    println!("prosumers_type1: {}", split.p1.len());
    println!("prosumers_type2: {}", split.p2.len());
    println!("prosumers_filtered: {}", filtered.len());
    for id in filtered {
        println!("filtered: {id}");
    }
    Ok(())
}

fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<()> {
    if a.prosumers == 0 || a.days == 0 {
        bail!("--prosumers and --days must be positive");
    }
    let sc = SynthConfig { start: a.start, ..SynthConfig::new(a.prosumers, a.days, cfg.train.seed) };
    let samples = synth_generate(&sc);
    save_dataset(&a.out, &samples)?;
    println!("samples: {}", samples.len());
    Ok(())
}

fn training_days(cfg: &RunConfig, path: &Path) -> Result<(Vec<DailySample>, Vec<DailySample>)> {
    partition(cfg, path, read_dataset(path)?)
}

fn partition(cfg: &RunConfig, path: &Path, samples: Vec<DailySample>) -> Result<(Vec<DailySample>, Vec<DailySample>)> {
    let (tr, te) = cfg.partition(&samples)?;
    let tr = with_truth(tr);
    if tr.is_empty() {
        bail!("{}: no training days with PV truth (type-1 prosumers)", path.display());
    }
    Ok((tr, te))
}

fn train_cmd(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let (tr, _) = training_days(cfg, &a.dataset)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("config.txt"), &cfg.snapshot())?;
    let (model, history) = train(&tr, &cfg.model, &cfg.train)?;
    save_checkpoint(&a.out.join("checkpoint.txt"), &model)?;
    write(&a.out.join("history.csv"), &history.to_csv())?;
    let best = history.best_epoch;
    println!("epochs: {}", history.epochs());
    println!("best_epoch: {}", best + 1);
    println!("val_mae: {}", history.val_mae[best]);
    println!("val_rmse: {}", history.val_rmse[best]);
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = read_dataset(&a.dataset)?;
    let hint = "eval needs metered PV generation; use `pvdisagg predict` for net-load-only data";
    if !samples.iter().any(DailySample::has_truth) {
        bail!("{} has no days with PV truth; {hint}", a.dataset.display());
    }
    let (tr, te) = partition(cfg, &a.dataset, samples)?;
    let total = te.len();
    let test = with_truth(te);
    if test.is_empty() {
        bail!("no test days in {} carry PV truth; {hint}", a.dataset.display());
    }
    if test.len() < total {
        log::info!("skipping {} test days without PV truth", total - test.len());
    }
    let preds = predict_all(&model, &tr, &test, cfg.knn_k, cfg.train.val_fraction)?;
    log::info!("KNN baseline uses k = {}", preds.knn_k);
    let metrics = season_metrics(&test, &preds, cfg.data.hemisphere)?;
    let id = a.dataset.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let report = SeasonReport::from_runs(&[metrics], cfg.train.seed, &id)?;
    write(&a.out, &report.to_csv())?;
    print!("{}", report.to_table());

    if let (Some(spec), Some(out)) = (&a.day_series, &a.day_series_out) {
        let (who, date) = spec.split_once(',').context("--day-series expects PROSUMER,DATE")?;
        let date: NaiveDate = date.trim().parse().with_context(|| format!("bad date in {spec:?}"))?;
        let find = |d: NaiveDate| {
            test.iter()
                .position(|s| s.prosumer_id == who.trim() && s.date == d)
                .with_context(|| format!("{who} {d} is not a test day with truth"))
        };
        let next = date.succ_opt().context("date overflow")?;
        let idx = [find(date)?, find(next)?];
        let per_day = idx.map(|i| {
            preds.series.iter().map(|(m, s)| (*m, s[i].clone())).collect::<Vec<(Method, Vec<f64>)>>()
        });
        let csv = emit_day_series([&test[idx[0]], &test[idx[1]]], [&per_day[0], &per_day[1]])?;
        write(out, &csv)?;
    }
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = read_dataset(&a.dataset)?;
    let mut out = String::from("prosumer_id,date,slot,net_load,pv_hat,consumption_hat\n");
    let preds = {
        use rayon::prelude::*;
        samples.par_iter().map(|s| model.predict_day(s)).collect::<pv_disagg::Result<Vec<_>>>()?
    };
    for (s, p) in samples.iter().zip(&preds) {
        let u = consumption_from(&s.net_load, &p.ghat)?;
        for t in 0..s.net_load.len() {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.prosumer_id, s.date, t, s.net_load[t], p.ghat[t], u[t]);
        }
    }
    write(&a.out, &out)?;
    println!("days: {}", samples.len());
    Ok(())
}

fn report_cmd(cfg: &RunConfig, a: &ReportArgs) -> Result<()> {
    let (tr, te) = training_days(cfg, &a.dataset)?;
    let test = with_truth(te);
    if test.is_empty() {
        bail!("no test days with PV truth in {}", a.dataset.display());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("config.txt"), &cfg.snapshot())?;
    let id = a.dataset.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let (report, runs) = repeated_runs(&tr, &test, &cfg.model, &cfg.train, cfg.knn_k, cfg.data.hemisphere, &id)?;
    for run in &runs {
        write(&a.out.join(format!("history_seed{}.csv", run.seed)), &run.history.to_csv())?;
        let (m, r) = validation_metrics(&run.model, &test)?;
        log::info!("seed {}: test MAE {m:.4} RMSE {r:.4}", run.seed);
    }
    write(&a.out.join("report.csv"), &report.to_csv())?;
    let table = report.to_table();
    write(&a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
