//! Command-line entry points. Four subcommands cover the pipeline:
//! `simulate` renders a scene into a skip-k dataset, `train` fits a model on
//! it, `eval` scores a checkpoint, and `ablate` runs the variant table.
//! Every run leaves a `run.toml` manifest naming its inputs and a digest of
//! its outputs.

pub mod config;
pub mod manifest;
pub mod plots;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array3;

use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::eval::{
    build_variant, center_index, evaluate, write_results_csv, write_summary, Aggregation,
    BuiltVariant, EvalRecord, EvalSummary,
};
use crate::event::io::write_events_binary;
use crate::event::simulate_events;
use crate::model::{InterpolationModel, VariantKind};
use crate::scene::{read_dataset, render, write_dataset, Dataset, InterpolationSample};
use crate::train::{resume_training, train, TrainReport};
use config::{AppConfig, Preset};
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "evinterp",
    version,
    about = "Event-guided frame interpolation: simulate, train, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scene, simulate its event stream, and cut a
    /// skip-k dataset
    Simulate(SimulateArgs),
    /// Train an interpolation model on a simulated dataset
    Train(TrainArgs),
    /// Score a trained checkpoint on a dataset's held-out frames
    Eval(EvalArgs),
    /// Train and evaluate every model variant for a side-by-side table
    Ablate(AblateArgs),
}

/// Shared configuration flags: preset, then file, then seed override.
#[derive(Args)]
struct ConfigArgs {
    /// Baseline settings: desk (minutes on one core) or paper (full scale)
    #[arg(long, value_name = "NAME", default_value = "desk")]
    preset: Preset,
    /// TOML file overriding any subset of the preset
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Reseed the whole run, trainer included
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<AppConfig> {
        AppConfig::resolve(self.preset, self.config.as_deref(), self.seed)
    }

    fn path_string(&self) -> Option<String> {
        self.config.as_ref().map(|p| p.display().to_string())
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overwrite an existing dataset in --out
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by simulate
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue the checkpointed run in --out instead of starting fresh
    #[arg(long)]
    resume: bool,
    /// Discard an existing run in --out and retrain from scratch
    #[arg(long)]
    force: bool,
    /// Override the configured epoch count
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model checkpoint written by train
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Dataset directory written by simulate
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Positions entering the means: whole or center
    #[arg(long, value_name = "MODE")]
    aggregation: Option<Aggregation>,
    /// Cross-check: fail unless the dataset was cut with this skip
    #[arg(long, value_name = "K")]
    skip: Option<usize>,
    /// Cross-check: fail unless the checkpoint holds this variant
    #[arg(long, value_name = "NAME")]
    variant: Option<VariantKind>,
    /// Overwrite existing evaluation outputs in --out
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by simulate
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the configured epoch count for every variant
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Overwrite an existing ablation table in --out
    #[arg(long)]
    force: bool,
}

/// Process exit code for an error: 2 bad input or file contents, 3 training
/// divergence, 4 I/O.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Format { .. } => 2,
        Error::Divergence(_) => 3,
        Error::Io { .. } => 4,
    }
}

/// Parses arguments, runs the subcommand, and maps errors onto exit codes.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn refuse_overwrite(path: &Path, force: bool, hint: &str) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::invalid(format!(
            "{} already exists; pass --force to overwrite{hint}",
            path.display()
        )));
    }
    Ok(())
}

/// Every 4th sample validates when there are at least 4; tiny datasets
/// train on everything.
fn split_train_val(ds: &Dataset) -> (Vec<InterpolationSample>, Vec<InterpolationSample>) {
    if ds.samples.len() < 4 {
        return (ds.samples.clone(), Vec::new());
    }
    let mut tr = Vec::new();
    let mut va = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if i % 4 == 3 {
            va.push(s.clone());
        } else {
            tr.push(s.clone());
        }
    }
    (tr, va)
}

fn write_manifest(
    command: &str,
    cfg_args: &ConfigArgs,
    seed: u64,
    inputs: Vec<String>,
    out: &Path,
    started: Instant,
) -> Result<()> {
    let outputs = manifest::list_outputs(out)?;
    let output_sha256 = manifest::digest_outputs(out, &outputs)?;
    RunManifest {
        command: command.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_path: cfg_args.path_string(),
        inputs,
        outputs,
        output_sha256,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.config.resolve()?;
    let dataset_dir = args.out.join("dataset");
    refuse_overwrite(&dataset_dir, args.force, "")?;
    if dataset_dir.exists() {
        std::fs::remove_dir_all(&dataset_dir).map_err(|e| Error::io(&dataset_dir, e))?;
    }
    ensure_dir(&args.out)?;

    let frames = render(&cfg.scene)?;
    let events = simulate_events(&frames, &cfg.simulator)?;
    let samples = crate::scene::make_skip_dataset(&frames, &events, cfg.skip)?;
    let ds = Dataset::new(cfg.skip, cfg.seed, samples)?;
    write_dataset(&dataset_dir, &ds)?;
    write_events_binary(&args.out.join("events.evt"), &events)?;

    let cfg_text = toml::to_string_pretty(&cfg)
        .map_err(|e| Error::invalid(format!("config serialization failed: {e}")))?;
    let cfg_path = args.out.join("config.toml");
    std::fs::write(&cfg_path, cfg_text).map_err(|e| Error::io(&cfg_path, e))?;

    plots::save_event_map(&args.out.join("event_map.png"), &events)?;
    let step = (frames.len().saturating_sub(1) / 5).max(1);
    let preview: Vec<&Array3<f64>> = (0..frames.len()).step_by(step).take(6).map(|i| frames.frame(i)).collect();
    plots::save_frame_strip(&args.out.join("frames.png"), &[preview])?;

    write_manifest(
        "simulate",
        &args.config,
        cfg.seed,
        args.config.path_string().into_iter().collect(),
        &args.out,
        started,
    )?;
    println!(
        "simulate: {} frames, {} events, {} samples (skip {})",
        frames.len(),
        events.len(),
        ds.samples.len(),
        ds.skip
    );
    println!("simulate: wrote {}", dataset_dir.display());
    Ok(())
}

/// Leftover artifacts from a run being replaced under --force. Metrics are
/// append-only, so a stale file would interleave two runs.
fn clear_training_artifacts(out: &Path) -> Result<()> {
    let entries = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(out, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == "metrics.csv" || name.ends_with(".evcp") {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = args.config.resolve()?;
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
        cfg.train.validate()?;
    }
    let ds = read_dataset(&args.data)?;
    let (train_set, val_set) = split_train_val(&ds);
    let ckpt = args.out.join("model.evcp");

    let report: TrainReport;
    if ckpt.exists() && args.resume {
        let (_model, _store, r) =
            resume_training(&ckpt, &train_set, &val_set, &cfg.train, Some(&args.out))?;
        report = r;
    } else {
        if args.resume {
            return Err(Error::invalid(format!(
                "--resume given but {} does not exist",
                ckpt.display()
            )));
        }
        if ckpt.exists() {
            if !args.force {
                return Err(Error::invalid(format!(
                    "{} already exists; pass --resume to continue it or --force to retrain from scratch",
                    ckpt.display()
                )));
            }
            clear_training_artifacts(&args.out)?;
        }
        ensure_dir(&args.out)?;
        let mut store = ParamStore::new();
        let model = InterpolationModel::init(&mut store, cfg.train.seed, &cfg.model)?;
        report = train(&model, &mut store, &train_set, &val_set, &cfg.train, Some(&args.out))?;
    }

    save_training_curves(&args.out, &report)?;
    write_manifest(
        "train",
        &args.config,
        cfg.train.seed,
        [Some(args.data.display().to_string()), args.config.path_string()]
            .into_iter()
            .flatten()
            .collect(),
        &args.out,
        started,
    )?;

    match (report.records.first(), report.records.last()) {
        (Some(first), Some(last)) => {
            println!(
                "train: epochs {}..{}, total {:.6} -> {:.6}",
                first.epoch, last.epoch, first.total, last.total
            );
            if let Some(v) = last.val_psnr {
                println!("train: validation psnr {v:.2} dB");
            }
        }
        _ => println!("train: nothing to do, run already at the configured epoch count"),
    }
    println!("train: checkpoint {}", ckpt.display());
    Ok(())
}

fn save_training_curves(out: &Path, report: &TrainReport) -> Result<()> {
    if report.records.len() >= 2 {
        let loss: Vec<(f64, f64)> =
            report.records.iter().map(|r| (r.epoch as f64, r.total)).collect();
        plots::save_metric_curve(&out.join("loss_curve.png"), &loss)?;
        let val: Vec<(f64, f64)> = report
            .records
            .iter()
            .filter_map(|r| r.val_psnr.map(|v| (r.epoch as f64, v)))
            .collect();
        if val.len() >= 2 {
            plots::save_metric_curve(&out.join("val_psnr.png"), &val)?;
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.config.resolve()?;
    let aggregation = args.aggregation.unwrap_or(cfg.aggregation);

    let (meta, model, store, _extras) = InterpolationModel::load(&args.model)?;
    if let Some(expect) = args.variant {
        if expect != meta.config.variant {
            return Err(Error::invalid(format!(
                "checkpoint holds the {} variant, --variant asked for {}",
                meta.config.variant, expect
            )));
        }
    }
    let ds = read_dataset(&args.data)?;
    if let Some(expect) = args.skip {
        if expect != ds.skip {
            return Err(Error::invalid(format!(
                "dataset was cut with skip {}, --skip asked for {expect}",
                ds.skip
            )));
        }
    }

    let summary_path = args.out.join("summary.toml");
    refuse_overwrite(&summary_path, args.force, "")?;
    ensure_dir(&args.out)?;

    let built = BuiltVariant { config: meta.config.clone(), model, store };
    let record = evaluate(built.model_fn(), &ds, aggregation)?;
    write_results_csv(&args.out.join("results.csv"), &record)?;
    let summary = EvalSummary::of(meta.config.variant.name(), &record);
    write_summary(&summary_path, &summary)?;
    save_eval_plots(&args.out, &built, &ds, &record)?;

    write_manifest(
        "eval",
        &args.config,
        meta.seed,
        [
            Some(args.model.display().to_string()),
            Some(args.data.display().to_string()),
            args.config.path_string(),
        ]
        .into_iter()
        .flatten()
        .collect(),
        &args.out,
        started,
    )?;

    println!(
        "eval: {} skip-{} {}: psnr {:.2} dB ssim {:.4} ie {:.2} ({} frames, {} failures)",
        summary.variant,
        record.skip,
        record.aggregation,
        record.psnr,
        record.ssim,
        record.ie,
        record.frames.len(),
        record.failures.len()
    );
    for f in &record.failures {
        println!("eval: failed sample {} position {}: {}", f.sample, f.index, f.reason);
    }
    println!("eval: wrote {}", summary_path.display());
    Ok(())
}

/// Mean PSNR per held-out position, a prediction strip for the first
/// sample, and its refined flow fields.
fn save_eval_plots(
    out: &Path,
    built: &BuiltVariant,
    ds: &Dataset,
    record: &EvalRecord,
) -> Result<()> {
    let k = ds.skip;
    let mut per_position: Vec<(f64, usize)> = vec![(0.0, 0); k];
    for f in &record.frames {
        per_position[f.index].0 += f.psnr;
        per_position[f.index].1 += 1;
    }
    let curve: Vec<(f64, f64)> = per_position
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(i, (sum, n))| ((i + 1) as f64, sum / *n as f64))
        .collect();
    if curve.len() >= 2 {
        plots::save_metric_curve(&out.join("psnr_by_position.png"), &curve)?;
    }

    let sample = &ds.samples[0];
    let model_fn = built.model_fn();
    let mut gt_row = Vec::new();
    let mut pred_row = Vec::new();
    for (t, gt) in sample.gt_pairs() {
        gt_row.push(gt.clone());
        pred_row.push(model_fn(&sample.frame0, &sample.frame1, &sample.events, t)?);
    }
    if !gt_row.is_empty() {
        let rows = vec![gt_row.iter().collect::<Vec<_>>(), pred_row.iter().collect::<Vec<_>>()];
        plots::save_frame_strip(&out.join("sample0_strip.png"), &rows)?;
    }

    let t = sample.gt_times[center_index(sample.gt_times.len())];
    let g = Graph::new();
    let syn = built.model.reconstruct(
        &g,
        &built.store,
        g.constant(sample.frame0.clone().into_dyn()),
        sample.t0,
        g.constant(sample.frame1.clone().into_dyn()),
        sample.t1,
        &sample.events,
        t,
    )?;
    let result = syn.materialize(&g)?;
    plots::save_flow_map(&out.join("flow_to_start.png"), &result.flow0)?;
    plots::save_flow_map(&out.join("flow_to_end.png"), &result.flow1)?;
    Ok(())
}

pub const ABLATION_HEADER: &str = "variant,psnr,ssim,ie";

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = args.config.resolve()?;
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
        cfg.train.validate()?;
    }
    let ds = read_dataset(&args.data)?;
    let (train_set, val_set) = split_train_val(&ds);
    let table_path = args.out.join("ablation.csv");
    refuse_overwrite(&table_path, args.force, "")?;
    ensure_dir(&args.out)?;

    let mut rows = Vec::new();
    for kind in VariantKind::all() {
        let vdir = args.out.join("variants").join(kind.name());
        if vdir.exists() {
            std::fs::remove_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        }
        ensure_dir(&vdir)?;

        let mut built = build_variant(kind, &cfg.model, cfg.train.seed)?;
        let report = train(
            &built.model,
            &mut built.store,
            &train_set,
            &val_set,
            &cfg.train,
            Some(&vdir),
        )?;
        save_training_curves(&vdir, &report)?;
        let record = evaluate(built.model_fn(), &ds, cfg.aggregation)?;
        write_results_csv(&vdir.join("results.csv"), &record)?;
        write_summary(&vdir.join("summary.toml"), &EvalSummary::of(kind.name(), &record))?;
        println!(
            "ablate: {}: psnr {:.2} dB ssim {:.4} ie {:.2}",
            kind.name(),
            record.psnr,
            record.ssim,
            record.ie
        );
        rows.push((kind, record));
    }

    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for (kind, r) in &rows {
        csv.push_str(&format!("{},{},{},{}\n", kind.name(), r.psnr, r.ssim, r.ie));
    }
    std::fs::write(&table_path, csv).map_err(|e| Error::io(&table_path, e))?;

    write_manifest(
        "ablate",
        &args.config,
        cfg.train.seed,
        [Some(args.data.display().to_string()), args.config.path_string()]
            .into_iter()
            .flatten()
            .collect(),
        &args.out,
        started,
    )?;
    println!("ablate: wrote {}", table_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::format("f", "bad")), 2);
        assert_eq!(exit_code(&Error::Divergence("nan".into())), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Error::io("f", io)), 4);
    }

    #[test]
    fn split_holds_out_every_fourth_sample() {
        use crate::event::{simulate_events, SimulatorConfig};
        use crate::scene::{make_skip_dataset, render};

        let cfg = AppConfig::preset(Preset::Desk);
        let frames = render(&cfg.scene).unwrap();
        let events = simulate_events(&frames, &SimulatorConfig::default()).unwrap();
        let samples = make_skip_dataset(&frames, &events, cfg.skip).unwrap();
        let n = samples.len();
        assert!(n >= 4, "desk preset should produce at least 4 samples, got {n}");
        let ds = Dataset::new(cfg.skip, cfg.seed, samples).unwrap();

        let (tr, va) = split_train_val(&ds);
        assert_eq!(tr.len() + va.len(), n);
        assert_eq!(va.len(), n / 4);
        assert_eq!(va[0], ds.samples[3]);
    }
}
