//! Command-line front end. `run` maps argv to an exit code: 0 on success,
//! 1 on runtime failure, 2 on invalid configuration or usage.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::adapter::AdapterVariant;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{AblationModel, ExperimentConfig, FieldError};
use crate::data::{load_scene, read_tensor, save_scene, write_frame_image, write_tensor};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::harness::{ablation_grid, grid_csv, write_run_echo};
use crate::metrics::DriftReport;
use crate::rollout::{evaluation_scene, rollout};
use crate::train::{init_state, make_scenes, train_loop_with, LOSS_CSV_HEADER};
use crate::window::{Strategy, WeightScheme};

#[derive(Parser, Debug)]
#[command(name = "lff", version, about = "Audio-conditioned long-video flow matching at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic training scenes.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus a loss CSV.
    Train(TrainArgs),
    /// Roll out a long sequence and write latents, frames and a drift report.
    Sample(SampleArgs),
    /// Run the configured ablation grid and write a comparison CSV.
    Ablate(AblateArgs),
    /// Recompute the drift report of a stored sample run.
    Metrics(MetricsArgs),
    /// Run the invariant suite; exits nonzero on any failure.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_name::<AdapterVariant>)]
    pub variant: Option<AdapterVariant>,
    /// Scenes written by `gen-data`; generated from the seed when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Print the loss every this many steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Args, Debug, Clone)]
pub struct RolloutArgs {
    /// Total frames L.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Window length l.
    #[arg(long)]
    pub window: Option<usize>,
    /// Overlap m.
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Sampler steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = parse_name::<WeightScheme>)]
    pub scheme: Option<WeightScheme>,
    #[arg(long, value_parser = parse_name::<Strategy>)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_parser = parse_name::<GuidanceMode>)]
    pub guidance: Option<GuidanceMode>,
    #[arg(long)]
    pub clip_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training scene whose identity and audio drive the rollout.
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    /// Seed of the initial noise (defaults to the config seed).
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub dump_frames: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// Directory with one checkpoint subdirectory per adapter variant.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Use the analytic stub denoiser instead of trained checkpoints.
    #[arg(long)]
    pub stub: bool,
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Directory of a previous `sample` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write drift.csv (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub clip_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

enum Failure {
    Invalid(Vec<FieldError>),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_failure(e: Error) -> Failure {
    match e {
        Error::Json(_) => Failure::Invalid(vec![FieldError {
            field: "config".into(),
            message: e.to_string(),
        }]),
        e => Failure::Runtime(e),
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `argv` and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Ablate(a) => ablate(a),
        Command::Metrics(a) => metrics(a),
        Command::Selftest(a) => return selftest(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Invalid(errors)) => {
            eprintln!("invalid configuration:");
            for e in errors {
                eprintln!("  {e}");
            }
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(common: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(config_failure)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()
        .map_err(|e| Failure::Invalid(vec![FieldError { field: "LFF_SEED".into(), message: e.to_string() }]))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    edit(&mut cfg);
    cfg.validate().map_err(Failure::Invalid)?;
    Ok(cfg)
}

fn apply_rollout(cfg: &mut ExperimentConfig, r: &RolloutArgs) {
    if let Some(v) = r.frames {
        cfg.window.total = v;
    }
    if let Some(v) = r.window {
        cfg.window.length = v;
    }
    if let Some(v) = r.overlap {
        cfg.window.overlap = v;
    }
    if let Some(v) = r.steps {
        cfg.sampler.steps = v;
    }
    if let Some(v) = r.scheme {
        cfg.window.scheme = v;
    }
    if let Some(v) = r.strategy {
        cfg.window.strategy = v;
    }
    if let Some(v) = r.guidance {
        cfg.guidance.mode = v;
    }
    if let Some(v) = r.clip_len {
        cfg.eval.clip_len = Some(v);
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn scene_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("scene_{i:03}"))
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let cfg = resolve(&a.common, |c| {
        if let Some(n) = a.scenes {
            c.data.scenes = n;
        }
        if let Some(f) = a.frames {
            c.data.scene_frames = f;
        }
    })?;
    let out = &a.common.out;
    write_run_echo(out, &cfg)?;
    for (i, scene) in make_scenes(&cfg)?.iter().enumerate() {
        save_scene(&scene_dir(out, i), scene)?;
    }
    println!("wrote {} scenes to {}", cfg.data.scenes, out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = resolve(&a.common, |c| {
        if let Some(s) = a.steps {
            c.train.steps = s;
        }
        if let Some(lr) = a.lr {
            c.train.adam.lr = lr;
        }
        if let Some(v) = a.variant {
            c.adapter.variant = v;
        }
    })?;
    let out = &a.common.out;
    write_run_echo(out, &cfg)?;
    let scenes = match &a.data {
        Some(dir) => (0..cfg.data.scenes)
            .map(|i| load_scene(&scene_dir(dir, i)))
            .collect::<Result<Vec<_>>>()?,
        None => make_scenes(&cfg)?,
    };
    save_checkpoint(&out.join("checkpoint_init"), &init_state(&cfg).model, 0)?;
    let start = Instant::now();
    let mut csv = String::from(LOSS_CSV_HEADER);
    csv.push('\n');
    let (state, report) = train_loop_with(&cfg, &scenes, |rec| {
        csv.push_str(&rec.csv_row());
        csv.push('\n');
        if a.log_every > 0 && rec.step % a.log_every == 0 {
            println!("step {:>6}  loss {:.5}", rec.step, rec.loss);
        }
    })?;
    write(&out.join("loss.csv"), &csv)?;
    save_checkpoint(&out.join("checkpoint"), &state.model, state.step)?;
    println!(
        "trained {} steps in {:.1}s; validation mse {:.5} -> {:.5}",
        state.step,
        start.elapsed().as_secs_f64(),
        report.initial_val_mse,
        report.final_val_mse
    );
    Ok(())
}

fn sample(a: SampleArgs) -> CliResult {
    let cfg = resolve(&a.common, |c| {
        apply_rollout(c, &a.rollout);
        if a.dump_frames {
            c.eval.dump_frames = true;
        }
    })?;
    let out = &a.common.out;
    write_run_echo(out, &cfg)?;
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    if a.scene >= cfg.data.scenes {
        return Err(Failure::Invalid(vec![FieldError {
            field: "--scene".into(),
            message: format!("must be below data.scenes = {}", cfg.data.scenes),
        }]));
    }
    let scene = evaluation_scene(&cfg, a.scene, cfg.window.total)?;
    let frames = rollout(&cfg, &model, &scene, a.noise_seed.unwrap_or(cfg.seed))?;
    write_tensor(out.join("latents.tnsr"), &frames)?;
    save_scene(&out.join("scene"), &scene)?;
    if cfg.eval.dump_frames {
        let dir = out.join("frames");
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for f in 0..cfg.window.total {
            let frame = frames.narrow0(f, 1)?.reshape(frames.shape()[1..].to_vec())?;
            let ext = if cfg.model.channels == 1 { "pgm" } else { "ppm" };
            write_frame_image(dir.join(format!("frame_{f:04}.{ext}")), &frame)?;
        }
    }
    let report = report_for(&cfg, &frames, &out.join("scene"))?;
    write(&out.join("drift.csv"), &report.to_csv())?;
    println!(
        "final clip: drift {:.5}, ciede {:.3}",
        report.final_drift(),
        report.final_clip().ciede
    );
    Ok(())
}

fn report_for(cfg: &ExperimentConfig, frames: &crate::Tensor, scene_dir: &Path) -> Result<DriftReport> {
    let scene = load_scene(scene_dir)?;
    DriftReport::build(
        frames,
        &scene.audio,
        &scene.lip_mask,
        cfg.clip_len(),
        serde_json::to_value(cfg)?,
    )
}

fn ablate(a: AblateArgs) -> CliResult {
    let cfg = resolve(&a.common, |c| {
        apply_rollout(c, &a.rollout);
        if a.stub {
            c.ablation.model = AblationModel::Stub;
        }
        if let Some(s) = a.seeds {
            c.eval.seeds = s;
        }
    })?;
    let out = &a.common.out;
    write_run_echo(out, &cfg)?;
    let rows = ablation_grid(&cfg, a.checkpoints.as_deref())?;
    let csv = grid_csv(&rows);
    write(&out.join("comparison.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(&a.run.join("run.json")).map_err(config_failure)?;
    if let Some(c) = a.clip_len {
        cfg.eval.clip_len = Some(c);
    }
    cfg.validate().map_err(Failure::Invalid)?;
    let out = a.out.unwrap_or_else(|| a.run.clone());
    let frames = read_tensor(a.run.join("latents.tnsr"))?;
    let report = report_for(&cfg, &frames, &a.run.join("scene"))?;
    if out != a.run {
        write_run_echo(&out, &cfg)?;
    }
    write(&out.join("drift.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn selftest(a: SelftestArgs) -> i32 {
    let outcomes = crate::selftest::run_all(a.seed);
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("PASS {}", o.name),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {why}", o.name);
            }
        }
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    i32::from(failed > 0)
}
