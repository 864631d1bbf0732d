//! Command-line workflows: dataset generation, training, evaluation,
//! plotting and rendering.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use gaqn::dataset::read_dataset;
use gaqn::eval::{emit_comparison, emit_loss_plots, evaluate_model, render_grid};
use gaqn::losses::{LossReport, Mode};
use gaqn::scene::{generate_dataset, GeneratorConfig};
use gaqn::trainer::{load_checkpoint, load_checkpoint_expecting, train_loop_from, LoopOptions, LossHistory, TrainConfig, TrainState};
use gaqn::Error;

/// Environment variable holding the log filter (`error`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "GAQN_LOG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gaqn", version, about = "Scene synthesis, training and evaluation for adversarial query networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of random rooms.
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, history and config.
    Train(TrainArgs),
    /// Compute test metrics for a checkpoint.
    Eval(EvalArgs),
    /// Draw loss curves from one or more history files.
    Plot(PlotArgs),
    /// Write a context | target | sample image for one scene.
    Render(RenderArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub scenes: usize,
    /// Views per scene, evenly spaced on the camera ring.
    #[arg(long)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size model: M=8, batch 20, h=64.
    Paper,
    /// Single-CPU model: M=4, batch 4, h=32.
    Desk,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|_| format!("expected one of {}", Mode::ALL.map(|m| m.name()).join(", ")))
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gaqn", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// Total step budget, counted from step 0 when resuming.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Recurrent decoder steps.
    #[arg(long)]
    pub gen_layers: Option<usize>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_fm: Option<f64>,
    /// Steps over which the pixel σ anneals.
    #[arg(long)]
    pub sigma_horizon: Option<u64>,
    #[arg(long)]
    pub d_steps: Option<usize>,
    /// Global gradient-norm limit.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from this checkpoint; the resolved config must match it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoint.ckpt, history.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> TrainConfig {
        let mut c = match self.preset {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        };
        c.mode = self.mode;
        c.seed = self.seed;
        c.steps = self.steps.unwrap_or(c.steps);
        c.batch_size = self.batch.unwrap_or(c.batch_size);
        c.gen_layers = self.gen_layers.unwrap_or(c.gen_layers);
        c.lr_g = self.lr_g.unwrap_or(c.lr_g);
        c.lr_d = self.lr_d.unwrap_or(c.lr_d);
        c.weights.adversarial = self.lambda_adv.unwrap_or(c.weights.adversarial);
        c.weights.feature_matching = self.lambda_fm.unwrap_or(c.weights.feature_matching);
        c.sigma.horizon = self.sigma_horizon.unwrap_or(c.sigma.horizon);
        c.d_steps = self.d_steps.unwrap_or(c.d_steps);
        c.grad_clip = self.grad_clip.or(c.grad_clip);
        c.warmup_steps = self.warmup_steps.unwrap_or(c.warmup_steps);
        c.checkpoint_every = self.checkpoint_every.or(c.checkpoint_every);
        c
    }
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Text report; a CSV with the same stem is written next to it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    /// History CSV files; several are also overlaid in comparison charts.
    #[arg(long, num_args = 1.., required = true)]
    pub history: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PPM output path.
    #[arg(long)]
    pub out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", usage_for(&argv));
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
        Command::Render(a) => render(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage_for(&argv));
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Long help of the subcommand named in `argv`, or of the program.
fn usage_for(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    let name = argv.get(1).and_then(|s| s.to_str()).unwrap_or_default();
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_long_help().to_string(),
        None => cmd.render_long_help().to_string(),
    }
}

fn create_dir(dir: &Path) -> gaqn::Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn gen_data(a: GenDataArgs) -> Outcome {
    log::info!("resolved config: {a:?}");
    let config = GeneratorConfig::default();
    log::info!("generator: {config:?}");
    let summary = generate_dataset(a.scenes, a.views, a.seed, &a.out, &config).map_err(|e| match e {
        Error::Invalid(m) => Failure::Usage(m),
        e => Failure::Runtime(e),
    })?;
    println!("{} scenes x {} views, {} bytes, crc32 {:08x} -> {}", summary.scenes, summary.views_per_scene, summary.bytes, summary.checksum, a.out.display());
    Ok(())
}

/// History rows from an earlier run that precede the resumed step.
fn prior_history(path: &Path, upto: u64) -> gaqn::Result<LossHistory> {
    let mut kept = LossHistory::new();
    if path.exists() {
        for r in LossHistory::read_csv(path)?.reports().iter().filter(|r| r.step <= upto) {
            kept.push(r.clone())?;
        }
    }
    Ok(kept)
}

fn train(a: TrainArgs) -> Outcome {
    let config = a.resolve();
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    log::info!("resolved config: {a:?}");
    log::info!("training config:\n{}", config.to_json());
    let records = read_dataset(&a.data)?;
    log::info!("{} scenes read from {}", records.len(), a.data.display());
    create_dir(&a.out)?;
    let ckpt = a.out.join("checkpoint.ckpt");
    let history_path = a.out.join("history.csv");
    std::fs::write(a.out.join("config.json"), config.to_json()).map_err(Error::io(a.out.join("config.json")))?;

    let (state, mut history) = match &a.resume {
        Some(path) => {
            let state = load_checkpoint_expecting(path, &config)?;
            log::info!("resuming from step {} of {}", state.step, path.display());
            let kept = prior_history(&history_path, state.step)?;
            (state, kept)
        }
        None => (TrainState::new(config.clone())?, LossHistory::new()),
    };
    let total = config.steps;
    let every = (total / 20).max(1);
    let mut fresh: Vec<LossReport> = Vec::new();
    let options = LoopOptions {
        checkpoint_path: Some(ckpt.clone()),
        on_report: Some(Box::new(|r: &LossReport| {
            log::debug!("{r:?}");
            if r.step % every == 0 || r.step == total {
                log::info!("step {}/{total}: elbo {:.2} nll {:.2} kl {:.3} G {:.4} D {:.4} sigma {:.3}", r.step, r.elbo, r.nll, r.kl_total, r.total_generator, r.total_discriminator, r.sigma);
            }
            fresh.push(r.clone());
        })),
    };
    let result = train_loop_from(state, &records, options);
    for r in fresh {
        history.push(r)?;
    }
    history.write_csv(&history_path)?;
    let (state, _) = result?;
    println!("trained {} steps -> {}", state.step, ckpt.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    log::info!("resolved config: {a:?}");
    let state = load_checkpoint(&a.ckpt)?;
    log::info!("checkpoint at step {}, config:\n{}", state.step, state.config.to_json());
    let records = read_dataset(&a.data)?;
    let metrics = evaluate_model(&state, &records, a.seed)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    metrics.write(&a.report)?;
    print!("{}", metrics.to_text());
    Ok(())
}

/// Names each history by its file stem, falling back to the parent
/// directory when stems collide (e.g. several `run/history.csv`).
fn history_labels(paths: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stems: Vec<String> = paths.iter().map(stem).collect();
    let unique = (1..stems.len()).all(|i| !stems[..i].contains(&stems[i]));
    if unique {
        return stems;
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let parent = p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned());
            match parent {
                Some(dir) if !dir.is_empty() => format!("{dir}_{}", stems[i]),
                _ => format!("{}_{i}", stems[i]),
            }
        })
        .collect()
}

fn plot(a: PlotArgs) -> Outcome {
    log::info!("resolved config: {a:?}");
    let histories = a.history.iter().map(|p| LossHistory::read_csv(p)).collect::<gaqn::Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    if let [only] = histories.as_slice() {
        written.extend(emit_loss_plots(only, &a.out)?);
    } else {
        let labels = history_labels(&a.history);
        for (label, h) in labels.iter().zip(&histories) {
            written.extend(emit_loss_plots(h, &a.out.join(label))?);
        }
        let pairs: Vec<(&str, &LossHistory)> = labels.iter().map(String::as_str).zip(&histories).collect();
        written.extend(emit_comparison(&pairs, &a.out)?);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn render(a: RenderArgs) -> Outcome {
    log::info!("resolved config: {a:?}");
    let state = load_checkpoint(&a.ckpt)?;
    let records = read_dataset(&a.data)?;
    render_grid(&state, &records, a.scene, a.seed, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_is_the_zero_flag_path() {
        let cli = Cli::try_parse_from(["gaqn", "train", "--data", "d.bin", "--out", "o"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("expected train") };
        assert_eq!(a.resolve(), TrainConfig::default());
    }

    #[test]
    fn flags_override_preset() {
        let cli = Cli::try_parse_from(["gaqn", "train", "--data", "d", "--out", "o", "--preset", "desk", "--batch", "2", "--mode", "gqn-lsgan", "--lr-g", "5e-4"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("expected train") };
        let c = a.resolve();
        assert_eq!((c.batch_size, c.gen_layers, c.draw.hidden, c.mode, c.lr_g), (2, 4, 32, Mode::GqnLsgan, 5e-4));
        assert!(Cli::try_parse_from(["gaqn", "train", "--data", "d", "--out", "o", "--mode", "wgan"]).is_err());
    }

    #[test]
    fn colliding_history_names_use_directories() {
        let labels = history_labels(&[PathBuf::from("runs/gqn/history.csv"), PathBuf::from("runs/gaqn/history.csv")]);
        assert_eq!(labels, ["gqn_history", "gaqn_history"]);
        assert_eq!(history_labels(&[PathBuf::from("a.csv"), PathBuf::from("b.csv")]), ["a", "b"]);
    }
}
