use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use selfperturb::eval::{KMeansConfig, NoiseEmbedding};
use selfperturb::fixtures::FixtureSpec;
use selfperturb::perturb::{PerturbMode, PerturbSettings};
use selfperturb::pipeline::{
    cmd_cluster, cmd_cross, cmd_eval, cmd_perturb, cmd_synth_fixtures, cmd_train, configure_workers, CrossConfig,
    FixtureExperiment, RunConfig, CHECKPOINT_FILE,
};
use selfperturb::{Error, Result};

#[derive(Parser)]
#[command(name = "selfperturb", version, about = "Self-perturbation synthesis and adversarial face detection")]
struct Cli {
    /// Worker threads (defaults to SELFPERTURB_WORKERS, then the CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write procedural face fixtures with landmark files and a manifest.
    SynthFixtures(SynthArgs),
    /// Self-perturb every PNG of a directory.
    Perturb(PerturbArgs),
    /// Train a detector on real images.
    Train(TrainArgs),
    /// Score real and perturbed images with a trained detector.
    Eval(EvalArgs),
    /// Cluster noise sidecars with k-means.
    Cluster(ClusterArgs),
    /// Cross-generator and cross-magnitude experiments.
    Cross(CrossArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Peak-to-peak amplitude of the facial region textures.
    #[arg(long)]
    texture_amplitude: Option<f64>,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "auto")]
    mode: PerturbMode,
    /// Gradient-pattern bound in 1/255 units.
    #[arg(long, default_value_t = 5.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Landmark directory (defaults to the input directory).
    #[arg(long)]
    landmarks: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    real: PathBuf,
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    landmarks: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file or training output directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    adv: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    noise_dirs: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, value_enum, default_value_t = Embedding::Structure)]
    embedding: Embedding,
    /// Magnitude floor of the logarithmic embeddings.
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Embedding {
    /// Scale-free magnitude and difference quantiles.
    Structure,
    /// Downsampled magnitudes on a log scale.
    LogMagnitude,
    /// Downsampled signed offsets.
    Raw,
}

fn embedding(kind: Embedding, floor: Option<f64>) -> NoiseEmbedding {
    match (kind, NoiseEmbedding::default()) {
        (Embedding::Structure, NoiseEmbedding::Structure { floor: f, bins }) => NoiseEmbedding::Structure {
            floor: floor.unwrap_or(f),
            bins,
        },
        (Embedding::LogMagnitude, _) => NoiseEmbedding::LogMagnitude {
            floor: floor.unwrap_or(1e-3),
        },
        (Embedding::Raw, _) => NoiseEmbedding::Raw,
        (_, default) => default,
    }
}

#[derive(Args)]
struct CrossArgs {
    #[arg(long, value_delimiter = ',', default_value = "point,block,mix,gc")]
    modes: Vec<PerturbMode>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    eps_list: Vec<f64>,
    #[arg(long)]
    workdir: PathBuf,
    /// Real images to split 80/20; procedural fixtures are used otherwise.
    #[arg(long)]
    real: Option<PathBuf>,
    /// JSON run config shared by every trained detector.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 800)]
    train_count: usize,
    #[arg(long, default_value_t = 200)]
    test_count: usize,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::SynthFixtures(a) => {
            let mut spec = FixtureSpec {
                side: a.side,
                ..FixtureSpec::default()
            };
            if let Some(t) = a.texture_amplitude {
                spec.texture_amplitude = t;
            }
            let manifest = cmd_synth_fixtures(&a.out, a.count, &spec, a.seed)?;
            println!("wrote {} fixtures to {}", manifest.items.len(), a.out.display());
        }
        Command::Perturb(a) => {
            let mut settings = PerturbSettings::default();
            settings.gradient.eps = a.eps;
            let m = cmd_perturb(&a.input, &a.out, a.mode, &settings, a.seed, a.landmarks.as_deref())?;
            println!(
                "perturbed {} images ({} skipped) into {}",
                m.items.len(),
                m.skipped.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let outcome = cmd_train(&a.real, &cfg, &a.out, a.landmarks.as_deref())?;
            if let Some(last) = outcome.curve.epochs.last() {
                println!(
                    "trained {} steps: cls {:.4} unc {:.4} acc {:.3}",
                    outcome.curve.steps.len(),
                    last.cls,
                    last.unc,
                    last.accuracy
                );
            }
        }
        Command::Eval(a) => {
            let model = if a.model.is_dir() {
                a.model.join(CHECKPOINT_FILE)
            } else {
                a.model
            };
            let r = cmd_eval(&model, &a.real, &a.adv, &a.report)?;
            println!("auc {:.4} accuracy {:.4} (real {}, adv {})", r.auc, r.accuracy, r.n_real, r.n_adv);
        }
        Command::Cluster(a) => {
            let cfg = KMeansConfig {
                k: a.k,
                seed: a.seed,
                restarts: a.restarts,
                embedding: embedding(a.embedding, a.floor),
                ..KMeansConfig::default()
            };
            let r = cmd_cluster(&a.noise_dirs, &cfg, &a.report)?;
            print!("{}", r.to_text());
        }
        Command::Cross(a) => {
            let cfg = CrossConfig {
                modes: a.modes,
                eps_list: a.eps_list,
                run: load_config(a.config.as_deref())?,
                ..CrossConfig::default()
            };
            let fixtures = FixtureExperiment {
                train_count: a.train_count,
                test_count: a.test_count,
                ..FixtureExperiment::default()
            };
            let out = cmd_cross(&cfg, &a.workdir, a.real.as_deref(), &fixtures)?;
            print!("{}\n{}", out.mode_matrix.to_text(), out.eps_matrix.to_text());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_usage() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
