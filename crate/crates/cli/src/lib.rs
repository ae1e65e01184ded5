//! The `rced` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rced_core::audio_io::{read_wav, write_wav};
use rced_core::metrics::evaluate;
use rced_core::models::{Mode, PRESET_NAMES};
use rced_core::nn::{layer_suite, GradCheck};
use rced_core::train::{assemble_dataset, fit_with_progress, synth_corpus, AdamConfig, FitConfig, Manifest};
use rced_core::{Error, ModelFile, Network, NetworkConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Reference claim for the CNN vs FNN model-size ratio.
pub const CLAIMED_FNN_RATIO: f64 = 68.0;

#[derive(Debug, Parser)]
#[command(name = "rced", version, about = "Fully convolutional speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic speech/babble corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network and write the model plus `<out>.history.csv`.
    Train(TrainArgs),
    /// Denoise one WAV file.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a manifest and write an SDR report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts for a preset.
    CountParams {
        #[arg(long)]
        arch: String,
    },
    /// Finite-difference check of every layer kind.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Preset name.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    arch: Option<String>,
    /// Network config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long)]
    no_skip: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(PathBuf, std::io::Error),
    Numeric(String),
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::Numeric(m) | Failure::Invalid(m) => f.write_str(m),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } | Error::Wav { .. } => EXIT_IO,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_INVALID,
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Core(e) => exit_code(e),
            Failure::Io(..) => EXIT_IO,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Invalid(_) => EXIT_INVALID,
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth { out: dir, seconds, seed } => cmd_synth(&dir, seconds, seed, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Denoise { model, input, out: dst } => cmd_denoise(&model, &input, &dst, out),
        Command::Evaluate { model, manifest, out: dst } => cmd_evaluate(&model, &manifest, &dst, out),
        Command::CountParams { arch } => cmd_count_params(&arch, out),
        Command::Gradcheck { seed, inject_fault } => cmd_gradcheck(seed, inject_fault, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.code()
        }
    }
}

fn cmd_synth(dir: &Path, seconds: f64, seed: u64, out: &mut dyn Write) -> CmdResult {
    let manifest = synth_corpus(seconds, seed, dir)?;
    let _ = writeln!(out, "{}", manifest.display());
    Ok(())
}

/// Path of the training history written next to `model`.
pub fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = match (&a.arch, &a.config) {
        (Some(name), _) => NetworkConfig::preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Io(path.clone(), e))?;
            let cfg = NetworkConfig::parse(&text)?;
            cfg.validate()?;
            cfg
        }
        (None, None) => return Err(Failure::Invalid("either --arch or --config is required".into())),
    };
    if a.no_skip {
        config = config.without_skips();
    }
    if !(a.l2 >= 0.0 && a.l2.is_finite()) {
        return Err(Failure::Invalid(format!("--l2 must be a non-negative number, got {}", a.l2)));
    }
    let manifest = Manifest::load(&a.manifest)?;
    let data = assemble_dataset(&manifest)?;
    let _ = writeln!(
        out,
        "{}: {} training / {} validation windows",
        config.name,
        data.train.len(),
        data.val.len()
    );
    let mut net = Network::<f32>::build(&config, a.seed)?;
    let fit_cfg = FitConfig {
        epochs_max: a.epochs_max,
        seed: a.seed,
        adam: AdamConfig {
            l2_lambda: a.l2,
            ..AdamConfig::default()
        },
        ..FitConfig::default()
    };
    let quiet = a.quiet;
    let history = fit_with_progress(&mut net, &data, &fit_cfg, |r| {
        if !quiet {
            let _ = writeln!(
                out,
                "epoch {:>3}  train_mse {:.5}  val_mse {:.5}  lr {}",
                r.epoch, r.train_mse, r.val_mse, r.lr
            );
        }
    })?;
    net.set_mode(Mode::Infer);
    let model = ModelFile::new(net, data.input_stats.clone(), data.target_stats.clone());
    model.save(&a.out)?;
    history.write_csv(history_path(&a.out))?;
    let _ = writeln!(
        out,
        "wrote {} ({} parameters) after {} epochs{}",
        a.out.display(),
        model.network.param_total(),
        history.records.len(),
        if history.stopped { " (schedule stop)" } else { "" }
    );
    Ok(())
}

fn cmd_denoise(model: &Path, input: &Path, dst: &Path, out: &mut dyn Write) -> CmdResult {
    let model = ModelFile::load(model)?;
    let noisy = read_wav(input)?;
    let clean = model.denoise(&noisy)?;
    write_wav(&clean, dst)?;
    let _ = writeln!(out, "wrote {} ({} samples at {} Hz)", dst.display(), clean.len(), clean.sample_rate);
    Ok(())
}

fn cmd_evaluate(model: &Path, manifest: &Path, dst: &Path, out: &mut dyn Write) -> CmdResult {
    let model = ModelFile::load(model)?;
    let manifest = Manifest::load(manifest)?;
    let report = evaluate(&model.network, &model.input_stats, &model.target_stats, &manifest)?;
    report.write_csv(dst)?;
    for (i, msg) in &report.failures {
        let _ = writeln!(out, "entry {i} failed: {msg}");
    }
    if report.rows.is_empty() {
        return Err(Failure::Invalid("no entry could be evaluated".into()));
    }
    let (noisy, denoised, gain) = report.means();
    let _ = writeln!(
        out,
        "{} utterances: noisy {noisy:.2} dB, denoised {denoised:.2} dB, improvement {gain:+.2} dB",
        report.rows.len()
    );
    Ok(())
}

fn cmd_count_params(arch: &str, out: &mut dyn Write) -> CmdResult {
    let count = NetworkConfig::preset(arch)?.param_count()?;
    let _ = writeln!(out, "arch       {arch}");
    let _ = writeln!(out, "weights    {}", count.weights);
    let _ = writeln!(out, "biases     {}", count.biases);
    let _ = writeln!(out, "bn_params  {}", count.bn_params);
    let _ = writeln!(out, "total      {}", count.total);
    let _ = writeln!(
        out,
        "bytes      {} ({:.1} KB at 4 bytes/parameter)",
        count.bytes(),
        count.bytes() as f64 / 1000.0
    );
    if arch == "fnn4" {
        let base = NetworkConfig::preset("rced10")?.param_count()?;
        let _ = writeln!(
            out,
            "ratio vs rced10  weights {:.2}  totals {:.2}  fnn4 weights / rced10 total {:.2}  (claimed: about {CLAIMED_FNN_RATIO:.0}x)",
            count.weights as f64 / base.weights as f64,
            count.total as f64 / base.total as f64,
            count.weights as f64 / base.total as f64,
        );
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, inject_fault: bool, out: &mut dyn Write) -> CmdResult {
    let check = GradCheck {
        corrupt_analytic: inject_fault,
        ..GradCheck::default()
    };
    let reports = layer_suite(seed, check)?;
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict} {name}\n{r}");
        if !r.passed() {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        let _ = writeln!(out, "all {} checks below {:.0e}", reports.len(), check.tolerance);
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

/// Names accepted by `--arch`.
pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}
