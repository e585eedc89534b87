//! Command-line front end: one pipeline stage per subcommand.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for numeric
//! failures (divergence, non-finite values, failed gradient checks).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "tppa", version, about = "TV and learned unrolled deconvolution")]
pub struct Cli {
    /// Read `key = value` defaults from FILE; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-image work; 0 uses every core. Results do not
    /// depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a normalized Gaussian PSF.
    Psf(PsfCmd),
    /// Write a synthetic ground-truth image.
    Phantom(PhantomCmd),
    /// Blur an image and add white Gaussian noise at a given SNR.
    Simulate(SimulateCmd),
    /// TV reconstruction with FPPA.
    Fppa(FppaCmd),
    /// Train network parameters on simulated pairs.
    Train(TrainCmd),
    /// Reconstruct with a trained network.
    Reconstruct(ReconstructCmd),
    /// Compare FPPA (oracle τ) and a trained network on held-out images.
    Eval(EvalCmd),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckCmd),
}

/// Blur operator: a kernel file or a Gaussian.
#[derive(Args, Debug, Clone)]
pub struct PsfOpts {
    /// Kernel image (FIMG); overrides the Gaussian settings.
    #[arg(long, value_name = "FILE")]
    pub psf: Option<PathBuf>,
    /// Gaussian kernel side length (odd).
    #[arg(long, default_value_t = 9)]
    pub psf_size: usize,
    /// Gaussian kernel variance in pixels².
    #[arg(long, default_value_t = 2.0)]
    pub psf_var: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Cells,
    Blobs,
    Texture,
    Flat,
}

impl From<KindArg> for tppa_core::harness::PhantomKind {
    fn from(k: KindArg) -> Self {
        use tppa_core::harness::PhantomKind as P;
        match k {
            KindArg::Cells => P::Cells,
            KindArg::Blobs => P::Blobs,
            KindArg::Texture => P::Texture,
            KindArg::Flat => P::Flat,
        }
    }
}

/// Ground-truth images: files, or phantoms when no files are given.
#[derive(Args, Debug, Clone)]
pub struct DataOpts {
    /// Ground-truth images (FIMG or PGM), comma separated or repeated.
    #[arg(long, value_delimiter = ',', value_name = "FILE")]
    pub images: Vec<PathBuf>,
    /// Number of phantoms to generate when no images are given.
    #[arg(long)]
    pub phantoms: Option<usize>,
    #[arg(long, value_enum, default_value_t = KindArg::Cells)]
    pub phantom_kind: KindArg,
    /// Centered patch size taken from each image; also the phantom size.
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    /// Input SNR of the simulated measurements in dB (`inf` for none).
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
    /// Seed for phantoms and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PsfCmd {
    #[arg(long, default_value_t = 9)]
    pub size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub var: f64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PhantomCmd {
    #[arg(long, value_enum, default_value_t = KindArg::Cells)]
    pub kind: KindArg,
    /// Side length (even).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image; a `.pgm` extension writes an 8-bit preview instead.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateCmd {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub psf: PsfOpts,
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FppaCmd {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub psf: PsfOpts,
    /// Regularization weight.
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
    /// Step size; defaults to 1/‖H‖².
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// CSV of the cost after each iteration.
    #[arg(long, value_name = "FILE")]
    pub cost_trace: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlphaInit {
    /// α₀ = 1/‖HᵀH‖₂
    InverseNormal,
    /// α₀ = 1/‖HᵀH‖₂²
    InverseNormalSquared,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradScaleArg {
    /// Step on the gradient averaged over training pairs.
    Mean,
    /// Step on the summed gradient.
    Sum,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub psf: PsfOpts,
    /// Network depth T.
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    /// Splines per shrinkage, 2P+1 (odd).
    #[arg(long, default_value_t = 1001)]
    pub splines: usize,
    /// B-spline degree, 1 or 3.
    #[arg(long, default_value_t = 3)]
    pub degree: u32,
    /// Share parameters across layers.
    #[arg(long)]
    pub tied: bool,
    /// Apply the learned shrinkage to approximation coefficients too.
    #[arg(long)]
    pub shrink_approx: bool,
    #[arg(long, value_enum, default_value_t = AlphaInit::InverseNormal)]
    pub alpha_init: AlphaInit,
    /// Explicit initial step parameter; overrides --alpha-init.
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Explicit spline spacing; by default chosen from the data.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub train_iters: usize,
    /// Learning rate ν.
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = GradScaleArg::Mean)]
    pub grad_scale: GradScaleArg,
    /// Reset the momentum whenever the training loss goes up.
    #[arg(long)]
    pub restart: bool,
    /// Also write the checkpoint every N iterations (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// CSV of the training loss per iteration.
    #[arg(long, value_name = "FILE")]
    pub loss_trace: Option<PathBuf>,
    /// Build the data and model, report their sizes, and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct ReconstructCmd {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub psf: PsfOpts,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub psf: PsfOpts,
    /// Trained network to evaluate alongside FPPA.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Points in the log-spaced τ sweep for FPPA.
    #[arg(long, default_value_t = 10)]
    pub taus: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Report CSV; printed to stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckCmd {
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 9)]
    pub splines: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: u32,
    #[arg(long)]
    pub tied: bool,
    #[arg(long)]
    pub shrink_approx: bool,
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

/// Failure of a command, already classified by exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<tppa_core::Error> for Failure {
    fn from(e: tppa_core::Error) -> Self {
        let code = if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.,/:+=".contains(&b)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// The fully resolved invocation, including defaults, as a command line.
fn effective_config(matches: &clap::ArgMatches) -> String {
    let mut parts = vec!["tppa".to_string()];
    let cmd = Cli::command();
    let Some((name, sub)) = matches.subcommand() else {
        return parts.join(" ");
    };
    parts.push(name.to_string());
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    for arg in sub_cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if matches!(id, "help" | "version" | "config" | "verbose") {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                if sub.get_flag(id) {
                    parts.push(format!("--{long}"));
                }
            }
            _ => {
                if let Some(values) = sub.get_raw(id) {
                    let values: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
                    if !values.is_empty() {
                        parts.push(format!("--{long}"));
                        parts.push(shell_quote(&values.join(",")));
                    }
                }
            }
        }
    }
    parts.join(" ")
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn load_config(args: &mut Vec<String>) -> Result<(), Failure> {
    let mut path = None;
    let mut i = 0;
    while i < args.len() && args[i] != "--" {
        if args[i] == "--config" {
            path = args.get(i + 1).cloned();
            if path.is_none() {
                return Err(Failure::usage("--config needs a file"));
            }
            break;
        }
        if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            break;
        }
        i += 1;
    }
    if let Some(path) = path {
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::usage(format!("{path}: {e}")))?;
        let settings = config::parse_config(&text).map_err(|e| Failure::usage(format!("{path}: {e}")))?;
        config::merge_under(args, &settings);
    }
    Ok(())
}

/// Runs one invocation, writing results to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    if let Err(f) = load_config(&mut args) {
        let _ = writeln!(err, "error: {}", f.message);
        return f.code;
    }
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    init_logging(cli.verbose);
    let _ = writeln!(out, "effective config: {}", effective_config(&matches));

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start {} worker threads: {e}", cli.jobs);
            return EXIT_USAGE;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| commands::execute(&cli.command, &mut buf));
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// [`run_with`] on the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
