use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use epilab::geometry::ConeFamily;
use epilab::run::{self, CommandOutput, ConfigFile, RunConfig};
use epilab::sampler::TraceClass;

#[derive(Parser)]
#[command(name = "epilab", version, about = "Epiperimetric laboratory for stationary cones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Jacobi spectrum and gap summary.
    Spectrum,
    /// Reduced-function samples, integrability verdict and Łojasiewicz fit.
    Reduce,
    /// Epiperimetric check over a seeded trace ensemble.
    EpiCheck,
    /// Density-excess decay model and rate fits.
    Decay,
    /// Aggregates the summaries already present in the output directory.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Kernel,
    Positive,
    Negative,
    NonNegative,
    Mixed,
}

impl From<ClassArg> for TraceClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Kernel => TraceClass::PureKernel,
            ClassArg::Positive => TraceClass::PurePositive,
            ClassArg::Negative => TraceClass::PureNegative,
            ClassArg::NonNegative => TraceClass::NonNegative,
            ClassArg::Mixed => TraceClass::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticArg {
    Quartic,
    Saddle,
}

fn parse_cone(s: &str) -> Result<String, String> {
    s.parse::<ConeFamily>().map(|f| f.to_string()).map_err(|e| e.to_string())
}

#[derive(Args)]
struct Opts {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// plane:N,K | clifford | sphere-product:P,Q
    #[arg(long, global = true, value_parser = parse_cone)]
    cone: Option<String>,
    /// Grid size per factor.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,
    /// Norm target of the trace ensemble.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Epiperimetric exponent (epi-check) or decay exponent (decay).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit the timestamp line from outputs.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[arg(long, global = true, value_enum)]
    trace_class: Option<ClassArg>,
    /// Radius of the kernel neighbourhood for the reduction.
    #[arg(long, global = true)]
    rho_k: Option<f64>,
    /// Replace the cone's reduced function by a fixture.
    #[arg(long, global = true, value_enum)]
    synthetic: Option<SyntheticArg>,
    /// Contraction of the positive part.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Decay model: initial excess.
    #[arg(long, global = true)]
    e0: Option<f64>,
    /// Decay model: epiperimetric constant.
    #[arg(long, global = true)]
    decay_eps: Option<f64>,
    /// Decay model: dimension.
    #[arg(long, global = true)]
    dimension: Option<usize>,
    /// Decay model: almost-minimality exponent.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Decay model: almost-minimality constant.
    #[arg(long, global = true)]
    c_am: Option<f64>,
    /// Decay model: dyadic depth.
    #[arg(long, global = true)]
    levels: Option<u32>,
}

struct Resolved {
    cfg: RunConfig,
    out: PathBuf,
    jobs: Option<usize>,
    timestamp: bool,
}

fn resolve(opts: &Opts) -> epilab::Result<Resolved> {
    let file = match &opts.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.run;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v.into();
            }
        };
    }
    set!(opts.cone.clone() => cfg.cone);
    set!(opts.seed => cfg.seed);
    set!(opts.ensemble_size => cfg.ensemble_size);
    set!(opts.delta => cfg.delta);
    set!(opts.rho_k => cfg.rho_k);
    set!(opts.eps => cfg.epi.eps);
    set!(opts.e0 => cfg.decay.e0);
    set!(opts.decay_eps => cfg.decay.eps);
    set!(opts.dimension => cfg.decay.n);
    set!(opts.alpha => cfg.decay.alpha);
    set!(opts.c_am => cfg.decay.c_am);
    set!(opts.levels => cfg.decay.levels);
    if opts.resolution.is_some() {
        cfg.resolution = opts.resolution;
    }
    if opts.gamma.is_some() {
        cfg.gamma = opts.gamma;
    }
    if let Some(c) = opts.trace_class {
        cfg.trace_class = c.into();
    }
    if let Some(s) = opts.synthetic {
        cfg.synthetic = Some(match s {
            SyntheticArg::Quartic => "quartic".into(),
            SyntheticArg::Saddle => "saddle".into(),
        });
    }
    cfg.family()?;
    let out = opts.out.clone().or(file.out.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let timestamp = !(opts.no_timestamp || file.no_timestamp.unwrap_or(false));
    Ok(Resolved { cfg, out, jobs: opts.jobs.or(file.jobs), timestamp })
}

fn execute(cmd: Command, r: &Resolved) -> epilab::Result<CommandOutput> {
    let ts = r
        .timestamp
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    match cmd {
        Command::Spectrum => run::cmd_spectrum(&r.cfg, ts),
        Command::Reduce => run::cmd_reduce(&r.cfg, ts),
        Command::EpiCheck => run::cmd_epi_check(&r.cfg, ts),
        Command::Decay => run::cmd_decay(&r.cfg, ts),
        Command::Report => run::cmd_report(&r.cfg, &r.out, ts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match resolve(&cli.opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(run::exit_code_for(&e) as u8);
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = resolved.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(run::EXIT_ERROR as u8);
        }
    };
    let result = pool.install(|| execute(cli.command, &resolved));
    match result {
        Ok(out) => {
            if let Err(e) = run::write_output(&out, &resolved.out) {
                eprintln!("error: {e}");
                return ExitCode::from(run::EXIT_ERROR as u8);
            }
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.summary);
            for (name, _) in &out.files {
                let _ = writeln!(stdout, "wrote {}", resolved.out.join(name).display());
            }
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code_for(&e) as u8)
        }
    }
}
