//! Command-line front end for `nphoton-core`.
//!
//! Every run is described by a [`RunConfig`]; a JSON file supplies defaults
//! and flags override individual fields. Exit codes: 0 success, 1 failed
//! check or computation, 2 configuration error.

pub mod commands;
pub mod config;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nphoton_core::{Direction, QuadratureRule};

pub use commands::{run, Outcome, RunError};
pub use config::{CommandKind, ConfigError, Format, GridSpec, RunConfig, Suite};

use config::{ChannelChoice, InputSpec, QuadratureConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SCATTER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nphoton", version, about = "N-photon scattering on a two-level atom in a waveguide")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout if omitted).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(flatten)]
    quad: QuadFlags,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Args)]
struct QuadFlags {
    #[arg(long, global = true, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    #[arg(long, global = true)]
    max_subdivisions: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum RuleArg {
    Composite,
    Adaptive,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Probability that all N photons are reflected.
    Reflect(ReflectArgs),
    /// Atomic excitation probability P_e(t).
    Excite(ExciteArgs),
    /// Two-photon output amplitudes on a time grid.
    TwoPhoton(TwoPhotonArgs),
    /// Run a validation suite and emit a JSON report.
    Validate(ValidateArgs),
    /// R_N(Γ) curves for a set of photon numbers.
    Figure3(Figure3Args),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Pulse bandwidth Γ (units of the atomic decay rate).
    #[arg(long)]
    gamma: Option<f64>,
    /// Truncation time of the exponential envelope.
    #[arg(long)]
    t_max: Option<f64>,
    /// Direction of incidence.
    #[arg(long, value_enum)]
    direction: Option<DirArg>,
    /// JSON file describing the incident field.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum DirArg {
    Left,
    Right,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ReflectArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    gamma_grid: Option<GridSpec>,
    /// Skip the numeric cross-check.
    #[arg(long)]
    closed_only: bool,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ExciteArgs {
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    source: SourceArgs,
    /// Trace times: lin:a:b:n, log:a:b:n or a comma list.
    #[arg(long)]
    times: Option<GridSpec>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct TwoPhotonArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Emission-time axis shared by τ₁ and τ₂.
    #[arg(long)]
    times: Option<GridSpec>,
    /// Dynamical time; omit (or 'inf') for the long-time limit.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, value_enum)]
    channel: Option<ChannelChoice>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ValidateArgs {
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Samples per time axis of the bridge grid.
    #[arg(long)]
    samples: Option<usize>,
    /// Time span of the bridge grid.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct Figure3Args {
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    gamma_grid: Option<GridSpec>,
    /// Add the numeric cross-check for N up to 5.
    #[arg(long)]
    numeric: bool,
}

fn read_input(path: &PathBuf) -> Result<InputSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.clone(),
        source,
    })
}

impl SourceArgs {
    fn apply(self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        cfg.gamma = self.gamma.map(|g| vec![g]);
        cfg.t_max = self.t_max;
        cfg.direction = self.direction.map(|d| match d {
            DirArg::Left => Direction::Left,
            DirArg::Right => Direction::Right,
        });
        cfg.input = self.input.as_ref().map(read_input).transpose()?;
        Ok(())
    }
}

fn flags_config(cli: Cli) -> Result<(Option<PathBuf>, bool, RunConfig), ConfigError> {
    let mut cfg = RunConfig {
        output: cli.output,
        format: cli.format,
        quadrature: QuadratureConfig {
            rule: cli.quad.rule.map(|r| match r {
                RuleArg::Composite => QuadratureRule::GaussLegendreComposite,
                RuleArg::Adaptive => QuadratureRule::Adaptive,
            }),
            rel_tol: cli.quad.rel_tol,
            abs_tol: cli.quad.abs_tol,
            max_subdivisions: cli.quad.max_subdivisions,
        },
        ..Default::default()
    };
    match cli.command {
        None => {}
        Some(Cmd::Reflect(a)) => {
            cfg.command = Some(CommandKind::Reflect);
            cfg.n = a.n;
            cfg.n_list = a.n_list;
            cfg.gamma = a.gamma;
            cfg.gamma_grid = a.gamma_grid;
            cfg.numeric = a.closed_only.then_some(false);
        }
        Some(Cmd::Excite(a)) => {
            cfg.command = Some(CommandKind::Excite);
            cfg.n = a.n;
            cfg.times = a.times;
            a.source.apply(&mut cfg)?;
        }
        Some(Cmd::TwoPhoton(a)) => {
            cfg.command = Some(CommandKind::TwoPhoton);
            cfg.times = a.times;
            cfg.t = a.t;
            cfg.channel = a.channel;
            a.source.apply(&mut cfg)?;
        }
        Some(Cmd::Validate(a)) => {
            cfg.command = Some(CommandKind::Validate);
            cfg.suite = a.suite;
            cfg.gamma = a.gamma;
            cfg.n_list = a.n_list;
            cfg.tolerance = a.tolerance;
            cfg.samples = a.samples;
            cfg.t_max = a.t_max;
            cfg.input = a.input.as_ref().map(read_input).transpose()?;
        }
        Some(Cmd::Figure3(a)) => {
            cfg.command = Some(CommandKind::Figure3);
            cfg.n_list = a.n_list;
            cfg.gamma_grid = a.gamma_grid;
            cfg.numeric = a.numeric.then_some(true);
        }
    }
    Ok((cli.config, cli.print_config, cfg))
}

/// Resolves the configuration from argv (file first, then flags).
pub fn resolve_config(argv: &[String]) -> Result<(RunConfig, bool), Result<i32, ConfigError>> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return Err(Ok(code));
        }
    };
    let subcommand = cli.command.is_some();
    let (file, print, flags) = flags_config(cli).map_err(Err)?;
    let base = match &file {
        Some(p) => RunConfig::from_file(p).map_err(Err)?,
        None => RunConfig::default(),
    };
    if subcommand && base.command.is_some() && base.command != flags.command {
        return Err(Err(ConfigError::Invalid(
            "subcommand disagrees with the command in the config file".into(),
        )));
    }
    Ok((base.overridden_by(flags), print))
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::Invalid(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // a pool may already exist when called repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_output(cfg: &RunConfig, body: &[u8]) -> Result<(), ConfigError> {
    match &cfg.output {
        Some(path) => {
            let mut f = File::create(path).map_err(|source| ConfigError::Write {
                path: path.clone(),
                source,
            })?;
            f.write_all(body).map_err(|source| ConfigError::Write {
                path: path.clone(),
                source,
            })
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body)
                .and_then(|_| out.flush())
                .map_err(|source| ConfigError::Write {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Runs the tool and returns the process exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let (cfg, print) = match resolve_config(&argv) {
        Ok(c) => c,
        Err(Ok(code)) => return code,
        Err(Err(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if print {
        println!("{}", cfg.to_json());
        return 0;
    }
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    // fail on an unwritable destination before spending time computing
    if let Some(path) = &cfg.output {
        if let Err(e) = File::create(path) {
            eprintln!("error: {}", ConfigError::Write { path: path.clone(), source: e });
            return 2;
        }
    }
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = write_output(&cfg, &outcome.body) {
        eprintln!("error: {e}");
        return 2;
    }
    for m in &outcome.messages {
        eprintln!("{m}");
    }
    if outcome.pass {
        0
    } else {
        1
    }
}
