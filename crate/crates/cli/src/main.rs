//! `gmclab`: command-line driver for the chaos laboratory.
//!
//! Every command reads a [`RunConfig`] (file plus `--set key=value`
//! overrides), writes one result file embedding that config, and exits with
//! 0 on success, 1 on a failed gate, 2 on a usage error and 3 on a
//! numerical failure.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmclab_core::bounds::bounds_report;
use gmclab_core::config::{OutputFormat, RunConfig, Scale};
use gmclab_core::gmc::{create_bank_with, BankOptions, SampleBank};
use gmclab_core::laplace::{estimate_q, estimate_q_conditional, kappa2_estimate, kappa_estimate, KappaKind};
use gmclab_core::potential::{ln_threshold_t_star, ln_threshold_t_zero, pd_min_eigenvalue_with_cap, threshold_t};
use gmclab_core::smalldev::{fit_lognormal_exponent, SmallDevCurve};
use gmclab_core::{run_suite, GmcError, SuiteOptions};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "gmclab", version, about = "Gaussian multiplicative chaos with a strictly logarithmic kernel")]
struct Cli {
    /// Run configuration (JSON or `dotted.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, repeatable, e.g. `--set model.T=0.75`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Bank id used to derive sampling streams (overrides mc.bankId).
    #[arg(long, global = true)]
    seed_bank: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Dimension (overrides model.d).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Kernel scale T (overrides model.T).
    #[arg(long = "T", alias = "t")]
    t: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// T(d), T*(d) and T₀(d) for d = 1..dmax.
    Thresholds {
        #[arg(long, default_value_t = 5)]
        dmax: usize,
    },
    /// Discretized positive-definiteness test of the kernel.
    PdCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Cubes in the bounding box (a perfect d-th power).
        #[arg(long)]
        cells: usize,
    },
    /// Create or inspect sample banks.
    Bank {
        #[command(subcommand)]
        action: BankAction,
    },
    /// Q_r(x) on the configured x grid.
    Laplace {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum, default_value_t = LaplaceMode::Conditional)]
        method: LaplaceMode,
    },
    /// κ or κ₂ on the configured (s, z) grid.
    Kappa {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Kappa)]
        kind: KindArg,
    },
    /// Small-deviation probabilities and the lognormal exponent fit.
    Smalldev {
        #[arg(long)]
        bank: PathBuf,
    },
    /// All bounds on the Laplace exponent at laplace.r.
    Bounds {
        #[command(flatten)]
        model: ModelArgs,
        /// Value of c̄₁ to feed the sandwich (defaults to the best lower bound).
        #[arg(long)]
        cbar1: Option<f64>,
    },
    /// Runs the acceptance criteria.
    Verify {
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        /// Comma-separated criterion tags or ids.
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum BankAction {
    /// Simulates a bank from the configured model and grid.
    Create {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        cells_per_axis: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Prints the header and summary statistics of a bank file.
    Info { path: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LaplaceMode {
    Direct,
    Conditional,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Kappa,
    Kappa2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Full,
    Quick,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Gate(String),
    Usage(String),
    Numerical(String),
}

impl From<GmcError> for Failure {
    fn from(e: GmcError) -> Self {
        match e {
            GmcError::RepairGate { .. } | GmcError::MemoryGuard { .. } | GmcError::InsufficientSamples(_) => Failure::Gate(e.to_string()),
            GmcError::Quadrature { .. } | GmcError::Factorization(_) | GmcError::Degenerate(_) => Failure::Numerical(e.to_string()),
            GmcError::InvalidArgument(_) | GmcError::Io(_) | GmcError::Format(_) => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// What a command produced: the result payload and whether its gates passed.
struct Report {
    command: &'static str,
    result: Value,
    gate_failed: bool,
    numerical_failed: bool,
}

impl Report {
    fn ok(command: &'static str, result: Value) -> Self {
        Self { command, result, gate_failed: false, numerical_failed: false }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Gate(m)) => {
            eprintln!("gate failure: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !cli.overrides.is_empty() {
        cfg = cfg.with_key_values(&cli.overrides.join("\n"))?;
    }
    if let Some(o) = &cli.out {
        cfg.output.directory = o.to_string_lossy().into_owned();
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        };
    }
    if let Some(id) = cli.seed_bank {
        cfg.mc.bank_id = id;
    }
    match &cli.command {
        Command::PdCheck { model, .. } | Command::Bounds { model, .. } | Command::Bank { action: BankAction::Create { model, .. } } => {
            apply_model(&mut cfg, model);
        }
        _ => {}
    }
    if let Command::Bank { action: BankAction::Create { n, cells_per_axis, radius, .. } } = &cli.command {
        cfg.mc.n = n.unwrap_or(cfg.mc.n);
        cfg.grid.cells_per_axis = cells_per_axis.unwrap_or(cfg.grid.cells_per_axis);
        cfg.grid.radius = radius.unwrap_or(cfg.grid.radius);
    }
    if let Command::Verify { scale: Some(s), tags } = &cli.command {
        cfg.verify.scale = match s {
            ScaleArg::Full => Scale::Full,
            ScaleArg::Quick => Scale::Quick,
        };
        if !tags.is_empty() {
            cfg.verify.tags = tags.clone();
        }
    } else if let Command::Verify { scale: None, tags } = &cli.command {
        if !tags.is_empty() {
            cfg.verify.tags = tags.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_model(cfg: &mut RunConfig, m: &ModelArgs) {
    cfg.model.d = m.dim.unwrap_or(cfg.model.d);
    cfg.model.gamma = m.gamma.unwrap_or(cfg.model.gamma);
    cfg.model.t = m.t.unwrap_or(cfg.model.t);
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let cfg = load_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let report = pool.install(|| execute(&cli.command, &cfg))?;
    let out_dir = PathBuf::from(&cfg.output.directory);
    std::fs::create_dir_all(&out_dir)?;
    let path = output::write(&out_dir, report.command, &cfg, &report.result)?;
    println!("{}", path.display());
    Ok(if report.numerical_failed {
        ExitCode::from(3)
    } else if report.gate_failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn load_bank(path: &Path) -> Result<SampleBank, Failure> {
    Ok(SampleBank::load(path)?)
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<Report, Failure> {
    let tol = cfg.tolerances.quad_tol;
    match cmd {
        Command::Thresholds { dmax } => {
            let mut rows = Vec::new();
            for d in 1..=*dmax {
                let star = if d <= 5 { Some(ln_threshold_t_star(d, tol)?) } else { None };
                let zero = if d <= 5 { Some(ln_threshold_t_zero(d, tol)?) } else { None };
                rows.push(json!({"d": d, "T": threshold_t(d)?, "lnTStar": star, "lnTZero": zero}));
            }
            Ok(Report::ok("thresholds", Value::Array(rows)))
        }
        Command::PdCheck { cells, .. } => {
            let rep = pd_min_eigenvalue_with_cap(&cfg.model, *cells, cfg.tolerances.pd_tol, cfg.grid.cell_cap)?;
            Ok(Report::ok("pd-check", serde_json::to_value(rep).map_err(GmcError::from)?))
        }
        Command::Bank { action: BankAction::Create { .. } } => {
            let opts = BankOptions { repair_gate: cfg.tolerances.repair_gate, cell_cap: cfg.grid.cell_cap, epsilon_factor: cfg.grid.epsilon_factor };
            let mut bank = create_bank_with(&cfg.model, cfg.grid.radius, cfg.grid.cells_per_axis, cfg.mc.n, cfg.mc.bank_id, &opts)?;
            bank.metadata = serde_json::to_value(cfg).map_err(GmcError::from)?;
            let dir = PathBuf::from(&cfg.output.directory);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("bank-{}.gmcb", cfg.mc.bank_id));
            bank.save(&path)?;
            Ok(Report::ok("bank-create", bank_summary(&bank, Some(&path))))
        }
        Command::Bank { action: BankAction::Info { path } } => {
            let bank = load_bank(path)?;
            Ok(Report::ok("bank-info", bank_summary(&bank, Some(path))))
        }
        Command::Laplace { bank, method } => {
            let bank = load_bank(bank)?;
            let r = cfg.laplace.r;
            let est = match method {
                LaplaceMode::Conditional => estimate_q_conditional(&bank, r, &cfg.laplace.x_grid)?,
                LaplaceMode::Direct => {
                    if (bank.radius() - r).abs() > 1e-12 {
                        return Err(Failure::Usage(format!("direct method needs a bank on radius {r}, bank has {}", bank.radius())));
                    }
                    cfg.laplace.x_grid.iter().map(|&x| estimate_q(&bank, r, x, cfg.mc.stream_key)).collect::<Result<_, _>>()?
                }
            };
            Ok(Report::ok("laplace", serde_json::to_value(est).map_err(GmcError::from)?))
        }
        Command::Kappa { bank, kind } => {
            let bank = load_bank(bank)?;
            let kind = match kind {
                KindArg::Kappa => KappaKind::Kappa,
                KindArg::Kappa2 => KappaKind::Kappa2,
            };
            let mut rows = Vec::new();
            for &s in &cfg.laplace.s_grid {
                for &z in &cfg.laplace.z_grid {
                    let p = match kind {
                        KappaKind::Kappa if kind.in_region(s, z, &bank.params) => kappa_estimate(&bank, s, z, cfg.mc.stream_key)?,
                        KappaKind::Kappa2 if s > 0.0 && z > 0.0 => kappa2_estimate(&bank, s, z, cfg.mc.stream_key)?,
                        _ => {
                            log::warn!("skipping ({s}, {z}): outside the domain of {kind:?}");
                            continue;
                        }
                    };
                    rows.push(serde_json::to_value(p).map_err(GmcError::from)?);
                }
            }
            Ok(Report::ok("kappa", Value::Array(rows)))
        }
        Command::Smalldev { bank } => {
            let bank = load_bank(bank)?;
            let curve = SmallDevCurve::from_bank(&bank, &cfg.laplace.deltas)?;
            let fit = fit_lognormal_exponent(&curve).ok();
            Ok(Report::ok("smalldev", json!({"curve": curve, "fit": fit})))
        }
        Command::Bounds { cbar1, .. } => {
            let rep = bounds_report(&cfg.model, cfg.laplace.r, *cbar1, tol)?;
            let gate_failed = !rep.consistent;
            Ok(Report { command: "bounds", result: serde_json::to_value(rep).map_err(GmcError::from)?, gate_failed, numerical_failed: false })
        }
        Command::Verify { .. } => {
            let summary = run_suite(SuiteOptions::from_config(cfg), &cfg.verify.tags)?;
            for c in &summary.criteria {
                eprintln!("{}", c.line());
            }
            Ok(Report {
                command: "verify",
                gate_failed: !summary.pass,
                numerical_failed: summary.any_numerical_failure(),
                result: serde_json::to_value(&summary).map_err(GmcError::from)?,
            })
        }
    }
}

fn bank_summary(bank: &SampleBank, path: Option<&Path>) -> Value {
    let (mean, se) = bank.mean_se();
    json!({
        "path": path.map(|p| p.display().to_string()),
        "params": bank.params,
        "bankId": bank.bank_id,
        "n": bank.n,
        "source": bank.source,
        "mean": mean,
        "meanSe": se,
        "expectedMean": bank.expected_mean(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
