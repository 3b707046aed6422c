//! Command-line driver: every subcommand is a thin wrapper over the
//! library. Exit codes: 0 on success, 1 when any run fails, 2 on config
//! errors.

use clap::{Parser, Subcommand};
use mbspec::complexity::{ComplexityInputs, SamplingStrategy};
use mbspec::experiment::{self, ExperimentConfig, derive_seed};
use mbspec::lindblad::PairObservable;
use mbspec::mitigation::{
    RescaleOrder, SeriesCache, run_reshaping, run_rescaling, run_richardson, run_unmitigated,
};
use mbspec::operators::{Spectrum, build_hamiltonian, build_noise, diagonalize};
use mbspec::{Error, Result};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mbspec",
    version,
    about = "Many-body spectroscopy on simulated noisy analog quantum hardware"
)]
struct Cli {
    /// Experiment config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's worker count (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the config's evolution backend (stepper | spectral)
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Print the effective config (defaults applied) to stderr
    #[arg(long, global = true)]
    echo_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact eigen-energies of the configured model
    Spectrum,
    /// Generate one noisy time series and write it as series.csv
    Series {
        /// Eigenpair "a,b" (defaults to the first sampled pair)
        #[arg(long)]
        pair: Option<String>,
        /// Relative noise strength γ (κ = γ|E_ba|); defaults to the first
        /// gamma_list entry
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Estimate one pair energy from a generated series
    Estimate {
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Single-pair Hamiltonian-reshaping run
    Reshape {
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Single-pair Hamiltonian-rescaling run
    Rescale {
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        /// first | second
        #[arg(long, default_value = "first")]
        order: String,
    },
    /// Single-pair Richardson-extrapolation baseline
    Richardson {
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Full (pair × γ × strategy) sweep with CSV/JSON outputs
    Sweep,
    /// Closed-form sample-complexity estimates
    Complexity {
        /// reshape-sampled | reshape-full | rescale-first | rescale-second
        #[arg(long)]
        strategy: String,
        /// Damped-mode count N_m
        #[arg(long, default_value_t = 1.0)]
        n_modes: f64,
        /// Time points L
        #[arg(long)]
        samples: usize,
        /// Time step ΔT
        #[arg(long)]
        dt: f64,
        /// Noise strength |D̃|
        #[arg(long)]
        noise_strength: f64,
        /// Normalized decay coefficient d_ab
        #[arg(long)]
        d_ab: f64,
        /// Target standard deviation of the mitigated energy
        #[arg(long)]
        sigma_target: f64,
        #[arg(long, default_value_t = 2.0)]
        c1: f64,
        #[arg(long)]
        c2: Option<f64>,
        /// Reshaping-operator count N_P (reshape-sampled)
        #[arg(long, default_value_t = 100.0)]
        n_paulis: f64,
        /// Variance-ratio constant C for sampled reshaping. No default is
        /// asserted: measure it as N_P·var(per-U bias)/|D̃|² over the
        /// realized reshape set (per-U biases come from the reshape
        /// subcommand's raw estimates).
        #[arg(long)]
        c_stat: Option<f64>,
        /// Shots per time point N_k (for the σ_ω report)
        #[arg(long, default_value_t = 100.0)]
        n_shots: f64,
        /// Mode amplitude |C_α| (defaults to 1/N_m)
        #[arg(long)]
        c_amp: Option<f64>,
        /// Per-step decay r for the σ_ω report
        #[arg(long)]
        decay: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required for this command".into()))?;
    let mut cfg = experiment::load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        cfg.workers = threads;
    }
    if let Some(backend) = &cli.backend {
        cfg.backend = backend.clone();
    }
    cfg.validate()?;
    if cli.echo_config {
        eprintln!("# effective config\n{}", cfg.echo());
    }
    Ok(cfg)
}

struct PairContext {
    cfg: ExperimentConfig,
    h: mbspec::operators::DenseOperator,
    spectrum: Spectrum,
    a: usize,
    b: usize,
    gamma: f64,
}

fn pair_context(cli: &Cli, pair: &Option<String>, gamma: Option<f64>) -> Result<PairContext> {
    let cfg = load(cli)?;
    let h = build_hamiltonian(&cfg.hamiltonian_spec()?)?;
    let spectrum = diagonalize(&h)?;
    let min_gap = cfg.min_gap.unwrap_or(1e-6 * spectrum.max_abs_energy());
    let (a, b) = match pair {
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Config(format!(
                    "--pair expects 'a,b', got '{text}'"
                )));
            }
            let a = parts[0].trim().parse::<usize>().map_err(|e| {
                Error::Config(format!("--pair: bad index '{}': {e}", parts[0]))
            })?;
            let b = parts[1].trim().parse::<usize>().map_err(|e| {
                Error::Config(format!("--pair: bad index '{}': {e}", parts[1]))
            })?;
            (a, b)
        }
        None => match (&cfg.pairs.explicit, &cfg.pairs.count) {
            (Some(explicit), _) if !explicit.is_empty() => explicit[0],
            _ => {
                let pair_seed = cfg
                    .pairs
                    .seed
                    .unwrap_or_else(|| derive_seed(cfg.seed, &[u64::MAX]));
                experiment::sample_pairs(&spectrum, 1, pair_seed, min_gap)?[0]
            }
        },
    };
    let gamma = match gamma {
        Some(g) => g,
        None => *cfg.gamma_list.first().ok_or_else(|| {
            Error::Config("gamma_list is empty and no --gamma given".into())
        })?,
    };
    Ok(PairContext { cfg, h, spectrum, a, b, gamma })
}

fn print_estimate_block(prefix: &str, est: &mbspec::mitigation::MitigatedEstimate, e_exact: f64) {
    println!("{prefix} strategy   = {} ({})", est.strategy.label(), est.variant);
    println!("{prefix} estimate   = {:.12e}", est.value);
    println!("{prefix} exact      = {e_exact:.12e}");
    println!(
        "{prefix} rel_error  = {:.6e}",
        (est.value - e_exact).abs() / e_exact.abs()
    );
    for (label, raw) in &est.raw {
        println!(
            "{prefix}   {label}: value = {:.12e}, decay = {:.9}, modes = {}",
            raw.value, raw.mode.decay, raw.diagnostics.retained_modes
        );
    }
    for w in &est.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Spectrum => {
            let cfg = load(&cli)?;
            let h = build_hamiltonian(&cfg.hamiltonian_spec()?)?;
            let spectrum = diagonalize(&h)?;
            println!("index,energy");
            for (i, e) in spectrum.energies().iter().enumerate() {
                println!("{i},{e:.12e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Series { pair, gamma } => {
            let ctx = pair_context(&cli, pair, *gamma)?;
            let series = single_series(&ctx)?;
            let dir = PathBuf::from(&ctx.cfg.out_dir);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("series_p{}_{}-g{}.csv", ctx.a, ctx.b, ctx.gamma));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "k,t,re,im")?;
            for (k, y) in series.samples.iter().enumerate() {
                writeln!(
                    f,
                    "{k},{:.12e},{:.12e},{:.12e}",
                    k as f64 * series.dt,
                    y.re,
                    y.im
                )?;
            }
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { pair, gamma } => {
            let ctx = pair_context(&cli, pair, *gamma)?;
            let est = with_cache(&ctx, |cache, cfg| {
                run_unmitigated(cache, cfg.cutoff_for(mbspec::mitigation::StrategyKind::Unmitigated))
            })?;
            print_estimate_block("", &est, ctx.spectrum.gap(ctx.a, ctx.b));
            Ok(ExitCode::SUCCESS)
        }
        Command::Reshape { pair, gamma } => {
            let ctx = pair_context(&cli, pair, *gamma)?;
            let est = with_cache(&ctx, |cache, cfg| {
                let set = cfg.reshape_set(cfg.seed)?;
                run_reshaping(cache, &set, cfg.cutoff_for(mbspec::mitigation::StrategyKind::Reshape))
            })?;
            print_estimate_block("", &est, ctx.spectrum.gap(ctx.a, ctx.b));
            Ok(ExitCode::SUCCESS)
        }
        Command::Rescale { pair, gamma, order } => {
            let order = match order.as_str() {
                "first" => RescaleOrder::First,
                "second" => RescaleOrder::Second,
                other => {
                    return Err(Error::Config(format!(
                        "--order: expected first | second, got '{other}'"
                    )));
                }
            };
            let ctx = pair_context(&cli, pair, *gamma)?;
            if order == RescaleOrder::Second
                && ctx.cfg.rescale.as_ref().and_then(|r| r.c2).is_none()
            {
                return Err(Error::Config(
                    "rescale.c2: required for --order second".into(),
                ));
            }
            let est = with_cache(&ctx, |cache, cfg| {
                let rc = cfg.rescale_config()?;
                let kind = match order {
                    RescaleOrder::First => mbspec::mitigation::StrategyKind::RescaleFirst,
                    RescaleOrder::Second => mbspec::mitigation::StrategyKind::RescaleSecond,
                };
                run_rescaling(cache, &rc, order, cfg.cutoff_for(kind))
            })?;
            print_estimate_block("", &est, ctx.spectrum.gap(ctx.a, ctx.b));
            Ok(ExitCode::SUCCESS)
        }
        Command::Richardson { pair, gamma } => {
            let ctx = pair_context(&cli, pair, *gamma)?;
            let est = with_cache(&ctx, |cache, cfg| {
                let rc = cfg.rescale_config()?;
                run_richardson(cache, &rc, cfg.cutoff_for(mbspec::mitigation::StrategyKind::Richardson))
            })?;
            print_estimate_block("", &est, ctx.spectrum.gap(ctx.a, ctx.b));
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep => {
            let cfg = load(&cli)?;
            let out = experiment::run_sweep(&cfg)?;
            let dir = PathBuf::from(&cfg.out_dir);
            let mut paths = experiment::write_outputs(&out.records, &out.summary, &dir)?;
            let echo_path = dir.join("config_echo.toml");
            std::fs::write(&echo_path, cfg.echo())?;
            paths.push(echo_path);
            for w in &out.summary.metadata.warnings {
                eprintln!("warning: {w}");
            }
            println!("records: {}", out.records.len());
            for (name, s) in &out.summary.strategies {
                match s.slope {
                    Some(slope) => println!("{name}: slope = {slope:.3}"),
                    None => println!("{name}: slope = n/a"),
                }
            }
            for p in &paths {
                println!("wrote {}", p.display());
            }
            if out.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for (id, e) in &out.failures {
                    eprintln!("run failed: {id}: {e}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Complexity {
            strategy,
            n_modes,
            samples,
            dt,
            noise_strength,
            d_ab,
            sigma_target,
            c1,
            c2,
            n_paulis,
            c_stat,
            n_shots,
            c_amp,
            decay,
        } => {
            let strategy = SamplingStrategy::parse(strategy)?;
            if strategy == SamplingStrategy::ReshapeSampled && c_stat.is_none() {
                return Err(Error::Config(
                    "--c-stat is required for reshape-sampled (see --help for the measurement recipe)"
                        .into(),
                ));
            }
            let inputs = ComplexityInputs {
                n_modes: *n_modes,
                n_shots: *n_shots,
                n_paulis: *n_paulis,
                samples: *samples,
                dt: *dt,
                noise_strength: *noise_strength,
                d_ab: *d_ab,
                c_amp: *c_amp,
                sigma_target: *sigma_target,
                c1: *c1,
                c2: *c2,
                c_stat: c_stat.unwrap_or(f64::NAN),
            };
            let total = mbspec::complexity::total_samples(strategy, &inputs)?;
            let x = inputs.d_ab * inputs.noise_strength * inputs.total_time();
            println!("strategy            = {}", strategy.label());
            println!("T = L*dt            = {:.6e}", inputs.total_time());
            println!("x = d_ab*|D|*T      = {x:.6e}");
            if x > 0.0 {
                println!("f(x)                = {:.6e}", mbspec::complexity::f_factor(x)?);
            }
            if let Some(c2) = inputs.c2 {
                println!("F(c1,c2)            = {:.6e}", mbspec::complexity::big_f(inputs.c1, c2)?);
            }
            println!("total samples N_T   = {total:.6e}");
            if let Some(r) = decay {
                let sigma =
                    mbspec::complexity::sigma_omega(inputs.n_shots, inputs.c_amp(), *r, inputs.samples)?;
                println!("sigma_omega(r={r})  = {sigma:.6e}");
            }
            println!(
                "exponential-regime advisory N_T = {:.6e}",
                mbspec::complexity::exponential_regime_samples(&inputs)?
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn single_series(ctx: &PairContext) -> Result<mbspec::lindblad::TimeSeries> {
    let e_ba = ctx.spectrum.gap(ctx.a, ctx.b);
    let noise = build_noise(
        ctx.cfg.noise_kind()?,
        ctx.gamma * e_ba.abs(),
        ctx.cfg.noise.beta,
        ctx.cfg.model.n,
    )?;
    let obs = PairObservable::from_spectrum(&ctx.spectrum, ctx.a, ctx.b)?;
    let mut cache = SeriesCache::new(&ctx.h, &noise, &obs, ctx.cfg.spectroscopy()?, ctx.cfg.backend()?)?;
    cache.rescaled(1.0)
}

fn with_cache<F>(ctx: &PairContext, f: F) -> Result<mbspec::mitigation::MitigatedEstimate>
where
    F: FnOnce(&mut SeriesCache<'_>, &ExperimentConfig) -> Result<mbspec::mitigation::MitigatedEstimate>,
{
    let e_ba = ctx.spectrum.gap(ctx.a, ctx.b);
    let noise = build_noise(
        ctx.cfg.noise_kind()?,
        ctx.gamma * e_ba.abs(),
        ctx.cfg.noise.beta,
        ctx.cfg.model.n,
    )?;
    let obs = PairObservable::from_spectrum(&ctx.spectrum, ctx.a, ctx.b)?;
    let mut cache = SeriesCache::new(&ctx.h, &noise, &obs, ctx.cfg.spectroscopy()?, ctx.cfg.backend()?)?;
    f(&mut cache, &ctx.cfg)
}
