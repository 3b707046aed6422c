//! Experiment orchestration: config ingestion, seeded pair sampling,
//! parallel sweeps over (pair, γ, strategy), slope fitting and CSV/JSON
//! persistence.
//!
//! Determinism contract: (config, seed) fully determines every output
//! byte, independent of worker count and scheduling. Tasks are indexed up
//! front, fanned out with rayon, and merged back in index order; per-run
//! randomness comes from counter-derived child seeds only.

use crate::lindblad::{Backend, PairObservable, SpectroscopyConfig, TimeSeries};
use crate::mitigation::{
    MitigatedEstimate, RescaleConfig, RescaleOrder, ReshapeSet, SeriesCache, StrategyKind,
    run_reshaping, run_rescaling, run_richardson, run_unmitigated,
};
use crate::operators::{
    DenseOperator, HamiltonianSpec, NoiseKind, PauliString, Spectrum, build_hamiltonian,
    build_noise, diagonalize,
};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const RUNS_CSV_HEADER: &str =
    "run_id,model,n,a,b,E_exact,gamma,kappa,strategy,variant,estimate,abs_error,rel_error,decay,n_modes,seed";

fn default_backend() -> String {
    "spectral".into()
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_strategies() -> Vec<String> {
    vec!["none".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: String,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReshapeSetConfig {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strings: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleFactorsConfig {
    pub c1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub none: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reshape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub richardson: Option<f64>,
}

/// Full sweep configuration. Scalar keys come first so the TOML echo
/// serializes cleanly before the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: String,
    /// 0 means "use every core".
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub dump_series: bool,
    /// Absolute pair-exclusion threshold; defaults to 1e-6·max|E|.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
    pub gamma_list: Vec<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub spectroscopy: GridConfig,
    pub pairs: PairsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reshape: Option<ReshapeSetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<RescaleFactorsConfig>,
    #[serde(default)]
    pub cutoffs: CutoffConfig,
}

impl ExperimentConfig {
    pub fn hamiltonian_spec(&self) -> Result<HamiltonianSpec> {
        let m = &self.model;
        match m.variant.as_str() {
            "ring" => {
                if m.g.is_some() {
                    return Err(Error::Config("model.g: not a ring parameter".into()));
                }
                let need = |v: Option<f64>, key: &str| {
                    v.ok_or_else(|| Error::Config(format!("model.{key}: required for the ring model")))
                };
                Ok(HamiltonianSpec::Ring {
                    n: m.n,
                    nu_z: need(m.nu_z, "nu_z")?,
                    nu_x: need(m.nu_x, "nu_x")?,
                    j: need(m.j, "j")?,
                })
            }
            "xx-chain" => {
                if m.nu_z.is_some() || m.nu_x.is_some() || m.j.is_some() {
                    return Err(Error::Config(
                        "model.nu_z/nu_x/j: not xx-chain parameters".into(),
                    ));
                }
                let g = m
                    .g
                    .ok_or_else(|| Error::Config("model.g: required for the xx-chain model".into()))?;
                Ok(HamiltonianSpec::XxChain { n: m.n, g })
            }
            other => Err(Error::Config(format!(
                "model.variant: unknown variant '{other}' (expected ring | xx-chain)"
            ))),
        }
    }

    pub fn noise_kind(&self) -> Result<NoiseKind> {
        let kind = NoiseKind::parse(&self.noise.kind)
            .map_err(|e| Error::Config(format!("noise.kind: {e}")))?;
        if kind == NoiseKind::Custom {
            return Err(Error::Config(
                "noise.kind: custom operators cannot be expressed in a config file".into(),
            ));
        }
        Ok(kind)
    }

    pub fn backend(&self) -> Result<Backend> {
        Backend::parse(&self.backend).map_err(|e| Error::Config(format!("backend: {e}")))
    }

    pub fn spectroscopy(&self) -> Result<SpectroscopyConfig> {
        SpectroscopyConfig::new(self.spectroscopy.dt, self.spectroscopy.samples)
            .map_err(|e| Error::Config(format!("spectroscopy: {e}")))
    }

    pub fn strategy_list(&self) -> Result<Vec<StrategyKind>> {
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies: must not be empty".into()));
        }
        self.strategies
            .iter()
            .map(|s| match s.as_str() {
                "none" => Ok(StrategyKind::Unmitigated),
                "reshape" => Ok(StrategyKind::Reshape),
                "rescale1" => Ok(StrategyKind::RescaleFirst),
                "rescale2" => Ok(StrategyKind::RescaleSecond),
                "richardson" => Ok(StrategyKind::Richardson),
                other => Err(Error::Config(format!(
                    "strategies: unknown strategy '{other}' (expected none | reshape | rescale1 | rescale2 | richardson)"
                ))),
            })
            .collect()
    }

    /// Reshape set for one run; sampled variants draw from `child_seed`.
    pub fn reshape_set(&self, child_seed: u64) -> Result<ReshapeSet> {
        let rs = self
            .reshape
            .as_ref()
            .ok_or_else(|| Error::Config("reshape: section required by the reshape strategy".into()))?;
        match rs.variant.as_str() {
            "full-pauli-sample" => {
                let count = rs.count.ok_or_else(|| {
                    Error::Config("reshape.count: required for full-pauli-sample".into())
                })?;
                Ok(ReshapeSet::FullPauliSample { count, seed: child_seed })
            }
            "tensor-power-4" => Ok(ReshapeSet::TensorPower4),
            "tensor-power-2" => Ok(ReshapeSet::TensorPower2),
            "explicit" => {
                let strings = rs.strings.as_ref().ok_or_else(|| {
                    Error::Config("reshape.strings: required for the explicit variant".into())
                })?;
                let parsed = strings
                    .iter()
                    .map(|s| PauliString::parse(s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Config(format!("reshape.strings: {e}")))?;
                Ok(ReshapeSet::Explicit(parsed))
            }
            other => Err(Error::Config(format!(
                "reshape.variant: unknown variant '{other}'"
            ))),
        }
    }

    pub fn rescale_config(&self) -> Result<RescaleConfig> {
        let rc = self.rescale.as_ref().ok_or_else(|| {
            Error::Config("rescale: section required by rescale/richardson strategies".into())
        })?;
        RescaleConfig::new(rc.c1, rc.c2).map_err(|e| Error::Config(format!("rescale: {e}")))
    }

    pub fn cutoff_for(&self, strategy: StrategyKind) -> Option<f64> {
        match strategy {
            StrategyKind::Unmitigated => self.cutoffs.none,
            StrategyKind::Reshape => self.cutoffs.reshape,
            StrategyKind::RescaleFirst | StrategyKind::RescaleSecond => self.cutoffs.rescale,
            StrategyKind::Richardson => self.cutoffs.richardson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hamiltonian_spec()?;
        self.noise_kind()?;
        self.backend()?;
        self.spectroscopy()?;
        let strategies = self.strategy_list()?;

        if self.gamma_list.is_empty() {
            return Err(Error::Config("gamma_list: must not be empty".into()));
        }
        for (i, g) in self.gamma_list.iter().enumerate() {
            if !g.is_finite() || *g < 0.0 {
                return Err(Error::Config(format!(
                    "gamma_list[{i}]: must be finite and >= 0, got {g}"
                )));
            }
            if i > 0 && self.gamma_list[i - 1] >= *g {
                return Err(Error::Config(format!(
                    "gamma_list: must be strictly ascending, violated at index {i}"
                )));
            }
        }

        let p = &self.pairs;
        match (&p.count, &p.explicit) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "pairs: give either count(+seed) or explicit, not both".into(),
                ));
            }
            (None, None) => {
                return Err(Error::Config("pairs: need either count or explicit".into()));
            }
            (Some(0), None) => {
                return Err(Error::Config("pairs.count: must be >= 1".into()));
            }
            _ => {}
        }
        if let Some(pairs) = &p.explicit {
            let dim = 1usize << self.model.n;
            for (i, (a, b)) in pairs.iter().enumerate() {
                if a >= b {
                    return Err(Error::Config(format!(
                        "pairs.explicit[{i}]: need a < b, got ({a}, {b})"
                    )));
                }
                if *b >= dim {
                    return Err(Error::Config(format!(
                        "pairs.explicit[{i}]: index {b} out of range for dimension {dim}"
                    )));
                }
            }
        }
        if let Some(g) = self.min_gap {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::Config(format!(
                    "min_gap: must be positive and finite, got {g}"
                )));
            }
        }
        for (key, c) in [
            ("cutoffs.none", self.cutoffs.none),
            ("cutoffs.reshape", self.cutoffs.reshape),
            ("cutoffs.rescale", self.cutoffs.rescale),
            ("cutoffs.richardson", self.cutoffs.richardson),
        ] {
            if let Some(c) = c {
                if !(c > 0.0 && c < 1.0) {
                    return Err(Error::Config(format!("{key}: must lie in (0, 1), got {c}")));
                }
            }
        }

        if strategies.contains(&StrategyKind::Reshape) {
            self.reshape_set(0)?;
        }
        let needs_rescale = strategies.iter().any(|s| {
            matches!(
                s,
                StrategyKind::RescaleFirst | StrategyKind::RescaleSecond | StrategyKind::Richardson
            )
        });
        if needs_rescale {
            let rc = self.rescale_config()?;
            if strategies.contains(&StrategyKind::RescaleSecond) && rc.c2.is_none() {
                return Err(Error::Config(
                    "rescale.c2: required by the rescale2 strategy".into(),
                ));
            }
        }
        Ok(())
    }

    /// Effective config as TOML, defaults included.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# serialization failed: {e}"))
    }
}

/// Parse and validate a config file; defaults are filled in.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Child seed keyed on counters (pair index, γ index, strategy index),
/// independent of execution order.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

/// Is the gap of (a, b) isolated from every other dyad gap by `min_gap`?
fn pair_is_isolated(spectrum: &Spectrum, a: usize, b: usize, min_gap: f64) -> bool {
    let e_ba = spectrum.gap(a, b);
    if e_ba.abs() < min_gap {
        return false;
    }
    let dim = spectrum.dim();
    for p in 0..dim {
        for m in 0..dim {
            if p == a && m == b {
                continue;
            }
            if (e_ba - spectrum.gap(p, m)).abs() < min_gap {
                return false;
            }
        }
    }
    true
}

/// All eligible (a, b) with a < b under the isolation rule.
pub fn eligible_pairs(spectrum: &Spectrum, min_gap: f64) -> Vec<(usize, usize)> {
    let dim = spectrum.dim();
    let mut out = Vec::new();
    for a in 0..dim {
        for b in a + 1..dim {
            if pair_is_isolated(spectrum, a, b, min_gap) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Uniform sample of `count` distinct eligible pairs, deterministic in the
/// seed. Pairs with |E_ba| below `min_gap`, or whose gap collides with any
/// spectator dyad gap within `min_gap`, are excluded up front.
pub fn sample_pairs(
    spectrum: &Spectrum,
    count: usize,
    seed: u64,
    min_gap: f64,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Err(Error::InvalidParameter("need at least one pair".into()));
    }
    let eligible = eligible_pairs(spectrum, min_gap);
    if eligible.len() < count {
        return Err(Error::InsufficientPairs { requested: count, available: eligible.len() });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), count);
    Ok(chosen.into_iter().map(|i| eligible[i]).collect())
}

/// One CSV row of the sweep.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub model: String,
    pub n: usize,
    pub a: usize,
    pub b: usize,
    pub e_exact: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub strategy: String,
    pub variant: String,
    pub estimate: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub decay: f64,
    pub n_modes: usize,
    pub seed: u64,
    /// First-constituent series, populated when dumping is enabled.
    pub base_series: Option<TimeSeries>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub gamma: Vec<f64>,
    pub mean_rel_error: Vec<f64>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetadata {
    pub model: String,
    pub n: usize,
    pub backend: String,
    pub seed: u64,
    pub pairs: Vec<(usize, usize)>,
    pub min_gap: f64,
    pub eligible_pairs: usize,
    pub alias_warning: bool,
    /// The plotted aggregate is the arithmetic mean of per-pair relative
    /// errors.
    pub mean: String,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub strategies: BTreeMap<String, StrategySummary>,
    pub metadata: SweepMetadata,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
    pub failures: Vec<(String, String)>,
}

/// Ordinary least-squares slope of log(error) against log(γ).
pub fn fit_loglog_slope(gammas: &[f64], mean_errors: &[f64]) -> Result<f64> {
    if gammas.len() != mean_errors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gammas vs {} errors",
            gammas.len(),
            mean_errors.len()
        )));
    }
    if gammas.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 points for a slope, got {}",
            gammas.len()
        )));
    }
    let mut xs = Vec::with_capacity(gammas.len());
    let mut ys = Vec::with_capacity(gammas.len());
    for (g, e) in gammas.iter().zip(mean_errors) {
        if !(*g > 0.0) || !(*e > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "log-log fit needs positive values, got ({g}, {e})"
            )));
        }
        xs.push(g.ln());
        ys.push(e.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

const STRATEGY_ORDER: [StrategyKind; 5] = [
    StrategyKind::Unmitigated,
    StrategyKind::Reshape,
    StrategyKind::RescaleFirst,
    StrategyKind::RescaleSecond,
    StrategyKind::Richardson,
];

fn strategy_index(s: StrategyKind) -> u64 {
    STRATEGY_ORDER.iter().position(|x| *x == s).unwrap() as u64
}

struct TaskResult {
    records: Vec<RunRecord>,
    failures: Vec<(String, String)>,
}

#[allow(clippy::too_many_arguments)]
fn run_task(
    cfg: &ExperimentConfig,
    h: &DenseOperator,
    spectrum: &Spectrum,
    strategies: &[StrategyKind],
    pair_index: usize,
    pair: (usize, usize),
    gamma_index: usize,
    gamma: f64,
) -> TaskResult {
    let (a, b) = pair;
    let e_exact = spectrum.gap(a, b);
    let kappa = gamma * e_exact.abs();
    let mut records = Vec::new();
    let mut failures = Vec::new();

    let context: Result<_> = (|| {
        let noise = build_noise(cfg.noise_kind()?, kappa, cfg.noise.beta, cfg.model.n)?;
        let obs = PairObservable::from_spectrum(spectrum, a, b)?;
        Ok((noise, obs))
    })();
    let (noise, obs) = match context {
        Ok(v) => v,
        Err(e) => {
            for s in strategies {
                failures.push((
                    format!("p{pair_index:03}g{gamma_index:02}-{}", s.label()),
                    e.to_string(),
                ));
            }
            return TaskResult { records, failures };
        }
    };
    let grid = cfg.spectroscopy().expect("validated");
    let backend = cfg.backend().expect("validated");
    let mut cache = match SeriesCache::new(h, &noise, &obs, grid, backend) {
        Ok(c) => c,
        Err(e) => {
            failures.push((format!("p{pair_index:03}g{gamma_index:02}"), e.to_string()));
            return TaskResult { records, failures };
        }
    };

    for &strategy in strategies {
        let run_id = format!("p{pair_index:03}g{gamma_index:02}-{}", strategy.label());
        let child_seed = derive_seed(
            cfg.seed,
            &[pair_index as u64, gamma_index as u64, strategy_index(strategy)],
        );
        let outcome: Result<MitigatedEstimate> = (|| match strategy {
            StrategyKind::Unmitigated => run_unmitigated(&mut cache, cfg.cutoff_for(strategy)),
            StrategyKind::Reshape => {
                let set = cfg.reshape_set(child_seed)?;
                run_reshaping(&mut cache, &set, cfg.cutoff_for(strategy))
            }
            StrategyKind::RescaleFirst => {
                let rc = cfg.rescale_config()?;
                run_rescaling(&mut cache, &rc, RescaleOrder::First, cfg.cutoff_for(strategy))
            }
            StrategyKind::RescaleSecond => {
                let rc = cfg.rescale_config()?;
                run_rescaling(&mut cache, &rc, RescaleOrder::Second, cfg.cutoff_for(strategy))
            }
            StrategyKind::Richardson => {
                let rc = cfg.rescale_config()?;
                run_richardson(&mut cache, &rc, cfg.cutoff_for(strategy))
            }
        })();
        match outcome {
            Ok(est) => {
                let base_series = if cfg.dump_series {
                    base_series_for(&mut cache, cfg, strategy, child_seed)
                } else {
                    None
                };
                let (decay, n_modes) = est
                    .raw
                    .first()
                    .map(|(_, e)| (e.mode.decay, e.diagnostics.retained_modes))
                    .unwrap_or((f64::NAN, 0));
                let abs_error = (est.value - e_exact).abs();
                records.push(RunRecord {
                    run_id,
                    model: cfg.model.variant.clone(),
                    n: cfg.model.n,
                    a,
                    b,
                    e_exact,
                    gamma,
                    kappa,
                    strategy: strategy.label().to_string(),
                    variant: est.variant.clone(),
                    estimate: est.value,
                    abs_error,
                    rel_error: abs_error / e_exact.abs(),
                    decay,
                    n_modes,
                    seed: child_seed,
                    base_series,
                });
            }
            Err(e) => failures.push((run_id, e.to_string())),
        }
    }
    TaskResult { records, failures }
}

fn base_series_for(
    cache: &mut SeriesCache<'_>,
    cfg: &ExperimentConfig,
    strategy: StrategyKind,
    child_seed: u64,
) -> Option<TimeSeries> {
    match strategy {
        StrategyKind::Reshape => {
            let set = cfg.reshape_set(child_seed).ok()?;
            let first = set.realize(cfg.model.n).ok()?.into_iter().next()?;
            cache.reshaped(&first).ok()
        }
        _ => cache.rescaled(1.0).ok(),
    }
}

/// Execute the full (pair × γ × strategy) grid.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let spec = cfg.hamiltonian_spec()?;
    let h = build_hamiltonian(&spec)?;
    let spectrum = diagonalize(&h)?;
    let strategies = cfg.strategy_list()?;
    let grid = cfg.spectroscopy()?;

    let min_gap = cfg.min_gap.unwrap_or(1e-6 * spectrum.max_abs_energy());
    let mut warnings = Vec::new();
    let alias_warning = grid.aliases(spectrum.max_gap());
    if alias_warning {
        warnings.push(format!(
            "aliasing: dt*max_gap = {:.6} >= pi; retrieved frequencies may wrap",
            grid.dt * spectrum.max_gap()
        ));
    }

    let eligible = eligible_pairs(&spectrum, min_gap);
    let pairs: Vec<(usize, usize)> = match (&cfg.pairs.explicit, &cfg.pairs.count) {
        (Some(explicit), _) => {
            for (a, b) in explicit {
                if !pair_is_isolated(&spectrum, *a, *b, min_gap) {
                    return Err(Error::Config(format!(
                        "pairs.explicit: pair ({a}, {b}) violates the min_gap = {min_gap:.3e} isolation rule"
                    )));
                }
            }
            explicit.clone()
        }
        (None, Some(count)) => {
            let pair_seed = cfg.pairs.seed.unwrap_or_else(|| derive_seed(cfg.seed, &[u64::MAX]));
            sample_pairs(&spectrum, *count, pair_seed, min_gap)?
        }
        (None, None) => unreachable!("validated"),
    };

    let tasks: Vec<(usize, (usize, usize), usize, f64)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(pi, &pair)| {
            cfg.gamma_list
                .iter()
                .enumerate()
                .map(move |(gi, &g)| (pi, pair, gi, g))
        })
        .collect();

    let run_all = || -> Vec<TaskResult> {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(pi, pair, gi, gamma)| {
                run_task(cfg, &h, &spectrum, &strategies, pi, pair, gi, gamma)
            })
            .collect()
    };
    let results: Vec<TaskResult> = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("workers: {e}")))?
            .install(run_all)
    } else {
        run_all()
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        records.extend(r.records);
        failures.extend(r.failures);
    }

    // per-(strategy, γ) arithmetic means and per-strategy slopes
    let mut strategies_summary = BTreeMap::new();
    for &strategy in &strategies {
        let label = strategy.label().to_string();
        let mut gamma_axis = Vec::new();
        let mut means = Vec::new();
        for &gamma in cfg.gamma_list.iter() {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.strategy == label && r.gamma == gamma)
                .map(|r| r.rel_error)
                .collect();
            if !vals.is_empty() {
                gamma_axis.push(gamma);
                means.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        let (fit_g, fit_e): (Vec<f64>, Vec<f64>) = gamma_axis
            .iter()
            .zip(&means)
            .filter(|(g, e)| **g > 0.0 && **e > 0.0)
            .map(|(g, e)| (*g, *e))
            .unzip();
        let slope = if fit_g.len() >= 3 {
            fit_loglog_slope(&fit_g, &fit_e).ok()
        } else {
            None
        };
        strategies_summary.insert(
            label,
            StrategySummary { gamma: gamma_axis, mean_rel_error: means, slope },
        );
    }

    let summary = SweepSummary {
        strategies: strategies_summary,
        metadata: SweepMetadata {
            model: cfg.model.variant.clone(),
            n: cfg.model.n,
            backend: cfg.backend.clone(),
            seed: cfg.seed,
            pairs,
            min_gap,
            eligible_pairs: eligible.len(),
            alias_warning,
            mean: "arithmetic".into(),
            warnings,
            failures: failures.iter().map(|(id, e)| format!("{id}: {e}")).collect(),
        },
    };

    Ok(SweepOutput { records, summary, failures })
}

fn fmt_float(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn record_to_csv_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.model,
        r.n,
        r.a,
        r.b,
        fmt_float(r.e_exact),
        fmt_float(r.gamma),
        fmt_float(r.kappa),
        r.strategy,
        r.variant,
        fmt_float(r.estimate),
        fmt_float(r.abs_error),
        fmt_float(r.rel_error),
        fmt_float(r.decay),
        r.n_modes,
        r.seed
    )
}

/// Write `runs.csv`, `summary.json` and any `series_<run_id>.csv` dumps.
/// Returns the paths written.
pub fn write_outputs(
    records: &[RunRecord],
    summary: &SweepSummary,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let runs_path = dir.join("runs.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&runs_path)?);
        writeln!(f, "{RUNS_CSV_HEADER}")?;
        for r in records {
            writeln!(f, "{}", record_to_csv_row(r))?;
        }
    }
    written.push(runs_path);

    let summary_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    std::fs::write(&summary_path, json + "\n")?;
    written.push(summary_path);

    for r in records {
        if let Some(series) = &r.base_series {
            let path = dir.join(format!("series_{}.csv", r.run_id));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "k,t,re,im")?;
            for (k, y) in series.samples.iter().enumerate() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    k,
                    fmt_float(k as f64 * series.dt),
                    fmt_float(y.re),
                    fmt_float(y.im)
                )?;
            }
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::assert_close;

    fn minimal_ring_toml() -> String {
        r#"
            seed = 7
            gamma_list = [0.0]
            strategies = ["none"]

            [model]
            variant = "ring"
            n = 2
            nu_z = 4.0
            nu_x = 1.0
            j = 4.0

            [noise]
            kind = "paper-default"
            beta = 0.01

            [spectroscopy]
            dt = 1e-4
            samples = 256

            [pairs]
            count = 1
        "#
        .to_string()
    }

    fn write_temp(content: &str) -> PathBuf {
        let path = std::env::temp_dir().join(format!(
            "mbspec-test-{}-{}.toml",
            std::process::id(),
            rand::random::<u64>()
        ));
        std::fs::write(&path, content).unwrap();
        path
    }

    fn parse_config(toml_text: &str) -> ExperimentConfig {
        let path = write_temp(toml_text);
        let cfg = load_config(&path).unwrap();
        std::fs::remove_file(&path).ok();
        cfg
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(&minimal_ring_toml());
        assert_eq!(cfg.backend, "spectral");
        assert_eq!(cfg.out_dir, "out");
        assert_eq!(cfg.workers, 0);
        assert!(!cfg.dump_series);
        assert!(cfg.min_gap.is_none());
        assert!(cfg.cutoffs.none.is_none());
    }

    #[test]
    fn config_round_trips() {
        let cfg = parse_config(&minimal_ring_toml());
        let echoed = cfg.echo();
        let path = write_temp(&echoed);
        let cfg2 = load_config(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn descending_gammas_are_rejected() {
        let toml = minimal_ring_toml().replace("gamma_list = [0.0]", "gamma_list = [1e-2, 1e-3]");
        let path = write_temp(&toml);
        let err = load_config(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("ascending"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let toml = minimal_ring_toml() + "\nbogus_key = 1\n";
        let path = write_temp(&toml);
        let err = load_config(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn missing_model_field_names_the_key() {
        let toml = minimal_ring_toml().replace("nu_z = 4.0\n", "");
        let path = write_temp(&toml);
        let err = load_config(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("nu_z"), "{err}");
    }

    #[test]
    fn sample_pairs_is_seed_deterministic() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 3, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let min_gap = 1e-6 * spectrum.max_abs_energy();
        let a = sample_pairs(&spectrum, 5, 99, min_gap).unwrap();
        let b = sample_pairs(&spectrum, 5, 99, min_gap).unwrap();
        assert_eq!(a, b);
        let c = sample_pairs(&spectrum, 5, 100, min_gap).unwrap();
        assert_ne!(a, c);
        for (x, y) in &a {
            assert!(x < y);
        }
    }

    #[test]
    fn degenerate_doublet_pairs_are_excluded() {
        // ring n=2 with only the Z field: energies {−8π, 0, 0, 8π}
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 2, nu_z: 4.0, nu_x: 0.0, j: 0.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let min_gap = 1e-6 * spectrum.max_abs_energy();
        let eligible = eligible_pairs(&spectrum, min_gap);
        // only (0, 3) survives: every other pair either touches the zero
        // doublet or shares its 8π gap with a spectator
        assert_eq!(eligible, vec![(0, 3)]);
        assert!(matches!(
            sample_pairs(&spectrum, 2, 1, min_gap),
            Err(Error::InsufficientPairs { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn fit_loglog_slope_examples() {
        let gammas = [1e-4, 1e-3, 1e-2, 1e-1];
        let quad: Vec<f64> = gammas.iter().map(|g| g * g).collect();
        assert_close(fit_loglog_slope(&gammas, &quad).unwrap(), 2.0, 1e-12, "γ² slope");
        let lin: Vec<f64> = gammas.iter().map(|g| 3.0 * g).collect();
        assert_close(fit_loglog_slope(&gammas, &lin).unwrap(), 1.0, 1e-12, "3γ slope");
        let scaled: Vec<f64> = quad.iter().map(|e| 42.0 * e).collect();
        assert_close(
            fit_loglog_slope(&gammas, &scaled).unwrap(),
            2.0,
            1e-12,
            "scale invariance",
        );
        assert!(fit_loglog_slope(&[1e-3, 1e-2], &[1.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[0.0, 1e-2, 1e-1], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn derive_seed_is_order_sensitive_and_stable() {
        let a = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[3, 2, 1]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
    }

    #[test]
    fn noiseless_sweep_is_exact() {
        let cfg = parse_config(&minimal_ring_toml());
        let out = run_sweep(&cfg).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.records.len(), 1);
        for r in &out.records {
            assert!(r.rel_error <= 1e-8, "rel_error {}", r.rel_error);
            assert_close(
                r.rel_error,
                (r.estimate - r.e_exact).abs() / r.e_exact.abs(),
                1e-12,
                "self-consistency",
            );
        }
    }

    #[test]
    fn sampled_reshape_sweep_is_reproducible() {
        let toml = minimal_ring_toml()
            .replace("gamma_list = [0.0]", "gamma_list = [1e-3]")
            .replace(
                "strategies = [\"none\"]",
                "strategies = [\"reshape\"]\n[reshape]\nvariant = \"full-pauli-sample\"\ncount = 3\n",
            );
        let cfg = parse_config(&toml);
        let out1 = run_sweep(&cfg).unwrap();
        let out2 = run_sweep(&cfg).unwrap();
        assert!(out1.failures.is_empty(), "{:?}", out1.failures);
        assert_eq!(out1.records.len(), 1);
        assert_eq!(out1.records[0].variant, "full-pauli-sample[3]");
        assert_eq!(
            record_to_csv_row(&out1.records[0]),
            record_to_csv_row(&out2.records[0])
        );
        // a different master seed draws different reshaping operators
        let mut reseeded = cfg.clone();
        reseeded.seed ^= 0xDEAD;
        let out3 = run_sweep(&reseeded).unwrap();
        assert_ne!(out1.records[0].seed, out3.records[0].seed);
    }

    #[test]
    fn stepper_backend_sweeps_too() {
        let mut cfg = parse_config(&minimal_ring_toml());
        cfg.backend = "stepper".into();
        cfg.gamma_list = vec![0.0, 1e-3];
        let out = run_sweep(&cfg).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.records.len(), 2);
        assert!(out.records[0].rel_error <= 1e-8);
        // noisy stepper record should closely match the spectral backend
        let mut spectral_cfg = cfg.clone();
        spectral_cfg.backend = "spectral".into();
        let spectral = run_sweep(&spectral_cfg).unwrap();
        let diff = (out.records[1].estimate - spectral.records[1].estimate).abs();
        assert!(diff <= 1e-8 * spectral.records[1].estimate.abs(), "diff {diff}");
    }

    #[test]
    fn dump_series_writes_per_run_files() {
        let dir = std::env::temp_dir().join(format!(
            "mbspec-dump-{}-{}",
            std::process::id(),
            rand::random::<u64>()
        ));
        let mut cfg = parse_config(&minimal_ring_toml());
        cfg.dump_series = true;
        let out = run_sweep(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.base_series.is_some()));
        let paths = write_outputs(&out.records, &out.summary, &dir).unwrap();
        // runs.csv + summary.json + one series file per record
        assert_eq!(paths.len(), 2 + out.records.len());
        let series_path = dir.join(format!("series_{}.csv", out.records[0].run_id));
        let text = std::fs::read_to_string(series_path).unwrap();
        assert_eq!(text.lines().count(), 1 + cfg.spectroscopy.samples);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sweep_is_worker_count_invariant() {
        let base = minimal_ring_toml()
            .replace("gamma_list = [0.0]", "gamma_list = [0.0, 1e-3]")
            .replace(
                "strategies = [\"none\"]",
                "strategies = [\"none\", \"rescale1\", \"richardson\"]\n[rescale]\nc1 = 2.0\nc2 = 1.5\n",
            );
        let mut cfg1 = parse_config(&base);
        cfg1.workers = 1;
        let mut cfg4 = cfg1.clone();
        cfg4.workers = 4;
        let out1 = run_sweep(&cfg1).unwrap();
        let out4 = run_sweep(&cfg4).unwrap();
        let rows1: Vec<String> = out1.records.iter().map(record_to_csv_row).collect();
        let rows4: Vec<String> = out4.records.iter().map(record_to_csv_row).collect();
        assert_eq!(rows1, rows4);
    }

    #[test]
    fn alias_warning_fires_exactly_at_threshold() {
        let mut cfg = parse_config(&minimal_ring_toml());
        let h = build_hamiltonian(&cfg.hamiltonian_spec().unwrap()).unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let threshold = std::f64::consts::PI / spectrum.max_gap();
        cfg.spectroscopy.dt = threshold * 0.999;
        let out = run_sweep(&cfg).unwrap();
        assert!(!out.summary.metadata.alias_warning);
        cfg.spectroscopy.dt = threshold * 1.001;
        let out = run_sweep(&cfg).unwrap();
        assert!(out.summary.metadata.alias_warning);
    }

    #[test]
    fn outputs_have_exact_schema() {
        let dir = std::env::temp_dir().join(format!(
            "mbspec-out-{}-{}",
            std::process::id(),
            rand::random::<u64>()
        ));
        let summary = SweepSummary {
            strategies: BTreeMap::new(),
            metadata: SweepMetadata {
                model: "ring".into(),
                n: 2,
                backend: "spectral".into(),
                seed: 0,
                pairs: vec![],
                min_gap: 1e-6,
                eligible_pairs: 0,
                alias_warning: false,
                mean: "arithmetic".into(),
                warnings: vec![],
                failures: vec![],
            },
        };
        // empty records: header-only CSV
        let paths = write_outputs(&[], &summary, &dir).unwrap();
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(csv, format!("{RUNS_CSV_HEADER}\n"));

        let record = RunRecord {
            run_id: "p000g00-none".into(),
            model: "ring".into(),
            n: 2,
            a: 0,
            b: 3,
            e_exact: 2.0 * std::f64::consts::PI,
            gamma: 1e-3,
            kappa: 2e-3,
            strategy: "none".into(),
            variant: "none".into(),
            estimate: 6.290,
            abs_error: 0.006815,
            rel_error: 0.001084,
            decay: 0.9999,
            n_modes: 1,
            seed: 42,
            base_series: Some(TimeSeries::new(0.1, vec![crate::C64::new(1.0, 0.0); 4]).unwrap()),
        };
        let paths = write_outputs(std::slice::from_ref(&record), &summary, &dir).unwrap();
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RUNS_CSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 16);
        assert!(row.starts_with("p000g00-none,ring,2,0,3,6.283185307180e0,"));
        assert!(lines.next().is_none());

        let series_csv = std::fs::read_to_string(dir.join("series_p000g00-none.csv")).unwrap();
        assert!(series_csv.starts_with("k,t,re,im\n0,0.000000000000e0,1.000000000000e0,"));

        std::fs::remove_dir_all(&dir).ok();
    }
}
