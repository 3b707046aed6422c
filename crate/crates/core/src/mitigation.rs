//! Error-mitigation strategies: Hamiltonian reshaping, Hamiltonian
//! rescaling and a pointwise Richardson-extrapolation baseline.
//!
//! Every strategy consumes constituent time series produced under the SAME
//! noise model. A [`SeriesCache`] bundles one (H, noise, pair, grid,
//! backend) context and shares constituent series across strategies, which
//! is what makes "rescaling vs Richardson on matched data" comparisons
//! meaningful.

use crate::linalg::{dyad, vec_col};
use crate::lindblad::{
    Backend, Evolution, PairObservable, SpectroscopyConfig, TimeSeries, noise_superoperator,
};
use crate::operators::{DenseOperator, NoiseModel, Pauli, PauliString, conjugate, conjugate_state};
use crate::spectral::{
    CUTOFF_RESCALING, CUTOFF_RESHAPING, EnergyEstimate, EstimateOptions, estimate_energy,
};
use crate::{CVector, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

/// The set of reshaping unitaries G.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReshapeSet {
    /// Uniform draws (with replacement) over all 4^n Pauli strings.
    FullPauliSample { count: usize, seed: u64 },
    /// {I^⊗n, X^⊗n, Y^⊗n, Z^⊗n} — cancels any strictly local noise.
    TensorPower4,
    /// {I^⊗n, X^⊗n} — enough for σ⁻ damping plus Z systematic error.
    TensorPower2,
    Explicit(Vec<PauliString>),
}

impl ReshapeSet {
    pub fn realize(&self, n: usize) -> Result<Vec<PauliString>> {
        match self {
            ReshapeSet::FullPauliSample { count, seed } => {
                if *count == 0 {
                    return Err(Error::InvalidParameter(
                        "sampled reshape set needs at least one operator".into(),
                    ));
                }
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                Ok((0..*count).map(|_| PauliString::random(n, &mut rng)).collect())
            }
            ReshapeSet::TensorPower4 => Ok(vec![
                PauliString::tensor_power(Pauli::I, n)?,
                PauliString::tensor_power(Pauli::X, n)?,
                PauliString::tensor_power(Pauli::Y, n)?,
                PauliString::tensor_power(Pauli::Z, n)?,
            ]),
            ReshapeSet::TensorPower2 => Ok(vec![
                PauliString::tensor_power(Pauli::I, n)?,
                PauliString::tensor_power(Pauli::X, n)?,
            ]),
            ReshapeSet::Explicit(set) => {
                if set.is_empty() {
                    return Err(Error::InvalidParameter("explicit reshape set is empty".into()));
                }
                for p in set {
                    if p.n() != n {
                        return Err(Error::DimensionMismatch(format!(
                            "reshape string {p} acts on {} qubits, system has {n}",
                            p.n()
                        )));
                    }
                }
                Ok(set.clone())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            ReshapeSet::FullPauliSample { count, .. } => format!("full-pauli-sample[{count}]"),
            ReshapeSet::TensorPower4 => "tensor-power-4".into(),
            ReshapeSet::TensorPower2 => "tensor-power-2".into(),
            ReshapeSet::Explicit(set) => format!("explicit[{}]", set.len()),
        }
    }
}

/// Rescaling factors c₁ (and optionally c₂), both > 1 and below the
/// perturbation-theory cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleConfig {
    pub c1: f64,
    pub c2: Option<f64>,
}

/// Beyond this the rescaled −i[H/c,·] no longer dominates the noise and
/// perturbation theory loses its footing.
pub const MAX_RESCALE_FACTOR: f64 = 20.0;

impl RescaleConfig {
    pub fn new(c1: f64, c2: Option<f64>) -> Result<Self> {
        for (name, c) in [("c1", Some(c1)), ("c2", c2)] {
            if let Some(c) = c {
                if !(c > 1.0) || !c.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "rescaling factor {name} must be > 1, got {c}"
                    )));
                }
                if c > MAX_RESCALE_FACTOR {
                    return Err(Error::InvalidParameter(format!(
                        "rescaling factor {name} = {c} too large; keep c ≤ {MAX_RESCALE_FACTOR} so the noise stays perturbative"
                    )));
                }
            }
        }
        if c2 == Some(c1) {
            return Err(Error::InvalidParameter("rescaling factors must differ".into()));
        }
        Ok(Self { c1, c2 })
    }

    fn require_c2(&self) -> Result<f64> {
        self.c2.ok_or_else(|| {
            Error::InvalidParameter("second-order rescaling needs a second factor c2".into())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleOrder {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Unmitigated,
    Reshape,
    RescaleFirst,
    RescaleSecond,
    Richardson,
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Unmitigated => "none",
            StrategyKind::Reshape => "reshape",
            StrategyKind::RescaleFirst => "rescale1",
            StrategyKind::RescaleSecond => "rescale2",
            StrategyKind::Richardson => "richardson",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MitigationDiagnostics {
    /// Dominant-mode decay per constituent run.
    pub decays: Vec<(String, f64)>,
    /// Retained-mode count per constituent run.
    pub mode_counts: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

/// Raw per-run energy estimates plus the combined, error-mitigated value.
#[derive(Debug, Clone)]
pub struct MitigatedEstimate {
    pub strategy: StrategyKind,
    pub variant: String,
    pub raw: Vec<(String, EnergyEstimate)>,
    pub value: f64,
    pub diagnostics: MitigationDiagnostics,
}

/// Transform the full experimental triple by one Pauli string:
/// H_U = P H P, ψ₀' = P ψ₀, observable states (Pφ_a, Pφ_b). The noiseless
/// series of the transformed triple is identical to the original.
pub fn reshape_experiment(
    h: &DenseOperator,
    psi0: &CVector,
    obs: &PairObservable,
    p: &PauliString,
) -> Result<(DenseOperator, CVector, PairObservable)> {
    Ok((conjugate(h, p)?, conjugate_state(psi0, p)?, obs.conjugated(p)?))
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum SeriesKey {
    Rescaled(u64),
    Reshaped(PauliString),
}

/// One (H, noise, pair, grid, backend) context with lazily generated,
/// shared constituent series and memoized per-constituent estimates.
pub struct SeriesCache<'a> {
    h: &'a DenseOperator,
    noise: &'a NoiseModel,
    obs: &'a PairObservable,
    cfg: SpectroscopyConfig,
    backend: Backend,
    map: HashMap<SeriesKey, TimeSeries>,
    estimates: HashMap<(SeriesKey, u64), EnergyEstimate>,
}

impl<'a> SeriesCache<'a> {
    pub fn new(
        h: &'a DenseOperator,
        noise: &'a NoiseModel,
        obs: &'a PairObservable,
        cfg: SpectroscopyConfig,
        backend: Backend,
    ) -> Result<Self> {
        if h.dim() != noise.dim() || h.dim() != obs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "Hamiltonian dim {}, noise dim {}, observable dim {}",
                h.dim(),
                noise.dim(),
                obs.dim()
            )));
        }
        Ok(Self {
            h,
            noise,
            obs,
            cfg,
            backend,
            map: HashMap::new(),
            estimates: HashMap::new(),
        })
    }

    pub fn config(&self) -> SpectroscopyConfig {
        self.cfg
    }

    pub fn qubits(&self) -> usize {
        self.h.qubits()
    }

    /// Series for H/c at time step c·ΔT (c = 1 is the plain run). The noise
    /// model is deliberately untouched.
    pub fn rescaled(&mut self, c: f64) -> Result<TimeSeries> {
        if !(c >= 1.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "series rescaling factor must be >= 1, got {c}"
            )));
        }
        let key = SeriesKey::Rescaled(c.to_bits());
        if let Some(s) = self.map.get(&key) {
            return Ok(s.clone());
        }
        let scaled_h;
        let h = if c == 1.0 {
            self.h
        } else {
            scaled_h = self.h.scaled(1.0 / c);
            &scaled_h
        };
        let psi0 = self.obs.designed_initial_state();
        let evolution = Evolution::prepare(h, self.noise, self.backend, c * self.cfg.dt)?;
        let series = evolution.series(&psi0, self.obs, self.cfg.samples)?;
        self.map.insert(key, series.clone());
        Ok(series)
    }

    /// Series for the reshaped triple (P H P, Pψ₀, P-conjugated observable)
    /// under the same noise model.
    pub fn reshaped(&mut self, p: &PauliString) -> Result<TimeSeries> {
        let key = SeriesKey::Reshaped(p.clone());
        if let Some(s) = self.map.get(&key) {
            return Ok(s.clone());
        }
        let psi0 = self.obs.designed_initial_state();
        let (h_u, psi_u, obs_u) = reshape_experiment(self.h, &psi0, self.obs, p)?;
        let evolution = Evolution::prepare(&h_u, self.noise, self.backend, self.cfg.dt)?;
        let series = evolution.series(&psi_u, &obs_u, self.cfg.samples)?;
        self.map.insert(key, series.clone());
        Ok(series)
    }

    fn estimate(&mut self, key: SeriesKey, cutoff: f64) -> Result<EnergyEstimate> {
        let memo = (key.clone(), cutoff.to_bits());
        if let Some(est) = self.estimates.get(&memo) {
            return Ok(est.clone());
        }
        let series = match &key {
            SeriesKey::Rescaled(bits) => self.rescaled(f64::from_bits(*bits))?,
            SeriesKey::Reshaped(p) => {
                let p = p.clone();
                self.reshaped(&p)?
            }
        };
        let opts = EstimateOptions::pencil_with_cutoff(cutoff)?;
        let est = estimate_energy(&series, &opts)?;
        self.estimates.insert(memo, est.clone());
        Ok(est)
    }

    /// Memoized estimate for the H/c run.
    pub fn estimate_rescaled(&mut self, c: f64, cutoff: f64) -> Result<EnergyEstimate> {
        self.estimate(SeriesKey::Rescaled(c.to_bits()), cutoff)
    }

    /// Memoized estimate for a reshaped run.
    pub fn estimate_reshaped(&mut self, p: &PauliString, cutoff: f64) -> Result<EnergyEstimate> {
        self.estimate(SeriesKey::Reshaped(p.clone()), cutoff)
    }
}

fn estimate_constituent(label: &str, series: &TimeSeries, cutoff: f64) -> Result<EnergyEstimate> {
    let opts = EstimateOptions::pencil_with_cutoff(cutoff)
        .map_err(|e| Error::for_constituent(label, e))?;
    estimate_energy(series, &opts).map_err(|e| Error::for_constituent(label, e))
}

fn fold_diagnostics(diag: &mut MitigationDiagnostics, label: &str, est: &EnergyEstimate) {
    diag.decays.push((label.to_string(), est.mode.decay));
    diag.mode_counts.push((label.to_string(), est.diagnostics.retained_modes));
    for w in &est.diagnostics.warnings {
        diag.warnings.push(format!("{label}: {w}"));
    }
}

/// Plain spectroscopy, wrapped in the common result shape.
pub fn run_unmitigated(
    cache: &mut SeriesCache<'_>,
    cutoff: Option<f64>,
) -> Result<MitigatedEstimate> {
    let cutoff = cutoff.unwrap_or(CUTOFF_RESCALING);
    let est = cache
        .estimate_rescaled(1.0, cutoff)
        .map_err(|e| Error::for_constituent("c0", e))?;
    let mut diagnostics = MitigationDiagnostics::default();
    fold_diagnostics(&mut diagnostics, "c0", &est);
    Ok(MitigatedEstimate {
        strategy: StrategyKind::Unmitigated,
        variant: "none".into(),
        value: est.value,
        raw: vec![("c0".into(), est)],
        diagnostics,
    })
}

/// Reshape with every U in the realized set, estimate each run, average.
pub fn run_reshaping(
    cache: &mut SeriesCache<'_>,
    set: &ReshapeSet,
    cutoff: Option<f64>,
) -> Result<MitigatedEstimate> {
    let cutoff = cutoff.unwrap_or(CUTOFF_RESHAPING);
    let n = cache.qubits();
    let paulis = set.realize(n)?;
    let mut raw = Vec::with_capacity(paulis.len());
    for (i, p) in paulis.iter().enumerate() {
        let label = format!("U{i:04}:{p}");
        let est = cache
            .estimate_reshaped(p, cutoff)
            .map_err(|e| Error::for_constituent(&label, e))?;
        raw.push((label, est));
    }
    raw.sort_by(|a, b| a.0.cmp(&b.0));
    let value = raw.iter().map(|(_, e)| e.value).sum::<f64>() / raw.len() as f64;
    let mut diagnostics = MitigationDiagnostics::default();
    for (label, est) in &raw {
        fold_diagnostics(&mut diagnostics, label, est);
    }
    Ok(MitigatedEstimate {
        strategy: StrategyKind::Reshape,
        variant: set.label(),
        raw,
        value,
        diagnostics,
    })
}

/// First-order combination: e0 estimates E + b, e1 estimates E/c + b.
pub fn rescale_first(e0: f64, e1: f64, c: f64) -> Result<f64> {
    if !(c > 1.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rescaling factor must be > 1, got {c}"
        )));
    }
    Ok(c / (c - 1.0) * (e0 - e1))
}

/// Second-order combination, exact on the bias model
/// e_l = E/c_l + b₁ + c_l·b₂ with c₀ = 1.
pub fn rescale_second(e0: f64, e1: f64, e2: f64, c1: f64, c2: f64) -> Result<f64> {
    for c in [c1, c2] {
        if !(c > 1.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rescaling factor must be > 1, got {c}"
            )));
        }
    }
    if c1 == c2 {
        return Err(Error::InvalidParameter("rescaling factors must differ".into()));
    }
    let numerator = c1 * c2 * ((1.0 - c2) * (e1 - e0) + (c1 - 1.0) * (e2 - e0));
    Ok(numerator / ((c2 - c1) * (c1 - 1.0) * (c2 - 1.0)))
}

/// Run the original and rescaled experiments and combine the estimates.
pub fn run_rescaling(
    cache: &mut SeriesCache<'_>,
    rc: &RescaleConfig,
    order: RescaleOrder,
    cutoff: Option<f64>,
) -> Result<MitigatedEstimate> {
    let cutoff = cutoff.unwrap_or(CUTOFF_RESCALING);
    let mut factors = vec![("c0".to_string(), 1.0), ("c1".to_string(), rc.c1)];
    if order == RescaleOrder::Second {
        factors.push(("c2".to_string(), rc.require_c2()?));
    }
    let mut raw = Vec::with_capacity(factors.len());
    for (label, c) in &factors {
        let est = cache
            .estimate_rescaled(*c, cutoff)
            .map_err(|e| Error::for_constituent(label, e))?;
        raw.push((label.clone(), est));
    }
    raw.sort_by(|a, b| a.0.cmp(&b.0));
    let value = match order {
        RescaleOrder::First => rescale_first(raw[0].1.value, raw[1].1.value, rc.c1)?,
        RescaleOrder::Second => rescale_second(
            raw[0].1.value,
            raw[1].1.value,
            raw[2].1.value,
            rc.c1,
            rc.c2.expect("validated above"),
        )?,
    };
    let mut diagnostics = MitigationDiagnostics::default();
    for (label, est) in &raw {
        fold_diagnostics(&mut diagnostics, label, est);
    }
    Ok(MitigatedEstimate {
        strategy: match order {
            RescaleOrder::First => StrategyKind::RescaleFirst,
            RescaleOrder::Second => StrategyKind::RescaleSecond,
        },
        variant: match order {
            RescaleOrder::First => format!("c1={}", rc.c1),
            RescaleOrder::Second => format!("c1={};c2={}", rc.c1, rc.c2.unwrap()),
        },
        raw,
        value,
        diagnostics,
    })
}

/// Pointwise Richardson combination of matched-k series.
///
/// `series[0]` is the unscaled run; `series[l]` was taken with factor
/// `factors[l-1]` at time step c_l·ΔT, so the k-grids match.
pub fn richardson_series(series: &[&TimeSeries], factors: &[f64]) -> Result<TimeSeries> {
    if series.len() != factors.len() + 1 || !(1..=2).contains(&factors.len()) {
        return Err(Error::InvalidParameter(format!(
            "need 2 series + 1 factor or 3 series + 2 factors, got {} series and {} factors",
            series.len(),
            factors.len()
        )));
    }
    for c in factors {
        if !(*c > 1.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Richardson factor must be > 1, got {c}"
            )));
        }
    }
    let len = series[0].len();
    let dt = series[0].dt;
    for (l, s) in series.iter().enumerate() {
        if s.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "series {l} has {} samples, expected {len}",
                s.len()
            )));
        }
        let c = if l == 0 { 1.0 } else { factors[l - 1] };
        if (s.dt - c * dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidParameter(format!(
                "series {l} has step {} but factor {c} demands {}",
                s.dt,
                c * dt
            )));
        }
    }
    let combined: Vec<_> = match factors {
        [c1] => series[0]
            .samples
            .iter()
            .zip(&series[1].samples)
            .map(|(y0, y1)| (y0 * *c1 - y1) / (c1 - 1.0))
            .collect(),
        [c1, c2] => {
            if c1 == c2 {
                return Err(Error::InvalidParameter("Richardson factors must differ".into()));
            }
            let w0 = c1 * c2 / ((c1 - 1.0) * (c2 - 1.0));
            let w1 = c2 / ((c1 - c2) * (c1 - 1.0));
            let w2 = -c1 / ((c2 - 1.0) * (c1 - c2));
            series[0]
                .samples
                .iter()
                .zip(&series[1].samples)
                .zip(&series[2].samples)
                .map(|((y0, y1), y2)| y0 * w0 + y1 * w1 + y2 * w2)
                .collect()
        }
        _ => unreachable!(),
    };
    TimeSeries::new(dt, combined)
}

/// Richardson baseline: combine the same constituent series as rescaling
/// pointwise, then estimate once from the mitigated series.
pub fn run_richardson(
    cache: &mut SeriesCache<'_>,
    rc: &RescaleConfig,
    cutoff: Option<f64>,
) -> Result<MitigatedEstimate> {
    let cutoff = cutoff.unwrap_or(CUTOFF_RESCALING);
    let mut factors = vec![rc.c1];
    if let Some(c2) = rc.c2 {
        factors.push(c2);
    }
    let mut constituents = vec![("c0".to_string(), cache.rescaled(1.0)?)];
    for (l, c) in factors.iter().enumerate() {
        constituents.push((format!("c{}", l + 1), cache.rescaled(*c)?));
    }
    let refs: Vec<&TimeSeries> = constituents.iter().map(|(_, s)| s).collect();
    let combined_series = richardson_series(&refs, &factors)?;

    let mut raw = Vec::with_capacity(constituents.len() + 1);
    for (l, (label, _)) in constituents.iter().enumerate() {
        let c = if l == 0 { 1.0 } else { factors[l - 1] };
        let est = cache
            .estimate_rescaled(c, cutoff)
            .map_err(|e| Error::for_constituent(label, e))?;
        raw.push((label.clone(), est));
    }
    let combined = estimate_constituent("combined", &combined_series, cutoff)?;
    let value = combined.value;
    raw.push(("combined".into(), combined));
    raw.sort_by(|a, b| a.0.cmp(&b.0));
    let mut diagnostics = MitigationDiagnostics::default();
    for (label, est) in &raw {
        fold_diagnostics(&mut diagnostics, label, est);
    }
    Ok(MitigatedEstimate {
        strategy: StrategyKind::Richardson,
        variant: match rc.c2 {
            Some(c2) => format!("c1={};c2={c2}", rc.c1),
            None => format!("c1={}", rc.c1),
        },
        raw,
        value,
        diagnostics,
    })
}

/// Mean over the set of Im⟨φ_a|U†D̃[U|φ_a⟩⟨φ_b|U†]U|φ_b⟩, computed directly
/// from the noise superoperator (no dynamics). The reshaping strategy is
/// unbiased at first order exactly when this vanishes.
pub fn twirled_bias_average(
    noise: &NoiseModel,
    phi_a: &CVector,
    phi_b: &CVector,
    set: &[PauliString],
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyModeList);
    }
    let s = noise_superoperator(noise);
    let mut total = 0.0;
    for p in set {
        let psi_a = conjugate_state(phi_a, p)?;
        let psi_b = conjugate_state(phi_b, p)?;
        let w = vec_col(&dyad(&psi_a, &psi_b));
        let sw = s.dot(&w);
        let element: crate::C64 = w.iter().zip(sw.iter()).map(|(a, b)| a.conj() * b).sum();
        total += element.im;
    }
    Ok(total / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::evolve_series;
    use crate::operators::{
        HamiltonianSpec, NoiseKind, build_hamiltonian, build_noise, diagonalize, pauli_matrix,
    };
    use crate::testing::{
        assert_close, max_diff, max_diff_vec, random_local_noise, random_orthonormal_pair,
    };
    use crate::{C64, CVector};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn all_pauli_strings(n: usize) -> Vec<PauliString> {
        let letters = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
        let mut out = Vec::with_capacity(4usize.pow(n as u32));
        for idx in 0..4usize.pow(n as u32) {
            let mut v = Vec::with_capacity(n);
            let mut rem = idx;
            for _ in 0..n {
                v.push(letters[rem % 4]);
                rem /= 4;
            }
            out.push(PauliString::new(v).unwrap());
        }
        out
    }

    fn single_qubit_z(nu_z: f64) -> DenseOperator {
        DenseOperator::new(array![
            [c(PI * nu_z, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(-PI * nu_z, 0.0)]
        ])
        .unwrap()
    }

    fn computational_pair() -> PairObservable {
        let e0 = CVector::from(vec![c(1., 0.), c(0., 0.)]);
        let e1 = CVector::from(vec![c(0., 0.), c(1., 0.)]);
        PairObservable::new(e0, e1).unwrap()
    }

    #[test]
    fn reshape_experiment_identity_is_noop() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 2, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let obs = PairObservable::from_spectrum(&spectrum, 0, 3).unwrap();
        let psi0 = obs.designed_initial_state();
        let p = PauliString::identity(2).unwrap();
        let (h2, psi2, obs2) = reshape_experiment(&h, &psi0, &obs, &p).unwrap();
        assert!(max_diff(h2.array(), h.array()) < 1e-15);
        assert!(psi2.iter().zip(psi0.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(max_diff(&obs2.matrix(), &obs.matrix()) < 1e-15);
    }

    #[test]
    fn reshape_experiment_flips_x_under_z() {
        let h = DenseOperator::new(pauli_matrix(&PauliString::parse("X").unwrap()).array().clone())
            .unwrap();
        let obs = computational_pair();
        let psi0 = obs.designed_initial_state();
        let z = PauliString::parse("Z").unwrap();
        let (h2, _, _) = reshape_experiment(&h, &psi0, &obs, &z).unwrap();
        assert!(max_diff(h2.array(), &h.array().mapv(|v| -v)) < 1e-15);
    }

    #[test]
    fn reshaped_noiseless_series_is_invariant() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 3, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let obs = PairObservable::from_spectrum(&spectrum, 0, 5).unwrap();
        let psi0 = obs.designed_initial_state();
        let cfg = SpectroscopyConfig::new(1e-4, 64).unwrap();
        let noise = NoiseModel::none(3);
        let base = evolve_series(&h, &noise, &psi0, &obs, &cfg, Backend::Spectral).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..3 {
            let p = PauliString::random(3, &mut rng);
            let (h2, psi2, obs2) = reshape_experiment(&h, &psi0, &obs, &p).unwrap();
            let s = evolve_series(&h2, &noise, &psi2, &obs2, &cfg, Backend::Spectral).unwrap();
            assert!(max_diff_vec(&base.samples, &s.samples) < 1e-10, "P = {p}");
        }
    }

    #[test]
    fn reshaping_mean_is_exact_when_noiseless() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 2, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let obs = PairObservable::from_spectrum(&spectrum, 0, 3).unwrap();
        let noise = NoiseModel::none(2);
        let cfg = SpectroscopyConfig::new(1e-3, 256).unwrap();
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        let out = run_reshaping(&mut cache, &ReshapeSet::TensorPower4, None).unwrap();
        let e_ba = spectrum.gap(0, 3);
        assert!((out.value - e_ba).abs() <= 1e-8 * e_ba.abs());
        assert_eq!(out.raw.len(), 4);
    }

    #[test]
    fn tensor_power_2_cancels_paper_default_bias_on_single_qubit() {
        let kappa = 1e-3;
        let h = single_qubit_z(1.0);
        let noise = build_noise(NoiseKind::PaperDefault, kappa, 0.0, 1).unwrap();
        let obs = computational_pair();
        let cfg = SpectroscopyConfig::new(1e-2, 400).unwrap();
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        let out = run_reshaping(&mut cache, &ReshapeSet::TensorPower2, None).unwrap();
        let e_ba = -2.0 * PI;
        // biases are exactly ±κ in this closed-form model
        let biases: Vec<f64> = out.raw.iter().map(|(_, e)| e.value - e_ba).collect();
        assert_close(biases[0], kappa, 1e-8, "identity-run bias +κ");
        assert_close(biases[1], -kappa, 1e-8, "X-run bias −κ");
        assert_close(out.value, e_ba, 1e-8, "mean is exact");
    }

    #[test]
    fn full_pauli_average_cancels_random_noise_on_ring() {
        // oracle: the first-order bias average over all 16 strings vanishes
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 2, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let (a, b) = (0usize, 3usize);
        let set = all_pauli_strings(2);
        let noise = random_local_noise(2, 0.05, 2, &mut rng);
        let bias = twirled_bias_average(
            &noise,
            &spectrum.vector(a).to_owned(),
            &spectrum.vector(b).to_owned(),
            &set,
        )
        .unwrap();
        assert!(bias.abs() < 1e-10, "oracle average {bias}");

        // pipeline residual shrinks quadratically when the noise is scaled down
        let obs = PairObservable::from_spectrum(&spectrum, a, b).unwrap();
        let cfg = SpectroscopyConfig::new(1e-4, 800).unwrap();
        let e_ba = spectrum.gap(a, b);
        let mut residuals = Vec::new();
        for scale in [1.0f64, 0.1] {
            let scaled = NoiseModel::custom(
                noise.lindblads().iter().map(|l| l.scaled(scale.sqrt())).collect(),
                noise.h_err().scaled(scale),
                noise.kappa() * scale,
                noise.beta(),
            )
            .unwrap();
            let mut cache = SeriesCache::new(&h, &scaled, &obs, cfg, Backend::Spectral).unwrap();
            let out = run_reshaping(&mut cache, &ReshapeSet::Explicit(set.clone()), None).unwrap();
            residuals.push((out.value - e_ba).abs());
        }
        assert!(
            residuals[1] <= residuals[0] / 30.0,
            "expected ~quadratic shrink, got {residuals:?}"
        );
    }

    #[test]
    fn rescale_first_algebra() {
        assert_close(rescale_first(1.1, 0.6, 2.0).unwrap(), 1.0, 1e-15, "toy bias model");
        for c in [1.5, 2.0, 7.0] {
            let e = -2.3;
            assert_close(rescale_first(e, e / c, c).unwrap(), e, 1e-12, "zero bias");
        }
        assert!(rescale_first(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn rescale_second_algebra() {
        let (e, b1, b2) = (1.0, 0.1, 0.01);
        let (c1, c2) = (2.0, 1.5);
        let e0 = e + b1 + b2;
        let e1 = e / c1 + b1 + c1 * b2;
        let e2 = e / c2 + b1 + c2 * b2;
        assert_close(rescale_second(e0, e1, e2, c1, c2).unwrap(), 1.0, 1e-12, "quadratic model");
        assert_close(rescale_second(e0, e2, e1, c2, c1).unwrap(), 1.0, 1e-12, "swap symmetry");
        assert_close(rescale_second(e, e / c1, e / c2, c1, c2).unwrap(), e, 1e-12, "no bias");
        assert!(rescale_second(1.0, 1.0, 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn randomized_bias_models_are_cancelled_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        for _ in 0..1000 {
            let e: f64 = rng.random_range(-10.0..10.0);
            let b1: f64 = rng.random_range(-1.0..1.0);
            let b2: f64 = rng.random_range(-0.5..0.5);
            let c1: f64 = rng.random_range(1.1..8.0);
            let c2: f64 = rng.random_range(1.1..8.0);
            if (c1 - c2).abs() < 1e-3 {
                continue;
            }
            let first = rescale_first(e + b1, e / c1 + b1, c1).unwrap();
            assert!((first - e).abs() <= 1e-12 * (1.0 + e.abs()), "first order");
            let e0 = e + b1 + b2;
            let e1 = e / c1 + b1 + c1 * b2;
            let e2 = e / c2 + b1 + c2 * b2;
            let second = rescale_second(e0, e1, e2, c1, c2).unwrap();
            assert!(
                (second - e).abs() <= 1e-10 * (1.0 + e.abs()),
                "second order: {second} vs {e}"
            );
        }
    }

    #[test]
    fn rescale_config_caps_large_factors() {
        assert!(RescaleConfig::new(25.0, None).is_err());
        assert!(RescaleConfig::new(2.0, Some(2.0)).is_err());
        assert!(RescaleConfig::new(2.0, Some(1.5)).is_ok());
    }

    #[test]
    fn run_rescaling_noiseless_fixed_point() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 2, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let obs = PairObservable::from_spectrum(&spectrum, 1, 3).unwrap();
        let noise = NoiseModel::none(2);
        let cfg = SpectroscopyConfig::new(1e-3, 512).unwrap();
        let rc = RescaleConfig::new(2.0, Some(1.5)).unwrap();
        let e_ba = spectrum.gap(1, 3);
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        for order in [RescaleOrder::First, RescaleOrder::Second] {
            let out = run_rescaling(&mut cache, &rc, order, None).unwrap();
            assert!((out.value - e_ba).abs() <= 1e-8 * e_ba.abs(), "{order:?}");
        }
    }

    #[test]
    fn run_rescaling_single_qubit_closed_form_is_exact_at_first_order() {
        // the closed-form bias is c-independent, so EM1 lands exactly on E_ba
        let kappa = 0.05;
        let beta = 0.01;
        let h = single_qubit_z(1.0);
        let noise = build_noise(NoiseKind::PaperDefault, kappa, beta, 1).unwrap();
        let obs = computational_pair();
        let cfg = SpectroscopyConfig::new(1e-2, 400).unwrap();
        let rc = RescaleConfig::new(2.0, None).unwrap();
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        let out = run_rescaling(&mut cache, &rc, RescaleOrder::First, None).unwrap();
        assert_close(out.value, -2.0 * PI, 1e-8, "EM1 on closed-form model");
    }

    #[test]
    fn rescaling_orders_improve_on_ring() {
        let h = build_hamiltonian(&HamiltonianSpec::Ring { n: 3, nu_z: 4.0, nu_x: 1.0, j: 4.0 })
            .unwrap();
        let spectrum = diagonalize(&h).unwrap();
        let (a, b) = (1usize, 6usize);
        let obs = PairObservable::from_spectrum(&spectrum, a, b).unwrap();
        let e_ba = spectrum.gap(a, b);
        let cfg = SpectroscopyConfig::new(1e-4, 2000).unwrap();
        let rc = RescaleConfig::new(2.0, Some(1.5)).unwrap();
        for gamma in [1e-3, 1e-2] {
            let noise = build_noise(NoiseKind::PaperDefault, gamma * e_ba.abs(), 0.01, 3).unwrap();
            let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
            let unmit = run_unmitigated(&mut cache, None).unwrap();
            let em1 = run_rescaling(&mut cache, &rc, RescaleOrder::First, None).unwrap();
            let em2 = run_rescaling(&mut cache, &rc, RescaleOrder::Second, None).unwrap();
            let r0 = (unmit.value - e_ba).abs();
            let r1 = (em1.value - e_ba).abs();
            let r2 = (em2.value - e_ba).abs();
            assert!(r2 < r1 && r1 < r0, "γ={gamma}: {r2:.3e} < {r1:.3e} < {r0:.3e} violated");
        }
    }

    #[test]
    fn richardson_series_cancellations() {
        let dt = 0.1;
        let c1 = 2.0;
        let c2 = 1.5;
        let len = 32;
        let a: Vec<C64> = (0..len).map(|k| c(0.3 + k as f64 * 0.01, -0.2)).collect();
        let b: Vec<C64> = (0..len).map(|k| c(-0.1, 0.05 * k as f64)).collect();
        let d: Vec<C64> = (0..len).map(|k| c(0.02 * k as f64, 0.01)).collect();

        // linear model: O_l = a + c_l b
        let s0 = TimeSeries::new(dt, (0..len).map(|k| a[k] + b[k]).collect()).unwrap();
        let s1 = TimeSeries::new(c1 * dt, (0..len).map(|k| a[k] + b[k] * c1).collect()).unwrap();
        let combined = richardson_series(&[&s0, &s1], &[c1]).unwrap();
        assert!(max_diff_vec(&combined.samples, &a) < 1e-13);

        // quadratic model needs both factors
        let q = |cl: f64| -> Vec<C64> {
            (0..len).map(|k| a[k] + b[k] * cl + d[k] * cl * cl).collect()
        };
        let s0 = TimeSeries::new(dt, q(1.0)).unwrap();
        let s1 = TimeSeries::new(c1 * dt, q(c1)).unwrap();
        let s2 = TimeSeries::new(c2 * dt, q(c2)).unwrap();
        let combined = richardson_series(&[&s0, &s1, &s2], &[c1, c2]).unwrap();
        assert!(max_diff_vec(&combined.samples, &a) < 1e-12);

        // identical noiseless series pass through unchanged
        let s0 = TimeSeries::new(dt, a.clone()).unwrap();
        let s1 = TimeSeries::new(c1 * dt, a.clone()).unwrap();
        let combined = richardson_series(&[&s0, &s1], &[c1]).unwrap();
        assert!(max_diff_vec(&combined.samples, &a) < 1e-13);

        // length mismatch
        let short = TimeSeries::new(c1 * dt, a[..len - 1].to_vec()).unwrap();
        assert!(richardson_series(&[&s0, &short], &[c1]).is_err());
    }

    #[test]
    fn run_richardson_noiseless_and_biased() {
        let h = single_qubit_z(1.0);
        let obs = computational_pair();
        let cfg = SpectroscopyConfig::new(1e-2, 400).unwrap();
        let rc = RescaleConfig::new(2.0, None).unwrap();
        let e_ba = -2.0 * PI;

        let noise = build_noise(NoiseKind::PaperDefault, 0.0, 0.0, 1).unwrap();
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        let out = run_richardson(&mut cache, &rc, None).unwrap();
        assert!((out.value - e_ba).abs() <= 1e-8 * e_ba.abs());

        // noise enters each sample multiplicatively, so Richardson keeps a
        // first-order residual in this closed-form model
        let kappa = 0.05;
        let noise = build_noise(NoiseKind::PaperDefault, kappa, 0.01, 1).unwrap();
        let mut cache = SeriesCache::new(&h, &noise, &obs, cfg, Backend::Spectral).unwrap();
        let out = run_richardson(&mut cache, &rc, None).unwrap();
        // far above the numerics floor; first-order rescaling is exact here
        assert!(
            (out.value - e_ba).abs() > 1e-4,
            "Richardson residual unexpectedly small: {}",
            (out.value - e_ba).abs()
        );
        assert_eq!(out.raw.len(), 3); // c0, c1, combined
        assert!(out.raw.iter().any(|(l, _)| l == "combined"));
    }

    #[test]
    fn twirling_identity_full_pauli_group() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for n in [2usize, 3] {
            let set = all_pauli_strings(n);
            for _ in 0..5 {
                let noise = random_local_noise(n, 0.1, 2, &mut rng);
                let (phi_a, phi_b) = random_orthonormal_pair(1 << n, &mut rng);
                let bias = twirled_bias_average(&noise, &phi_a, &phi_b, &set).unwrap();
                assert!(bias.abs() < 1e-10, "n={n}: {bias}");
            }
        }
    }

    #[test]
    fn twirling_identity_tensor_power_4_for_local_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        for n in [2usize, 3] {
            let set = ReshapeSet::TensorPower4.realize(n).unwrap();
            for _ in 0..5 {
                let noise = random_local_noise(n, 0.1, 3, &mut rng);
                let (phi_a, phi_b) = random_orthonormal_pair(1 << n, &mut rng);
                let bias = twirled_bias_average(&noise, &phi_a, &phi_b, &set).unwrap();
                assert!(bias.abs() < 1e-10, "n={n}: {bias}");
            }
        }
    }

    #[test]
    fn twirling_identity_tensor_power_2_for_t1_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let n = 3usize;
        let set = ReshapeSet::TensorPower2.realize(n).unwrap();
        for _ in 0..5 {
            let kappa = rng.random_range(0.01..0.2);
            let beta = rng.random_range(-0.5..0.5);
            let noise = build_noise(NoiseKind::AmplitudeDamping, kappa, beta, n).unwrap();
            let (phi_a, phi_b) = random_orthonormal_pair(1 << n, &mut rng);
            let bias = twirled_bias_average(&noise, &phi_a, &phi_b, &set).unwrap();
            assert!(bias.abs() < 1e-10, "{bias}");
        }
    }

    #[test]
    fn sampled_reshape_set_is_seed_deterministic() {
        let set = ReshapeSet::FullPauliSample { count: 8, seed: 42 };
        let a = set.realize(3).unwrap();
        let b = set.realize(3).unwrap();
        assert_eq!(a, b);
        let other = ReshapeSet::FullPauliSample { count: 8, seed: 43 };
        assert_ne!(a, other.realize(3).unwrap());
    }
}
