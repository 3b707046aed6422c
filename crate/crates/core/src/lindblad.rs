//! The Liouvillian superoperator, noisy time evolution and
//! perturbation-theory oracles.
//!
//! Vectorization is column-stacking throughout: `vec(AρB) = (Bᵀ⊗A)vec(ρ)`,
//! so every superoperator formula here is bit-reproducible.

use crate::linalg::{adjoint, dyad, expm, frobenius, kron, norm2, unvec_col, vec_col};
use crate::operators::{DenseOperator, NoiseModel, PauliString, Spectrum, conjugate_state, diagonalize};
use crate::spectral::DampedMode;
use crate::{C64, CMatrix, CVector, Error, Result};
use ndarray_linalg::solve::LUFactorized;
use ndarray_linalg::{Eig, Factorize, Solve};

/// Relative accuracy contract for generated series.
pub const SERIES_RTOL: f64 = 1e-9;

/// Default guard for near-degenerate denominators in second-order
/// perturbation theory, as a fraction of max|E|.
pub const GAP_THRESHOLD_FACTOR: f64 = 1e-8;

const I_UNIT: C64 = C64::new(0.0, 1.0);

/// The designed rank-one observable O = scale·|φ_b⟩⟨φ_a| together with the
/// pair states it is built from.
#[derive(Debug, Clone)]
pub struct PairObservable {
    a_state: CVector,
    b_state: CVector,
    scale: f64,
}

impl PairObservable {
    pub fn new(a_state: CVector, b_state: CVector) -> Result<Self> {
        if a_state.len() != b_state.len() {
            return Err(Error::DimensionMismatch(format!(
                "pair states have dims {} vs {}",
                a_state.len(),
                b_state.len()
            )));
        }
        for (label, v) in [("a", &a_state), ("b", &b_state)] {
            let n = norm2(v);
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "pair state {label} is not unit norm (|ψ| = {n})"
                )));
            }
        }
        Ok(Self { a_state, b_state, scale: 2.0 })
    }

    /// Observable for the eigenpair (a, b) of a diagonalized Hamiltonian.
    pub fn from_spectrum(spectrum: &Spectrum, a: usize, b: usize) -> Result<Self> {
        if a >= spectrum.dim() || b >= spectrum.dim() {
            return Err(Error::InvalidParameter(format!(
                "pair ({a}, {b}) out of range for dim {}",
                spectrum.dim()
            )));
        }
        if a == b {
            return Err(Error::InvalidParameter("pair states must differ".into()));
        }
        Self::new(spectrum.vector(a).to_owned(), spectrum.vector(b).to_owned())
    }

    pub fn a_state(&self) -> &CVector {
        &self.a_state
    }

    pub fn b_state(&self) -> &CVector {
        &self.b_state
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.a_state.len()
    }

    /// The protocol's initial state (|φ_a⟩ + |φ_b⟩)/√2.
    pub fn designed_initial_state(&self) -> CVector {
        let mut v = &self.a_state + &self.b_state;
        let n = norm2(&v);
        v.mapv_inplace(|z| z / n);
        v
    }

    /// Dense realization scale·|φ_b⟩⟨φ_a|.
    pub fn matrix(&self) -> CMatrix {
        dyad(&self.b_state, &self.a_state).mapv(|z| z * self.scale)
    }

    /// Tr(O ρ) = scale·⟨φ_a|ρ|φ_b⟩.
    pub fn expectation(&self, rho: &CMatrix) -> C64 {
        let rb = rho.dot(&self.b_state);
        let val: C64 = self
            .a_state
            .iter()
            .zip(rb.iter())
            .map(|(a, r)| a.conj() * r)
            .sum();
        val * self.scale
    }

    /// Both states conjugated by a Pauli string.
    pub fn conjugated(&self, p: &PauliString) -> Result<Self> {
        Ok(Self {
            a_state: conjugate_state(&self.a_state, p)?,
            b_state: conjugate_state(&self.b_state, p)?,
            scale: self.scale,
        })
    }
}

/// Sampling grid for one spectroscopy run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectroscopyConfig {
    pub dt: f64,
    pub samples: usize,
}

impl SpectroscopyConfig {
    pub fn new(dt: f64, samples: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        if samples < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 samples, got {samples}"
            )));
        }
        Ok(Self { dt, samples })
    }

    /// True when ΔT·maxgap ≥ π, i.e. frequency retrieval can alias.
    pub fn aliases(&self, max_gap: f64) -> bool {
        self.dt * max_gap >= std::f64::consts::PI
    }
}

/// Complex samples y_k = ⟨O⟩(kΔT).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub dt: f64,
    pub samples: Vec<C64>,
}

impl TimeSeries {
    pub fn new(dt: f64, samples: Vec<C64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a time series needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidOperator("non-finite sample".into()));
        }
        Ok(Self { dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm2(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// −i(I⊗M − Mᵀ⊗I), the superoperator of −i[M, ·].
fn commutator_superop(m: &CMatrix) -> CMatrix {
    let dim = m.nrows();
    let eye = CMatrix::eye(dim);
    let left = kron(&eye, m);
    let right = kron(&m.t().to_owned(), &eye);
    (left - right).mapv(|z| z * (-I_UNIT))
}

/// Superoperator of the noise perturbation D̃[·] = −i[H^(1),·] + 𝒟[·].
pub fn noise_superoperator(noise: &NoiseModel) -> CMatrix {
    let dim = noise.dim();
    let eye = CMatrix::eye(dim);
    let mut s = commutator_superop(noise.h_err().array());
    for l in noise.lindblads() {
        let lm = l.array();
        let ldag_l = adjoint(lm).dot(lm);
        s = s + kron(&lm.mapv(|z| z.conj()), lm);
        s = s - kron(&eye, &ldag_l).mapv(|z| z * 0.5);
        s = s - kron(&ldag_l.t().to_owned(), &eye).mapv(|z| z * 0.5);
    }
    s
}

/// Full Liouvillian 𝓛 = −i[H + H^(1), ·] + 𝒟[·] as a dim²×dim² matrix.
pub fn liouvillian_matrix(h: &DenseOperator, noise: &NoiseModel) -> Result<CMatrix> {
    if h.dim() != noise.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Hamiltonian dim {} vs noise dim {}",
            h.dim(),
            noise.dim()
        )));
    }
    Ok(commutator_superop(h.array()) + noise_superoperator(noise))
}

/// Right-eigendecomposition of a Liouvillian, with an LU handle for
/// projecting initial conditions onto the modes.
pub struct LiouvillianEigensystem {
    values: CVector,
    modes: CMatrix,
    lu: LUFactorized<ndarray::OwnedRepr<C64>>,
}

impl LiouvillianEigensystem {
    pub fn values(&self) -> &CVector {
        &self.values
    }

    pub fn modes(&self) -> &CMatrix {
        &self.modes
    }

    /// Coefficients c with modes·c = v0.
    pub fn project(&self, v0: &CVector) -> Result<CVector> {
        Ok(self.lu.solve(v0)?)
    }

    /// ‖modes·c − v0‖₂ / ‖v0‖₂ for a projection already computed.
    pub fn projection_residual(&self, v0: &CVector, coeffs: &CVector) -> f64 {
        let recon = self.modes.dot(coeffs);
        let diff = &recon - v0;
        norm2(&diff) / norm2(v0).max(f64::MIN_POSITIVE)
    }

    /// Frobenius residual ‖𝓛V − VΛ‖ relative to ‖𝓛‖.
    pub fn residual(&self, l: &CMatrix) -> f64 {
        let lv = l.dot(&self.modes);
        let mut vl = self.modes.clone();
        for (j, lam) in self.values.iter().enumerate() {
            vl.column_mut(j).mapv_inplace(|z| z * lam);
        }
        frobenius(&(&lv - &vl)) / frobenius(l).max(f64::MIN_POSITIVE)
    }
}

pub fn liouvillian_eigensystem(l: &CMatrix) -> Result<LiouvillianEigensystem> {
    let (r, c) = l.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "Liouvillian must be square, got {r}x{c}"
        )));
    }
    let (values, modes) = l.eig()?;
    let lu = modes.factorize()?;
    Ok(LiouvillianEigensystem { values, modes, lu })
}

/// Series generation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Precompute exp(𝓛ΔT) once, then iterate matrix–vector products.
    Stepper,
    /// Full eigendecomposition of 𝓛; one projection per series, then
    /// O(dim²·L) scalar powers.
    #[default]
    Spectral,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stepper" => Ok(Backend::Stepper),
            "spectral" => Ok(Backend::Spectral),
            other => Err(Error::InvalidParameter(format!(
                "unknown backend '{other}' (expected stepper | spectral)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Backend::Stepper => "stepper",
            Backend::Spectral => "spectral",
        }
    }
}

enum EvolutionKind {
    /// Noiseless evolution through the Hamiltonian eigenbasis. This is the
    /// exact Liouvillian eigendecomposition of −i[H,·], built stably from
    /// zheev instead of running zgeev on a massively degenerate matrix.
    Closed { spectrum: Spectrum },
    Spectral { eigensystem: LiouvillianEigensystem },
    Stepper { propagator: CMatrix },
}

/// Precomputed engine artifact for one (H, noise, backend, ΔT) combination.
/// Immutable and shareable across concurrent series evaluations.
pub struct Evolution {
    dim: usize,
    dt: f64,
    kind: EvolutionKind,
}

impl Evolution {
    pub fn prepare(
        h: &DenseOperator,
        noise: &NoiseModel,
        backend: Backend,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        if h.dim() != noise.dim() {
            return Err(Error::DimensionMismatch(format!(
                "Hamiltonian dim {} vs noise dim {}",
                h.dim(),
                noise.dim()
            )));
        }
        let dim = h.dim();
        let kind = match backend {
            Backend::Spectral if noise.is_trivial() => EvolutionKind::Closed {
                spectrum: diagonalize(h)?,
            },
            Backend::Spectral => {
                let l = liouvillian_matrix(h, noise)?;
                EvolutionKind::Spectral {
                    eigensystem: liouvillian_eigensystem(&l)?,
                }
            }
            Backend::Stepper => {
                let l = liouvillian_matrix(h, noise)?;
                let scaled = l.mapv(|z| z * dt);
                EvolutionKind::Stepper { propagator: expm(&scaled)? }
            }
        };
        Ok(Self { dim, dt, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn check_state(&self, psi0: &CVector) -> Result<()> {
        if psi0.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} vs system dim {}",
                psi0.len(),
                self.dim
            )));
        }
        let n = norm2(psi0);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "initial state is not unit norm (|ψ| = {n})"
            )));
        }
        Ok(())
    }

    /// Generate samples y_k = Tr(O ρ(kΔT)), k = 0..L−1, from ρ(0) = |ψ₀⟩⟨ψ₀|.
    pub fn series(
        &self,
        psi0: &CVector,
        obs: &PairObservable,
        samples: usize,
    ) -> Result<TimeSeries> {
        self.check_state(psi0)?;
        if obs.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "observable dim {} vs system dim {}",
                obs.dim(),
                self.dim
            )));
        }
        if samples < 2 {
            return Err(Error::InvalidParameter("need at least 2 samples".into()));
        }
        let out = match &self.kind {
            EvolutionKind::Closed { spectrum } => {
                self.closed_series(spectrum, psi0, obs, samples)
            }
            EvolutionKind::Spectral { eigensystem } => {
                self.spectral_series(eigensystem, psi0, obs, samples)?
            }
            EvolutionKind::Stepper { propagator } => {
                self.stepper_series(propagator, psi0, obs, samples)?
            }
        };
        TimeSeries::new(self.dt, out)
    }

    fn closed_series(
        &self,
        spectrum: &Spectrum,
        psi0: &CVector,
        obs: &PairObservable,
        samples: usize,
    ) -> Vec<C64> {
        let v = spectrum.vectors();
        let vh = adjoint(v);
        let alpha = vh.dot(obs.b_state()); // ⟨φ_m|b⟩
        let beta = vh.dot(obs.a_state()); // ⟨φ_p|a⟩
        let gamma = vh.dot(psi0); // ⟨φ_j|ψ₀⟩
        let dim = self.dim;
        // y_k = Σ_{p,m} Tr(O M_pm) c_pm e^{i(E_m−E_p)kΔT}
        //     = Σ_{p,m} scale·α_m β̄_p · γ_p γ̄_m · e^{i(E_m−E_p)kΔT}
        let mut amp = Vec::with_capacity(dim * dim);
        let mut phase = Vec::with_capacity(dim * dim);
        for p in 0..dim {
            for m in 0..dim {
                let g = obs.scale() * alpha[m] * beta[p].conj() * gamma[p] * gamma[m].conj();
                if g.norm_sqr() == 0.0 {
                    continue;
                }
                amp.push(g);
                let w = (spectrum.energy(m) - spectrum.energy(p)) * self.dt;
                phase.push(C64::from_polar(1.0, w));
            }
        }
        power_sum_series(&amp, &phase, samples)
    }

    fn spectral_series(
        &self,
        eig: &LiouvillianEigensystem,
        psi0: &CVector,
        obs: &PairObservable,
        samples: usize,
    ) -> Result<Vec<C64>> {
        let rho0 = dyad(psi0, psi0);
        let v0 = vec_col(&rho0);
        let coeffs = eig.project(&v0)?;
        let achieved = eig.projection_residual(&v0, &coeffs);
        if achieved > SERIES_RTOL {
            return Err(Error::ToleranceNotMet { achieved, required: SERIES_RTOL });
        }
        // Tr(Oρ) = vec(O†)† vec(ρ); fold the observable row into the modes.
        let w = vec_col(&adjoint(&obs.matrix()));
        let wv = w.mapv(|z| z.conj()); // conjugate once, then plain dot below
        let overlaps = wv.dot(eig.modes());
        let amp: Vec<C64> = overlaps
            .iter()
            .zip(coeffs.iter())
            .map(|(o, c)| o * c)
            .collect();
        let steps: Vec<C64> = eig
            .values()
            .iter()
            .map(|lam| (lam * self.dt).exp())
            .collect();
        Ok(power_sum_series(&amp, &steps, samples))
    }

    fn stepper_series(
        &self,
        propagator: &CMatrix,
        psi0: &CVector,
        obs: &PairObservable,
        samples: usize,
    ) -> Result<Vec<C64>> {
        let rho0 = dyad(psi0, psi0);
        let mut v = vec_col(&rho0);
        let w = vec_col(&adjoint(&obs.matrix())).mapv(|z| z.conj());
        let mut out = Vec::with_capacity(samples);
        for k in 0..samples {
            out.push(w.dot(&v));
            if k + 1 < samples {
                v = propagator.dot(&v);
            }
        }
        // Trace preservation over the whole run is the accumulated-error proxy.
        let trace: C64 = (0..self.dim).map(|i| v[i * self.dim + i]).sum();
        let achieved = (trace - C64::new(1.0, 0.0)).norm();
        if achieved > SERIES_RTOL {
            return Err(Error::ToleranceNotMet { achieved, required: SERIES_RTOL });
        }
        Ok(out)
    }

    /// Density matrix after `step` time steps, for physicality checks.
    pub fn density(&self, psi0: &CVector, step: usize) -> Result<CMatrix> {
        self.check_state(psi0)?;
        let rho0 = dyad(psi0, psi0);
        match &self.kind {
            EvolutionKind::Closed { spectrum } => {
                let v = spectrum.vectors();
                let vh = adjoint(v);
                let t = self.dt * step as f64;
                let mut u = v.clone();
                for (j, &e) in spectrum.energies().iter().enumerate() {
                    let f = C64::from_polar(1.0, -e * t);
                    u.column_mut(j).mapv_inplace(|z| z * f);
                }
                let u = u.dot(&vh);
                Ok(u.dot(&rho0).dot(&adjoint(&u)))
            }
            EvolutionKind::Spectral { eigensystem } => {
                let v0 = vec_col(&rho0);
                let coeffs = eigensystem.project(&v0)?;
                let t = self.dt * step as f64;
                let mut scaled = coeffs;
                for (c, lam) in scaled.iter_mut().zip(eigensystem.values().iter()) {
                    *c *= (lam * t).exp();
                }
                let v = eigensystem.modes().dot(&scaled);
                Ok(unvec_col(&v, self.dim))
            }
            EvolutionKind::Stepper { propagator } => {
                let mut v = vec_col(&rho0);
                for _ in 0..step {
                    v = propagator.dot(&v);
                }
                Ok(unvec_col(&v, self.dim))
            }
        }
    }
}

fn power_sum_series(amp: &[C64], steps: &[C64], samples: usize) -> Vec<C64> {
    let mut powers = vec![C64::new(1.0, 0.0); amp.len()];
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let y: C64 = amp.iter().zip(powers.iter()).map(|(a, p)| a * p).sum();
        out.push(y);
        for (p, z) in powers.iter_mut().zip(steps.iter()) {
            *p *= z;
        }
    }
    out
}

/// One-call convenience wrapper over [`Evolution`].
pub fn evolve_series(
    h: &DenseOperator,
    noise: &NoiseModel,
    psi0: &CVector,
    obs: &PairObservable,
    cfg: &SpectroscopyConfig,
    backend: Backend,
) -> Result<TimeSeries> {
    Evolution::prepare(h, noise, backend, cfg.dt)?.series(psi0, obs, cfg.samples)
}

/// First- and second-order perturbative corrections to the Liouvillian
/// eigenvalue of the (a, b) dyad.
#[derive(Debug, Clone)]
pub struct PerturbativePrediction {
    /// i·E_ba.
    pub lambda0: C64,
    /// ⟨φ_a|D̃[|φ_a⟩⟨φ_b|]|φ_b⟩.
    pub lambda1: C64,
    /// Second-order sum over spectator dyads.
    pub lambda2: C64,
    /// Predicted per-step decay e^{Re(λ₁)ΔT}.
    pub r_ab: f64,
    /// Predicted per-step phase bias Im(λ₁)ΔT.
    pub phase_bias: f64,
    /// Spectator terms dropped by the degenerate-denominator guard.
    pub excluded_terms: usize,
    /// Largest |numerator| among dropped terms.
    pub excluded_weight: f64,
}

impl PerturbativePrediction {
    /// True when the guard dropped terms that carry real weight relative to
    /// the retained sum.
    pub fn has_significant_exclusions(&self) -> bool {
        self.excluded_terms > 0 && self.excluded_weight > 1e-10 * self.lambda2.norm().max(1e-300)
    }
}

pub fn perturbative_prediction(
    spectrum: &Spectrum,
    noise: &NoiseModel,
    a: usize,
    b: usize,
    dt: f64,
) -> Result<PerturbativePrediction> {
    let threshold = GAP_THRESHOLD_FACTOR * spectrum.max_abs_energy();
    perturbative_prediction_with_threshold(spectrum, noise, a, b, dt, threshold)
}

pub fn perturbative_prediction_with_threshold(
    spectrum: &Spectrum,
    noise: &NoiseModel,
    a: usize,
    b: usize,
    dt: f64,
    gap_threshold: f64,
) -> Result<PerturbativePrediction> {
    let dim = spectrum.dim();
    if a == b {
        return Err(Error::InvalidParameter("need a ≠ b".into()));
    }
    if a >= dim || b >= dim {
        return Err(Error::InvalidParameter(format!(
            "pair ({a}, {b}) out of range for dim {dim}"
        )));
    }
    if noise.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "noise dim {} vs spectrum dim {dim}",
            noise.dim()
        )));
    }
    let e_ba = spectrum.gap(a, b);
    let lambda0 = I_UNIT * e_ba;
    if noise.is_trivial() {
        return Ok(PerturbativePrediction {
            lambda0,
            lambda1: C64::new(0.0, 0.0),
            lambda2: C64::new(0.0, 0.0),
            r_ab: 1.0,
            phase_bias: 0.0,
            excluded_terms: 0,
            excluded_weight: 0.0,
        });
    }

    let s = noise_superoperator(noise);
    let phi_a = spectrum.vector(a).to_owned();
    let phi_b = spectrum.vector(b).to_owned();
    let w = vec_col(&dyad(&phi_a, &phi_b));
    // t_{pm} = ⟨φ_a|D̃[|φ_p⟩⟨φ_m|]|φ_b⟩ for all (p, m) at once:
    // t = conj(V† · unvec(S†w) · V).
    let q = adjoint(&s).dot(&w);
    let qm = unvec_col(&q, dim);
    let v = spectrum.vectors();
    let t = adjoint(v).dot(&qm).dot(v).mapv(|z| z.conj());

    let lambda1 = t[(a, b)];
    let mut lambda2 = C64::new(0.0, 0.0);
    let mut excluded_terms = 0usize;
    let mut excluded_weight = 0.0f64;
    for p in 0..dim {
        for m in 0..dim {
            if p == a && m == b {
                continue;
            }
            let e_mp = spectrum.gap(p, m);
            let denom_gap = e_ba - e_mp;
            let numerator = t[(p, m)].conj() * t[(p, m)];
            if denom_gap.abs() < gap_threshold {
                excluded_terms += 1;
                excluded_weight = excluded_weight.max(numerator.norm());
                continue;
            }
            lambda2 += numerator / (I_UNIT * denom_gap);
        }
    }

    Ok(PerturbativePrediction {
        lambda0,
        lambda1,
        lambda2,
        r_ab: (lambda1.re * dt).exp(),
        phase_bias: lambda1.im * dt,
        excluded_terms,
        excluded_weight,
    })
}

/// Synthesize y_k = Σ_j C_j r_j^k e^{iω_j k}.
pub fn synth_series(modes: &[DampedMode], dt: f64, samples: usize) -> Result<TimeSeries> {
    for m in modes {
        if m.decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mode decay must be >= 0, got {}",
                m.decay
            )));
        }
    }
    let amp: Vec<C64> = modes.iter().map(|m| m.amplitude).collect();
    let steps: Vec<C64> = modes.iter().map(|m| m.pole()).collect();
    TimeSeries::new(dt, power_sum_series(&amp, &steps, samples))
}
