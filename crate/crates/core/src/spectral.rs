//! Damped-mode retrieval from time series: matrix pencil (primary), DFT
//! coarse peaks, Vandermonde amplitude fitting and joint least-squares
//! refinement.

use crate::lindblad::{TimeSeries, synth_series};
use crate::{C64, CMatrix, CVector, Error, Result};
use ndarray::prelude::*;
use ndarray_linalg::{Eig, Factorize, JobSvd, LeastSquaresSvd, QR, SVDDC, Solve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;

/// Default singular-value cutoff for reshaping runs.
pub const CUTOFF_RESHAPING: f64 = 1e-10;
/// Default singular-value cutoff for rescaling (and Richardson) runs.
pub const CUTOFF_RESCALING: f64 = 1e-2;

/// One term C·r^k·e^{iωk} of the damped-oscillation signal model.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedMode {
    pub amplitude: C64,
    /// Per-step magnitude ratio r ≥ 0.
    pub decay: f64,
    /// Per-step phase ω ∈ (−π, π].
    pub phase: f64,
}

impl DampedMode {
    /// The mode's pole z = r·e^{iω}.
    pub fn pole(&self) -> C64 {
        C64::from_polar(self.decay, self.phase)
    }

    pub fn from_pole(amplitude: C64, pole: C64) -> Self {
        DampedMode {
            amplitude,
            decay: pole.norm(),
            phase: wrap_phase(pole.arg()),
        }
    }
}

/// Map an angle into (−π, π].
fn wrap_phase(w: f64) -> f64 {
    let mut w = w % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Deterministic dominance order: larger |C| first, ties by smaller |ω|,
/// then larger r, then smaller ω.
fn mode_order(a: &DampedMode, b: &DampedMode) -> std::cmp::Ordering {
    b.amplitude
        .norm()
        .total_cmp(&a.amplitude.norm())
        .then(a.phase.abs().total_cmp(&b.phase.abs()))
        .then(b.decay.total_cmp(&a.decay))
        .then(a.phase.total_cmp(&b.phase))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixPencilConfig {
    /// Pencil parameter L_P; defaults to ⌊L/3⌋.
    pub pencil_param: Option<usize>,
    /// Singular-value ratio threshold in (0, 1).
    pub cutoff: f64,
}

impl MatrixPencilConfig {
    pub fn new(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cutoff must lie in (0, 1), got {cutoff}"
            )));
        }
        Ok(Self { pencil_param: None, cutoff })
    }

    pub fn with_pencil_param(mut self, pencil_param: usize) -> Self {
        self.pencil_param = Some(pencil_param);
        self
    }

    fn resolve_pencil_param(&self, len: usize) -> Result<usize> {
        let lp = self.pencil_param.unwrap_or(len / 3);
        if lp < 1 || lp > len - 2 {
            return Err(Error::InvalidParameter(format!(
                "pencil parameter {lp} outside [1, {}] for {len} samples",
                len - 2
            )));
        }
        Ok(lp)
    }
}

/// Shared Vandermonde least-squares core. Returns the solution and the
/// condition estimate σ_max/σ_min of the Vandermonde matrix.
fn vandermonde_solve(series: &TimeSeries, poles: &[C64]) -> Result<(Vec<C64>, f64)> {
    let len = series.len();
    let m = poles.len();
    if m == 0 {
        return Err(Error::EmptyModeList);
    }
    if m > len {
        return Err(Error::InvalidParameter(format!(
            "{m} poles for only {len} samples"
        )));
    }
    for i in 0..m {
        for j in i + 1..m {
            if poles[i] == poles[j] {
                return Err(Error::InvalidParameter(format!(
                    "poles must be distinct; {} appears twice",
                    poles[i]
                )));
            }
        }
    }
    let mut phi = CMatrix::zeros((len, m));
    let mut row = vec![C64::new(1.0, 0.0); m];
    for k in 0..len {
        for j in 0..m {
            phi[(k, j)] = row[j];
            row[j] *= poles[j];
        }
    }
    let rhs = CVector::from(series.samples.clone());
    let out = phi.least_squares(&rhs)?;
    let sv = &out.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Ok((out.solution.to_vec(), condition))
}

/// Least-squares amplitudes for y_k ≈ Σ C_j z_j^k at fixed poles.
pub fn fit_amplitudes(series: &TimeSeries, poles: &[C64]) -> Result<Vec<C64>> {
    let (solution, condition) = vandermonde_solve(series, poles)?;
    if condition > 1e12 {
        return Err(Error::IllConditionedVandermonde { condition });
    }
    Ok(solution)
}

/// Above this column count the full LAPACK SVD of the Hankel dominates the
/// whole pipeline; switch to the seeded randomized range finder.
const RANDOMIZED_SVD_MIN_COLS: usize = 192;

/// Retained singular values and right-singular-vector columns of `m`,
/// truncated at `cutoff`·σ_max.
///
/// Large matrices go through a deterministic randomized range finder
/// (two power iterations, adaptive sketch width, seeded sampling); if the
/// sketch cannot confidently cover every value above the cutoff the exact
/// LAPACK path runs instead, so the result is always cutoff-faithful.
fn retained_right_singular(m: &CMatrix, cutoff: f64) -> Result<(Vec<f64>, CMatrix)> {
    let (rows, cols) = m.dim();
    let full = |m: &CMatrix| -> Result<(Vec<f64>, CMatrix)> {
        let (_, sv, vt) = m.svddc(JobSvd::Some)?;
        let vt = vt.ok_or_else(|| Error::RankDeficientPencil("SVD returned no V".into()))?;
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        if smax == 0.0 {
            return Err(Error::EmptyRetainedSet);
        }
        let retained = sv.iter().filter(|&&s| s > smax * cutoff).count();
        if retained == 0 {
            return Err(Error::EmptyRetainedSet);
        }
        let v = vt.slice(s![0..retained, ..]).t().mapv(|z| z.conj());
        Ok((sv.iter().take(retained).cloned().collect(), v))
    };
    if cols < RANDOMIZED_SVD_MIN_COLS || rows < RANDOMIZED_SVD_MIN_COLS {
        return full(m);
    }

    let adj = |x: &CMatrix| x.t().mapv(|z: C64| z.conj());
    let mut sketch = 32usize;
    let cap = rows.min(cols) / 2;
    let mut rng = ChaCha12Rng::seed_from_u64(0x48414E4B454C);
    while sketch <= cap {
        let omega = CMatrix::from_shape_fn((cols, sketch), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let (q0, _) = m.dot(&omega).qr()?;
        let (q1, _) = adj(m).dot(&q0).qr()?;
        let (q, _) = m.dot(&q1).qr()?;
        let b = adj(&q).dot(m);
        let (_, sv, vt) = b.svddc(JobSvd::Some)?;
        let vt = vt.ok_or_else(|| Error::RankDeficientPencil("SVD returned no V".into()))?;
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        if smax == 0.0 {
            return Err(Error::EmptyRetainedSet);
        }
        let retained = sv.iter().filter(|&&s| s > smax * cutoff).count();
        // everything above the cutoff must sit strictly inside the sketch
        if retained + 8 <= sketch {
            if retained == 0 {
                return Err(Error::EmptyRetainedSet);
            }
            let v = vt.slice(s![0..retained, ..]).t().mapv(|z| z.conj());
            return Ok((sv.iter().take(retained).cloned().collect(), v));
        }
        sketch *= 2;
    }
    full(m)
}

/// SVD-based pole retrieval from the Hankel matrix of the samples.
///
/// Returns modes sorted by the dominance order (largest |C| first). Poles
/// are fixed to the convention that reproduces the samples as written:
/// y_k = Σ C_j z_j^k.
pub fn matrix_pencil(series: &TimeSeries, cfg: &MatrixPencilConfig) -> Result<Vec<DampedMode>> {
    let len = series.len();
    if len < 4 {
        return Err(Error::InvalidParameter(format!(
            "matrix pencil needs at least 4 samples, got {len}"
        )));
    }
    if !(cfg.cutoff > 0.0 && cfg.cutoff < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff must lie in (0, 1), got {}",
            cfg.cutoff
        )));
    }
    let lp = cfg.resolve_pencil_param(len)?;
    let rows = len - lp;
    let cols = lp + 1;
    let mut hankel = CMatrix::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            hankel[(r, c)] = series.samples[r + c];
        }
    }

    let (_, v_all) = retained_right_singular(&hankel, cfg.cutoff)?;
    // The shifted pencil needs L_P rows above the mode count.
    let retained = v_all.ncols().min(lp);
    let v = v_all.slice(s![.., 0..retained]).to_owned();
    let v1 = v.slice(s![0..lp, ..]).to_owned();
    let v2 = v.slice(s![1..lp + 1, ..]).to_owned();
    let ls = v1.least_squares(&v2)?;
    if (ls.rank as usize) < retained {
        return Err(Error::RankDeficientPencil(format!(
            "pencil solve rank {} below retained mode count {retained}",
            ls.rank
        )));
    }
    // re-pack: LAPACK hands the solution back in a layout eig rejects
    let shift = CMatrix::from_shape_fn((retained, retained), |(i, j)| ls.solution[(i, j)]);
    let (eigvals, _) = shift.eig()?;
    let poles: Vec<C64> = eigvals.iter().map(|z| z.conj()).collect();

    let (amplitudes, _condition) = vandermonde_solve(series, &poles)?;
    let mut modes: Vec<DampedMode> = poles
        .iter()
        .zip(amplitudes)
        .map(|(&z, c)| DampedMode::from_pole(c, z))
        .collect();
    modes.sort_by(mode_order);
    Ok(modes)
}

/// Coarse frequencies from local maxima of the DFT magnitude, strongest
/// first, each mapped to (−π, π].
pub fn dft_peak(series: &TimeSeries) -> Vec<f64> {
    let len = series.len();
    let mut magnitude = vec![0.0f64; len];
    for (q, mag) in magnitude.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (k, y) in series.samples.iter().enumerate() {
            let angle = -2.0 * PI * (q as f64) * (k as f64) / (len as f64);
            acc += y * C64::from_polar(1.0, angle);
        }
        *mag = acc.norm();
    }
    let mut peaks: Vec<(usize, f64)> = (0..len)
        .filter(|&q| {
            let prev = magnitude[(q + len - 1) % len];
            let next = magnitude[(q + 1) % len];
            magnitude[q] > prev && magnitude[q] > next
        })
        .map(|q| (q, magnitude[q]))
        .collect();
    if peaks.is_empty() && len >= 1 {
        // flat spectra (e.g. single sample repeated) still report the max bin
        if let Some((q, m)) = magnitude
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            if m > 0.0 {
                peaks.push((q, m));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks
        .into_iter()
        .map(|(q, _)| wrap_phase(2.0 * PI * q as f64 / len as f64))
        .collect()
}

/// Outcome of the joint nonlinear refinement.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub modes: Vec<DampedMode>,
    pub converged: bool,
    pub cost: f64,
    pub iterations: usize,
}

fn model_and_cost(series: &TimeSeries, modes: &[DampedMode], weights: &[f64]) -> (Vec<C64>, f64) {
    let len = series.len();
    let mut model = vec![C64::new(0.0, 0.0); len];
    for m in modes {
        let z = m.pole();
        let mut p = C64::new(1.0, 0.0);
        for y in model.iter_mut() {
            *y += m.amplitude * p;
            p *= z;
        }
    }
    let cost = series
        .samples
        .iter()
        .zip(&model)
        .zip(weights)
        .map(|((y, f), w)| w * (y - f).norm_sqr())
        .sum();
    (model, cost)
}

/// Levenberg–Marquardt minimization of ℓ = Σ N_k |y_k − ŷ_k|² over all
/// (C_j, r_j, ω_j) jointly. Stops on relative decrease < 1e-12 or 200
/// iterations; if no step ever improves the cost the initial modes come
/// back with `converged = false`.
pub fn refine_least_squares(
    series: &TimeSeries,
    init_modes: &[DampedMode],
    weights: Option<&[f64]>,
) -> Result<RefineOutcome> {
    let len = series.len();
    if init_modes.is_empty() {
        return Err(Error::EmptyModeList);
    }
    let uniform = vec![1.0f64; len];
    let weights = match weights {
        Some(w) => {
            if w.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "{} weights for {len} samples",
                    w.len()
                )));
            }
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidParameter("weights must be finite and >= 0".into()));
            }
            w.to_vec()
        }
        None => uniform,
    };

    let m = init_modes.len();
    let n_params = 4 * m;
    let mut modes = init_modes.to_vec();
    let (_, mut cost) = model_and_cost(series, &modes, &weights);
    let init_cost = cost;
    let mut mu = 1e-3;
    let mut improved = false;
    let mut iterations = 0usize;

    for _ in 0..200 {
        iterations += 1;
        let (model, _) = model_and_cost(series, &modes, &weights);
        // Normal equations for the real-valued residual vector
        // [√w_k Re(y_k − ŷ_k), √w_k Im(y_k − ŷ_k)].
        let mut jtj = Array2::<f64>::zeros((n_params, n_params));
        let mut jtr = Array1::<f64>::zeros(n_params);
        let mut derivs = vec![C64::new(0.0, 0.0); n_params];
        let mut pole_powers: Vec<(C64, C64)> = modes
            .iter()
            .map(|md| (md.pole(), C64::new(1.0, 0.0)))
            .collect();
        for k in 0..len {
            let res = series.samples[k] - model[k];
            let kf = k as f64;
            for (j, md) in modes.iter().enumerate() {
                let (pole, power) = pole_powers[j];
                // power = z^k maintained incrementally
                let base = power; // r^k e^{iωk}
                derivs[4 * j] = base; // ∂ŷ/∂ReC
                derivs[4 * j + 1] = C64::new(0.0, 1.0) * base; // ∂ŷ/∂ImC
                derivs[4 * j + 2] = if k == 0 {
                    C64::new(0.0, 0.0)
                } else {
                    md.amplitude * base / md.decay.max(1e-300) * kf // ∂ŷ/∂r
                };
                derivs[4 * j + 3] = md.amplitude * base * C64::new(0.0, kf); // ∂ŷ/∂ω
                pole_powers[j] = (pole, power * pole);
            }
            let w = weights[k];
            for p in 0..n_params {
                // residual derivative is −deriv
                let dp = derivs[p];
                jtr[p] += w * (dp.re * res.re + dp.im * res.im);
                for q in p..n_params {
                    let dq = derivs[q];
                    jtj[(p, q)] += w * (dp.re * dq.re + dp.im * dq.im);
                }
            }
        }
        for p in 0..n_params {
            for q in 0..p {
                jtj[(p, q)] = jtj[(q, p)];
            }
        }

        let mut stepped = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for p in 0..n_params {
                damped[(p, p)] += mu * jtj[(p, p)].max(1e-300);
            }
            let delta = match damped.factorize().and_then(|f| f.solve(&jtr).map(|x| x.to_owned())) {
                Ok(d) => d,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let mut trial = modes.clone();
            let mut feasible = true;
            for (j, md) in trial.iter_mut().enumerate() {
                md.amplitude += C64::new(delta[4 * j], delta[4 * j + 1]);
                md.decay += delta[4 * j + 2];
                md.phase += delta[4 * j + 3];
                if md.decay < 0.0 || !md.decay.is_finite() || !md.phase.is_finite() {
                    feasible = false;
                }
            }
            if feasible {
                let (_, trial_cost) = model_and_cost(series, &trial, &weights);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let rel_drop = if cost > 0.0 { (cost - trial_cost) / cost } else { 0.0 };
                    modes = trial;
                    cost = trial_cost;
                    mu = (mu * 0.3).max(1e-14);
                    stepped = true;
                    improved = true;
                    if rel_drop < 1e-12 {
                        for md in modes.iter_mut() {
                            md.phase = wrap_phase(md.phase);
                        }
                        modes.sort_by(mode_order);
                        return Ok(RefineOutcome { modes, converged: true, cost, iterations });
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !stepped {
            break;
        }
    }

    if !improved && cost > init_cost * (1.0 + 1e-12) {
        return Ok(RefineOutcome {
            modes: init_modes.to_vec(),
            converged: false,
            cost: init_cost,
            iterations,
        });
    }
    for md in modes.iter_mut() {
        md.phase = wrap_phase(md.phase);
    }
    modes.sort_by(mode_order);
    Ok(RefineOutcome { modes, converged: improved, cost, iterations })
}

/// The mode with the largest fitted |C|; deterministic tiebreaks (smaller
/// |ω|, then larger r, then smaller ω).
pub fn select_mode(modes: &[DampedMode]) -> Result<DampedMode> {
    modes
        .iter()
        .min_by(|a, b| mode_order(a, b))
        .cloned()
        .ok_or(Error::EmptyModeList)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationMethod {
    Pencil,
    PencilRefine,
    Dft,
}

impl EstimationMethod {
    pub fn label(&self) -> &'static str {
        match self {
            EstimationMethod::Pencil => "pencil",
            EstimationMethod::PencilRefine => "pencil+refine",
            EstimationMethod::Dft => "dft",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub pencil: MatrixPencilConfig,
    pub method: EstimationMethod,
    /// Optional refinement weights N_k.
    pub weights: Option<Vec<f64>>,
}

impl EstimateOptions {
    pub fn pencil_with_cutoff(cutoff: f64) -> Result<Self> {
        Ok(Self {
            pencil: MatrixPencilConfig::new(cutoff)?,
            method: EstimationMethod::Pencil,
            weights: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EstimateDiagnostics {
    /// Relative model residual ‖y − ŷ‖₂/‖y‖₂ over all retained modes.
    pub residual: f64,
    pub retained_modes: usize,
    pub warnings: Vec<String>,
}

/// An energy value retrieved from one time series.
#[derive(Debug, Clone)]
pub struct EnergyEstimate {
    /// Angular frequency ω/ΔT of the selected mode.
    pub value: f64,
    pub mode: DampedMode,
    pub method: EstimationMethod,
    pub diagnostics: EstimateDiagnostics,
}

pub fn estimate_energy(series: &TimeSeries, options: &EstimateOptions) -> Result<EnergyEstimate> {
    let modes = match options.method {
        EstimationMethod::Pencil => matrix_pencil(series, &options.pencil)?,
        EstimationMethod::PencilRefine => {
            let init = matrix_pencil(series, &options.pencil)?;
            refine_least_squares(series, &init, options.weights.as_deref())?.modes
        }
        EstimationMethod::Dft => {
            let omegas = dft_peak(series);
            if omegas.is_empty() {
                return Err(Error::EmptyModeList);
            }
            let poles: Vec<C64> = omegas.iter().map(|&w| C64::from_polar(1.0, w)).collect();
            let (amps, _) = vandermonde_solve(series, &poles)?;
            let mut modes: Vec<DampedMode> = poles
                .iter()
                .zip(amps)
                .map(|(&z, c)| DampedMode::from_pole(c, z))
                .collect();
            modes.sort_by(mode_order);
            modes
        }
    };

    let mode = select_mode(&modes)?;
    let mut warnings = Vec::new();
    let resolution = 2.0 * PI / series.len() as f64;
    let max_amp = mode.amplitude.norm();
    for i in 0..modes.len() {
        for j in i + 1..modes.len() {
            let close = (modes[i].phase - modes[j].phase).abs() < resolution;
            let both_large = modes[i].amplitude.norm() * 10.0 >= max_amp
                && modes[j].amplitude.norm() * 10.0 >= max_amp;
            if close && both_large {
                warnings.push(format!(
                    "near-degenerate retrieved modes at ω = {:.6e} and {:.6e}",
                    modes[i].phase, modes[j].phase
                ));
            }
        }
    }

    let synth = synth_series(&modes, series.dt, series.len())?;
    let norm = series.norm2().max(f64::MIN_POSITIVE);
    let residual = series
        .samples
        .iter()
        .zip(&synth.samples)
        .map(|(y, f)| (y - f).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / norm;

    Ok(EnergyEstimate {
        value: mode.phase / series.dt,
        mode,
        method: options.method,
        diagnostics: EstimateDiagnostics {
            residual,
            retained_modes: modes.len(),
            warnings,
        },
    })
}
