//! Closed-form sample-complexity calculators for the mitigation strategies.

use crate::{Error, Result};

/// f(x) = ((1 − e^{−2x}(1 + 2x + 2x²))/(4x³))^{−1/2}.
///
/// The bracket equals ∫₀¹ t²e^{−2xt}dt, which is evaluated through its
/// Taylor series below x = 0.5 where the closed form cancels
/// catastrophically; both branches agree to ~1e-14 at the switch.
pub fn f_factor(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "f is defined for x > 0, got {x}"
        )));
    }
    let bracket = if x < 0.5 {
        // ∫₀¹ t²e^{−2xt}dt = Σ_m (−2x)^m / (m!(m+3))
        let mut term = 1.0f64; // (−2x)^m / m!
        let mut sum = 0.0f64;
        for m in 0..200 {
            let contribution = term / (m as f64 + 3.0);
            sum += contribution;
            if contribution.abs() < 1e-18 * sum.abs() {
                break;
            }
            term *= -2.0 * x / (m as f64 + 1.0);
        }
        sum
    } else {
        (1.0 - (-2.0 * x).exp() * (1.0 + 2.0 * x + 2.0 * x * x)) / (4.0 * x.powi(3))
    };
    Ok(bracket.powf(-0.5))
}

/// F(c₁,c₂) = √((c₂−c₁)² + (c₁−1)² + (c₂−1)²) / (|1/c₁ − 1/c₂|·(c₁−1)(c₂−1)).
pub fn big_f(c1: f64, c2: f64) -> Result<f64> {
    validate_factors(c1, Some(c2))?;
    let num = ((c2 - c1).powi(2) + (c1 - 1.0).powi(2) + (c2 - 1.0).powi(2)).sqrt();
    let den = (1.0 / c1 - 1.0 / c2).abs() * (c1 - 1.0) * (c2 - 1.0);
    Ok(num / den)
}

fn validate_factors(c1: f64, c2: Option<f64>) -> Result<()> {
    if !(c1 > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rescaling factor c1 must be > 1, got {c1}"
        )));
    }
    if let Some(c2) = c2 {
        if !(c2 > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rescaling factor c2 must be > 1, got {c2}"
            )));
        }
        if c2 == c1 {
            return Err(Error::InvalidParameter(
                "rescaling factors must differ".into(),
            ));
        }
    }
    Ok(())
}

/// Standard deviation of the retrieved frequency for one damped mode:
/// 1/σ² = Σ_{k=0}^{L−1} 2 N_k k² r^{2k} |C|², evaluated in closed form.
pub fn sigma_omega(n_k: f64, c_amp: f64, r: f64, samples: usize) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "decay r must lie in (0, 1), got {r}"
        )));
    }
    if !(n_k > 0.0) || !(c_amp > 0.0) || samples == 0 {
        return Err(Error::InvalidParameter(
            "shots, amplitude and sample count must be positive".into(),
        ));
    }
    let l = samples as f64;
    let q = r * r; // geometric ratio
    // Σ_{k=0}^{L−1} k² q^k = [L²q^L − 2L²q^{L+1} + L²q^{L+2} + 2Lq^{L+1}
    //   + q^{L+1} − 2Lq^{L+2} + q^{L+2} − q² − q] / (q − 1)³
    // The closed form cancels catastrophically as q → 1; sum directly there.
    let moment = if 1.0 - q < 1e-3 {
        (0..samples).map(|k| (k * k) as f64 * q.powi(k as i32)).sum::<f64>()
    } else {
        let ql = q.powf(l);
        let numerator = l * l * ql - 2.0 * l * l * ql * q + l * l * ql * q * q
            + 2.0 * l * ql * q
            + ql * q
            - 2.0 * l * ql * q * q
            + ql * q * q
            - q * q
            - q;
        numerator / (q - 1.0).powi(3)
    };
    let inv_var = 2.0 * n_k * c_amp * c_amp * moment;
    if !(inv_var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "degenerate variance (1/σ² = {inv_var})"
        )));
    }
    Ok(inv_var.powf(-0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Reshaping operators drawn at random (statistical penalty term).
    ReshapeSampled,
    /// Every operator of the reshape set measured.
    ReshapeFull,
    RescaleFirst,
    RescaleSecond,
}

impl SamplingStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reshape-sampled" => Ok(Self::ReshapeSampled),
            "reshape-full" => Ok(Self::ReshapeFull),
            "rescale-first" => Ok(Self::RescaleFirst),
            "rescale-second" => Ok(Self::RescaleSecond),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy '{other}' (expected reshape-sampled | reshape-full | rescale-first | rescale-second)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::ReshapeSampled => "reshape-sampled",
            Self::ReshapeFull => "reshape-full",
            Self::RescaleFirst => "rescale-first",
            Self::RescaleSecond => "rescale-second",
        }
    }
}

/// Inputs for the total-sample-count formulas.
#[derive(Debug, Clone)]
pub struct ComplexityInputs {
    /// Number of damped oscillation modes N_m.
    pub n_modes: f64,
    /// Shots per time point N_k (used by [`sigma_omega`]).
    pub n_shots: f64,
    /// Reshaping-operator count N_P.
    pub n_paulis: f64,
    /// Time points L.
    pub samples: usize,
    /// Time step ΔT.
    pub dt: f64,
    /// Noise strength |D̃|.
    pub noise_strength: f64,
    /// Normalized decay coefficient d_ab > 0.
    pub d_ab: f64,
    /// Mode amplitude |C_α|; `None` applies the default 1/N_m.
    pub c_amp: Option<f64>,
    /// Target standard deviation of the mitigated energy.
    pub sigma_target: f64,
    pub c1: f64,
    pub c2: Option<f64>,
    /// The variance-ratio constant C for sampled reshaping.
    pub c_stat: f64,
}

impl ComplexityInputs {
    pub fn total_time(&self) -> f64 {
        self.samples as f64 * self.dt
    }

    pub fn c_amp(&self) -> f64 {
        self.c_amp.unwrap_or(1.0 / self.n_modes)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_modes", self.n_modes),
            ("n_shots", self.n_shots),
            ("dt", self.dt),
            ("d_ab", self.d_ab),
            ("sigma_target", self.sigma_target),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.noise_strength < 0.0 {
            return Err(Error::InvalidParameter(
                "noise strength must be >= 0".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("need at least one time point".into()));
        }
        Ok(())
    }
}

/// Total sample count N_T for the chosen strategy, with
/// x = d_ab·|D̃|·T inside f.
pub fn total_samples(strategy: SamplingStrategy, inputs: &ComplexityInputs) -> Result<f64> {
    inputs.validate()?;
    let t = inputs.total_time();
    let x = inputs.d_ab * inputs.noise_strength * t;
    // x → 0⁺ limit of f is √3; keep the noiseless case usable.
    let f = if x > 0.0 { f_factor(x)? } else { 3f64.sqrt() };
    let base = f * f * inputs.n_modes * inputs.n_modes / (t * t);
    let sigma_sq = inputs.sigma_target * inputs.sigma_target;
    match strategy {
        SamplingStrategy::ReshapeSampled => {
            if !(inputs.n_paulis > 0.0) {
                return Err(Error::InvalidParameter(
                    "reshape-sampled needs a positive Pauli count".into(),
                ));
            }
            let penalty = inputs.c_stat * inputs.noise_strength * inputs.noise_strength
                / inputs.n_paulis;
            let denominator = sigma_sq - penalty;
            if denominator <= 0.0 {
                return Err(Error::InfeasibleTarget(format!(
                    "σ_target² = {sigma_sq:.3e} does not exceed the statistical floor C|D̃|²/N_P = {penalty:.3e}"
                )));
            }
            Ok(f * f * inputs.n_modes * inputs.n_modes / (t * t * denominator))
        }
        SamplingStrategy::ReshapeFull => Ok(base / sigma_sq),
        SamplingStrategy::RescaleFirst => {
            validate_factors(inputs.c1, None)?;
            let c = inputs.c1;
            Ok(4.0 * c * c / ((c - 1.0) * (c - 1.0)) * base / sigma_sq)
        }
        SamplingStrategy::RescaleSecond => {
            let c2 = inputs.c2.ok_or_else(|| {
                Error::InvalidParameter("rescale-second needs a second factor c2".into())
            })?;
            let ff = big_f(inputs.c1, c2)?;
            Ok(3.0 * ff * ff * base / sigma_sq)
        }
    }
}

/// Advisory large-noise scaling N_m²·L·e^{2 d_ab |D̃| ΔT}; reported
/// separately from the small-noise formulas.
pub fn exponential_regime_samples(inputs: &ComplexityInputs) -> Result<f64> {
    inputs.validate()?;
    let exponent = 2.0 * inputs.d_ab * inputs.noise_strength * inputs.dt;
    Ok(inputs.n_modes * inputs.n_modes * inputs.samples as f64 * exponent.exp())
}
