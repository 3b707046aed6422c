//! Pauli algebra, model Hamiltonians, noise models and exact
//! diagonalization — the symbol-to-matrix layer everything else builds on.
//!
//! Conventions: qubit 0 is the leftmost tensor factor (most significant
//! bits of the computational-basis index); ħ = 1 and all Hamiltonian
//! entries are angular frequencies.

use crate::linalg::{adjoint, kron, max_abs};
use crate::{C64, CMatrix, Error, Result};
use ndarray::prelude::*;
use rand::Rng;
use std::f64::consts::PI;
use std::fmt;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMatrix {
        match self {
            Pauli::I => array![[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => array![[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => array![[ZERO, C64::new(0.0, -1.0)], [C64::new(0.0, 1.0), ZERO]],
            Pauli::Z => array![[ONE, ZERO], [ZERO, -ONE]],
        }
    }

    fn from_char(c: char) -> Result<Self> {
        match c {
            'I' | 'i' => Ok(Pauli::I),
            'X' | 'x' => Ok(Pauli::X),
            'Y' | 'y' => Ok(Pauli::Y),
            'Z' | 'z' => Ok(Pauli::Z),
            other => Err(Error::InvalidParameter(format!(
                "unknown Pauli letter '{other}'"
            ))),
        }
    }

    fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Letterwise product with the phase discarded (conjugation is
    /// phase-free, so nothing downstream needs it).
    fn mul_no_phase(self, other: Pauli) -> Pauli {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => p,
            (a, b) if a == b => I,
            (X, Y) | (Y, X) => Z,
            (Y, Z) | (Z, Y) => X,
            (Z, X) | (X, Z) => Y,
            _ => unreachable!(),
        }
    }
}

/// A tensor product of Pauli letters over `n` qubits.
///
/// Carries no global phase; its matrix realization is unitary, Hermitian
/// and involutory.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Pauli>,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::InvalidParameter(
                "a Pauli string needs at least one qubit".into(),
            ));
        }
        Ok(Self { letters })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![Pauli::I; n])
    }

    /// The uniform string `p^{⊗n}`.
    pub fn tensor_power(p: Pauli, n: usize) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn parse(s: &str) -> Result<Self> {
        let letters = s.chars().map(Pauli::from_char).collect::<Result<Vec<_>>>()?;
        Self::new(letters)
    }

    /// Uniform draw over all 4^n strings.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let letters = (0..n)
            .map(|_| match rng.random_range(0..4u8) {
                0 => Pauli::I,
                1 => Pauli::X,
                2 => Pauli::Y,
                _ => Pauli::Z,
            })
            .collect();
        Self { letters }
    }

    pub fn n(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn is_identity(&self) -> bool {
        self.letters.iter().all(|&p| p == Pauli::I)
    }

    /// Letterwise product, global phase discarded.
    pub fn product_no_phase(&self, other: &PauliString) -> Result<PauliString> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch(format!(
                "Pauli strings act on {} vs {} qubits",
                self.n(),
                other.n()
            )));
        }
        let letters = self
            .letters
            .iter()
            .zip(&other.letters)
            .map(|(&a, &b)| a.mul_no_phase(b))
            .collect();
        Ok(PauliString { letters })
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

/// Square complex matrix over the 2^n-dimensional qubit Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    data: CMatrix,
}

impl DenseOperator {
    /// Validates shape (square, power-of-two side) and entry finiteness.
    pub fn new(data: CMatrix) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::InvalidOperator(format!("non-square {r}x{c}")));
        }
        if r == 0 || !r.is_power_of_two() {
            return Err(Error::InvalidOperator(format!(
                "dimension {r} is not a positive power of two"
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(CMatrix::zeros((dim, dim)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(CMatrix::eye(dim))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn array(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_array(self) -> CMatrix {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self {
            data: adjoint(&self.data),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.mapv(|z| z * factor),
        }
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let at = adjoint(&self.data);
        crate::testing::max_diff(&self.data, &at)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn matmul(&self, other: &DenseOperator) -> Result<DenseOperator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        DenseOperator::new(self.data.dot(&other.data))
    }
}

/// Embed a 2x2 operator on one site of an n-qubit register (identity
/// elsewhere), qubit 0 leftmost.
pub fn embed_single_site(local: &ArrayView2<C64>, site: usize, n: usize) -> CMatrix {
    assert!(site < n, "site {site} out of range for {n} qubits");
    let left = CMatrix::eye(1 << site);
    let right = CMatrix::eye(1 << (n - site - 1));
    kron(&kron(&left, &local.to_owned()), &right)
}

/// Matrix realization of a Pauli string (tensor product in qubit order).
pub fn pauli_matrix(p: &PauliString) -> DenseOperator {
    let mut m = p.letters()[0].matrix();
    for letter in &p.letters()[1..] {
        m = kron(&m, &letter.matrix());
    }
    DenseOperator::new(m).expect("Pauli tensor products are always valid operators")
}

/// +1 if the two strings commute, -1 if they anticommute.
///
/// Two Pauli strings anticommute iff they differ by a non-identity letter
/// on an odd number of sites.
pub fn commutation_sign(p: &PauliString, q: &PauliString) -> Result<i32> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch(format!(
            "Pauli strings act on {} vs {} qubits",
            p.n(),
            q.n()
        )));
    }
    let anticommuting_sites = p
        .letters()
        .iter()
        .zip(q.letters())
        .filter(|(&a, &b)| a != Pauli::I && b != Pauli::I && a != b)
        .count();
    Ok(if anticommuting_sites % 2 == 0 { 1 } else { -1 })
}

/// Model selection for [`build_hamiltonian`].
#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianSpec {
    /// Qubit ring: ½Σᵢ(2πν_z Zᵢ + 2πν_x Xᵢ) + ½Σ_⟨i,j⟩ 2πJ (XᵢXⱼ + YᵢYⱼ).
    Ring { n: usize, nu_z: f64, nu_x: f64, j: f64 },
    /// Open transverse-field XX chain: −g Σ XⱼXⱼ₊₁ − Σ Xⱼ − Σ Yⱼ.
    XxChain { n: usize, g: f64 },
}

impl HamiltonianSpec {
    pub fn n(&self) -> usize {
        match self {
            HamiltonianSpec::Ring { n, .. } | HamiltonianSpec::XxChain { n, .. } => *n,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HamiltonianSpec::Ring { .. } => "ring",
            HamiltonianSpec::XxChain { .. } => "xx-chain",
        }
    }
}

/// Ring bonds: the single edge (0,1) for n=2, n distinct edges for n >= 3.
fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    if n == 2 {
        vec![(0, 1)]
    } else {
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    }
}

pub fn build_hamiltonian(spec: &HamiltonianSpec) -> Result<DenseOperator> {
    let n = spec.n();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "{} model needs n >= 2 qubits, got {n}",
            spec.label()
        )));
    }
    let dim = 1usize << n;
    let mut h = CMatrix::zeros((dim, dim));
    match *spec {
        HamiltonianSpec::Ring { nu_z, nu_x, j, .. } => {
            let x = Pauli::X.matrix();
            let y = Pauli::Y.matrix();
            let z = Pauli::Z.matrix();
            for site in 0..n {
                h = h + embed_single_site(&z.view(), site, n).mapv(|v| v * (PI * nu_z));
                h = h + embed_single_site(&x.view(), site, n).mapv(|v| v * (PI * nu_x));
            }
            for (a, b) in ring_edges(n) {
                let xx = embed_single_site(&x.view(), a, n).dot(&embed_single_site(&x.view(), b, n));
                let yy = embed_single_site(&y.view(), a, n).dot(&embed_single_site(&y.view(), b, n));
                h = h + (xx + yy).mapv(|v| v * (PI * j));
            }
        }
        HamiltonianSpec::XxChain { g, .. } => {
            let x = Pauli::X.matrix();
            let y = Pauli::Y.matrix();
            for site in 0..n {
                h = h - embed_single_site(&x.view(), site, n);
                h = h - embed_single_site(&y.view(), site, n);
            }
            for site in 0..n - 1 {
                let xx = embed_single_site(&x.view(), site, n)
                    .dot(&embed_single_site(&x.view(), site + 1, n));
                h = h - xx.mapv(|v| v * g);
            }
        }
    }
    let op = DenseOperator::new(h)?;
    debug_assert!(op.is_hermitian(1e-12));
    Ok(op)
}

/// Built-in noise-model families plus an escape hatch for custom operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// L_k = √κ·diag(i, 1) on each site.
    PaperDefault,
    /// T1 decay: L_k = √κ·|0⟩⟨1| on each site.
    AmplitudeDamping,
    /// User-supplied operators via [`NoiseModel::custom`].
    Custom,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper-default" => Ok(NoiseKind::PaperDefault),
            "amplitude-damping" => Ok(NoiseKind::AmplitudeDamping),
            "custom" => Ok(NoiseKind::Custom),
            other => Err(Error::InvalidParameter(format!(
                "unknown noise kind '{other}' (expected paper-default | amplitude-damping | custom)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::PaperDefault => "paper-default",
            NoiseKind::AmplitudeDamping => "amplitude-damping",
            NoiseKind::Custom => "custom",
        }
    }
}

/// The noise perturbation: Lindblad operators (already √κ-scaled) plus a
/// systematic error Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    kappa: f64,
    beta: f64,
    lindblads: Vec<DenseOperator>,
    h_err: DenseOperator,
}

impl NoiseModel {
    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lindblads(&self) -> &[DenseOperator] {
        &self.lindblads
    }

    pub fn h_err(&self) -> &DenseOperator {
        &self.h_err
    }

    pub fn dim(&self) -> usize {
        self.h_err.dim()
    }

    /// True when the model perturbs nothing (κ = 0 built-ins, or custom
    /// with no operators).
    pub fn is_trivial(&self) -> bool {
        self.lindblads.is_empty() && self.h_err.max_abs() == 0.0
    }

    /// Noiseless model on an n-qubit register.
    pub fn none(n: usize) -> Self {
        let dim = 1usize << n;
        NoiseModel {
            kind: NoiseKind::Custom,
            kappa: 0.0,
            beta: 0.0,
            lindblads: Vec::new(),
            h_err: DenseOperator::zeros(dim).expect("power-of-two dim"),
        }
    }

    /// Custom model from explicit operators. `kappa`/`beta` are metadata;
    /// the Lindblad operators are used exactly as given.
    pub fn custom(
        lindblads: Vec<DenseOperator>,
        h_err: DenseOperator,
        kappa: f64,
        beta: f64,
    ) -> Result<Self> {
        if !h_err.is_hermitian(1e-12) {
            return Err(Error::NotHermitian {
                max_deviation: h_err.hermiticity_deviation(),
                tolerance: 1e-12,
            });
        }
        for l in &lindblads {
            if l.dim() != h_err.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "Lindblad dim {} vs error Hamiltonian dim {}",
                    l.dim(),
                    h_err.dim()
                )));
            }
        }
        if kappa == 0.0 && (!lindblads.is_empty() || h_err.max_abs() != 0.0) {
            return Err(Error::InvalidParameter(
                "kappa = 0 requires empty Lindblad list and zero error Hamiltonian".into(),
            ));
        }
        Ok(NoiseModel {
            kind: NoiseKind::Custom,
            kappa,
            beta,
            lindblads,
            h_err,
        })
    }
}

/// Built-in noise families: n single-site Lindblad operators of the chosen
/// kind, plus H^(1) = κβ Σ Zⱼ.
pub fn build_noise(kind: NoiseKind, kappa: f64, beta: f64, n: usize) -> Result<NoiseModel> {
    if kappa < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise strength kappa must be >= 0, got {kappa}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one qubit".into()));
    }
    let dim = 1usize << n;
    if kappa == 0.0 {
        let mut m = NoiseModel::none(n);
        m.kind = kind;
        m.beta = beta;
        return Ok(m);
    }
    let local: CMatrix = match kind {
        NoiseKind::PaperDefault => array![[C64::new(0.0, 1.0), ZERO], [ZERO, ONE]],
        NoiseKind::AmplitudeDamping => array![[ZERO, ONE], [ZERO, ZERO]],
        NoiseKind::Custom => {
            return Err(Error::InvalidParameter(
                "custom noise takes explicit operators; use NoiseModel::custom".into(),
            ));
        }
    };
    let scaled = local.mapv(|z| z * kappa.sqrt());
    let lindblads = (0..n)
        .map(|site| DenseOperator::new(embed_single_site(&scaled.view(), site, n)))
        .collect::<Result<Vec<_>>>()?;
    let z = Pauli::Z.matrix();
    let mut h_err = CMatrix::zeros((dim, dim));
    for site in 0..n {
        h_err = h_err + embed_single_site(&z.view(), site, n);
    }
    h_err.mapv_inplace(|v| v * (kappa * beta));
    Ok(NoiseModel {
        kind,
        kappa,
        beta,
        lindblads,
        h_err: DenseOperator::new(h_err)?,
    })
}

/// Eigendecomposition of a Hermitian operator: ascending energies with
/// aligned orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    energies: Vec<f64>,
    vectors: CMatrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, i: usize) -> f64 {
        self.energies[i]
    }

    /// E_b − E_a.
    pub fn gap(&self, a: usize, b: usize) -> f64 {
        self.energies[b] - self.energies[a]
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, C64> {
        self.vectors.column(i)
    }

    /// Spectral norm max|E_j|, the scale reference for gap thresholds.
    pub fn max_abs_energy(&self) -> f64 {
        self.energies.iter().fold(0.0f64, |acc, e| acc.max(e.abs()))
    }

    /// Largest eigenvalue difference, for the aliasing bound ΔT·maxgap < π.
    pub fn max_gap(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }
}

pub fn diagonalize(h: &DenseOperator) -> Result<Spectrum> {
    let tol = 1e-10 * h.max_abs().max(1.0);
    let dev = h.hermiticity_deviation();
    if dev > tol {
        return Err(Error::NotHermitian {
            max_deviation: dev,
            tolerance: tol,
        });
    }
    let (energies, vectors) = crate::linalg::hermitian_eig(h.array())?;
    Ok(Spectrum {
        energies: energies.to_vec(),
        vectors,
    })
}

/// Conjugation `P A P` by a Pauli string (P is Hermitian, so P = P†).
pub fn conjugate(a: &DenseOperator, p: &PauliString) -> Result<DenseOperator> {
    let pm = pauli_matrix(p);
    if pm.dim() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator dim {} vs Pauli string dim {}",
            a.dim(),
            pm.dim()
        )));
    }
    pm.matmul(a)?.matmul(&pm)
}

/// Conjugate a state vector: `P ψ`.
pub fn conjugate_state(psi: &crate::CVector, p: &PauliString) -> Result<crate::CVector> {
    let pm = pauli_matrix(p);
    if pm.dim() != psi.len() {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} vs Pauli string dim {}",
            psi.len(),
            pm.dim()
        )));
    }
    Ok(pm.array().dot(psi))
}
