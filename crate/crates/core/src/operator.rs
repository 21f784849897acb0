//! Dense complex operator algebra for small Hilbert spaces.
//!
//! Operators are stored as dense `dim × dim` complex matrices. Superoperators
//! are never materialised; a [`GeneratorTerm`] applies its commutator or
//! dissipator action directly, in forward (Schrödinger) or adjoint
//! (Heisenberg) form.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default entrywise tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Imaginary residue of an expectation value that is silently discarded.
pub const EXPECTATION_IMAG_TOL: f64 = 1e-9;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const CI: Complex64 = Complex64::new(0.0, 1.0);

/// A square complex matrix acting on a `dim`-dimensional Hilbert space.
#[derive(Clone, PartialEq)]
pub struct Operator(DMatrix<Complex64>);

impl Operator {
    /// Wraps a square matrix.
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidModel("operator dimension must be positive".into()));
        }
        Ok(Operator(matrix))
    }

    /// Builds an operator from row-major entries.
    pub fn from_rows(dim: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Operator::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    /// Builds an operator from real row-major entries.
    pub fn from_real_rows(dim: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Operator::from_rows(dim, &c)
    }

    pub fn zeros(dim: usize) -> Self {
        Operator(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Operator(DMatrix::identity(dim, dim))
    }

    /// Projector `|ψ⟩⟨ψ|` (the vector is used as given, without normalisation).
    pub fn projector(psi: &DVector<Complex64>) -> Self {
        Operator(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Operator(self.0.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Largest entrywise modulus of `A − A†`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.0[(i, j)] - self.0[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Spectral (largest singular value) norm.
    pub fn op_norm(&self) -> f64 {
        if self.0.iter().all(|z| *z == C0) {
            return 0.0;
        }
        self.0.clone().singular_values().max()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Operator(&self.0 * Complex64::new(factor, 0.0))
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        Operator(&self.0 * factor)
    }

    /// `[A, B] = AB − BA`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        check_dims(self, other)?;
        Ok(Operator(&self.0 * &other.0 - &other.0 * &self.0))
    }

    /// Matrix product `AB`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        check_dims(self, other)?;
        Ok(Operator(&self.0 * &other.0))
    }

    /// `Tr[A B]`.
    pub fn trace_product(&self, other: &Operator) -> Result<Complex64> {
        check_dims(self, other)?;
        Ok(trace_of_product(&self.0, &other.0))
    }

    /// Stacks real parts then imaginary parts of all entries (row-major).
    pub fn to_real_vec(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)].re);
            }
        }
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)].im);
            }
        }
        out
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator{}", self.0)
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

fn check_dims(a: &Operator, b: &Operator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `Tr[AB]` without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = C0;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Single-qubit operator basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
    /// Raising operator `σ+ = (σx + iσy)/2 = |0⟩⟨1|`.
    Plus,
    /// Lowering operator `σ− = (σx − iσy)/2 = |1⟩⟨0|`.
    Minus,
}

impl Pauli {
    /// Parses one character of a Pauli string: `I X Y Z + -`.
    pub fn from_char(c: char) -> Option<Pauli> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            '+' => Some(Pauli::Plus),
            '-' => Some(Pauli::Minus),
            _ => None,
        }
    }
}

/// The 2×2 matrix of a single-qubit basis operator.
///
/// Basis ordering is `|0⟩, |1⟩`, with `σz|0⟩ = |0⟩`.
pub fn pauli(which: Pauli) -> Operator {
    let e = match which {
        Pauli::I => [C1, C0, C0, C1],
        Pauli::X => [C0, C1, C1, C0],
        Pauli::Y => [C0, -CI, CI, C0],
        Pauli::Z => [C1, C0, C0, -C1],
        Pauli::Plus => [C0, C1, C0, C0],
        Pauli::Minus => [C0, C0, C1, C0],
    };
    Operator(DMatrix::from_row_slice(2, 2, &e))
}

/// Kronecker product `a ⊗ b`; `a` acts on the leftmost (first) factor.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    Operator(a.0.kronecker(&b.0))
}

/// Tensor product of a Pauli string such as `"ZI"` or `"+-"`; the first
/// character acts on qubit 1.
pub fn pauli_string(s: &str) -> Result<Operator> {
    let mut chars = s.chars().filter(|c| !c.is_whitespace());
    let first = chars
        .next()
        .ok_or_else(|| Error::InvalidModel("empty Pauli string".into()))?;
    let mut acc = pauli(parse_pauli_char(first, s)?);
    for c in chars {
        acc = tensor(&acc, &pauli(parse_pauli_char(c, s)?));
    }
    Ok(acc)
}

fn parse_pauli_char(c: char, s: &str) -> Result<Pauli> {
    Pauli::from_char(c)
        .ok_or_else(|| Error::InvalidModel(format!("invalid character {c:?} in Pauli string {s:?}")))
}

/// Kind of a superoperator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `ℒρ = −i[H, ρ]`.
    Hamiltonian,
    /// `ℒρ = 2LρL† − L†Lρ − ρL†L`, rate absorbed into `L`.
    Lindblad,
}

/// A Hamiltonian commutator or a Lindblad dissipator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTerm {
    kind: GeneratorKind,
    operator: Operator,
    // L†L, cached for the dissipator.
    ldag_l: Option<Operator>,
}

impl GeneratorTerm {
    /// Hamiltonian term; `h` must be Hermitian within `tol`.
    pub fn hamiltonian(h: Operator, tol: f64) -> Result<Self> {
        let deviation = h.hermitian_deviation();
        if deviation > tol {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(GeneratorTerm {
            kind: GeneratorKind::Hamiltonian,
            operator: h,
            ldag_l: None,
        })
    }

    /// Lindblad term with collapse operator `l` (any square matrix).
    pub fn lindblad(l: Operator) -> Self {
        let ldag_l = &l.adjoint() * &l;
        GeneratorTerm {
            kind: GeneratorKind::Lindblad,
            operator: l,
            ldag_l: Some(ldag_l),
        }
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// Same term with its operator multiplied by a real factor.
    ///
    /// For Lindblad terms the collapse operator is scaled by `sqrt(factor)`
    /// so that the dissipator itself scales linearly; `factor` must then be
    /// non-negative.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self.kind {
            GeneratorKind::Hamiltonian => Ok(GeneratorTerm {
                kind: self.kind,
                operator: self.operator.scale(factor),
                ldag_l: None,
            }),
            GeneratorKind::Lindblad => {
                if factor < 0.0 {
                    return Err(Error::InvalidModel(
                        "Lindblad terms cannot be scaled by a negative factor".into(),
                    ));
                }
                Ok(GeneratorTerm::lindblad(self.operator.scale(factor.sqrt())))
            }
        }
    }

    /// Upper bound on the induced operator norm of the superoperator.
    pub fn norm_bound(&self) -> f64 {
        match self.kind {
            GeneratorKind::Hamiltonian => 2.0 * self.operator.op_norm(),
            GeneratorKind::Lindblad => 4.0 * self.operator.op_norm().powi(2),
        }
    }

    /// `ℒρ`.
    pub fn apply_forward(&self, rho: &Operator) -> Result<Operator> {
        check_dims(&self.operator, rho)?;
        Ok(Operator(self.forward_raw(&rho.0)))
    }

    /// `ℒ*O`, defined by `Tr[(ℒρ)O] = Tr[ρ(ℒ*O)]`.
    pub fn apply_adjoint(&self, obs: &Operator) -> Result<Operator> {
        check_dims(&self.operator, obs)?;
        Ok(Operator(self.adjoint_raw(&obs.0)))
    }

    pub(crate) fn forward_raw(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let a = &self.operator.0;
        match self.kind {
            GeneratorKind::Hamiltonian => (a * rho - rho * a) * (-CI),
            GeneratorKind::Lindblad => {
                let ldl = &self.ldag_l.as_ref().expect("cached for Lindblad").0;
                let lrl = a * rho * a.adjoint();
                lrl * Complex64::new(2.0, 0.0) - ldl * rho - rho * ldl
            }
        }
    }

    pub(crate) fn adjoint_raw(&self, obs: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let a = &self.operator.0;
        match self.kind {
            GeneratorKind::Hamiltonian => (a * obs - obs * a) * CI,
            GeneratorKind::Lindblad => {
                let ldl = &self.ldag_l.as_ref().expect("cached for Lindblad").0;
                let lol = a.adjoint() * obs * a;
                lol * Complex64::new(2.0, 0.0) - ldl * obs - obs * ldl
            }
        }
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    matrix: Operator,
}

impl DensityState {
    pub const TRACE_TOL: f64 = 1e-9;
    pub const EIGEN_TOL: f64 = 1e-9;

    /// Validates and wraps a density matrix.
    pub fn new(matrix: Operator) -> Result<Self> {
        let deviation = matrix.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {deviation:.3e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = hermitian_eigenvalues(matrix.matrix())
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -Self::EIGEN_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(DensityState { matrix })
    }

    /// Wraps a matrix produced by an integrator without the eigenvalue check.
    pub(crate) fn from_trusted(matrix: DMatrix<Complex64>) -> Self {
        DensityState {
            matrix: Operator(matrix),
        }
    }

    /// `|ψ⟩⟨ψ|` for a state vector; the vector is normalised first.
    pub fn pure(psi: &DVector<Complex64>) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState("state vector has zero norm".into()));
        }
        DensityState::new(Operator::projector(&(psi / Complex64::new(n, 0.0))))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityState {
            matrix: Operator::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &Operator {
        &self.matrix
    }

    /// `Tr[ρ²]`.
    pub fn purity(&self) -> f64 {
        trace_of_product(&self.matrix.0, &self.matrix.0).re
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityState) -> f64 {
        let diff = &self.matrix.0 - &other.matrix.0;
        // Symmetrise away round-off before the Hermitian eigensolver.
        let herm = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
        0.5 * hermitian_eigenvalues(&herm).iter().map(|e| e.abs()).sum::<f64>()
    }
}

/// Eigenvalues of a Hermitian matrix.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().copied().collect()
}

/// `Tr[ρO]` for a Hermitian observable.
pub fn expectation(state: &DensityState, obs: &Operator) -> Result<f64> {
    check_dims(&state.matrix, obs)?;
    let v = trace_of_product(&state.matrix.0, &obs.0);
    if v.im.abs() > EXPECTATION_IMAG_TOL {
        return Err(Error::ComplexExpectation { imag: v.im });
    }
    Ok(v.re)
}

/// Real part of `Tr[ρO]` with no Hermiticity check; used in hot loops
/// where both arguments are Hermitian by construction.
pub(crate) fn expectation_raw(rho: &DMatrix<Complex64>, obs: &DMatrix<Complex64>) -> f64 {
    trace_of_product(rho, obs).re
}

/// Normalised product state of single-qubit amplitude pairs; qubit 1 first.
pub fn product_state(qubits: &[[Complex64; 2]]) -> Result<DVector<Complex64>> {
    let mut psi = DVector::from_element(1, C1);
    for q in qubits {
        let v = DVector::from_column_slice(q);
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::InvalidState("zero single-qubit amplitude vector".into()));
        }
        psi = psi.kronecker(&(v / Complex64::new(n, 0.0)));
    }
    Ok(psi)
}
