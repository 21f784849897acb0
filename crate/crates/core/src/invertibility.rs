//! Structural invertibility: relative degree and the observable
//! transformation that exposes every input at some derivative order.
//!
//! All tests here act on operators, not on expectation values, so they hold
//! for every state; whether the resulting readout matrix is nonsingular at a
//! particular time is a separate, runtime question (see [`crate::inversion`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbeModel;
use crate::operator::{GeneratorTerm, Operator};

/// Relative threshold on singular values for the operator rank.
pub const RANK_TOL: f64 = 1e-9;
/// Relative threshold below which an operator is treated as vanishing.
pub const ZERO_TOL: f64 = 1e-10;
/// Largest acceptable relative residual of the dependency coefficients.
pub const DEPENDENCY_RESIDUAL_TOL: f64 = 1e-9;

/// Rows of adjoint-control operators: row `k` is `(ℒ1*O_k, …, ℒm*O_k)`.
#[derive(Debug, Clone)]
pub struct ObservableArray {
    rows: Vec<Vec<Operator>>,
}

impl ObservableArray {
    pub fn new(rows: Vec<Vec<Operator>>) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 {
            return Err(Error::InvalidModel("observable array is empty".into()));
        }
        let dim = rows[0][0].dim();
        for r in &rows {
            if r.len() != width {
                return Err(Error::DimensionMismatch { expected: width, found: r.len() });
            }
            if let Some(op) = r.iter().find(|op| op.dim() != dim) {
                return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
            }
        }
        Ok(ObservableArray { rows })
    }

    /// `ℒc* O` for each observable under the model's controls.
    pub fn from_controls(controls: &[GeneratorTerm], observables: &[Operator]) -> Result<Self> {
        let rows = observables
            .iter()
            .map(|o| controls.iter().map(|c| c.apply_adjoint(o)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        ObservableArray::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<Operator>] {
        &self.rows
    }

    /// Real vectorisation of row `k`, length `2·m·dim²`.
    pub fn row_vector(&self, k: usize) -> Vec<f64> {
        self.rows[k].iter().flat_map(|op| op.to_real_vec()).collect()
    }
}

/// Rank over the reals of a list of real row vectors; each nonzero row is
/// normalised first so the result does not depend on row scaling.
fn real_rank(rows: &[Vec<f64>]) -> usize {
    let nonzero: Vec<&Vec<f64>> = rows.iter().filter(|r| norm(r) > 0.0).collect();
    if nonzero.is_empty() {
        return 0;
    }
    let cols = nonzero[0].len();
    let mut m = DMatrix::<f64>::zeros(nonzero.len(), cols);
    for (i, r) in nonzero.iter().enumerate() {
        let n = norm(r);
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = v / n;
        }
    }
    let sv = m.singular_values();
    let largest = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL * largest).count()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Numerical rank of the operator rows over the reals.
pub fn operator_rank(rows: &ObservableArray) -> usize {
    let vecs: Vec<Vec<f64>> = (0..rows.len()).map(|k| rows.row_vector(k)).collect();
    real_rank(&vecs)
}

/// Relative degree `α`, or infinite when the input never reaches the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelativeDegree {
    Finite(usize),
    Infinite,
}

impl RelativeDegree {
    pub fn finite(self) -> Option<usize> {
        match self {
            RelativeDegree::Finite(a) => Some(a),
            RelativeDegree::Infinite => None,
        }
    }
}

impl Serialize for RelativeDegree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RelativeDegree::Finite(a) => s.serialize_u64(*a as u64),
            RelativeDegree::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for RelativeDegree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u64),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => Ok(RelativeDegree::Finite(n as usize)),
            Repr::S(s) if s == "infinite" => Ok(RelativeDegree::Infinite),
            Repr::S(s) => Err(serde::de::Error::custom(format!("invalid relative degree {s:?}"))),
        }
    }
}

/// An observable `O′` whose expectation is a known linear function of the
/// measured outputs and their derivatives, and whose equation
/// `d/dt⟨O′⟩ = ⟨ℒ0*O′⟩ + ⟨ℒc*O′⟩·u` carries the inputs.
#[derive(Debug, Clone)]
pub struct TransformedObservable {
    pub operator: Operator,
    /// Derivative order of the measured outputs entering the equation.
    pub order: usize,
    /// `⟨O′⟩ = Σ_d Σ_ℓ coefficients[d][ℓ] · y_ℓ^{(d)}`; `order − 1` is the
    /// highest `d`.
    pub coefficients: Vec<Vec<f64>>,
    /// Dependency coefficients that eliminated the inputs when this
    /// observable was derived; empty for measured observables.
    pub v_row: Vec<f64>,
}

impl TransformedObservable {
    /// Measured outputs that enter `⟨O′⟩`.
    pub fn source_indices(&self) -> Vec<usize> {
        let n = self.coefficients.first().map(|c| c.len()).unwrap_or(0);
        (0..n)
            .filter(|&l| self.coefficients.iter().any(|c| c[l] != 0.0))
            .collect()
    }

    /// `Σ_d Σ_ℓ coefficients[d][ℓ] · y_ℓ^{(d+1)}`, the right-hand side of the
    /// row equation before subtracting `⟨ℒ0*O′⟩`. `derivs[d][ℓ]` holds
    /// `y_ℓ^{(d)}`.
    pub fn output_rate(&self, derivs: &[Vec<f64>]) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(d, row)| row.iter().zip(&derivs[d + 1]).map(|(c, y)| c * y).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct InvertibilityVerdict {
    pub invertible: bool,
    pub relative_degree: RelativeDegree,
    pub transformed_observables: Vec<TransformedObservable>,
    pub num_inputs: usize,
    pub notes: String,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceJson {
    source_indices: Vec<usize>,
    order: usize,
    #[serde(rename = "V_row")]
    v_row: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct VerdictJson<'a> {
    invertible: bool,
    relative_degree: RelativeDegree,
    observable_provenance: Vec<ProvenanceJson>,
    notes: &'a str,
}

impl InvertibilityVerdict {
    /// `{invertible, relative_degree, observable_provenance: [...]}`.
    pub fn to_json(&self) -> Result<String> {
        let j = VerdictJson {
            invertible: self.invertible,
            relative_degree: self.relative_degree,
            observable_provenance: self
                .transformed_observables
                .iter()
                .map(|t| ProvenanceJson {
                    source_indices: t.source_indices(),
                    order: t.order,
                    v_row: t.v_row.clone(),
                    coefficients: t.coefficients.clone(),
                })
                .collect(),
            notes: &self.notes,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    /// Highest output derivative the inversion needs.
    pub fn max_order(&self) -> usize {
        self.transformed_observables.iter().map(|t| t.order).max().unwrap_or(0)
    }
}

fn search_cap(dim: usize) -> usize {
    dim.pow(4)
}

/// Relative degree of a single-input single-output model.
///
/// Finds the first `k` with `ℒ1*(ℒ0*)^k O ≠ 0` and returns `α = k + 1`.
pub fn relative_degree_siso(model: &ProbeModel) -> Result<InvertibilityVerdict> {
    if model.num_inputs() != 1 || model.num_outputs() != 1 {
        return Err(Error::InvalidModel(format!(
            "SISO analysis needs one input and one output, model has {} and {}",
            model.num_inputs(),
            model.num_outputs()
        )));
    }
    let control = &model.controls()[0];
    let c_bound = control.norm_bound();
    let d_bound = model.drift_norm_bound();
    let o = &model.observables()[0];
    let o_norm = o.op_norm();
    let cap = search_cap(model.dim());

    let mut current = o.clone();
    let mut drift_power = 1.0;
    for k in 0..=cap {
        let coupling = control.apply_adjoint(&current)?;
        if coupling.op_norm() > ZERO_TOL * c_bound * drift_power * o_norm {
            let mut coefficients = vec![vec![0.0]; k + 1];
            coefficients[k][0] = 1.0;
            return Ok(InvertibilityVerdict {
                invertible: true,
                relative_degree: RelativeDegree::Finite(k + 1),
                transformed_observables: vec![TransformedObservable {
                    operator: current,
                    order: k + 1,
                    coefficients,
                    v_row: Vec::new(),
                }],
                num_inputs: 1,
                notes: format!("input first appears in output derivative {}", k + 1),
            });
        }
        current = model.drift_adjoint(&current)?;
        drift_power *= d_bound;
        if current.op_norm() <= ZERO_TOL * drift_power * o_norm {
            return Ok(non_invertible(
                1,
                Vec::new(),
                format!("(ℒ0*)^{} O vanishes; every output derivative is input-free", k + 1),
            ));
        }
    }
    Ok(non_invertible(1, Vec::new(), format!("no coupling found within {cap} derivatives")))
}

fn non_invertible(m: usize, rows: Vec<TransformedObservable>, notes: String) -> InvertibilityVerdict {
    InvertibilityVerdict {
        invertible: false,
        relative_degree: RelativeDegree::Infinite,
        transformed_observables: rows,
        num_inputs: m,
        notes,
    }
}

struct Candidate {
    obs: TransformedObservable,
    row: Vec<f64>,
    row_norm: f64,
    zero: bool,
}

fn candidate(model: &ProbeModel, obs: TransformedObservable, c_bound: f64) -> Result<Candidate> {
    let row: Vec<f64> = model
        .controls()
        .iter()
        .map(|c| c.apply_adjoint(&obs.operator).map(|op| op.to_real_vec()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let row_norm = norm(&row);
    let zero = row_norm <= ZERO_TOL * c_bound * obs.operator.norm();
    Ok(Candidate { obs, row, row_norm, zero })
}

/// Prepends a zero derivative level: `⟨O⟩ = E[y]` implies `d/dt⟨O⟩ = E[ẏ]`.
fn differentiate(coefficients: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = coefficients[0].len();
    let mut out = Vec::with_capacity(coefficients.len() + 1);
    out.push(vec![0.0; n]);
    out.extend(coefficients.iter().cloned());
    out
}

fn axpy_levels(acc: &mut Vec<Vec<f64>>, factor: f64, other: &[Vec<f64>]) {
    let n = other[0].len();
    while acc.len() < other.len() {
        acc.push(vec![0.0; n]);
    }
    for (a, o) in acc.iter_mut().zip(other) {
        for (x, y) in a.iter_mut().zip(o) {
            *x += factor * y;
        }
    }
}

/// Least-squares `v` with `Σ_s v_s basis_s = target`; returns the relative
/// residual.
fn dependency_coefficients(basis: &[&Vec<f64>], target: &[f64]) -> (Vec<f64>, f64) {
    if basis.is_empty() {
        return (Vec::new(), if norm(target) > 0.0 { 1.0 } else { 0.0 });
    }
    let len = target.len();
    let a = DMatrix::from_fn(len, basis.len(), |i, s| basis[s][i]);
    let b = nalgebra::DVector::from_column_slice(target);
    let svd = a.clone().svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let v = svd.solve(&b, eps).expect("U and V computed");
    let resid = (&a * &v - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
    (v.iter().copied().collect(), resid)
}

/// Transforms the measured observables until the input-coupling rows reach
/// rank `m`.
///
/// Each round splits the current observables into rows that raise the
/// accumulated rank (greedy, by descending row norm) and dependent rows. A
/// dependent row `Õ` with `ℒc*Õ = Σ_s V_s ℒc*O_s` yields the input-free
/// observable `ℒ0*Õ − Σ_s V_s ℒ0*O_s`, whose expectation is the matching
/// combination of output derivatives one order higher. Every row with a
/// nonvanishing coupling is kept as an equation for the readout.
pub fn transform_observables(model: &ProbeModel) -> Result<InvertibilityVerdict> {
    let m = model.num_inputs();
    let n = model.num_outputs();
    if n < m {
        return Err(Error::UnderInstrumented { observables: n, inputs: m });
    }
    let c_bound = model
        .controls()
        .iter()
        .map(|c| c.norm_bound().powi(2))
        .sum::<f64>()
        .sqrt();
    let d_bound = model.drift_norm_bound();
    let cap = search_cap(model.dim());

    let mut current: Vec<Candidate> = model
        .observables()
        .iter()
        .enumerate()
        .map(|(l, o)| {
            let mut coefficients = vec![vec![0.0; n]];
            coefficients[0][l] = 1.0;
            candidate(
                model,
                TransformedObservable { operator: o.clone(), order: 1, coefficients, v_row: Vec::new() },
                c_bound,
            )
        })
        .collect::<Result<_>>()?;

    let mut accepted: Vec<Candidate> = Vec::new();
    let mut equations: Vec<TransformedObservable> = Vec::new();
    let mut generation = 1;

    loop {
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| {
            current[b]
                .row_norm
                .partial_cmp(&current[a].row_norm)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut slots: Vec<Option<Candidate>> = current.into_iter().map(Some).collect();
        let mut dependent: Vec<Candidate> = Vec::new();
        let mut rank = real_rank(&accepted.iter().map(|c| c.row.clone()).collect::<Vec<_>>());
        for idx in order {
            let c = slots[idx].take().expect("each index visited once");
            if c.zero {
                dependent.push(c);
                continue;
            }
            let mut rows: Vec<Vec<f64>> = accepted.iter().map(|a| a.row.clone()).collect();
            rows.push(c.row.clone());
            let new_rank = real_rank(&rows);
            if new_rank > rank && rank < m {
                rank = new_rank;
                equations.push(c.obs.clone());
                accepted.push(c);
            } else {
                equations.push(c.obs.clone());
                dependent.push(c);
            }
        }

        if rank >= m {
            let alpha = equations.iter().map(|e| e.order).max().unwrap_or(1);
            return Ok(InvertibilityVerdict {
                invertible: true,
                relative_degree: RelativeDegree::Finite(alpha),
                transformed_observables: equations,
                num_inputs: m,
                notes: format!(
                    "rank {m} reached after {generation} round(s); {} readout equations",
                    rank_summary(&accepted)
                ),
            });
        }
        if generation >= cap {
            return Ok(non_invertible(
                m,
                equations,
                format!("rank {rank} < {m} after {cap} rounds"),
            ));
        }

        // Eliminate the inputs from every dependent row.
        let basis: Vec<&Vec<f64>> = accepted.iter().map(|a| &a.row).collect();
        let mut next = Vec::new();
        for d in dependent {
            let (v, resid) = if d.zero {
                (vec![0.0; accepted.len()], 0.0)
            } else {
                dependency_coefficients(&basis, &d.row)
            };
            if resid > DEPENDENCY_RESIDUAL_TOL {
                return Err(Error::InvalidModel(format!(
                    "dependency coefficients left relative residual {resid:.3e}"
                )));
            }
            let mut op = model.drift_adjoint(&d.obs.operator)?;
            let mut coefficients = differentiate(&d.obs.coefficients);
            let mut scale = d.obs.operator.norm();
            for (vs, a) in v.iter().zip(&accepted) {
                if *vs == 0.0 {
                    continue;
                }
                op = &op - &model.drift_adjoint(&a.obs.operator)?.scale(*vs);
                axpy_levels(&mut coefficients, -vs, &differentiate(&a.obs.coefficients));
                scale += vs.abs() * a.obs.operator.norm();
            }
            if op.norm() <= ZERO_TOL * d_bound * scale {
                continue;
            }
            let order = coefficients.len();
            next.push(candidate(
                model,
                TransformedObservable { operator: op, order, coefficients, v_row: v },
                c_bound,
            )?);
        }
        if next.is_empty() {
            return Ok(non_invertible(
                m,
                equations,
                format!("rank {rank} < {m} and every derived observable vanishes"),
            ));
        }
        current = next;
        generation += 1;
    }
}

fn rank_summary(accepted: &[Candidate]) -> String {
    let orders: Vec<String> = accepted.iter().map(|a| a.obs.order.to_string()).collect();
    format!("independent rows at orders [{}]", orders.join(", "))
}
