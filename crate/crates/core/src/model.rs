//! Probe models: drift generator, controlled generators, measured
//! observables and initial state.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{
    pauli_string, product_state, DensityState, GeneratorKind, GeneratorTerm, Operator,
    HERMITIAN_TOL,
};

/// `ρ̇ = [ℒ0 + Σ_j u_j(t) ℒ_j] ρ`, measured through `y_ℓ = Tr[ρ O_ℓ]`.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    drift: Vec<GeneratorTerm>,
    controls: Vec<GeneratorTerm>,
    observables: Vec<Operator>,
    initial_state: DensityState,
    control_labels: Vec<String>,
    observable_labels: Vec<String>,
    hermitian_tol: f64,
}

impl ProbeModel {
    pub fn new(
        drift: Vec<GeneratorTerm>,
        controls: Vec<GeneratorTerm>,
        observables: Vec<Operator>,
        initial_state: DensityState,
    ) -> Result<Self> {
        let m = controls.len();
        let n = observables.len();
        let model = ProbeModel {
            drift,
            controls,
            observables,
            initial_state,
            control_labels: (1..=m).map(|j| format!("u{j}")).collect(),
            observable_labels: (1..=n).map(|l| format!("y{l}")).collect(),
            hermitian_tol: HERMITIAN_TOL,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.initial_state.dim();
        if self.controls.is_empty() {
            return Err(Error::InvalidModel("model has no control generators".into()));
        }
        if self.observables.is_empty() {
            return Err(Error::InvalidModel("model has no observables".into()));
        }
        for t in self.drift.iter().chain(&self.controls) {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: t.dim() });
            }
            if t.kind() == GeneratorKind::Hamiltonian
                && !t.operator().is_hermitian(self.hermitian_tol)
            {
                return Err(Error::NotHermitian { deviation: t.operator().hermitian_deviation() });
            }
        }
        for (l, o) in self.observables.iter().enumerate() {
            if o.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: o.dim() });
            }
            let deviation = o.hermitian_deviation();
            if deviation > self.hermitian_tol {
                return Err(Error::InvalidModel(format!(
                    "observable {} is not Hermitian (deviation {deviation:.3e})",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    pub fn with_labels(mut self, controls: Vec<String>, observables: Vec<String>) -> Result<Self> {
        if controls.len() != self.controls.len() || observables.len() != self.observables.len() {
            return Err(Error::InvalidModel("label count does not match model".into()));
        }
        self.control_labels = controls;
        self.observable_labels = observables;
        Ok(self)
    }

    /// Tightens or relaxes the Hermiticity tolerance and revalidates.
    pub fn with_hermitian_tol(mut self, tol: f64) -> Result<Self> {
        self.hermitian_tol = tol;
        self.validate()?;
        Ok(self)
    }

    /// Same dynamics measured through a different set of observables.
    pub fn with_observables(&self, observables: Vec<Operator>) -> Result<Self> {
        let n = observables.len();
        let mut m = self.clone();
        m.observables = observables;
        m.observable_labels = (1..=n).map(|l| format!("y{l}")).collect();
        m.validate()?;
        Ok(m)
    }

    pub fn with_initial_state(&self, state: DensityState) -> Result<Self> {
        let mut m = self.clone();
        m.initial_state = state;
        m.validate()?;
        Ok(m)
    }

    /// Adds a term to the drift.
    pub fn with_drift_term(&self, term: GeneratorTerm) -> Result<Self> {
        let mut m = self.clone();
        m.drift.push(term);
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.initial_state.dim()
    }

    pub fn drift(&self) -> &[GeneratorTerm] {
        &self.drift
    }

    pub fn controls(&self) -> &[GeneratorTerm] {
        &self.controls
    }

    pub fn observables(&self) -> &[Operator] {
        &self.observables
    }

    pub fn initial_state(&self) -> &DensityState {
        &self.initial_state
    }

    pub fn control_labels(&self) -> &[String] {
        &self.control_labels
    }

    pub fn observable_labels(&self) -> &[String] {
        &self.observable_labels
    }

    pub fn hermitian_tol(&self) -> f64 {
        self.hermitian_tol
    }

    /// Number of unknown inputs `m`.
    pub fn num_inputs(&self) -> usize {
        self.controls.len()
    }

    /// Number of measured observables `n`.
    pub fn num_outputs(&self) -> usize {
        self.observables.len()
    }

    /// True when every generator is a Hamiltonian commutator.
    pub fn is_closed(&self) -> bool {
        self.drift
            .iter()
            .chain(&self.controls)
            .all(|t| t.kind() == GeneratorKind::Hamiltonian)
    }

    /// `ℒ0* O`, summed over drift terms.
    pub fn drift_adjoint(&self, obs: &Operator) -> Result<Operator> {
        let mut acc = Operator::zeros(obs.dim());
        for t in &self.drift {
            acc = &acc + &t.apply_adjoint(obs)?;
        }
        Ok(acc)
    }

    /// Norm bound of the summed drift superoperator.
    pub fn drift_norm_bound(&self) -> f64 {
        self.drift.iter().map(|t| t.norm_bound()).sum()
    }
}

/// Coefficient of one term of the two-transmon Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    /// Known constant value in rad/ns; folded into the drift.
    Known(f64),
    /// Signal to be identified; becomes a control generator.
    Unknown,
}

/// Two coupled transmons,
/// `H = ω1/2 σ1z + ω2/2 σ2z + g (σ1+σ2− + σ1−σ2+)`.
///
/// Unknown coefficients become controls in the order `ω1, ω2, g`.
pub fn build_two_qubit_model(
    w1: Coefficient,
    w2: Coefficient,
    g: Coefficient,
    observables: Vec<Operator>,
    initial_state: DensityState,
) -> Result<ProbeModel> {
    if observables.is_empty() {
        return Err(Error::InvalidModel("no observables given".into()));
    }
    if let Some(o) = observables.iter().find(|o| o.dim() != 4) {
        return Err(Error::DimensionMismatch { expected: 4, found: o.dim() });
    }
    let z1 = pauli_string("ZI")?.scale(0.5);
    let z2 = pauli_string("IZ")?.scale(0.5);
    let exchange = &pauli_string("+-")? + &pauli_string("-+")?;
    let parts = [("w1", w1, z1), ("w2", w2, z2), ("g", g, exchange)];

    let mut drift_h = Operator::zeros(4);
    let mut controls = Vec::new();
    let mut labels = Vec::new();
    for (name, coef, op) in parts {
        match coef {
            Coefficient::Known(v) => drift_h = &drift_h + &op.scale(v),
            Coefficient::Unknown => {
                controls.push(GeneratorTerm::hamiltonian(op, HERMITIAN_TOL)?);
                labels.push(name.to_string());
            }
        }
    }
    if controls.is_empty() {
        return Err(Error::InvalidModel(
            "all coefficients are known constants; nothing to identify".into(),
        ));
    }
    let drift = if drift_h.norm() > 0.0 {
        vec![GeneratorTerm::hamiltonian(drift_h, HERMITIAN_TOL)?]
    } else {
        Vec::new()
    };
    let n = observables.len();
    ProbeModel::new(drift, controls, observables, initial_state)?
        .with_labels(labels, (1..=n).map(|l| format!("y{l}")).collect())
}

/// `(√(2/3)|0⟩ + √(1/3)|1⟩) ⊗ ((√3/2)|0⟩ + (1/2)|1⟩)`.
pub fn reference_two_qubit_state() -> DensityState {
    let r = |x: f64| Complex64::new(x, 0.0);
    let psi = product_state(&[
        [r((2.0f64 / 3.0).sqrt()), r((1.0f64 / 3.0).sqrt())],
        [r(3.0f64.sqrt() / 2.0), r(0.5)],
    ])
    .expect("nonzero amplitudes");
    DensityState::pure(&psi).expect("normalised product state")
}

/// Single-qubit pure state `(|0⟩ + e^{iφ}|1⟩)/√2`.
pub fn equator_state(phase: f64) -> DensityState {
    let psi = DVector::from_vec(vec![
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, phase),
    ]);
    DensityState::pure(&psi).expect("nonzero state")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::expectation;
    use crate::signal::mhz;
    use approx::assert_abs_diff_eq;

    fn obs(s: &[&str]) -> Vec<Operator> {
        s.iter().map(|p| pauli_string(p).unwrap()).collect()
    }

    #[test]
    fn single_unknown_coupling() {
        let m = build_two_qubit_model(
            Coefficient::Known(mhz(1.0)),
            Coefficient::Known(mhz(1.0)),
            Coefficient::Unknown,
            obs(&["YI"]),
            reference_two_qubit_state(),
        )
        .unwrap();
        assert_eq!(m.num_inputs(), 1);
        assert_eq!(m.drift().len(), 1);
        assert_eq!(m.control_labels(), &["g".to_string()]);
        let expected_drift = &pauli_string("ZI").unwrap().scale(mhz(1.0) / 2.0)
            + &pauli_string("IZ").unwrap().scale(mhz(1.0) / 2.0);
        assert!(m.drift()[0].operator().max_abs_diff(&expected_drift) < 1e-15);
        assert!(m.controls()[0].operator().is_hermitian(1e-15));
    }

    #[test]
    fn all_unknown() {
        let m = build_two_qubit_model(
            Coefficient::Unknown,
            Coefficient::Unknown,
            Coefficient::Unknown,
            obs(&["XI", "YI", "IX"]),
            reference_two_qubit_state(),
        )
        .unwrap();
        assert_eq!(m.num_inputs(), 3);
        assert!(m.drift().is_empty());
        assert_eq!(m.control_labels(), &["w1", "w2", "g"]);
    }

    #[test]
    fn all_known_is_rejected() {
        let r = build_two_qubit_model(
            Coefficient::Known(1.0),
            Coefficient::Known(1.0),
            Coefficient::Known(1.0),
            obs(&["XI"]),
            reference_two_qubit_state(),
        );
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn wrong_observable_dimension_is_rejected() {
        let r = build_two_qubit_model(
            Coefficient::Unknown,
            Coefficient::Known(1.0),
            Coefficient::Known(1.0),
            obs(&["X"]),
            reference_two_qubit_state(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn reference_state_is_rank_one_with_unit_trace() {
        let s = reference_two_qubit_state();
        assert_abs_diff_eq!(s.matrix().trace().re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.purity(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            expectation(&s, &pauli_string("ZI").unwrap()).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            expectation(&s, &pauli_string("IX").unwrap()).unwrap(),
            3.0f64.sqrt() / 2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn non_hermitian_observable_rejected() {
        let s = equator_state(0.0);
        let z = GeneratorTerm::hamiltonian(pauli_string("Z").unwrap(), HERMITIAN_TOL).unwrap();
        let r = ProbeModel::new(vec![], vec![z], vec![pauli_string("+").unwrap()], s);
        assert!(r.is_err());
    }
}
