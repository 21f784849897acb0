//! Fixed-step RK4 integration of the controlled master equation and of the
//! closed-system Schrödinger equation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ProbeModel;
use crate::operator::{expectation_raw, DensityState, GeneratorKind, GeneratorTerm};
use crate::signal::{MeasurementRecord, SignalSpec, TimeSeries};

/// Trace drift beyond which a simulation is aborted.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

const CI: Complex64 = Complex64::new(0.0, 1.0);
const RK4_NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Integration step, ns.
    pub dt: f64,
    /// Output decimation: one record sample every `sample_every` steps.
    pub sample_every: usize,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 0.1, sample_every: 5, method: Method::Rk4 }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, sample_every: usize) -> Result<Self> {
        let cfg = IntegratorConfig { dt, sample_every, method: Method::Rk4 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("integration step must be positive, got {}", self.dt)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidConfig("sample_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of integration steps covering `[0, horizon]`.
    pub fn steps(&self, horizon: f64) -> Result<usize> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        let n = (horizon / self.dt).round() as usize;
        if n == 0 {
            return Err(Error::InvalidConfig("horizon shorter than one step".into()));
        }
        Ok(n)
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.sample_every as f64
    }
}

/// Summed generator `ℒ0 + Σ u_j ℒ_j`, with Hamiltonian parts pre-assembled.
pub(crate) struct Dynamics {
    h_drift: DMatrix<Complex64>,
    h_controls: Vec<(usize, DMatrix<Complex64>)>,
    dissipators: Vec<GeneratorTerm>,
    dissipative_controls: Vec<(usize, GeneratorTerm)>,
}

impl Dynamics {
    pub(crate) fn new(model: &ProbeModel) -> Self {
        let dim = model.dim();
        let mut h_drift = DMatrix::zeros(dim, dim);
        let mut dissipators = Vec::new();
        for t in model.drift() {
            match t.kind() {
                GeneratorKind::Hamiltonian => h_drift += t.operator().matrix(),
                GeneratorKind::Lindblad => dissipators.push(t.clone()),
            }
        }
        let mut h_controls = Vec::new();
        let mut dissipative_controls = Vec::new();
        for (j, t) in model.controls().iter().enumerate() {
            match t.kind() {
                GeneratorKind::Hamiltonian => h_controls.push((j, t.operator().matrix().clone())),
                GeneratorKind::Lindblad => dissipative_controls.push((j, t.clone())),
            }
        }
        Dynamics { h_drift, h_controls, dissipators, dissipative_controls }
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.dissipators.is_empty() && self.dissipative_controls.is_empty()
    }

    pub(crate) fn hamiltonian(&self, u: &[f64]) -> DMatrix<Complex64> {
        let mut h = self.h_drift.clone();
        for (j, hj) in &self.h_controls {
            h += hj * Complex64::new(u[*j], 0.0);
        }
        h
    }

    pub(crate) fn hamiltonian_into(&self, u: &[f64], out: &mut DMatrix<Complex64>) {
        out.copy_from(&self.h_drift);
        for (j, hj) in &self.h_controls {
            out.zip_apply(hj, |a, b| *a += b * u[*j]);
        }
    }

    /// `[ℒ0 + Σ u_j ℒ_j] ρ`.
    pub(crate) fn apply(&self, u: &[f64], rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let h = self.hamiltonian(u);
        let mut out = (&h * rho - rho * &h) * (-CI);
        for d in &self.dissipators {
            out += d.forward_raw(rho);
        }
        for (j, d) in &self.dissipative_controls {
            out += d.forward_raw(rho) * Complex64::new(u[*j], 0.0);
        }
        out
    }
}

/// One classical RK4 step for `ρ̇ = f(stage, ρ)`.
pub(crate) fn rk4_step<F>(rho: &DMatrix<Complex64>, h: f64, mut f: F) -> DMatrix<Complex64>
where
    F: FnMut(usize, &DMatrix<Complex64>) -> DMatrix<Complex64>,
{
    let half = Complex64::new(h / 2.0, 0.0);
    let full = Complex64::new(h, 0.0);
    let k1 = f(0, rho);
    let k2 = f(1, &(rho + &k1 * half));
    let k3 = f(2, &(rho + &k2 * half));
    let k4 = f(3, &(rho + &k3 * full));
    rho + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
        * Complex64::new(h / 6.0, 0.0)
}

/// Evaluates every input at an RK4 stage.
pub(crate) fn stage_inputs(inputs: &[SignalSpec], t: f64, h: f64, stage: usize, out: &mut [f64]) {
    for (o, s) in out.iter_mut().zip(inputs) {
        *o = s.eval_stage(t, h, RK4_NODES[stage]);
    }
}

/// Density-matrix trajectory sampled on the record grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DensityState>,
    pub record: MeasurementRecord,
    /// Largest `|Tr ρ − 1|` seen over all integration steps.
    pub max_trace_drift: f64,
}

fn check_inputs(model: &ProbeModel, inputs: &[SignalSpec]) -> Result<()> {
    if inputs.len() != model.num_inputs() {
        return Err(Error::InvalidConfig(format!(
            "model has {} controls but {} input signals were given",
            model.num_inputs(),
            inputs.len()
        )));
    }
    Ok(())
}

/// Integrates `ρ̇ = [ℒ0 + u(t)·ℒc] ρ` from the model's initial state and
/// records `y_ℓ = Tr[ρ O_ℓ]` every `sample_every` steps.
pub fn simulate(
    model: &ProbeModel,
    inputs: &[SignalSpec],
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_inputs(model, inputs)?;
    let steps = cfg.steps(horizon)?;
    let dyn_ = Dynamics::new(model);
    let obs: Vec<&DMatrix<Complex64>> = model.observables().iter().map(|o| o.matrix()).collect();

    let mut rho = model.initial_state().matrix().matrix().clone();
    let mut u = vec![0.0; inputs.len()];
    let mut states = Vec::with_capacity(steps / cfg.sample_every + 1);
    let mut values = Vec::with_capacity(steps / cfg.sample_every + 1);
    let mut max_drift = 0.0_f64;

    let mut record_sample = |rho: &DMatrix<Complex64>| {
        values.push(obs.iter().map(|o| expectation_raw(rho, o)).collect::<Vec<_>>());
        states.push(DensityState::from_trusted(rho.clone()));
    };
    record_sample(&rho);

    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        rho = rk4_step(&rho, cfg.dt, |stage, r| {
            stage_inputs(inputs, t, cfg.dt, stage, &mut u);
            dyn_.apply(&u, r)
        });
        let drift = (rho.trace() - Complex64::new(1.0, 0.0)).norm();
        max_drift = max_drift.max(drift);
        if drift > TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::TraceDrift { time: t + cfg.dt, drift });
        }
        if (k + 1) % cfg.sample_every == 0 {
            record_sample(&rho);
        }
    }
    let record = TimeSeries::new(0.0, cfg.sample_dt(), values)?;
    Ok(Trajectory { states, record, max_trace_drift: max_drift })
}

/// Wavefunction path from [`closed_state_simulate`].
#[derive(Debug, Clone)]
pub struct WavefunctionPath {
    pub states: Vec<DVector<Complex64>>,
    pub record: MeasurementRecord,
    /// Largest `|‖ψ‖ − 1|` observed before per-step renormalisation.
    pub max_norm_drift: f64,
}

/// Integrates `ψ̇ = −i H(t) ψ` with RK4, renormalising after every step.
///
/// Fails if the model contains any Lindblad term.
pub fn closed_state_simulate(
    model: &ProbeModel,
    inputs: &[SignalSpec],
    psi0: &DVector<Complex64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<WavefunctionPath> {
    let (states, record, drift) = closed_core(model, inputs, psi0, horizon, cfg, true)?;
    Ok(WavefunctionPath { states, record, max_norm_drift: drift })
}

/// Record-only variant of [`closed_state_simulate`].
pub(crate) fn closed_record(
    model: &ProbeModel,
    inputs: &[SignalSpec],
    psi0: &DVector<Complex64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<MeasurementRecord> {
    closed_core(model, inputs, psi0, horizon, cfg, false).map(|(_, r, _)| r)
}

fn closed_core(
    model: &ProbeModel,
    inputs: &[SignalSpec],
    psi0: &DVector<Complex64>,
    horizon: f64,
    cfg: &IntegratorConfig,
    keep_states: bool,
) -> Result<(Vec<DVector<Complex64>>, MeasurementRecord, f64)> {
    cfg.validate()?;
    check_inputs(model, inputs)?;
    let dyn_ = Dynamics::new(model);
    if !dyn_.is_closed() {
        return Err(Error::InvalidModel(
            "closed-state integration requires a model without Lindblad terms".into(),
        ));
    }
    if psi0.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: psi0.len() });
    }
    let steps = cfg.steps(horizon)?;
    let obs: Vec<&DMatrix<Complex64>> = model.observables().iter().map(|o| o.matrix()).collect();
    let norm0 = psi0.norm();
    if norm0 == 0.0 {
        return Err(Error::InvalidState("initial state vector has zero norm".into()));
    }
    let mut psi = psi0 / Complex64::new(norm0, 0.0);
    let dim = psi.len();
    let mut u = vec![0.0; inputs.len()];
    let mut states = Vec::new();
    let mut values = Vec::with_capacity(steps / cfg.sample_every + 1);
    let mut max_drift = 0.0_f64;
    let h = cfg.dt;
    let mut scratch = DVector::zeros(dim);
    let mut push = |psi: &DVector<Complex64>, states: &mut Vec<DVector<Complex64>>, scratch: &mut DVector<Complex64>| {
        values.push(
            obs.iter()
                .map(|o| {
                    scratch.gemv(Complex64::new(1.0, 0.0), o, psi, Complex64::new(0.0, 0.0));
                    psi.dotc(scratch).re
                })
                .collect::<Vec<_>>(),
        );
        if keep_states {
            states.push(psi.clone());
        }
    };
    push(&psi, &mut states, &mut scratch);

    let mut ham = DMatrix::zeros(dim, dim);
    let mut ks: [DVector<Complex64>; 4] = std::array::from_fn(|_| DVector::zeros(dim));
    let mut probe = DVector::zeros(dim);
    for k in 0..steps {
        let t = k as f64 * h;
        for stage in 0..4 {
            stage_inputs(inputs, t, h, stage, &mut u);
            dyn_.hamiltonian_into(&u, &mut ham);
            if stage == 0 {
                probe.copy_from(&psi);
            } else {
                let a = if stage == 3 { h } else { h / 2.0 };
                probe.copy_from(&psi);
                probe.axpy(Complex64::new(a, 0.0), &ks[stage - 1], Complex64::new(1.0, 0.0));
            }
            ks[stage].gemv(-CI, &ham, &probe, Complex64::new(0.0, 0.0));
        }
        let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        for (kv, wi) in ks.iter().zip(w) {
            psi.axpy(Complex64::new(wi, 0.0), kv, Complex64::new(1.0, 0.0));
        }
        let n = psi.norm();
        max_drift = max_drift.max((n - 1.0).abs());
        psi /= Complex64::new(n, 0.0);
        if (k + 1) % cfg.sample_every == 0 {
            push(&psi, &mut states, &mut scratch);
        }
    }
    let record = TimeSeries::new(0.0, cfg.sample_dt(), values)?;
    Ok((states, record, max_drift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::equator_state;
    use crate::operator::{pauli, pauli_string, Pauli, HERMITIAN_TOL};

    fn phase_model(obs: Pauli) -> ProbeModel {
        let z = GeneratorTerm::hamiltonian(pauli(Pauli::Z), HERMITIAN_TOL).unwrap();
        ProbeModel::new(vec![], vec![z], vec![pauli(obs)], equator_state(0.0)).unwrap()
    }

    #[test]
    fn zero_hamiltonian_keeps_record_constant() {
        let m = phase_model(Pauli::X);
        let tr = simulate(&m, &[SignalSpec::Constant(0.0)], 5.0, &IntegratorConfig::default()).unwrap();
        assert!(tr.record.channel(0).iter().all(|y| (y - 1.0).abs() < 1e-15));
    }

    #[test]
    fn phase_accumulates_at_twice_the_integrated_input() {
        // H = uσz gives ψ = (e^{−iθ}|0⟩ + e^{iθ}|1⟩)/√2 with θ = ∫u, so
        // ⟨σx⟩ = cos 2θ. For u = sin t, θ = 1 − cos t.
        let m = phase_model(Pauli::X);
        let cfg = IntegratorConfig::new(0.01, 1).unwrap();
        let u = SignalSpec::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        let tr = simulate(&m, &[u], 10.0, &cfg).unwrap();
        let worst = tr
            .record
            .times()
            .iter()
            .zip(tr.record.channel(0))
            .map(|(t, y)| (y - (2.0 * (1.0 - t.cos())).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "max deviation {worst}");
    }

    #[test]
    fn sign_flipped_input_gives_same_record() {
        let m = phase_model(Pauli::X);
        let cfg = IntegratorConfig::new(0.01, 1).unwrap();
        let u = |a| SignalSpec::Sinusoid { amplitude: a, frequency: 1.0, phase: 0.0 };
        let a = simulate(&m, &[u(1.0)], 10.0, &cfg).unwrap().record;
        let b = simulate(&m, &[u(-1.0)], 10.0, &cfg).unwrap().record;
        for (x, y) in a.channel(0).iter().zip(b.channel(0)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn input_count_must_match() {
        let m = phase_model(Pauli::X);
        assert!(simulate(&m, &[], 1.0, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn closed_path_rejects_lindblad() {
        let m = phase_model(Pauli::X)
            .with_drift_term(GeneratorTerm::lindblad(pauli(Pauli::Z).scale(0.1)))
            .unwrap();
        let psi = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let r = closed_state_simulate(&m, &[SignalSpec::Constant(0.0)], &psi, 1.0, &IntegratorConfig::default());
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn closed_path_with_zero_generator_is_static() {
        let m = phase_model(Pauli::X);
        let psi = DVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let p = closed_state_simulate(&m, &[SignalSpec::Constant(0.0)], &psi, 3.0, &IntegratorConfig::default()).unwrap();
        for s in &p.states {
            assert!((s - &psi).norm() < 1e-15);
        }
    }

    #[test]
    fn two_qubit_dimension_runs() {
        let x = GeneratorTerm::hamiltonian(
            &pauli_string("+-").unwrap() + &pauli_string("-+").unwrap(),
            HERMITIAN_TOL,
        )
        .unwrap();
        let m = ProbeModel::new(
            vec![],
            vec![x],
            vec![pauli_string("YI").unwrap()],
            crate::model::reference_two_qubit_state(),
        )
        .unwrap();
        let tr = simulate(&m, &[SignalSpec::Constant(0.05)], 10.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.record.len(), 21);
        assert!(tr.max_trace_drift < 1e-12);
    }
}
