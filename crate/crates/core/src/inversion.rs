//! Input reconstruction by integrating the inverse system.
//!
//! The inverse system carries its own copy of the state. At every RK4 stage
//! the inputs are read out from `M(ρ) u = rhs`, where row `k` of `M` holds
//! `⟨ℒj*O′_k⟩` for the transformed observables and `rhs` is built from the
//! measured output derivatives.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::derivative::{estimate_derivatives, three_point, DerivativeScheme};
use crate::error::{Error, Result};
use crate::forward::{rk4_step, Dynamics, TRACE_DRIFT_LIMIT};
use crate::invertibility::InvertibilityVerdict;
use crate::model::ProbeModel;
use crate::operator::{expectation_raw, DensityState};
use crate::signal::{MeasurementRecord, SignalSpec, SignalTrace, TimeSeries};

/// Singular values below this fraction of the largest are dropped by the
/// pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-3;
/// Below this every singular value counts as zero.
pub const UNRECOVERABLE_FLOOR: f64 = 1e-14;
/// Samples added on each side of a singular window when scoring.
pub const WINDOW_DILATION: usize = 5;

const STAGE_NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HoldPolicy {
    /// Keep the last input read out before the window.
    #[default]
    HoldLast,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub derivative_scheme: DerivativeScheme,
    /// Smallest singular value of `M`, relative to its attainable maximum,
    /// below which a step is treated as singular.
    pub singular_threshold: f64,
    pub hold_policy: HoldPolicy,
    /// Output-injection gain `λ`, 1/ns. Each row equation gains
    /// `λ (E_k[y] − ⟨O′_k⟩)`, which pulls the inverse state back onto the
    /// measured record after a singular window. Zero gives the plain
    /// inverse system.
    pub output_gain: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            derivative_scheme: DerivativeScheme::ThreePoint,
            singular_threshold: 1e-3,
            hold_policy: HoldPolicy::HoldLast,
            output_gain: 0.0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self, order: usize) -> Result<()> {
        if !(self.singular_threshold > 0.0 && self.singular_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "singular threshold must lie in (0, 1), got {}",
                self.singular_threshold
            )));
        }
        if !(self.output_gain >= 0.0) || !self.output_gain.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "output gain must be non-negative, got {}",
                self.output_gain
            )));
        }
        self.derivative_scheme.validate(order)
    }
}

struct PlanRow {
    operator: DMatrix<Complex64>,
    drift: DMatrix<Complex64>,
    couplings: Vec<DMatrix<Complex64>>,
    coefficients: Vec<Vec<f64>>,
}

/// Precomputed operators for the input readout.
pub struct ReadoutPlan {
    rows: Vec<PlanRow>,
    num_inputs: usize,
    num_outputs: usize,
    max_order: usize,
    scale: f64,
}

impl ReadoutPlan {
    pub fn new(model: &ProbeModel, verdict: &InvertibilityVerdict) -> Result<Self> {
        if !verdict.invertible {
            return Err(Error::NotInvertible(verdict.notes.clone()));
        }
        if verdict.num_inputs != model.num_inputs() {
            return Err(Error::DimensionMismatch {
                expected: model.num_inputs(),
                found: verdict.num_inputs,
            });
        }
        let mut rows = Vec::new();
        let mut sq = 0.0;
        for t in &verdict.transformed_observables {
            if t.operator.dim() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), found: t.operator.dim() });
            }
            if t.coefficients.iter().any(|c| c.len() != model.num_outputs()) {
                return Err(Error::DimensionMismatch {
                    expected: model.num_outputs(),
                    found: t.coefficients[0].len(),
                });
            }
            let mut couplings = Vec::new();
            for c in model.controls() {
                let op = c.apply_adjoint(&t.operator)?;
                sq += op.op_norm().powi(2);
                couplings.push(op.into_matrix());
            }
            rows.push(PlanRow {
                operator: t.operator.matrix().clone(),
                drift: model.drift_adjoint(&t.operator)?.into_matrix(),
                couplings,
                coefficients: t.coefficients.clone(),
            });
        }
        Ok(ReadoutPlan {
            rows,
            num_inputs: model.num_inputs(),
            num_outputs: model.num_outputs(),
            max_order: verdict.max_order(),
            scale: sq.sqrt(),
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Highest output derivative needed.
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `√Σ‖ℒj*O′_k‖²`, an upper bound on every singular value of `M`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn matrix_raw(&self, rho: &DMatrix<Complex64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.num_inputs, |k, j| {
            expectation_raw(rho, &self.rows[k].couplings[j])
        })
    }

    /// `M(ρ)`, rows indexed by transformed observable, columns by input.
    pub fn matrix(&self, state: &DensityState) -> DMatrix<f64> {
        self.matrix_raw(state.matrix().matrix())
    }

    /// Output-derivative part of each row equation; `derivs[d][ℓ]` holds
    /// `y_ℓ^{(d)}`.
    pub fn output_rates(&self, derivs: &[Vec<f64>]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                r.coefficients
                    .iter()
                    .enumerate()
                    .map(|(d, c)| c.iter().zip(&derivs[d + 1]).map(|(a, y)| a * y).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    /// `E_k[y]`, the measured value of each `⟨O′_k⟩`.
    pub fn output_values(&self, derivs: &[Vec<f64>]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                r.coefficients
                    .iter()
                    .enumerate()
                    .map(|(d, c)| c.iter().zip(&derivs[d]).map(|(a, y)| a * y).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    fn rhs_raw(&self, rho: &DMatrix<Complex64>, rates: &[f64], targets: &[f64], gain: f64) -> Vec<f64> {
        self.rows
            .iter()
            .zip(rates.iter().zip(targets))
            .map(|(r, (rate, target))| {
                let mut v = rate - expectation_raw(rho, &r.drift);
                if gain > 0.0 {
                    v += gain * (target - expectation_raw(rho, &r.operator));
                }
                v
            })
            .collect()
    }

    /// `rhs_k = f_k[y derivatives] − ⟨ℒ0*O′_k⟩`.
    pub fn rhs(&self, state: &DensityState, derivs: &[Vec<f64>]) -> Vec<f64> {
        let unused = vec![0.0; self.rows.len()];
        self.rhs_raw(state.matrix().matrix(), &self.output_rates(derivs), &unused, 0.0)
    }
}

/// Result of one readout: the inputs and the singular values of `M`,
/// largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub u: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// `det M` for square `M`, used to catch zero crossings between samples.
    pub determinant: Option<f64>,
}

impl Readout {
    pub fn smin(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn smax(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

fn solve(m: DMatrix<f64>, rhs: &[f64]) -> Readout {
    let determinant = (m.nrows() == m.ncols()).then(|| m.determinant());
    let svd = m.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let u = if smax < UNRECOVERABLE_FLOOR {
        vec![0.0; svd.v_t.as_ref().map(|v| v.ncols()).unwrap_or(0)]
    } else {
        let b = DVector::from_column_slice(rhs);
        let x = svd.solve(&b, PINV_CUTOFF * smax).expect("U and V computed");
        x.iter().copied().collect()
    };
    Readout { u, singular_values: sv, determinant }
}

/// Least-squares solution of `M(ρ) u = rhs` through the pseudo-inverse.
pub fn readout_inputs(state: &DensityState, plan: &ReadoutPlan, rhs: &[f64]) -> Result<Readout> {
    if state.dim() != plan.rows[0].drift.nrows() {
        return Err(Error::DimensionMismatch { expected: plan.rows[0].drift.nrows(), found: state.dim() });
    }
    if rhs.len() != plan.num_rows() {
        return Err(Error::DimensionMismatch { expected: plan.num_rows(), found: rhs.len() });
    }
    let r = solve(plan.matrix(state), rhs);
    if r.smax() < UNRECOVERABLE_FLOOR {
        return Err(Error::Unrecoverable { largest: r.smax() });
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionSample {
    pub smin: f64,
    pub smax: f64,
}

#[derive(Debug, Clone)]
pub struct InversionReport {
    pub reconstructed: SignalTrace,
    /// Singular values of `M` at each sample of the inverse state.
    pub condition_trace: Vec<ConditionSample>,
    /// Samples whose following step was flagged singular.
    pub flags: Vec<bool>,
    /// Maximal flagged intervals `[t_start, t_end]`, ns.
    pub singular_windows: Vec<(f64, f64)>,
    pub state_path: Vec<DensityState>,
    /// Reference for the relative singular threshold.
    pub scale: f64,
}

impl InversionReport {
    /// `true` for samples at least `dilation` samples away from every flagged
    /// sample.
    pub fn clear_mask(&self, dilation: usize) -> Vec<bool> {
        let n = self.flags.len();
        let mut mask = vec![true; n];
        for (i, _) in self.flags.iter().enumerate().filter(|(_, f)| **f) {
            let lo = i.saturating_sub(dilation);
            let hi = (i + dilation).min(n - 1);
            mask[lo..=hi].iter_mut().for_each(|m| *m = false);
        }
        mask
    }

    /// Per-channel `‖û − u‖₂/‖u‖₂` against the true inputs, over the samples
    /// selected by `mask`.
    pub fn relative_errors(&self, truth: &[SignalSpec], mask: &[bool]) -> Vec<f64> {
        let times = self.reconstructed.times();
        (0..self.reconstructed.width())
            .map(|j| {
                let est = self.reconstructed.channel(j);
                let tru: Vec<f64> = times.iter().map(|&t| truth[j].eval(t)).collect();
                relative_l2(&est, &tru, mask)
            })
            .collect()
    }

    /// Total duration covered by singular windows.
    pub fn window_measure(&self) -> f64 {
        self.singular_windows.iter().map(|(a, b)| b - a).sum()
    }
}

/// `‖a − b‖₂/‖b‖₂` over masked samples.
pub fn relative_l2(est: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((e, t), keep) in est.iter().zip(truth).zip(mask) {
        if *keep {
            num += (e - t).powi(2);
            den += t * t;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn windows_from_flags(flags: &[bool], t0: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((t0 + s as f64 * dt, t0 + i as f64 * dt));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((t0 + s as f64 * dt, t0 + (flags.len() - 1) as f64 * dt));
    }
    out
}

/// Reconstructs the inputs that produced `record`.
///
/// Steps whose readout is singular at any stage (or, for square `M`, whose
/// determinant changes sign) are redone with the input given by the hold
/// policy and reported as singular windows.
pub fn invert(
    model: &ProbeModel,
    verdict: &InvertibilityVerdict,
    record: &MeasurementRecord,
    cfg: &InversionConfig,
) -> Result<InversionReport> {
    let plan = ReadoutPlan::new(model, verdict)?;
    cfg.validate(plan.max_order)?;
    if record.width() != plan.num_outputs {
        return Err(Error::RecordMismatch(format!(
            "record has {} channels, model has {} observables",
            record.width(),
            plan.num_outputs
        )));
    }
    let derivs = estimate_derivatives(record, plan.max_order, cfg.derivative_scheme)?;
    let n = record.len();
    let mut rates = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let levels: Vec<Vec<f64>> = std::iter::once(record.sample(i).to_vec())
            .chain(derivs.iter().map(|d| d.sample(i).to_vec()))
            .collect();
        rates.push(plan.output_rates(&levels));
        targets.push(plan.output_values(&levels));
    }
    let rates = TimeSeries::new(record.t0(), record.dt(), rates)?;
    let targets = TimeSeries::new(record.t0(), record.dt(), targets)?;

    let dyn_ = Dynamics::new(model);
    let m = plan.num_inputs;
    let h = record.dt();
    let floor = cfg.singular_threshold * plan.scale;
    let mut rho = model.initial_state().matrix().matrix().clone();

    let gain = cfg.output_gain;
    let mut rate = vec![0.0; plan.num_rows()];
    let mut target = vec![0.0; plan.num_rows()];
    let mut read = |rho: &DMatrix<Complex64>, t: f64| {
        rates.interpolate(t, &mut rate);
        if gain > 0.0 {
            targets.interpolate(t, &mut target);
        }
        solve(plan.matrix_raw(rho), &plan.rhs_raw(rho, &rate, &target, gain))
    };

    let first = read(&rho, record.t0());
    if first.smin() < floor {
        return Err(Error::SingularStart { smin: first.smin(), threshold: floor });
    }

    let mut u_hat = Vec::with_capacity(n);
    let mut condition = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut last_good = first.u.clone();

    for i in 0..n {
        let t = record.time(i);
        states.push(DensityState::from_trusted(rho.clone()));
        let here = read(&rho, t);
        condition.push(ConditionSample { smin: here.smin(), smax: here.smax() });
        if i + 1 == n {
            let singular = here.smin() < floor;
            flags.push(singular);
            u_hat.push(if singular { held(&last_good, cfg.hold_policy, m) } else { here.u });
            break;
        }

        let mut singular = here.smin() < floor;
        let sign0 = here.determinant.map(f64::signum);
        let stepped = rk4_step(&rho, h, |stage, r| {
            let res = read(r, t + STAGE_NODES[stage] * h);
            if res.smin() < floor {
                singular = true;
            }
            if let (Some(s0), Some(d)) = (sign0, res.determinant) {
                if d.signum() != s0 {
                    singular = true;
                }
            }
            dyn_.apply(&res.u, r)
        });
        let u_i = if singular {
            let hold = held(&last_good, cfg.hold_policy, m);
            rho = rk4_step(&rho, h, |_, r| dyn_.apply(&hold, r));
            hold
        } else {
            rho = stepped;
            last_good = here.u.clone();
            here.u
        };
        flags.push(singular);
        u_hat.push(u_i);

        let drift = (rho.trace() - Complex64::new(1.0, 0.0)).norm();
        if drift > TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::TraceDrift { time: t + h, drift });
        }
    }

    Ok(InversionReport {
        reconstructed: TimeSeries::new(record.t0(), h, u_hat)?,
        singular_windows: windows_from_flags(&flags, record.t0(), h),
        condition_trace: condition,
        flags,
        state_path: states,
        scale: plan.scale,
    })
}

fn held(last: &[f64], policy: HoldPolicy, m: usize) -> Vec<f64> {
    match policy {
        HoldPolicy::HoldLast => last.to_vec(),
        HoldPolicy::Zero => vec![0.0; m],
    }
}

/// The two sign branches of the direct Ramsey formula.
#[derive(Debug, Clone)]
pub struct RamseyBranches {
    pub plus: SignalTrace,
    pub minus: SignalTrace,
    /// Sample times where `1 − y²` vanished and the value was held.
    pub branch_points: Vec<f64>,
}

/// Below this `1 − y²` the direct formula is undefined.
pub const BRANCH_POINT_TOL: f64 = 1e-12;
/// Within this distance of `|y| = 1` the branch sign may be switched to keep
/// the estimate continuous.
const BRANCH_REGION: f64 = 1e-2;

/// Direct readout `u = ∓ẏ/(2√(1 − y²))` for `H = uσz`, `O = σx`, started
/// on the equator.
///
/// The record fixes `|u|` but not its sign. Each branch keeps its sign
/// except where `y` passes through `±1`, where it takes whichever sign
/// continues the trace smoothly.
pub fn ramsey_direct(record: &MeasurementRecord) -> Result<RamseyBranches> {
    if record.width() != 1 {
        return Err(Error::RecordMismatch(format!(
            "direct Ramsey readout needs a scalar record, got {} channels",
            record.width()
        )));
    }
    if record.len() < 4 {
        return Err(Error::RecordTooShort { len: record.len(), needed: 4 });
    }
    let y = record.channel(0);
    let dy = three_point(&y, record.dt());
    let mut plus = Vec::with_capacity(y.len());
    let mut branch_points = Vec::new();
    let mut sign = 1.0;
    for (i, (yi, di)) in y.iter().zip(&dy).enumerate() {
        let arg = 1.0 - yi * yi;
        let prev = plus.last().copied().unwrap_or(0.0);
        if arg < BRANCH_POINT_TOL {
            branch_points.push(record.time(i));
            plus.push(prev);
            continue;
        }
        let raw = -di / (2.0 * arg.sqrt());
        if arg < BRANCH_REGION && i >= 2 {
            let guess = 2.0 * prev - plus[i - 2];
            if (raw * sign - guess).abs() > (-raw * sign - guess).abs() {
                sign = -sign;
            }
        }
        plus.push(raw * sign);
    }
    let minus: Vec<f64> = plus.iter().map(|v| -v).collect();
    let wrap = |v: Vec<f64>| TimeSeries::from_channels(record.t0(), record.dt(), &[v]);
    Ok(RamseyBranches { plus: wrap(plus)?, minus: wrap(minus)?, branch_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate, IntegratorConfig};
    use crate::invertibility::{relative_degree_siso, transform_observables};
    use crate::model::equator_state;
    use crate::operator::{pauli, GeneratorTerm, Pauli, HERMITIAN_TOL};
    use nalgebra::DVector;

    fn phase_model(state: DensityState) -> ProbeModel {
        let z = GeneratorTerm::hamiltonian(pauli(Pauli::Z), HERMITIAN_TOL).unwrap();
        ProbeModel::new(vec![], vec![z], vec![pauli(Pauli::X)], state).unwrap()
    }

    #[test]
    fn readout_singular_on_plus_state() {
        let m = phase_model(equator_state(0.0));
        let v = relative_degree_siso(&m).unwrap();
        let plan = ReadoutPlan::new(&m, &v).unwrap();
        let r = solve(plan.matrix(m.initial_state()), &[0.3]);
        assert!(r.smin() < 1e-15);
        assert!(matches!(
            readout_inputs(m.initial_state(), &plan, &[0.3]),
            Err(Error::Unrecoverable { .. })
        ));
    }

    #[test]
    fn readout_on_y_eigenstate() {
        let m = phase_model(equator_state(std::f64::consts::FRAC_PI_2));
        let v = relative_degree_siso(&m).unwrap();
        let plan = ReadoutPlan::new(&m, &v).unwrap();
        assert!((plan.matrix(m.initial_state())[(0, 0)] + 2.0).abs() < 1e-14);
        let rhs = plan.rhs(m.initial_state(), &[vec![0.0], vec![0.7]]);
        assert!((rhs[0] - 0.7).abs() < 1e-14);
        let r = readout_inputs(m.initial_state(), &plan, &rhs).unwrap();
        assert!((r.u[0] + 0.35).abs() < 1e-14);
    }

    #[test]
    fn square_readout_equals_exact_solve() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.3, 1.5, 0.2, 0.4, 0.0, 0.9]);
        let b = [0.3, -1.0, 2.0];
        let r = solve(m.clone(), &b);
        let exact = m.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for (a, e) in r.u.iter().zip(exact.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_input_round_trip() {
        let m = phase_model(equator_state(std::f64::consts::FRAC_PI_2));
        let v = transform_observables(&m).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1).unwrap();
        let truth = [SignalSpec::Constant(0.2)];
        let tr = simulate(&m, &truth, 3.0, &cfg).unwrap();
        let rep = invert(&m, &v, &tr.record, &InversionConfig::default()).unwrap();
        let mask = rep.clear_mask(WINDOW_DILATION);
        assert!(rep.relative_errors(&truth, &mask)[0] < 1e-3);
    }

    #[test]
    fn singular_start_is_an_error() {
        let m = phase_model(equator_state(0.0));
        let v = transform_observables(&m).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1).unwrap();
        let tr = simulate(&m, &[SignalSpec::Constant(0.2)], 1.0, &cfg).unwrap();
        assert!(matches!(
            invert(&m, &v, &tr.record, &InversionConfig::default()),
            Err(Error::SingularStart { .. })
        ));
    }

    #[test]
    fn windows_are_maximal_runs() {
        let f = [false, true, true, false, false, true];
        assert_eq!(windows_from_flags(&f, 0.0, 1.0), vec![(1.0, 3.0), (5.0, 5.0)]);
    }

    #[test]
    fn ramsey_zero_input() {
        let rec = TimeSeries::new(0.0, 0.01, vec![vec![1.0]; 50]).unwrap();
        let b = ramsey_direct(&rec).unwrap();
        assert!(b.plus.channel(0).iter().all(|v| *v == 0.0));
        assert!(b.minus.channel(0).iter().all(|v| *v == 0.0));
        assert_eq!(b.branch_points.len(), 50);
    }

    #[test]
    fn ramsey_branches_are_plus_minus_sine() {
        let m = phase_model(equator_state(0.0));
        let cfg = IntegratorConfig::new(0.01, 1).unwrap();
        let truth = SignalSpec::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        let tr = simulate(&m, &[truth.clone()], 2.0 * std::f64::consts::PI, &cfg).unwrap();
        let b = ramsey_direct(&tr.record).unwrap();
        let times = b.plus.times();
        let sine: Vec<f64> = times.iter().map(|&t| truth.eval(t)).collect();
        let neg: Vec<f64> = sine.iter().map(|v| -v).collect();
        let mask = vec![true; sine.len()];
        let e_plus = relative_l2(&b.plus.channel(0), &sine, &mask);
        let e_minus = relative_l2(&b.minus.channel(0), &neg, &mask);
        assert!(e_plus < 2e-2, "{e_plus}");
        assert!(e_minus < 2e-2, "{e_minus}");
    }
}
