//! Least-squares identification baseline: fit piecewise-constant inputs by
//! gradient descent on the integrated output mismatch.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{closed_record, simulate, IntegratorConfig};
use crate::model::ProbeModel;
use crate::signal::{trapezoid, MeasurementRecord, SignalSpec, SignalTrace, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    FixedStep(f64),
    /// Armijo backtracking; the accepted step is doubled for the next
    /// iteration.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqConfig {
    pub n_bins: usize,
    pub initial_guess: Vec<SignalSpec>,
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// Stop once an iteration lowers the cost by less than this.
    pub tol: f64,
}

impl LsqConfig {
    pub fn new(initial_guess: Vec<SignalSpec>) -> Self {
        LsqConfig {
            n_bins: 50,
            initial_guess,
            max_iters: 200,
            step_rule: StepRule::Backtracking,
            tol: 1e-12,
        }
    }

    pub fn validate(&self, model: &ProbeModel) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::InvalidConfig("n_bins must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.initial_guess.len() != model.num_inputs() {
            return Err(Error::InvalidConfig(format!(
                "{} initial guesses for {} inputs",
                self.initial_guess.len(),
                model.num_inputs()
            )));
        }
        if let StepRule::FixedStep(eta) = self.step_rule {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidConfig(format!("fixed step must be positive, got {eta}")));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LsqResult {
    /// Best iterate as piecewise-constant signals.
    pub signals: Vec<SignalSpec>,
    /// Best iterate sampled on the record grid.
    pub trace: SignalTrace,
    /// Cost after each iteration; entry 0 is the initial guess.
    pub history: Vec<f64>,
    pub best_cost: f64,
    pub iterations: usize,
}

/// State vector when the initial state is pure, for the faster
/// wavefunction integrator.
fn pure_vector(model: &ProbeModel) -> Option<DVector<Complex64>> {
    let state = model.initial_state();
    if (state.purity() - 1.0).abs() > 1e-12 {
        return None;
    }
    let eig = SymmetricEigen::new(state.matrix().matrix().clone());
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    Some(eig.eigenvectors.column(k).into_owned())
}

struct Forward<'a> {
    model: &'a ProbeModel,
    psi0: Option<DVector<Complex64>>,
    horizon: f64,
    cfg: IntegratorConfig,
    record: &'a MeasurementRecord,
}

impl<'a> Forward<'a> {
    fn new(model: &'a ProbeModel, record: &'a MeasurementRecord, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if record.width() != model.num_outputs() {
            return Err(Error::RecordMismatch(format!(
                "record has {} channels, model has {} observables",
                record.width(),
                model.num_outputs()
            )));
        }
        if (cfg.sample_dt() - record.dt()).abs() > 1e-9 * record.dt() {
            return Err(Error::RecordMismatch(format!(
                "integrator samples every {} ns, record every {} ns",
                cfg.sample_dt(),
                record.dt()
            )));
        }
        let psi0 = if model.is_closed() { pure_vector(model) } else { None };
        Ok(Forward { model, psi0, horizon: record.end_time() - record.t0(), cfg: *cfg, record })
    }

    fn cost(&self, inputs: &[SignalSpec]) -> Result<f64> {
        let sim = match &self.psi0 {
            Some(psi) => closed_record(self.model, inputs, psi, self.horizon, &self.cfg)?,
            None => simulate(self.model, inputs, self.horizon, &self.cfg)?.record,
        };
        if sim.len() != self.record.len() {
            return Err(Error::RecordMismatch(format!(
                "simulation gave {} samples, record has {}",
                sim.len(),
                self.record.len()
            )));
        }
        let sq: Vec<f64> = sim
            .samples()
            .iter()
            .zip(self.record.samples())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum())
            .collect();
        Ok(trapezoid(&sq, self.record.dt()))
    }
}

/// `∫ ‖y(t) − F[u](t)‖² dt` over the record, by the trapezoid rule.
pub fn lsq_cost(
    model: &ProbeModel,
    candidate: &[SignalSpec],
    record: &MeasurementRecord,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    Forward::new(model, record, cfg)?.cost(candidate)
}

struct Bins {
    t0: f64,
    width: f64,
    n: usize,
    m: usize,
}

impl Bins {
    fn signals(&self, p: &[f64]) -> Vec<SignalSpec> {
        (0..self.m)
            .map(|j| SignalSpec::PiecewiseConstant {
                t0: self.t0,
                width: self.width,
                values: p[j * self.n..(j + 1) * self.n].to_vec(),
            })
            .collect()
    }
}

/// Gradient descent on the bin values of every unknown input, with
/// forward finite-difference gradients.
pub fn lsq_identify(
    model: &ProbeModel,
    record: &MeasurementRecord,
    cfg: &LsqConfig,
    integ: &IntegratorConfig,
) -> Result<LsqResult> {
    cfg.validate(model)?;
    let fwd = Forward::new(model, record, integ)?;
    let steps = integ.steps(fwd.horizon)?;
    if steps % cfg.n_bins != 0 {
        return Err(Error::InvalidConfig(format!(
            "{steps} integration steps do not split into {} equal bins",
            cfg.n_bins
        )));
    }
    let bins = Bins {
        t0: record.t0(),
        width: (steps / cfg.n_bins) as f64 * integ.dt,
        n: cfg.n_bins,
        m: model.num_inputs(),
    };
    let mut p: Vec<f64> = cfg
        .initial_guess
        .iter()
        .flat_map(|g| (0..bins.n).map(move |k| g.eval(bins.t0 + (k as f64 + 0.5) * bins.width)))
        .collect();
    let scales: Vec<f64> = (0..bins.m)
        .map(|j| p[j * bins.n..(j + 1) * bins.n].iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-6))
        .collect();

    let mut cost = fwd.cost(&bins.signals(&p))?;
    let mut history = vec![cost];
    let mut best = (cost, p.clone());
    let mut step = 1.0_f64;
    let mut iterations = 0;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut grad = vec![0.0; p.len()];
        for i in 0..p.len() {
            let eps = 1e-4 * scales[i / bins.n];
            let mut q = p.clone();
            q[i] += eps;
            grad[i] = (fwd.cost(&bins.signals(&q))? - cost) / eps;
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            break;
        }
        // Barzilai-Borwein trial length; Armijo backtracking below keeps the
        // cost monotone.
        if let Some((pp, pg)) = &previous {
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..p.len() {
                let ds = p[i] - pp[i];
                ss += ds * ds;
                sy += ds * (grad[i] - pg[i]);
            }
            if sy > 0.0 && ss > 0.0 {
                step = ss / sy;
            }
        }
        previous = Some((p.clone(), grad.clone()));
        // No bin may move by more than half its channel scale in one update.
        let max_step = grad
            .iter()
            .enumerate()
            .map(|(i, g)| 0.5 * scales[i / bins.n] / g.abs())
            .fold(f64::INFINITY, f64::min);
        step = step.min(max_step);
        let trial = |s: f64| -> Vec<f64> { p.iter().zip(&grad).map(|(x, g)| x - s * g).collect() };
        let (next_p, next_cost) = match cfg.step_rule {
            StepRule::FixedStep(eta) => {
                let q = trial(eta.min(max_step));
                let c = fwd.cost(&bins.signals(&q))?;
                (q, c)
            }
            StepRule::Backtracking => {
                let mut found = None;
                for _ in 0..60 {
                    let q = trial(step);
                    let c = fwd.cost(&bins.signals(&q))?;
                    if c <= cost - 1e-4 * step * g2 {
                        found = Some((q, c));
                        break;
                    }
                    step *= 0.5;
                }
                match found {
                    Some(f) => {
                        step *= 2.0;
                        f
                    }
                    None => break,
                }
            }
        };
        let decrease = cost - next_cost;
        p = next_p;
        cost = next_cost;
        history.push(cost);
        if cost < best.0 {
            best = (cost, p.clone());
        }
        if decrease < cfg.tol {
            break;
        }
    }

    let signals = bins.signals(&best.1);
    let channels: Vec<Vec<f64>> = signals.iter().map(|s| s.sample(record.t0(), record.dt(), record.len())).collect();
    Ok(LsqResult {
        trace: TimeSeries::from_channels(record.t0(), record.dt(), &channels)?,
        signals,
        history,
        best_cost: best.0,
        iterations,
    })
}
