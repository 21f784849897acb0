//! Time-varying input signals and uniformly sampled time series.
//!
//! Internal units: time in ns, frequencies and signal amplitudes in rad/ns.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Converts an ordinary frequency in MHz to an angular frequency in rad/ns.
pub fn mhz(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz * 1e-3
}

/// Converts an angular frequency in rad/ns back to MHz.
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e-3)
}

/// A uniformly sampled scalar signal, linearly interpolated between samples
/// and held constant beyond both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("sample spacing must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::InvalidConfig("sampled signal has no samples".into()));
        }
        Ok(SampledSignal { t0, dt, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        interpolate(self.t0, self.dt, &self.values, t)
    }
}

/// Linear interpolation on a uniform grid with constant extrapolation.
pub(crate) fn interpolate(t0: f64, dt: f64, values: &[f64], t: f64) -> f64 {
    let n = values.len();
    let x = (t - t0) / dt;
    if x <= 0.0 || n == 1 {
        return values[0];
    }
    if x >= (n - 1) as f64 {
        return values[n - 1];
    }
    let i = x.floor() as usize;
    let frac = x - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Sum of equal-amplitude sinusoids, `a Σ sin(ν_k t + φ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multisine {
    pub amplitude: f64,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Multisine {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude
            * self
                .frequencies
                .iter()
                .zip(&self.phases)
                .map(|(nu, phi)| (nu * t + phi).sin())
                .sum::<f64>()
    }

    /// Long-time average of the squared signal.
    pub fn variance(&self) -> f64 {
        0.5 * self.amplitude * self.amplitude * self.frequencies.len() as f64
    }
}

/// Description of a scalar signal `u(t)` in rad/ns.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    Constant(f64),
    /// `A sin(ω t + φ)`.
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
    /// Single-pole exponential rise `A (1 − e^{−(t−t_s)/τ})` for `t ≥ t_s`,
    /// zero before. `τ = 0` is an ideal step.
    DistortedStep { amplitude: f64, step_time: f64, time_constant: f64 },
    Samples(SampledSignal),
    /// Bin `k` covers `[t0 + k·width, t0 + (k+1)·width)`; constant
    /// extrapolation outside.
    PiecewiseConstant { t0: f64, width: f64, values: Vec<f64> },
    Multisine(Multisine),
    Sum(Vec<SignalSpec>),
}

/// Default rise time constant of a distorted step, ns.
pub const DEFAULT_RISE_TIME: f64 = 20.0;

impl SignalSpec {
    pub fn constant_mhz(f: f64) -> Self {
        SignalSpec::Constant(mhz(f))
    }

    /// A 0 → `amplitude_mhz` distorted step starting at `t = 0`.
    pub fn distorted_step_mhz(amplitude_mhz: f64, time_constant: f64) -> Self {
        SignalSpec::DistortedStep {
            amplitude: mhz(amplitude_mhz),
            step_time: 0.0,
            time_constant,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Constant(v) => *v,
            SignalSpec::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (frequency * t + phase).sin()
            }
            SignalSpec::DistortedStep { amplitude, step_time, time_constant } => {
                if t < *step_time {
                    0.0
                } else if *time_constant <= 0.0 {
                    *amplitude
                } else {
                    amplitude * (1.0 - (-(t - step_time) / time_constant).exp())
                }
            }
            SignalSpec::Samples(s) => s.eval(t),
            SignalSpec::PiecewiseConstant { t0, width, values } => {
                let k = ((t - t0) / width).floor();
                let k = if k < 0.0 { 0 } else { (k as usize).min(values.len() - 1) };
                values[k]
            }
            SignalSpec::Multisine(m) => m.eval(t),
            SignalSpec::Sum(parts) => parts.iter().map(|p| p.eval(t)).sum(),
        }
    }

    /// Value used at an integrator stage `t_start + frac·h`.
    ///
    /// Piecewise-constant signals are evaluated strictly inside the step so
    /// that a step aligned with bin edges sees a single bin.
    pub fn eval_stage(&self, t_start: f64, h: f64, frac: f64) -> f64 {
        match self {
            SignalSpec::PiecewiseConstant { .. } => {
                let f = frac.clamp(1e-6, 1.0 - 1e-6);
                self.eval(t_start + f * h)
            }
            SignalSpec::Sum(parts) => parts.iter().map(|p| p.eval_stage(t_start, h, frac)).sum(),
            _ => self.eval(t_start + frac * h),
        }
    }

    /// Characteristic angular frequency, when the signal has one: the
    /// sinusoid frequency or the inverse rise time of a distorted step.
    pub fn fundamental_frequency(&self) -> Option<f64> {
        match self {
            SignalSpec::Sinusoid { frequency, .. } => Some(frequency.abs()),
            SignalSpec::DistortedStep { time_constant, .. } if *time_constant > 0.0 => {
                Some(1.0 / time_constant)
            }
            SignalSpec::Sum(parts) => parts.iter().find_map(|p| p.fundamental_frequency()),
            _ => None,
        }
    }

    /// `−u(t)`.
    pub fn negated(&self) -> SignalSpec {
        match self {
            SignalSpec::Constant(v) => SignalSpec::Constant(-v),
            SignalSpec::Sinusoid { amplitude, frequency, phase } => {
                SignalSpec::Sinusoid { amplitude: -amplitude, frequency: *frequency, phase: *phase }
            }
            SignalSpec::DistortedStep { amplitude, step_time, time_constant } => SignalSpec::DistortedStep {
                amplitude: -amplitude,
                step_time: *step_time,
                time_constant: *time_constant,
            },
            SignalSpec::Samples(s) => SignalSpec::Samples(SampledSignal {
                t0: s.t0,
                dt: s.dt,
                values: s.values.iter().map(|v| -v).collect(),
            }),
            SignalSpec::PiecewiseConstant { t0, width, values } => SignalSpec::PiecewiseConstant {
                t0: *t0,
                width: *width,
                values: values.iter().map(|v| -v).collect(),
            },
            SignalSpec::Multisine(m) => SignalSpec::Multisine(Multisine {
                amplitude: -m.amplitude,
                frequencies: m.frequencies.clone(),
                phases: m.phases.clone(),
            }),
            SignalSpec::Sum(parts) => SignalSpec::Sum(parts.iter().map(|p| p.negated()).collect()),
        }
    }

    /// Samples the signal on a uniform grid.
    pub fn sample(&self, t0: f64, dt: f64, len: usize) -> Vec<f64> {
        (0..len).map(|i| self.eval(t0 + i as f64 * dt)).collect()
    }
}

/// A uniformly sampled vector-valued time series.
///
/// Used both for input signals (`SignalTrace`, rad/ns) and measured
/// expectation values (`MeasurementRecord`, dimensionless).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t0: f64,
    dt: f64,
    width: usize,
    values: Vec<Vec<f64>>,
}

pub type SignalTrace = TimeSeries;
pub type MeasurementRecord = TimeSeries;

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("sample spacing must be positive, got {dt}")));
        }
        let width = values.first().map(|v| v.len()).unwrap_or(0);
        if width == 0 {
            return Err(Error::InvalidConfig("time series has no channels".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| v.len() != width) {
            return Err(Error::InvalidConfig(format!(
                "sample {i} has {} channels, expected {width}",
                v.len()
            )));
        }
        Ok(TimeSeries { t0, dt, width, values })
    }

    /// Builds a series from per-channel columns of equal length.
    pub fn from_channels(t0: f64, dt: f64, channels: &[Vec<f64>]) -> Result<Self> {
        let len = channels.first().map(|c| c.len()).unwrap_or(0);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidConfig("channels have different lengths".into()));
        }
        let values = (0..len)
            .map(|i| channels.iter().map(|c| c[i]).collect())
            .collect();
        TimeSeries::new(t0, dt, values)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of channels per sample.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[j]).collect()
    }

    pub fn channel_signal(&self, j: usize) -> SampledSignal {
        SampledSignal {
            t0: self.t0,
            dt: self.dt,
            values: self.channel(j),
        }
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    /// Linear interpolation of every channel at time `t`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let n = self.len();
        let x = (t - self.t0) / self.dt;
        let (i, frac) = if x <= 0.0 || n == 1 {
            (0, 0.0)
        } else if x >= (n - 1) as f64 {
            (n - 1, 0.0)
        } else {
            let i = x.floor() as usize;
            (i, x - i as f64)
        };
        for (j, o) in out.iter_mut().enumerate() {
            let a = self.values[i][j];
            *o = if frac == 0.0 {
                a
            } else {
                a + frac * (self.values[i + 1][j] - a)
            };
        }
    }

    /// Number of entries with `|v| > 1 + allowance`; expectation values of
    /// Pauli observables live in `[−1, 1]` up to noise.
    pub fn out_of_unit_range(&self, allowance: f64) -> usize {
        self.values
            .iter()
            .flatten()
            .filter(|v| v.abs() > 1.0 + allowance)
            .count()
    }

    /// `∫ Σ_ℓ y_ℓ(t)² dt` by the trapezoid rule.
    pub fn energy(&self) -> f64 {
        let sq: Vec<f64> = self
            .values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum())
            .collect();
        trapezoid(&sq, self.dt)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_in_mhz_converts_to_angular() {
        let s = SignalSpec::constant_mhz(1.0);
        for t in [0.0, 3.5, 1e4] {
            assert_abs_diff_eq!(s.eval(t), 2.0 * PI * 1e-3, epsilon = 1e-18);
        }
    }

    #[test]
    fn sinusoid_starts_at_zero() {
        let s = SignalSpec::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        assert_eq!(s.eval(0.0), 0.0);
        assert_abs_diff_eq!(s.eval(PI / 2.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn distorted_step_limits() {
        let s = SignalSpec::distorted_step_mhz(10.0, DEFAULT_RISE_TIME);
        assert_eq!(s.eval(-1.0), 0.0);
        assert_eq!(s.eval(0.0), 0.0);
        assert_abs_diff_eq!(s.eval(1e6), 2.0 * PI * 1e-2, epsilon = 1e-15);
        let tau = DEFAULT_RISE_TIME;
        assert_abs_diff_eq!(s.eval(tau), mhz(10.0) * (1.0 - (-1.0f64).exp()), epsilon = 1e-15);
    }

    #[test]
    fn continuous_kinds_have_no_jumps() {
        let specs = [
            SignalSpec::Constant(0.3),
            SignalSpec::Sinusoid { amplitude: 2.0, frequency: 3.0, phase: 0.1 },
            SignalSpec::distorted_step_mhz(10.0, 20.0),
            SignalSpec::DistortedStep { amplitude: 1.0, step_time: 5.0, time_constant: 2.0 },
        ];
        let h = 1e-4;
        for s in &specs {
            let mut worst = 0.0_f64;
            let mut prev = s.eval(0.0);
            for i in 1..100_000 {
                let v = s.eval(i as f64 * h);
                worst = worst.max((v - prev).abs());
                prev = v;
            }
            assert!(worst < 1e-3, "{s:?} jumps by {worst}");
        }
    }

    #[test]
    fn samples_interpolate_and_extrapolate() {
        let s = SampledSignal::new(1.0, 0.5, vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(s.eval(0.0), 0.0);
        assert_eq!(s.eval(1.25), 0.5);
        assert_eq!(s.eval(1.75), 2.0);
        assert_eq!(s.eval(10.0), 3.0);
    }

    #[test]
    fn piecewise_constant_bins_and_stage_evaluation() {
        let s = SignalSpec::PiecewiseConstant { t0: 0.0, width: 1.0, values: vec![1.0, 2.0, 3.0] };
        assert_eq!(s.eval(0.0), 1.0);
        assert_eq!(s.eval(1.0), 2.0);
        assert_eq!(s.eval(99.0), 3.0);
        // A step [0.5, 1.0] ends on a bin edge; every stage belongs to bin 0.
        assert_eq!(s.eval_stage(0.5, 0.5, 1.0), 1.0);
        assert_eq!(s.eval_stage(1.0, 0.5, 0.0), 2.0);
    }

    #[test]
    fn time_series_validation() {
        assert!(TimeSeries::new(0.0, 0.0, vec![vec![1.0]]).is_err());
        assert!(TimeSeries::new(0.0, 1.0, vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let ts = TimeSeries::from_channels(0.0, 0.5, &[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(ts.width(), 2);
        assert_eq!(ts.sample(1), &[1.0, 3.0]);
        let mut out = [0.0; 2];
        ts.interpolate(0.25, &mut out);
        assert_eq!(out, [0.5, 2.5]);
    }

    #[test]
    fn trapezoid_is_exact_for_affine() {
        let v: Vec<f64> = (0..11).map(|i| 2.0 * i as f64 * 0.1 + 1.0).collect();
        assert_abs_diff_eq!(trapezoid(&v, 0.1), 2.0, epsilon = 1e-14);
    }
}
