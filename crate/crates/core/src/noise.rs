//! Band-limited random noise for the evolution and measurement channels.
//!
//! Noise is a random-phase multisine: 16 equal-amplitude sinusoids whose
//! frequencies are drawn uniformly from the band and whose phases are
//! uniform on `[0, 2π)`. The amplitude is set so that the time-averaged
//! variance equals the requested value.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::{MeasurementRecord, Multisine, SignalSpec};

pub const NOISE_COMPONENTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTarget {
    /// Added to a control channel before simulation.
    Evolution,
    /// Added to the recorded expectation values.
    Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseBand {
    /// `[0.5, 2]` × the signal fundamental frequency.
    Low,
    /// `[25, 30]` × the signal fundamental frequency.
    High,
}

impl NoiseBand {
    pub fn multipliers(self) -> (f64, f64) {
        match self {
            NoiseBand::Low => (0.5, 2.0),
            NoiseBand::High => (25.0, 30.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub target: NoiseTarget,
    pub band: NoiseBand,
    /// Dimensionless for measurement noise, (rad/ns)² for evolution noise.
    pub variance: f64,
    pub seed: u64,
    /// Signal fundamental angular frequency the band is scaled by, rad/ns.
    pub fundamental: f64,
    /// Control channel receiving evolution noise.
    pub channel: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidConfig(format!("noise variance must be non-negative, got {}", self.variance)));
        }
        if !(self.fundamental > 0.0) || !self.fundamental.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise fundamental frequency must be positive, got {}",
                self.fundamental
            )));
        }
        Ok(())
    }

    /// Draws the multisine for one stream; `stream` separates independent
    /// channels driven from the same seed.
    pub fn synthesize(&self, stream: u64) -> Multisine {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let (lo, hi) = self.band.multipliers();
        let (lo, hi) = (lo * self.fundamental, hi * self.fundamental);
        let mut frequencies = Vec::with_capacity(NOISE_COMPONENTS);
        let mut phases = Vec::with_capacity(NOISE_COMPONENTS);
        for _ in 0..NOISE_COMPONENTS {
            frequencies.push(rng.random_range(lo..hi));
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        let amplitude = (2.0 * self.variance / NOISE_COMPONENTS as f64).sqrt();
        Multisine { amplitude, frequencies, phases }
    }
}

/// Adds measurement noise to every channel of a record; each channel uses
/// an independent stream.
pub fn inject_measurement_noise(record: &MeasurementRecord, spec: &NoiseSpec) -> Result<MeasurementRecord> {
    spec.validate()?;
    if spec.target != NoiseTarget::Measurement {
        return Err(Error::InvalidConfig("expected a measurement-noise spec".into()));
    }
    let mut out = record.clone();
    if spec.variance == 0.0 {
        return Ok(out);
    }
    let noises: Vec<Multisine> = (0..record.width()).map(|l| spec.synthesize(l as u64)).collect();
    let t0 = record.t0();
    let dt = record.dt();
    for (i, sample) in out.values_mut().iter_mut().enumerate() {
        let t = t0 + i as f64 * dt;
        for (y, n) in sample.iter_mut().zip(&noises) {
            *y += n.eval(t);
        }
    }
    Ok(out)
}

/// Adds evolution noise to the designated control channel.
pub fn inject_evolution_noise(inputs: &[SignalSpec], spec: &NoiseSpec) -> Result<Vec<SignalSpec>> {
    spec.validate()?;
    if spec.target != NoiseTarget::Evolution {
        return Err(Error::InvalidConfig("expected an evolution-noise spec".into()));
    }
    if spec.channel >= inputs.len() {
        return Err(Error::InvalidConfig(format!(
            "noise channel {} out of range for {} inputs",
            spec.channel,
            inputs.len()
        )));
    }
    let mut out = inputs.to_vec();
    if spec.variance == 0.0 {
        return Ok(out);
    }
    let noise = SignalSpec::Multisine(spec.synthesize(0));
    let base = out[spec.channel].clone();
    out[spec.channel] = SignalSpec::Sum(vec![base, noise]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeSeries;

    fn spec(target: NoiseTarget, band: NoiseBand, variance: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { target, band, variance, seed, fundamental: 1.0, channel: 0 }
    }

    #[test]
    fn zero_variance_is_identity() {
        let rec = TimeSeries::new(0.0, 0.1, vec![vec![0.5, -0.2]; 10]).unwrap();
        let s = spec(NoiseTarget::Measurement, NoiseBand::High, 0.0, 1);
        assert_eq!(inject_measurement_noise(&rec, &s).unwrap(), rec);
        let inputs = vec![SignalSpec::Constant(1.0)];
        let s = spec(NoiseTarget::Evolution, NoiseBand::Low, 0.0, 1);
        assert_eq!(inject_evolution_noise(&inputs, &s).unwrap(), inputs);
    }

    #[test]
    fn frequencies_lie_in_band() {
        for band in [NoiseBand::Low, NoiseBand::High] {
            let m = spec(NoiseTarget::Measurement, band, 1e-6, 9).synthesize(0);
            let (lo, hi) = band.multipliers();
            assert_eq!(m.frequencies.len(), NOISE_COMPONENTS);
            assert!(m.frequencies.iter().all(|f| (lo..hi).contains(f)));
            assert!(m.phases.iter().all(|p| (0.0..2.0 * PI).contains(p)));
        }
    }

    #[test]
    fn variance_matches_request() {
        for v in [1e-6, 1e-2] {
            let m = spec(NoiseTarget::Evolution, NoiseBand::High, v, 3).synthesize(0);
            assert!((m.variance() - v).abs() < 1e-15 * v.max(1.0));
            // Empirical variance over many periods of the slowest component.
            let n = 200_000;
            let dt = 0.01;
            let mean_sq: f64 = (0..n).map(|i| m.eval(i as f64 * dt).powi(2)).sum::<f64>() / n as f64;
            assert!((mean_sq / v - 1.0).abs() < 0.1, "ratio {}", mean_sq / v);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = spec(NoiseTarget::Measurement, NoiseBand::High, 1e-6, 42).synthesize(0);
        let b = spec(NoiseTarget::Measurement, NoiseBand::High, 1e-6, 42).synthesize(0);
        assert_eq!(a, b);
        let c = spec(NoiseTarget::Measurement, NoiseBand::High, 1e-6, 43).synthesize(0);
        assert_ne!(a, c);
        let d = spec(NoiseTarget::Measurement, NoiseBand::High, 1e-6, 42).synthesize(1);
        assert_ne!(a, d);
    }

    #[test]
    fn negative_variance_rejected() {
        let s = spec(NoiseTarget::Measurement, NoiseBand::High, -1.0, 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn wrong_target_rejected() {
        let rec = TimeSeries::new(0.0, 0.1, vec![vec![0.0]; 3]).unwrap();
        let s = spec(NoiseTarget::Evolution, NoiseBand::High, 1.0, 0);
        assert!(inject_measurement_noise(&rec, &s).is_err());
    }
}
