//! Numerical derivatives of uniformly sampled records.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeScheme {
    /// Central differences inside, one-sided stencils at the ends; higher
    /// orders by repeated application.
    #[default]
    ThreePoint,
    /// Local least-squares polynomial of `degree` over `window` samples.
    SavitzkyGolay { window: usize, degree: usize },
}

impl DerivativeScheme {
    pub fn validate(&self, order: usize) -> Result<()> {
        if let DerivativeScheme::SavitzkyGolay { window, degree } = *self {
            if window < 5 || window % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "Savitzky-Golay window must be odd and at least 5, got {window}"
                )));
            }
            if degree >= window {
                return Err(Error::InvalidConfig(format!(
                    "Savitzky-Golay degree {degree} must be below the window {window}"
                )));
            }
            if degree < order {
                return Err(Error::InvalidConfig(format!(
                    "Savitzky-Golay degree {degree} cannot give derivative order {order}"
                )));
            }
        }
        Ok(())
    }

    fn min_len(&self, order: usize) -> usize {
        match *self {
            DerivativeScheme::ThreePoint => (2 * order + 1).max(4),
            DerivativeScheme::SavitzkyGolay { window, .. } => (2 * order + 1).max(window),
        }
    }
}

/// Derivatives `d^k y/dt^k` for `k = 1..=order` on the record grid; entry
/// `k − 1` of the result is the `k`-th derivative.
pub fn estimate_derivatives(
    record: &TimeSeries,
    order: usize,
    scheme: DerivativeScheme,
) -> Result<Vec<TimeSeries>> {
    scheme.validate(order)?;
    let needed = scheme.min_len(order);
    if record.len() < needed {
        return Err(Error::RecordTooShort { len: record.len(), needed });
    }
    let channels: Vec<Vec<f64>> = (0..record.width()).map(|l| record.channel(l)).collect();
    let dt = record.dt();
    let mut out = Vec::with_capacity(order);
    match scheme {
        DerivativeScheme::ThreePoint => {
            let mut current = channels;
            for _ in 0..order {
                current = current.iter().map(|c| three_point(c, dt)).collect();
                out.push(TimeSeries::from_channels(record.t0(), dt, &current)?);
            }
        }
        DerivativeScheme::SavitzkyGolay { window, degree } => {
            let filter = SavitzkyGolay::new(window, degree);
            for k in 1..=order {
                let d: Vec<Vec<f64>> = channels.iter().map(|c| filter.apply(c, k, dt)).collect();
                out.push(TimeSeries::from_channels(record.t0(), dt, &d)?);
            }
        }
    }
    Ok(out)
}

/// First derivative: central differences inside, four-point one-sided
/// stencils at the two ends (exact for cubics).
pub fn three_point(y: &[f64], dt: f64) -> Vec<f64> {
    let n = y.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (y[i + 1] - y[i - 1]) / (2.0 * dt);
    }
    d[0] = (-11.0 * y[0] + 18.0 * y[1] - 9.0 * y[2] + 2.0 * y[3]) / (6.0 * dt);
    d[n - 1] = (11.0 * y[n - 1] - 18.0 * y[n - 2] + 9.0 * y[n - 3] - 2.0 * y[n - 4]) / (6.0 * dt);
    d
}

struct SavitzkyGolay {
    window: usize,
    /// `weights[p]` maps the window samples to polynomial coefficients when
    /// the evaluation point sits at offset `p` inside the window.
    weights: Vec<DMatrix<f64>>,
}

impl SavitzkyGolay {
    fn new(window: usize, degree: usize) -> Self {
        let weights = (0..window)
            .map(|p| {
                let a = DMatrix::from_fn(window, degree + 1, |j, c| (j as f64 - p as f64).powi(c as i32));
                a.pseudo_inverse(1e-12).expect("full column rank design matrix")
            })
            .collect();
        SavitzkyGolay { window, weights }
    }

    fn apply(&self, y: &[f64], k: usize, dt: f64) -> Vec<f64> {
        let n = y.len();
        let half = self.window / 2;
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        let scale = fact / dt.powi(k as i32);
        (0..n)
            .map(|i| {
                let start = i.saturating_sub(half).min(n - self.window);
                let p = i - start;
                let w = &self.weights[p];
                let c: f64 = (0..self.window).map(|j| w[(k, j)] * y[start + j]).sum();
                c * scale
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64, dt: f64, n: usize) -> TimeSeries {
        TimeSeries::new(0.0, dt, (0..n).map(|i| vec![f(i as f64 * dt)]).collect()).unwrap()
    }

    #[test]
    fn affine_is_exact() {
        let d = estimate_derivatives(&series(|t| 3.0 * t - 1.0, 0.1, 20), 1, DerivativeScheme::ThreePoint)
            .unwrap();
        assert!(d[0].channel(0).iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn sine_error_within_truncation_bound() {
        let dt = 0.01;
        let rec = series(f64::sin, dt, 700);
        let d = estimate_derivatives(&rec, 1, DerivativeScheme::ThreePoint).unwrap();
        let worst = d[0]
            .channel(0)
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (i as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2e-5, "{worst}");
    }

    #[test]
    fn quadratic_second_derivative() {
        let d = estimate_derivatives(&series(|t| t * t, 0.05, 30), 2, DerivativeScheme::ThreePoint).unwrap();
        assert!(d[1].channel(0).iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn savitzky_golay_exact_on_polynomials() {
        let scheme = DerivativeScheme::SavitzkyGolay { window: 7, degree: 3 };
        let d = estimate_derivatives(&series(|t| t * t * t - t, 0.1, 25), 2, scheme).unwrap();
        for (i, (a, b)) in d[0].channel(0).iter().zip(d[1].channel(0)).enumerate() {
            let t = i as f64 * 0.1;
            assert!((a - (3.0 * t * t - 1.0)).abs() < 1e-9);
            assert!((b - 6.0 * t).abs() < 1e-8);
        }
    }

    #[test]
    fn too_short_and_bad_windows() {
        let rec = series(|t| t, 0.1, 3);
        assert!(matches!(
            estimate_derivatives(&rec, 1, DerivativeScheme::ThreePoint),
            Err(Error::RecordTooShort { len: 3, needed: 4 })
        ));
        let rec = series(|t| t, 0.1, 50);
        for (window, degree) in [(4, 2), (6, 2), (5, 5), (3, 1)] {
            let s = DerivativeScheme::SavitzkyGolay { window, degree };
            assert!(estimate_derivatives(&rec, 1, s).is_err(), "{window} {degree}");
        }
    }
}
