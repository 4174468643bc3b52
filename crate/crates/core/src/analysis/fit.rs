use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 - SSE/SST`.
pub fn r_squared(observed: &[f64], fitted: &[f64]) -> f64 {
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let sst: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = observed.iter().zip(fitted).map(|(y, f)| (y - f).powi(2)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - sse / sst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub k: f64,
    pub b: f64,
    pub r2: f64,
    pub n_samples: usize,
}

/// Ordinary least squares `y ≈ k x + b`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { context: "analysis: linear fit", expected: x.len(), actual: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::validation("analysis: linear fit", format!("needs at least 3 samples, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if sxx <= (1e-14 * scale).powi(2) * n as f64 {
        return Err(Error::DegenerateRegressor(format!("regressor is constant ({mx}) over {n} samples")));
    }
    let k = sxy / sxx;
    let b = my - k * mx;
    let fitted: Vec<f64> = x.iter().map(|v| k * v + b).collect();
    Ok(LinearFit { k, b, r2: r_squared(y, &fitted), n_samples: n })
}

pub fn saturation_model(t: f64, a: f64, omega: f64) -> f64 {
    a * (1.0 - (-omega * t).exp())
}

/// `[∂/∂A, ∂/∂ω]` of `A(1 - e^{-ωt})`.
pub fn saturation_jacobian(t: f64, a: f64, omega: f64) -> [f64; 2] {
    let e = (-omega * t).exp();
    [1.0 - e, a * t * e]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Plateau test: block length as a fraction of the samples.
    pub plateau_block: f64,
    /// Plateau test: relative agreement of consecutive block means.
    pub plateau_tolerance: f64,
}

impl Default for SaturationOptions {
    fn default() -> Self {
        SaturationOptions { max_iterations: 200, tolerance: 1e-10, plateau_block: 0.1, plateau_tolerance: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub a: f64,
    pub omega: f64,
    pub r2: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Samples `0..window` entered the fit.
    pub window: usize,
    pub initial_a: f64,
    pub initial_omega: f64,
    /// Slope of the first two samples, reported only.
    pub initial_slope: f64,
}

/// End (exclusive) of the fit window: the first index where two consecutive
/// blocks agree in mean within the tolerance, else the full length.
pub fn plateau_end(values: &[f64], options: &SaturationOptions) -> usize {
    let n = values.len();
    let block = ((n as f64 * options.plateau_block).round() as usize).max(1);
    if 2 * block > n {
        return n;
    }
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let mean = |a: usize| (prefix[a + block] - prefix[a]) / block as f64;
    for start in 0..=n - 2 * block {
        let (m1, m2) = (mean(start), mean(start + block));
        if m2 != 0.0 && ((m1 - m2) / m2).abs() <= options.plateau_tolerance {
            return start + 2 * block;
        }
    }
    n
}

const STATIONARY_COSINE: f64 = 1e-10;

fn sse(times: &[f64], values: &[f64], a: f64, omega: f64) -> f64 {
    times.iter().zip(values).map(|(&t, &y)| (y - saturation_model(t, a, omega)).powi(2)).sum()
}

/// Least-squares fit of `A(1 - e^{-ωt})` by damped Gauss-Newton.
pub fn fit_saturation(times: &[f64], values: &[f64], options: &SaturationOptions) -> Result<SaturationFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { context: "analysis: saturation fit", expected: times.len(), actual: values.len() });
    }
    if times.len() < 10 {
        return Err(Error::validation("analysis: saturation fit", format!("needs at least 10 samples, got {}", times.len())));
    }
    let window = plateau_end(values, options);
    let (ts, ys) = (&times[..window], &values[..window]);
    let block = ((window as f64 * options.plateau_block).round() as usize).clamp(1, window);
    let a0 = ys[window - block..].iter().sum::<f64>() / block as f64;
    let omega0 = initial_rate(ts, ys, a0);
    let initial_slope = (values[1] - values[0]) / (times[1] - times[0]);
    let fail = |reason: String, iterations| Error::FitFailure { reason, iterations, initial_amplitude: a0, initial_rate: omega0 };
    if !(a0 > 0.0) || !(omega0 > 0.0) {
        return Err(fail("non-positive initial parameters".into(), 0));
    }
    let (mut a, mut omega) = (a0, omega0);
    let mut cost = sse(ts, ys, a, omega);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&t, &y) in ts.iter().zip(ys) {
            let j = saturation_jacobian(t, a, omega);
            let r = y - saturation_model(t, a, omega);
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        // residual/gradient cosines: the normal-equation stationarity measure
        let rn = cost.sqrt();
        let cosine = if rn == 0.0 { 0.0 } else { (0..2).map(|p| (jtr[p] / (rn * jtj[p][p].sqrt())).abs()).fold(0.0, f64::max) };
        if cosine < 1e-14 {
            converged = true;
            break;
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(fail(format!("singular normal equations at A={a}, omega={omega}"), iterations));
        }
        let da = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let dw = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (na, nw) = (a + step * da, omega + step * dw);
            if na > 0.0 && nw > 0.0 {
                let c = sse(ts, ys, na, nw);
                // SSE changes below round-off near the minimum
                if c <= cost * (1.0 + 1e-12) {
                    accepted = Some((na, nw, c));
                    break;
                }
            }
            step *= 0.5;
        }
        let change = (step * da / a).abs().max((step * dw / omega).abs());
        match accepted {
            Some((na, nw, c)) => {
                a = na;
                omega = nw;
                cost = c;
            }
            // no descent left along the Gauss-Newton direction
            None => {
                converged = cosine < STATIONARY_COSINE;
                break;
            }
        }
        if change < options.tolerance && cosine < STATIONARY_COSINE {
            converged = true;
            break;
        }
    }
    if !a.is_finite() || !omega.is_finite() {
        return Err(fail("parameters diverged".into(), iterations));
    }
    let fitted: Vec<f64> = ts.iter().map(|&t| saturation_model(t, a, omega)).collect();
    Ok(SaturationFit {
        a,
        omega,
        r2: r_squared(ys, &fitted),
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        window,
        initial_a: a0,
        initial_omega: omega0,
        initial_slope,
    })
}

/// `ln((A - S)/A) ≈ -ωt` through the origin, over samples still below 95% of `A`.
fn initial_rate(times: &[f64], values: &[f64], a: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &s) in times.iter().zip(values) {
        if t <= 0.0 {
            continue;
        }
        let gap = (a - s) / a;
        if gap < 0.05 {
            break;
        }
        num -= t * gap.ln();
        den += t * t;
    }
    if den > 0.0 && num > 0.0 {
        return num / den;
    }
    // rise too fast to sample: fall back to the first crossing of 1 - 1/e
    let target = a * (1.0 - (-1.0f64).exp());
    match times.iter().zip(values).find(|(_, &s)| s >= target) {
        Some((&t, _)) if t > 0.0 => 1.0 / t,
        _ => 1.0 / times[1].max(f64::MIN_POSITIVE),
    }
}

/// Cosines between the residual vector and each Jacobian column over the fit window.
pub fn stationarity(times: &[f64], values: &[f64], fit: &SaturationFit) -> [f64; 2] {
    let (ts, ys) = (&times[..fit.window], &values[..fit.window]);
    let r: Vec<f64> = ts.iter().zip(ys).map(|(&t, &y)| y - saturation_model(t, fit.a, fit.omega)).collect();
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    [0, 1].map(|p| {
        let col: Vec<f64> = ts.iter().map(|&t| saturation_jacobian(t, fit.a, fit.omega)[p]).collect();
        let cn = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rn == 0.0 || cn == 0.0 {
            0.0
        } else {
            col.iter().zip(&r).map(|(c, x)| c * x).sum::<f64>() / (rn * cn)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() + 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 1.3).collect();
        let fit = fit_linear(&x, &y).unwrap();
        assert!((fit.k - 0.7).abs() < 1e-12);
        assert!((fit.b - 1.3).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.n_samples, 50);
    }

    #[test]
    fn constant_regressor() {
        let x = vec![2.0; 10];
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(matches!(fit_linear(&x, &y), Err(Error::DegenerateRegressor(_))));
        assert!(fit_linear(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn r_squared_definition() {
        let y = [1.0, 2.0, 4.0, 3.0];
        let f = [1.5, 2.0, 3.5, 3.0];
        // SST = 5, SSE = 0.5
        assert!((r_squared(&y, &f) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn recovers_synthetic_saturation() {
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|&t| saturation_model(t, 2.0, 0.5)).collect();
        let fit = fit_saturation(&times, &values, &SaturationOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.a - 2.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.omega - 0.5).abs() < 1e-6, "{fit:?}");
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_window() {
        let opts = SaturationOptions::default();
        let rising: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(plateau_end(&rising, &opts), 100);
        let mut flat_after: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        flat_after.extend(std::iter::repeat(1.0).take(70));
        let end = plateau_end(&flat_after, &opts);
        assert!((30..=60).contains(&end), "{end}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-6;
        for &(t, a, w) in &[(0.3, 2.0, 0.5), (5.0, 1.1, 0.07), (4.0, 0.4, 0.3)] {
            let j = saturation_jacobian(t, a, w);
            let da = (saturation_model(t, a + h, w) - saturation_model(t, a - h, w)) / (2.0 * h);
            let dw = (saturation_model(t, a, w + h) - saturation_model(t, a, w - h)) / (2.0 * h);
            assert!(((j[0] - da) / j[0]).abs() < 1e-5);
            assert!(((j[1] - dw) / j[1]).abs() < 1e-5);
        }
    }

    proptest::proptest! {
        #[test]
        fn linear_fit_is_affine_equivariant(c in 0.1f64..10.0, seed in 0u32..100) {
            let x: Vec<f64> = (0..40).map(|i| ((i + seed) as f64 * 0.61).sin() * 2.0 + i as f64 * 0.05).collect();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.8 * v + 1.0 + ((i as f64) * 1.7).cos() * 0.1).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let a = fit_linear(&x, &y).unwrap();
            let b = fit_linear(&x, &scaled).unwrap();
            proptest::prop_assert!((b.k - c * a.k).abs() < 1e-10 * c.max(1.0));
            proptest::prop_assert!((b.b - c * a.b).abs() < 1e-10 * c.max(1.0));
            proptest::prop_assert!((b.r2 - a.r2).abs() < 1e-12);
        }

        #[test]
        fn noisy_saturation_fit_is_stationary(a in 0.5f64..3.0, w in 0.05f64..1.0, seed in 0u32..50) {
            let times: Vec<f64> = (0..=300).map(|i| i as f64 * 0.1).collect();
            let values: Vec<f64> = times
                .iter()
                .enumerate()
                .map(|(i, &t)| saturation_model(t, a, w) + 0.01 * ((i as u32 + seed) as f64 * 2.3).sin())
                .collect();
            let fit = fit_saturation(&times, &values, &SaturationOptions::default()).unwrap();
            let cos = stationarity(&times, &values, &fit);
            proptest::prop_assert!(fit.converged);
            proptest::prop_assert!(cos[0].abs() < 1e-8 && cos[1].abs() < 1e-8, "{:?} {:?}", cos, fit);
        }
    }
}
