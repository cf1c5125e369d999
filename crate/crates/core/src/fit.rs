//! Log-log slope fits and Monte Carlo summaries.

use serde::Serialize;

use crate::error::{Error, Result};

/// Weight given to the smallest and largest abscissae in [`loglog_slope`].
pub const EXTREME_WEIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (NaN with fewer than three points).
    pub slope_se: f64,
    pub points: usize,
}

/// Weighted least-squares fit of `ln y = intercept + slope ln x`.
pub fn weighted_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewParticles { min: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "log-log fit needs positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = lx.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = ly.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = lx
        .iter()
        .zip(&ly)
        .zip(w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let n = x.len();
    let slope_se = if n > 2 {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .zip(w)
            .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
            .sum();
        // weights normalized to mean one
        let scale = n as f64 / sw;
        (rss * scale / (n as f64 - 2.0) / (sxx * scale)).sqrt()
    } else {
        f64::NAN
    };
    Ok(SlopeFit {
        slope,
        intercept,
        slope_se,
        points: n,
    })
}

/// Log-log slope with the two extreme abscissae down-weighted.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let mut w = vec![1.0; x.len()];
    if x.len() > 2 {
        let by_x = |cmp: std::cmp::Ordering| {
            (0..x.len())
                .reduce(|a, b| if x[b].total_cmp(&x[a]) == cmp { b } else { a })
                .expect("non-empty")
        };
        w[by_x(std::cmp::Ordering::Less)] = EXTREME_WEIGHT;
        w[by_x(std::cmp::Ordering::Greater)] = EXTREME_WEIGHT;
    }
    weighted_fit(x, y, &w)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
