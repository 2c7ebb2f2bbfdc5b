//! Improved Lee sigma speckle filter for SAR intensity images.
//!
//! Per pixel:
//! 1. Point targets (a pixel above the 98th percentile with at least
//!    `point_target_count` such pixels in its 3x3 neighbourhood) are kept as is.
//! 2. An a priori estimate is taken from an MMSE (Lee) filter over the target window.
//! 3. Pixels of the full window that fall into the sigma range
//!    `[i1 * estimate, i2 * estimate]` are selected.
//! 4. An MMSE filter over the selected pixels gives the output; when fewer than
//!    `min_selected` pixels qualify the a priori estimate is used instead.
//!
//! The sigma range bounds `(i1, i2)` and the revised speckle deviation are derived from
//! the gamma-distributed `looks`-look intensity speckle: the range holds probability
//! `sigma` and the speckle mean inside it is 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use super::{FeatureError, Result};
use crate::raster::BandGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeeSigmaParams {
    pub window: usize,
    pub sigma: f64,
    pub target_window: usize,
    pub looks: f64,
    pub point_target_percentile: f64,
    pub point_target_count: usize,
    pub min_selected: usize,
}

impl Default for LeeSigmaParams {
    fn default() -> Self {
        LeeSigmaParams {
            window: 7,
            sigma: 0.9,
            target_window: 3,
            looks: 1.0,
            point_target_percentile: 0.98,
            point_target_count: 5,
            min_selected: 3,
        }
    }
}

impl LeeSigmaParams {
    pub fn validate(&self) -> Result<()> {
        for w in [self.window, self.target_window] {
            if w == 0 || w % 2 == 0 {
                return Err(FeatureError::InvalidWindow(format!(
                    "window sizes must be odd and positive, got {w}"
                )));
            }
        }
        if self.target_window > self.window {
            return Err(FeatureError::InvalidWindow(format!(
                "target window {} exceeds window {}",
                self.target_window, self.window
            )));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(FeatureError::InvalidParameter(format!(
                "sigma range must lie in (0, 1), got {}",
                self.sigma
            )));
        }
        if !(self.looks > 0.0 && self.looks.is_finite()) {
            return Err(FeatureError::InvalidParameter(format!(
                "number of looks must be positive, got {}",
                self.looks
            )));
        }
        if !(self.point_target_percentile > 0.0 && self.point_target_percentile <= 1.0) {
            return Err(FeatureError::InvalidParameter(format!(
                "point target percentile must lie in (0, 1], got {}",
                self.point_target_percentile
            )));
        }
        Ok(())
    }
}

/// Sigma range of normalized speckle: `[lower, upper]` and the speckle
/// coefficient of variation restricted to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaRange {
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
}

/// CDF of a gamma(shape, rate = looks) variable.
fn gamma_cdf(shape: f64, looks: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(shape, looks * x)
    }
}

fn gamma_quantile(shape: f64, looks: f64, p: f64) -> f64 {
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut hi = 1.0;
    while gamma_cdf(shape, looks, hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_cdf(shape, looks, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl SigmaRange {
    pub fn for_speckle(looks: f64, sigma: f64) -> SigmaRange {
        let l = looks;
        let upper_for = |a: f64| gamma_quantile(l, l, gamma_cdf(l, l, a) + sigma);
        // Probability-weighted mean inside [a, b] minus sigma; increasing in a.
        let excess = |a: f64| {
            let b = upper_for(a);
            gamma_cdf(l + 1.0, l, b) - gamma_cdf(l + 1.0, l, a) - sigma
        };
        let mut lo = 0.0;
        let mut hi = gamma_quantile(l, l, 1.0 - sigma);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lower = 0.5 * (lo + hi);
        let upper = upper_for(lower);
        let second = (l + 1.0) / l * (gamma_cdf(l + 2.0, l, upper) - gamma_cdf(l + 2.0, l, lower));
        let eta = (second / sigma - 1.0).max(0.0).sqrt();
        SigmaRange { lower, upper, eta }
    }
}

fn mmse(z: f64, mean: f64, var: f64, speckle_var: f64) -> f64 {
    let var_x = ((var - mean * mean * speckle_var) / (1.0 + speckle_var)).max(0.0);
    let b = if var > 0.0 { var_x / var } else { 0.0 };
    mean + b * (z - mean)
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    if n == 0 {
        return (f64::NAN, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, var, n)
}

/// Nearest-rank percentile of the finite values.
fn percentile(values: &[f32], p: f64) -> f64 {
    let mut finite: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return f64::INFINITY;
    }
    finite.sort_by(f32::total_cmp);
    let rank = ((p * finite.len() as f64).ceil() as usize).clamp(1, finite.len());
    finite[rank - 1] as f64
}

/// Filters an intensity grid. Window borders use edge replication; non-finite
/// pixels are skipped inside windows and passed through unchanged.
pub fn lee_sigma_filter(band: &BandGrid, params: &LeeSigmaParams) -> Result<BandGrid> {
    params.validate()?;
    let (w, h) = band.dims();
    if w == 0 || h == 0 {
        return Ok(band.clone());
    }
    let data = band.data();
    let range = SigmaRange::for_speckle(params.looks, params.sigma);
    let apriori_var = 1.0 / params.looks;
    let eta_var = range.eta * range.eta;
    let z98 = percentile(data, params.point_target_percentile);

    let at = |r: isize, c: isize| -> f64 {
        let rr = r.clamp(0, h as isize - 1) as usize;
        let cc = c.clamp(0, w as isize - 1) as usize;
        data[rr * w + cc] as f64
    };
    let window = |r: usize, c: usize, size: usize| {
        let half = (size / 2) as isize;
        let (r, c) = (r as isize, c as isize);
        (-half..=half)
            .flat_map(move |dr| (-half..=half).map(move |dc| (r + dr, c + dc)))
            .map(move |(rr, cc)| at(rr, cc))
            .filter(|v| v.is_finite())
    };

    let out: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|r| {
            (0..w).map(move |c| {
                let z = data[r * w + c] as f64;
                if !z.is_finite() {
                    return z as f32;
                }
                if z > z98 {
                    let bright = window(r, c, 3).filter(|v| *v > z98).count();
                    if bright >= params.point_target_count {
                        return z as f32;
                    }
                }
                let (m, var, _) = mean_var(window(r, c, params.target_window));
                let estimate = mmse(z, m, var, apriori_var);
                let (a, b) = (range.lower * estimate, range.upper * estimate);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let (m2, var2, n) =
                    mean_var(window(r, c, params.window).filter(|v| *v >= lo && *v <= hi));
                if n < params.min_selected {
                    estimate as f32
                } else {
                    mmse(z, m2, var2, eta_var) as f32
                }
            })
        })
        .collect();
    Ok(BandGrid::new(w, h, out).expect("same shape"))
}
