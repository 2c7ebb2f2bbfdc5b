//! Hexcone RGB <-> HSV conversion on unit-range channels.

use super::{FeatureError, Result};
use crate::raster::BandGrid;

/// Tolerance for inputs slightly outside `[0, 1]`.
pub const RANGE_TOLERANCE: f64 = 1e-6;

/// Converts unit-range RGB into `(h, s, v)` with `h` in `[0, 1)` (degrees / 360).
///
/// Achromatic inputs get `h = 0`; black gets `s = 0`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h * 6.0).rem_euclid(6.0);
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn check_unit(v: f32) -> Result<f64> {
    let x = v as f64;
    if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&x) {
        return Err(FeatureError::OutOfUnitRange { value: x });
    }
    Ok(x.clamp(0.0, 1.0))
}

/// Per-pixel HSV decomposition of three unit-range grids.
///
/// Non-finite inputs propagate as NaN in all three outputs.
pub fn hsv_transform(r: &BandGrid, g: &BandGrid, b: &BandGrid) -> Result<[BandGrid; 3]> {
    if r.dims() != g.dims() || r.dims() != b.dims() {
        return Err(FeatureError::ShapeMismatch);
    }
    let n = r.len();
    let (mut hs, mut ss, mut vs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (rv, gv, bv) = (r.data()[i], g.data()[i], b.data()[i]);
        if !(rv.is_finite() && gv.is_finite() && bv.is_finite()) {
            hs.push(f32::NAN);
            ss.push(f32::NAN);
            vs.push(f32::NAN);
            continue;
        }
        let (h, s, v) = rgb_to_hsv(check_unit(rv)?, check_unit(gv)?, check_unit(bv)?);
        hs.push(h as f32);
        ss.push(s as f32);
        vs.push(v as f32);
    }
    let (w, h) = r.dims();
    let grid = |d| BandGrid::new(w, h, d).expect("shape checked");
    Ok([grid(hs), grid(ss), grid(vs)])
}
