//! Otsu's between-class-variance threshold on 256-bin histograms.

use crate::error::{Error, Result};

pub type Histogram = [u64; 256];

/// Threshold `t` splits the histogram into bins `0..=t` and `t+1..=255`.
///
/// Returns the `t` with maximal between-class variance, the smallest such `t`
/// on ties. A histogram whose mass sits in a single bin has zero variance for
/// every split; that bin is returned so a strict `value > t` comparison
/// classifies everything as background.
pub fn otsu_threshold(hist: &Histogram) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied == 1 {
        let bin = hist.iter().position(|&c| c > 0).unwrap_or(0);
        return Ok(bin as u8);
    }

    let n = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best_t = 0usize;
    let mut best_var = -1.0f64;
    let mut n0 = 0f64;
    let mut s0 = 0f64;
    for (t, &c) in hist.iter().enumerate() {
        n0 += c as f64;
        s0 += t as f64 * c as f64;
        let var = between_class_variance(n0, s0, n, sum_all);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    Ok(best_t as u8)
}

#[inline]
fn between_class_variance(n0: f64, s0: f64, n: f64, sum_all: f64) -> f64 {
    let n1 = n - n0;
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    let w0 = n0 / n;
    let w1 = n1 / n;
    let mu0 = s0 / n0;
    let mu1 = (sum_all - s0) / n1;
    w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
}

/// Associative merge for per-tile histograms.
pub fn merge_histograms(a: &mut Histogram, b: &Histogram) {
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x += y;
    }
}
