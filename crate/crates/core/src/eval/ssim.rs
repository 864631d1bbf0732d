//! Structural similarity with an 11×11 Gaussian window (σ = 1.5),
//! C1 = 0.01², C2 = 0.03² for a dynamic range of 1. Borders are handled
//! by half-sample symmetric reflection.

use crate::dataset::{Frame, CHANNELS};
use crate::{Error, Result};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Maps an out-of-range index back into `0..n` by mirroring about the edges
/// (`−1 → 0`, `n → n−1`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + reflect(x as isize + k as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps.iter().enumerate().map(|(k, t)| t * rows[reflect(y as isize + k as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every pixel and channel.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!("SSIM of {}x{} and {}x{} frames", a.height(), a.width(), b.height(), b.width())));
    }
    let (h, w) = (a.height(), a.width());
    let taps = gaussian_taps();
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(CHANNELS).map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(CHANNELS).map(|&v| v as f64).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = blur(&pa, h, w, &taps);
        let mu_b = blur(&pb, h, w, &taps);
        let aa = blur(&prod(&pa, &pa), h, w, &taps);
        let bb = blur(&prod(&pb, &pb), h, w, &taps);
        let ab = blur(&prod(&pa, &pb), h, w, &taps);
        for i in 0..h * w {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (CHANNELS * h * w) as f64)
}
