//! Gray-level histograms and classical equalization of 8-bit images.

use crate::error::{Error, Result};
use crate::tem::reference_hist_equalize;

/// Bin of an 8-bit value among `n_levels` equal-width bins.
pub fn gray_bin(v: u8, n_levels: usize) -> usize {
    usize::from(v) * n_levels / 256
}

pub fn gray_histogram(pixels: &[u8], n_levels: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_levels];
    for &v in pixels {
        counts[gray_bin(v, n_levels)] += 1.0;
    }
    counts
}

/// Shannon entropy in bits of a histogram; empty bins contribute nothing.
pub fn histogram_entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub counts: Vec<f64>,
    /// Equalized level `G'_n` of each bin, in `[0, N-1]`.
    pub mapping: Vec<f64>,
    /// Pixels remapped to `round(255 * G' / (N-1))`.
    pub pixels: Vec<u8>,
}

impl Equalized {
    /// Histogram over the distinct equalized levels as `(level, count)`,
    /// ascending. Bins that share a level are merged.
    pub fn remapped_histogram(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (&level, &count) in self.mapping.iter().zip(&self.counts) {
            if count == 0.0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.0 == level => last.1 += count,
                _ => out.push((level, count)),
            }
        }
        out
    }
}

pub fn equalize_gray(pixels: &[u8], n_levels: usize) -> Result<Equalized> {
    if !(2..=256).contains(&n_levels) {
        return Err(Error::InvalidArgument(format!(
            "equalization needs 2..=256 levels, got {n_levels}"
        )));
    }
    if pixels.is_empty() {
        return Err(Error::EmptyInput("equalize_gray"));
    }
    let counts = gray_histogram(pixels, n_levels);
    let mapping = reference_hist_equalize(&counts, n_levels)?;
    let top = (n_levels - 1) as f64;
    let lut: Vec<u8> = mapping
        .iter()
        .map(|g| (255.0 * g / top).round().clamp(0.0, 255.0) as u8)
        .collect();
    let pixels = pixels.iter().map(|&v| lut[gray_bin(v, n_levels)]).collect();
    Ok(Equalized {
        counts,
        mapping,
        pixels,
    })
}
