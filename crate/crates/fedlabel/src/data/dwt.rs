//! Single-level Haar transform, approximation half only.

use crate::error::{Error, Result};

/// Approximation coefficients `a_k = (s[2k] + s[2k+1]) / sqrt(2)`.
///
/// Odd-length input is padded by repeating the final sample; output length
/// is `ceil(n / 2)`.
pub fn haar_approx(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("wavelet transform of empty input".into()));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(samples.len().div_ceil(2));
    let mut chunks = samples.chunks_exact(2);
    for pair in &mut chunks {
        out.push((pair[0] + pair[1]) / sqrt2);
    }
    if let [tail] = chunks.remainder() {
        out.push((tail + tail) / sqrt2);
    }
    Ok(out)
}
