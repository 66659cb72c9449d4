//! Integer-factor decimation: zero-phase low-pass filtering followed by
//! subsampling.
//!
//! The anti-aliasing filter is an order-8 Butterworth low-pass (four biquad
//! sections) with cutoff at 80% of the target Nyquist frequency, run
//! forward-backward for zero phase. Sections are seeded with their step
//! steady-state so constant signals pass through exactly.

use crate::error::{Error, Result};

pub const DEFAULT_TARGET_RATE: u32 = 50;

const SECTIONS: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// RBJ low-pass section at normalized cutoff `fc/fs` with quality `q`.
    fn lowpass(fc_over_fs: f64, q: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * fc_over_fs;
        let (sw, cw) = w0.sin_cos();
        let alpha = sw / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cw) / 2.0 / a0,
            b1: (1.0 - cw) / a0,
            b2: (1.0 - cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Direct-form II transposed state for a unit step, so that filtering a
    /// constant yields that constant from sample zero.
    fn step_state(&self) -> [f64; 2] {
        let z2 = self.b2 - self.a2;
        let z1 = self.b1 - self.a1 + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], scale_state_by: f64) {
        let zi = self.step_state();
        let mut z1 = zi[0] * scale_state_by;
        let mut z2 = zi[1] * scale_state_by;
        for v in x.iter_mut() {
            let xn = *v;
            let y = self.b0 * xn + z1;
            z1 = self.b1 * xn - self.a1 * y + z2;
            z2 = self.b2 * xn - self.a2 * y;
            *v = y;
        }
    }
}

/// Order-8 Butterworth as a cascade of 4 sections with the classic pole
/// quality factors q_k = 1 / (2 sin((2k+1) pi / 16)).
fn butterworth8(fc_over_fs: f64) -> [Biquad; SECTIONS] {
    std::array::from_fn(|k| {
        let q = 1.0 / (2.0 * ((2 * k + 1) as f64 * std::f64::consts::PI / 16.0).sin());
        Biquad::lowpass(fc_over_fs, q)
    })
}

fn filtfilt(sections: &[Biquad; SECTIONS], x: &[f64]) -> Vec<f64> {
    // Odd-reflection padding shields the signal edges from filter
    // transients.
    let pad = (3 * 2 * SECTIONS + 3).min(x.len().saturating_sub(1));
    let mut buf = Vec::with_capacity(x.len() + 2 * pad);
    let first = x[0];
    let last = x[x.len() - 1];
    for i in (1..=pad).rev() {
        buf.push(2.0 * first - x[i]);
    }
    buf.extend_from_slice(x);
    for i in 1..=pad {
        buf.push(2.0 * last - x[x.len() - 1 - i]);
    }

    for pass in 0..2 {
        let scale = buf[0];
        for s in sections {
            s.run(&mut buf, scale);
        }
        if pass == 0 {
            buf.reverse();
        }
    }
    buf.reverse();
    buf[pad..pad + x.len()].to_vec()
}

/// Downsample `samples` from `from_rate` to `to_rate`.
///
/// Rates must form a positive integer factor; a factor of 1 is a no-op.
pub fn decimate(samples: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if to_rate == 0 || from_rate == 0 {
        return Err(Error::InvalidRate("rates must be positive".into()));
    }
    if from_rate < to_rate || from_rate % to_rate != 0 {
        return Err(Error::InvalidRate(format!(
            "{from_rate} Hz -> {to_rate} Hz is not an integer decimation factor"
        )));
    }
    let factor = (from_rate / to_rate) as usize;
    if factor == 1 {
        return Ok(samples.to_vec());
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    // Cutoff at 80% of the target Nyquist, normalized by the source rate.
    let fc_over_fs = 0.8 * (to_rate as f64 / 2.0) / from_rate as f64;
    let filtered = filtfilt(&butterworth8(fc_over_fs), samples);
    Ok(filtered.into_iter().step_by(factor).collect())
}
