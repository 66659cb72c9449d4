//! Raw triaxial recordings and fixed-duration windowing.

use crate::data::labels::ActivityLabel;
use crate::error::{Error, Result};

pub const WINDOW_SECONDS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct RawRecording {
    pub timestamps: Vec<f64>,
    /// x, y, z sample streams, all the same length as `timestamps`.
    pub axes: [Vec<f64>; 3],
    pub rate: f64,
    pub label: ActivityLabel,
}

impl RawRecording {
    pub fn new(timestamps: Vec<f64>, axes: [Vec<f64>; 3], rate: f64, label: ActivityLabel) -> Result<Self> {
        let n = timestamps.len();
        if axes.iter().any(|a| a.len() != n) {
            return Err(Error::InvalidInput(format!(
                "axis sample counts {:?} do not match {n} timestamps",
                [axes[0].len(), axes[1].len(), axes[2].len()]
            )));
        }
        if !(rate > 0.0) {
            return Err(Error::InvalidInput("sampling rate must be positive".into()));
        }
        Ok(RawRecording { timestamps, axes, rate, label })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// One window's worth of raw per-axis samples.
#[derive(Debug, Clone)]
pub struct Segment {
    pub axes: [Vec<f64>; 3],
}

impl Segment {
    pub fn samples_per_axis(&self) -> usize {
        self.axes[0].len()
    }
}

/// Split into non-overlapping windows of `seconds`; the trailing remainder
/// is dropped. A recording shorter than one window yields no segments.
pub fn window(rec: &RawRecording, seconds: f64) -> Vec<Segment> {
    let per_window = (seconds * rec.rate).round() as usize;
    if per_window == 0 || rec.len() < per_window {
        return Vec::new();
    }
    let count = rec.len() / per_window;
    (0..count)
        .map(|i| {
            let lo = i * per_window;
            let hi = lo + per_window;
            Segment {
                axes: [
                    rec.axes[0][lo..hi].to_vec(),
                    rec.axes[1][lo..hi].to_vec(),
                    rec.axes[2][lo..hi].to_vec(),
                ],
            }
        })
        .collect()
}
