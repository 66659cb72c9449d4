//! Window-to-feature composition: decimate each axis to the target rate,
//! take Haar approximation coefficients, concatenate x‖y‖z.

use crate::data::decimate::decimate;
use crate::data::dwt::haar_approx;
use crate::data::labels::ActivityLabel;
use crate::data::recording::Segment;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct FeatureWindow {
    pub features: Vec<f64>,
    pub label: ActivityLabel,
}

/// Feature length for a window of `seconds` at `target_rate`:
/// 3 axes x ceil(seconds * rate / 2) coefficients.
pub fn feature_len(seconds: f64, target_rate: u32) -> usize {
    3 * ((seconds * target_rate as f64).round() as usize).div_ceil(2)
}

pub fn make_feature_window(
    segment: &Segment,
    from_rate: u32,
    to_rate: u32,
    label: &ActivityLabel,
) -> Result<FeatureWindow> {
    let mut features = Vec::new();
    for axis in &segment.axes {
        let decimated = decimate(axis, from_rate, to_rate)?;
        features.extend(haar_approx(&decimated)?);
    }
    Ok(FeatureWindow { features, label: label.clone() })
}
