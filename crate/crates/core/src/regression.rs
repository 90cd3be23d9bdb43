//! Planar flow-magnitude model `y = β + β1·x1 + β2·x2` and the decisions
//! built on it: speed estimation and moving/static labelling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowVector;
use crate::foe::FoeEstimate;
use crate::synth::SyntheticSample;

/// Predictions below this many pixels are not used as ratio denominators.
pub const MIN_PREDICTED_PX: f64 = 0.5;
pub const MIN_SPEED_SAMPLES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("design matrix is rank deficient ({0} samples, collinear positions)")]
    RankDeficient(usize),
    #[error("need at least {required} vectors with predicted magnitude > {MIN_PREDICTED_PX} px, got {got}")]
    TooFewSamples { got: usize, required: usize },
    #[error("{vectors} vectors but {mask} FOE mask entries")]
    LengthMismatch { vectors: usize, mask: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// RMS residual over the training samples, pixels.
    pub residual_sigma: f64,
    pub reference_speed_kmh: f64,
    /// Median of observed/predicted over the training samples. Speed ratios
    /// are expressed relative to this, so the training field maps to 1.
    pub training_ratio: f64,
    pub sample_count: usize,
}

impl RegressionModel {
    pub fn predict(&self, x1: f64, x2: f64) -> f64 {
        predict(self, x1, x2)
    }
}

pub fn predict(m: &RegressionModel, x1: f64, x2: f64) -> f64 {
    m.beta0 + m.beta1 * x1 + m.beta2 * x2
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ordinary least squares through the normal equations. The intercept row
/// is eliminated first (centering), leaving a 2×2 system for the slopes.
pub fn fit(samples: &[SyntheticSample], reference_speed_kmh: f64) -> Result<RegressionModel, RegressionError> {
    let n = samples.len();
    if n < 3 {
        return Err(RegressionError::RankDeficient(n));
    }
    let nf = n as f64;
    let (mut m1, mut m2, mut my) = (0.0, 0.0, 0.0);
    for s in samples {
        m1 += s.x1;
        m2 += s.x2;
        my += s.magnitude;
    }
    m1 /= nf;
    m2 /= nf;
    my /= nf;
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let (a, b, y) = (s.x1 - m1, s.x2 - m2, s.magnitude - my);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * y;
        s2y += b * y;
    }
    let det = s11 * s22 - s12 * s12;
    let trace = s11 + s22;
    if !(trace > 0.0) || !(det > 1e-12 * trace * trace) {
        return Err(RegressionError::RankDeficient(n));
    }
    let beta1 = (s22 * s1y - s12 * s2y) / det;
    let beta2 = (s11 * s2y - s12 * s1y) / det;
    let beta0 = my - beta1 * m1 - beta2 * m2;

    let mut model = RegressionModel {
        beta0,
        beta1,
        beta2,
        residual_sigma: 0.0,
        reference_speed_kmh,
        training_ratio: 1.0,
        sample_count: n,
    };
    let sse: f64 = samples
        .iter()
        .map(|s| (s.magnitude - model.predict(s.x1, s.x2)).powi(2))
        .sum();
    model.residual_sigma = (sse / nf).sqrt();

    let mut ratios: Vec<f64> = samples
        .iter()
        .filter_map(|s| {
            let p = model.predict(s.x1, s.x2);
            (p > MIN_PREDICTED_PX).then(|| s.magnitude / p)
        })
        .collect();
    if !ratios.is_empty() {
        model.training_ratio = median(&mut ratios);
    }
    Ok(model)
}

/// Keeps at most one vector per cell of a `grid_nx × grid_ny` partition of
/// the `width × height` image: the one nearest the cell center, earliest
/// index on ties. Output is in row-major cell order.
pub fn uniform_sample(
    vectors: &[FlowVector],
    grid_nx: usize,
    grid_ny: usize,
    width: u32,
    height: u32,
) -> Vec<FlowVector> {
    let (nx, ny) = (grid_nx.max(1), grid_ny.max(1));
    let cw = width as f64 / nx as f64;
    let ch = height as f64 / ny as f64;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; nx * ny];
    for (i, v) in vectors.iter().enumerate() {
        let (u, w) = (v.base.u, v.base.v);
        if !(u >= 0.0 && w >= 0.0 && u < width as f64 && w < height as f64) {
            continue;
        }
        let gx = ((u / cw) as usize).min(nx - 1);
        let gy = ((w / ch) as usize).min(ny - 1);
        let center = ((gx as f64 + 0.5) * cw, (gy as f64 + 0.5) * ch);
        let d = (u - center.0).hypot(w - center.1);
        let slot = &mut best[gy * nx + gx];
        if slot.is_none_or(|(bd, _)| d < bd) {
            *slot = Some((d, i));
        }
    }
    best.into_iter().flatten().map(|(_, i)| vectors[i]).collect()
}

/// Position at which a real vector is compared against the model: the
/// middle of its displacement, matching the symmetric two-frame samples the
/// model was trained on.
pub fn evaluation_point(v: &FlowVector) -> (f64, f64) {
    (
        v.base.u + 0.5 * v.displacement[0],
        v.base.v + 0.5 * v.displacement[1],
    )
}

/// Recomputes `training_ratio` over the grid-sampled training field. Speed
/// estimates then compare observed and training fields drawn with the same
/// spatial mix, which matters because the planar fit is biased by position.
pub fn calibrate_uniform(
    m: &RegressionModel,
    samples: &[SyntheticSample],
    grid_nx: usize,
    grid_ny: usize,
    width: u32,
    height: u32,
) -> Result<RegressionModel, RegressionError> {
    let vectors: Vec<FlowVector> = samples.iter().map(SyntheticSample::to_flow_vector).collect();
    let picked = uniform_sample(&vectors, grid_nx, grid_ny, width, height);
    let raw = RegressionModel {
        training_ratio: 1.0,
        ..*m
    };
    let est = estimate_speed(&picked, &raw)?;
    Ok(RegressionModel {
        training_ratio: est.ratio,
        ..*m
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    /// Observed field scale relative to the model's training field.
    pub ratio: f64,
    pub speed_kmh: f64,
    pub sample_count: usize,
}

/// `ratio = median(observed / predicted) / training_ratio` over vectors whose
/// prediction exceeds [`MIN_PREDICTED_PX`].
pub fn estimate_speed(observed: &[FlowVector], m: &RegressionModel) -> Result<SpeedEstimate, RegressionError> {
    let mut ratios: Vec<f64> = observed
        .iter()
        .filter_map(|v| {
            let (x1, x2) = evaluation_point(v);
            let p = m.predict(x1, x2);
            (p > MIN_PREDICTED_PX).then(|| v.magnitude / p)
        })
        .collect();
    if ratios.len() < MIN_SPEED_SAMPLES {
        return Err(RegressionError::TooFewSamples {
            got: ratios.len(),
            required: MIN_SPEED_SAMPLES,
        });
    }
    let ratio = median(&mut ratios) / m.training_ratio;
    Ok(SpeedEstimate {
        ratio,
        speed_kmh: ratio * m.reference_speed_kmh,
        sample_count: ratios.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Outlier,
    #[serde(rename = "static")]
    StaticInlier,
    Moving,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Outlier => "outlier",
            Label::StaticInlier => "static",
            Label::Moving => "moving",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub vector: FlowVector,
    pub label: Label,
    /// Observed minus speed-scaled predicted magnitude, pixels.
    pub residual: f64,
}

/// FOE outliers keep the `Outlier` label. Every other vector is `Moving`
/// when `|magnitude − ratio·prediction| > k_sigma · ratio · residual_sigma`.
pub fn classify(
    vectors: &[FlowVector],
    foe_result: &FoeEstimate,
    m: &RegressionModel,
    speed_ratio: f64,
    k_sigma: f64,
) -> Result<Vec<LabeledVector>, RegressionError> {
    if vectors.len() != foe_result.inlier_mask.len() {
        return Err(RegressionError::LengthMismatch {
            vectors: vectors.len(),
            mask: foe_result.inlier_mask.len(),
        });
    }
    let bound = k_sigma * speed_ratio * m.residual_sigma;
    Ok(vectors
        .iter()
        .zip(&foe_result.inlier_mask)
        .map(|(v, &inlier)| {
            let (x1, x2) = evaluation_point(v);
            let expected = speed_ratio * m.predict(x1, x2);
            let residual = v.magnitude - expected;
            // Rounding guard so an exact model does not flag its own field.
            let tolerance = bound + 1e-9 * expected.abs().max(1.0);
            let label = if !inlier {
                Label::Outlier
            } else if residual.abs() > tolerance {
                Label::Moving
            } else {
                Label::StaticInlier
            };
            LabeledVector {
                vector: *v,
                label,
                residual,
            }
        })
        .collect())
}
