//! Residual computation and the post-processing chain that turns a raw
//! reconstruction error map into a binary anomaly mask:
//! clamp negatives → 5×5 median filter → top-percentile threshold in-mask.

use crate::data::Sample;
use crate::models::Model;
use crate::numerics::Tensor;

use super::PipelineError;

pub const MEDIAN_KERNEL: usize = 5;
pub const SQUASH_PERCENTILE: f32 = 1.0;

/// Per-sample inference output. `residual` is signed; `filtered` is the
/// clamped-and-median-filtered score map the mask is thresholded from.
pub struct SegmentationResult {
    /// [H, W] reconstruction in [0, 1].
    pub reconstruction: Tensor,
    /// [H, W] masked residual; zero outside the brain mask.
    pub residual: Tensor,
    /// [H, W] median-filtered non-negative residual (anomaly scores).
    pub filtered: Tensor,
    /// [H, W] binary anomaly mask; subset of the brain mask.
    pub mask: Tensor,
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), PipelineError> {
    if a.shape() != b.shape() {
        return Err(PipelineError::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// r = b_mask ⊙ (x − x̂). Signed; negative values survive until postprocess.
pub fn residual(x: &Tensor, x_hat: &Tensor, b_mask: &Tensor) -> Result<Tensor, PipelineError> {
    check_same_shape("residual", x, x_hat)?;
    check_same_shape("residual", x, b_mask)?;
    let data = x
        .data()
        .iter()
        .zip(x_hat.data())
        .zip(b_mask.data())
        .map(|((&xv, &rv), &mv)| if mv > 0.0 { xv - rv } else { 0.0 })
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}

/// Each pixel becomes the median of its k×k neighborhood; borders replicate
/// the nearest edge pixel. Output values are drawn from the input multiset.
pub fn median_filter2d(img: &Tensor, k: usize) -> Result<Tensor, PipelineError> {
    if k % 2 == 0 || k == 0 {
        return Err(PipelineError::EvenKernel(k));
    }
    if img.rank() != 2 {
        return Err(PipelineError::Shape(format!(
            "median_filter2d wants [H, W], got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let r = (k / 2) as isize;
    let src = img.data();
    let mut window = Vec::with_capacity(k * k);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            window.clear();
            for dy in -r..=r {
                let cy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let cx = (x + dx).clamp(0, w as isize - 1) as usize;
                    window.push(src[cy * w + cx]);
                }
            }
            window.sort_by(f32::total_cmp);
            out[(y * w as isize + x) as usize] = window[k * k / 2];
        }
    }
    Ok(Tensor::new(vec![h, w], out)?)
}

/// Keep the brightest p% of in-mask pixels: τ is the (100−p)-th percentile
/// of in-mask values by the rank `floor((100−p)/100·n) + 1` (clamped to n),
/// and the output is 1 where `img ≥ τ` inside the mask. A constant in-mask
/// image therefore maps to the whole mask.
pub fn squash(img: &Tensor, p: f32, b_mask: &Tensor) -> Result<Tensor, PipelineError> {
    check_same_shape("squash", img, b_mask)?;
    if !(0.0 < p && p < 100.0) {
        return Err(PipelineError::BadPercentile(p));
    }
    let mut inside: Vec<f32> = img
        .data()
        .iter()
        .zip(b_mask.data())
        .filter(|&(_, &m)| m > 0.0)
        .map(|(&v, _)| v)
        .collect();
    if inside.is_empty() {
        return Err(PipelineError::EmptyMask);
    }
    inside.sort_by(f32::total_cmp);
    let n = inside.len();
    let rank = (((100.0 - p) as f64 / 100.0 * n as f64).floor() as usize + 1).min(n);
    let tau = inside[rank - 1];
    let data = img
        .data()
        .iter()
        .zip(b_mask.data())
        .map(|(&v, &m)| if m > 0.0 && v >= tau { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::new(img.shape().to_vec(), data)?)
}

/// max(r, 0) with no filtering — the first stage of postprocess, split out
/// so callers can score the intermediate map.
pub fn clamp_nonnegative(r: &Tensor) -> Tensor {
    Tensor::new(r.shape().to_vec(), r.data().iter().map(|&v| v.max(0.0)).collect()).unwrap()
}

/// Full chain: clamp negatives, 5×5 median filter, top-1% threshold.
pub fn postprocess(r: &Tensor, b_mask: &Tensor) -> Result<Tensor, PipelineError> {
    postprocess_with(r, b_mask, SQUASH_PERCENTILE)
}

pub fn postprocess_with(
    r: &Tensor,
    b_mask: &Tensor,
    percentile: f32,
) -> Result<Tensor, PipelineError> {
    let filtered = median_filter2d(&clamp_nonnegative(r), MEDIAN_KERNEL)?;
    squash(&filtered, percentile, b_mask)
}

/// Forward → residual → postprocess for one sample. Deterministic.
pub fn segment(model: &Model, sample: &Sample) -> Result<SegmentationResult, PipelineError> {
    segment_with(model, sample, SQUASH_PERCENTILE)
}

pub fn segment_with(
    model: &Model,
    sample: &Sample,
    percentile: f32,
) -> Result<SegmentationResult, PipelineError> {
    let s = model.config.image;
    if sample.image.shape() != [s, s, 1] {
        return Err(PipelineError::Shape(format!(
            "sample is {:?}, model wants [{s}, {s}, 1]",
            sample.image.shape()
        )));
    }
    let x = sample.image.reshaped(vec![1, s, s, 1])?;
    let reconstruction = model.infer(&x)?.reshaped(vec![s, s])?;
    let flat = sample.image.reshaped(vec![s, s])?;
    let r = residual(&flat, &reconstruction, &sample.mask)?;
    let filtered = median_filter2d(&clamp_nonnegative(&r), MEDIAN_KERNEL)?;
    let mask = squash(&filtered, percentile, &sample.mask)?;
    Ok(SegmentationResult { reconstruction, residual: r, filtered, mask })
}
