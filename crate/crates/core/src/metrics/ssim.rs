//! Structural similarity with an 11×11 Gaussian window (σ = 1.5), evaluated
//! on valid windows only (no padding) and averaged over window centers.

use crate::numerics::Tensor;

use super::MetricsError;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 1.0;

/// 1D Gaussian taps; the 2D window is their outer product, normalized to
/// sum 1 by dividing each factor by the 1D sum.
fn gauss_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut taps = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = (i as i64 - r) as f64;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64, MetricsError> {
    if x.shape() != y.shape() {
        return Err(MetricsError::Shape(format!(
            "ssim: shapes {:?} and {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    if x.rank() != 2 || x.shape()[0] < SSIM_WINDOW || x.shape()[1] < SSIM_WINDOW {
        return Err(MetricsError::Shape(format!(
            "ssim wants [H ≥ {SSIM_WINDOW}, W ≥ {SSIM_WINDOW}], got {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let taps = gauss_taps();
    let r = SSIM_WINDOW / 2;
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let (xd, yd) = (x.data(), y.data());

    let mut total = 0.0f64;
    let mut count = 0.0f64;
    for cy in r..h - r {
        for cx in r..w - r {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            let (mut xx, mut yy, mut xy) = (0.0f64, 0.0f64, 0.0f64);
            for (i, ty) in taps.iter().enumerate() {
                let row = (cy + i - r) * w + cx - r;
                for (j, tx) in taps.iter().enumerate() {
                    let wgt = ty * tx;
                    let a = xd[row + j] as f64;
                    let b = yd[row + j] as f64;
                    mx += wgt * a;
                    my += wgt * b;
                    xx += wgt * a * a;
                    yy += wgt * b * b;
                    xy += wgt * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    Ok(total / count)
}
