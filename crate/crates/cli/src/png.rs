//! 8-bit grayscale PNG emission for human inspection of pipeline stages.

use std::path::Path;

use image::{GrayImage, Luma};
use uadseg::Tensor;

use crate::CliError;

fn write(path: &Path, t: &Tensor, f: impl Fn(f32) -> f32) -> Result<(), CliError> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = f(t.data()[y * w + x]).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// Values already in [0, 1].
pub fn save_unit(path: &Path, t: &Tensor) -> Result<(), CliError> {
    write(path, t, |v| v)
}

/// Signed values rendered around mid-gray (0 → 128).
pub fn save_centered(path: &Path, t: &Tensor) -> Result<(), CliError> {
    write(path, t, |v| 0.5 + 0.5 * v)
}

/// Non-negative scores stretched so the maximum maps to white.
pub fn save_scaled(path: &Path, t: &Tensor) -> Result<(), CliError> {
    let hi = t.data().iter().cloned().fold(0.0f32, f32::max);
    let scale = if hi > 0.0 { 1.0 / hi } else { 0.0 };
    write(path, t, move |v| v * scale)
}

/// Binary masks as pure black/white.
pub fn save_binary(path: &Path, t: &Tensor) -> Result<(), CliError> {
    write(path, t, |v| if v > 0.0 { 1.0 } else { 0.0 })
}
