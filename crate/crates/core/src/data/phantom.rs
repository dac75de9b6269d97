//! Synthetic brain phantoms: an elliptical head with banded tissue
//! intensities, smooth low-frequency texture and pixel noise. Anomalous
//! variants add 1–3 bright circular lesions and the matching ground-truth
//! label. Everything is a pure function of (params, seed).

use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone)]
pub struct PhantomParams {
    pub size: usize,
    /// Std of the white pixel noise.
    pub noise: f32,
    /// Peak amplitude of each low-frequency texture wave.
    pub texture: f32,
    /// Minimum intensity inside the head, so support stays exactly (> 0).
    pub floor: f32,
    /// Tissue band intensity range.
    pub bands: (f32, f32),
    /// Additive lesion brightness range.
    pub lesion: (f32, f32),
}

impl PhantomParams {
    pub fn with_size(size: usize) -> PhantomParams {
        PhantomParams {
            size,
            noise: 0.005,
            texture: 0.035,
            floor: 0.02,
            bands: (0.3, 0.7),
            lesion: (0.3, 0.6),
        }
    }
}

pub struct Phantom {
    /// [S, S, 1] intensities in [0, 1]; exactly 0 outside the head.
    pub image: Tensor,
    /// [S, S] binary head support.
    pub mask: Tensor,
    /// [S, S] binary lesion ground truth (all zero for healthy phantoms).
    pub label: Tensor,
}

/// 3×3 binary dilation; out-of-bounds neighbors count as background.
fn dilate3(src: &[bool], s: usize) -> Vec<bool> {
    let mut out = vec![false; s * s];
    for y in 0..s {
        for x in 0..s {
            if !src[y * s + x] {
                continue;
            }
            for dy in y.saturating_sub(1)..=(y + 1).min(s - 1) {
                for dx in x.saturating_sub(1)..=(x + 1).min(s - 1) {
                    out[dy * s + dx] = true;
                }
            }
        }
    }
    out
}

/// 3×3 binary erosion, the dual of [`dilate3`].
fn erode3(src: &[bool], s: usize) -> Vec<bool> {
    let mut out = vec![true; s * s];
    for y in 0..s {
        for x in 0..s {
            if src[y * s + x] {
                continue;
            }
            for dy in y.saturating_sub(1)..=(y + 1).min(s - 1) {
                for dx in x.saturating_sub(1)..=(x + 1).min(s - 1) {
                    out[dy * s + dx] = false;
                }
            }
        }
    }
    out
}

/// Morphological closing with a 3×3 structuring element. Idempotent, so a
/// support that was produced by closing survives a second closing unchanged.
pub fn closing3(src: &[bool], s: usize) -> Vec<bool> {
    erode3(&dilate3(src, s), s)
}

pub fn generate_phantom(params: &PhantomParams, seed: u64, with_anomaly: bool) -> Phantom {
    let s = params.size;
    let sf = s as f32;
    let root = Rng::new(seed);

    // ── head geometry ─────────────────────────────────────────────────
    let mut geo = root.split("geometry");
    let cx = sf * (0.5 + geo.uniform_in(-0.04, 0.04));
    let cy = sf * (0.5 + geo.uniform_in(-0.04, 0.04));
    let ax = sf * geo.uniform_in(0.30, 0.40);
    let ay = sf * geo.uniform_in(0.34, 0.44);
    let theta = geo.uniform_in(-0.3, 0.3);
    let (sin_t, cos_t) = theta.sin_cos();

    // Normalized elliptical radius; ≤ 1 is inside the raw head.
    let rho = |x: usize, y: usize| -> f32 {
        let dx = x as f32 - cx;
        let dy = y as f32 - cy;
        let u = (dx * cos_t + dy * sin_t) / ax;
        let v = (-dx * sin_t + dy * cos_t) / ay;
        (u * u + v * v).sqrt()
    };

    let raw: Vec<bool> = (0..s * s).map(|i| rho(i % s, i / s) <= 1.0).collect();
    let support = closing3(&raw, s);

    // ── tissue bands over the elliptical radius ───────────────────────
    // Adjacent levels walk by at most ±0.15 and edges blend smoothly, so no
    // local neighborhood ever jumps by more than a fraction of the lesion
    // brightness — that keeps lesion-vs-surroundings contrast well defined.
    let mut bands_rng = root.split("bands");
    let n_bands = 3 + bands_rng.index(3);
    let mut edges: Vec<f32> = (1..n_bands)
        .map(|i| i as f32 / n_bands as f32 + bands_rng.uniform_in(-0.04, 0.04))
        .collect();
    edges.sort_by(f32::total_cmp);
    let (band_lo, band_hi) = params.bands;
    let mut levels = Vec::with_capacity(n_bands);
    let mut level = bands_rng.uniform_in(band_lo, band_hi);
    levels.push(level);
    for _ in 1..n_bands {
        level = (level + bands_rng.uniform_in(-0.15, 0.15)).clamp(band_lo, band_hi);
        levels.push(level);
    }
    const BLEND: f32 = 0.12;
    let band_level = |r: f32| -> f32 {
        let mut v = levels[0];
        for (i, &e) in edges.iter().enumerate() {
            let t = ((r - (e - BLEND)) / (2.0 * BLEND)).clamp(0.0, 1.0);
            v += (levels[i + 1] - levels[i]) * (t * t * (3.0 - 2.0 * t));
        }
        v
    };

    // ── low-frequency texture waves ───────────────────────────────────
    let mut tex_rng = root.split("texture");
    let waves: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            (
                params.texture * tex_rng.uniform_in(0.5, 1.0),
                tex_rng.uniform_in(0.4, 1.6),
                tex_rng.uniform_in(0.4, 1.6),
                tex_rng.uniform_in(0.0, std::f32::consts::TAU),
            )
        })
        .collect();
    let texture = |x: usize, y: usize| -> f32 {
        waves
            .iter()
            .map(|&(amp, fx, fy, phase)| {
                amp * (std::f32::consts::TAU * (fx * x as f32 + fy * y as f32) / sf + phase).sin()
            })
            .sum()
    };

    // Partial-volume taper: tissue fades to the floor over the outermost
    // ~0.15 of the elliptical radius instead of a one-pixel cliff, like the
    // smoothed boundary of a resampled MR slice.
    const EDGE: f32 = 0.15;
    let mut noise_rng = root.split("noise");
    let mut image = vec![0.0_f32; s * s];
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let n = params.noise * noise_rng.normal();
            if support[i] {
                let r = rho(x, y);
                let t = ((1.0 - r) / EDGE).clamp(0.0, 1.0);
                let fade = t * t * (3.0 - 2.0 * t);
                let v = (band_level(r) + texture(x, y)) * fade + n;
                image[i] = v.clamp(params.floor, 1.0);
            }
        }
    }

    // ── lesions ───────────────────────────────────────────────────────
    let mut label = vec![false; s * s];
    if with_anomaly {
        let mut lesion_rng = root.split("lesions");
        let count = 1 + lesion_rng.index(3);
        for _ in 0..count {
            let radius = sf * lesion_rng.uniform_in(0.05, 0.10);
            let offset = lesion_rng.uniform_in(params.lesion.0, params.lesion.1);
            // Center well inside the head so most of the lesion lands on it.
            let (bx, by) = loop {
                let x = lesion_rng.index(s);
                let y = lesion_rng.index(s);
                if support[y * s + x] && rho(x, y) < 0.7 {
                    break (x as f32, y as f32);
                }
            };
            for y in 0..s {
                for x in 0..s {
                    let i = y * s + x;
                    let dx = x as f32 - bx;
                    let dy = y as f32 - by;
                    if support[i] && dx * dx + dy * dy <= radius * radius {
                        image[i] = (image[i] + offset).min(1.0);
                        label[i] = true;
                    }
                }
            }
        }
    }

    Phantom {
        image: Tensor::new(vec![s, s, 1], image).expect("phantom intensities are finite"),
        mask: Tensor::new(vec![s, s], support.iter().map(|&b| b as u8 as f32).collect())
            .expect("mask is finite"),
        label: Tensor::new(vec![s, s], label.iter().map(|&b| b as u8 as f32).collect())
            .expect("label is finite"),
    }
}

/// Head support recovered from intensities alone: strictly positive pixels,
/// then a 3×3 closing. On generated phantoms this reproduces the stored mask
/// exactly, because their support is already closed and zero-floored.
pub fn brain_mask(image: &Tensor) -> Tensor {
    let shape = image.shape();
    let (h, w) = match shape.len() {
        2 => (shape[0], shape[1]),
        3 if shape[2] == 1 => (shape[0], shape[1]),
        _ => panic!("brain_mask wants [H, W] or [H, W, 1], got {shape:?}"),
    };
    assert_eq!(h, w, "brain_mask expects square images");
    let binary: Vec<bool> = image.data().iter().map(|&v| v > 0.0).collect();
    let closed = closing3(&binary, w);
    Tensor::new(vec![h, w], closed.iter().map(|&b| b as u8 as f32).collect()).unwrap()
}

/// Min-max normalization to [0, 1]; a constant image maps to all zeros.
pub fn normalize(image: &Tensor) -> Tensor {
    let lo = image.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = image.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    if range == 0.0 {
        return Tensor::zeros(image.shape().to_vec());
    }
    Tensor::new(
        image.shape().to_vec(),
        image.data().iter().map(|&v| (v - lo) / range).collect(),
    )
    .unwrap()
}

/// Corner-aligned bilinear resampling of an [H, W] grid.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    assert_eq!(image.rank(), 2, "resize_bilinear wants [H, W], got {:?}", image.shape());
    assert!(out_h > 0 && out_w > 0);
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let step = |n_in: usize, n_out: usize| -> f32 {
        if n_out > 1 { (n_in - 1) as f32 / (n_out - 1) as f32 } else { 0.0 }
    };
    let (sy, sx) = (step(h, out_h), step(w, out_w));
    Tensor::from_fn(vec![out_h, out_w], |i| {
        let (oy, ox) = (i / out_w, i % out_w);
        let fy = oy as f32 * sy;
        let fx = ox as f32 * sx;
        let y0 = (fy as usize).min(h - 1);
        let x0 = (fx as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
        let v00 = image.data()[y0 * w + x0];
        let v01 = image.data()[y0 * w + x1];
        let v10 = image.data()[y1 * w + x0];
        let v11 = image.data()[y1 * w + x1];
        // lerp as a + t·(b−a): exact at t = 0 and on constant inputs
        let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
        lerp(lerp(v00, v01, tx), lerp(v10, v11, tx), ty)
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PhantomParams {
        PhantomParams::with_size(64)
    }

    #[test]
    fn closing_fills_small_holes_and_is_idempotent() {
        // 5×5 with a ring of true around a false center: closing fills it.
        let s = 5;
        let mut src = vec![false; s * s];
        for y in 1..4 {
            for x in 1..4 {
                src[y * s + x] = true;
            }
        }
        src[2 * s + 2] = false;
        let closed = closing3(&src, s);
        assert!(closed[2 * s + 2], "center hole should close");
        assert_eq!(closing3(&closed, s), closed, "closing is idempotent");
    }

    #[test]
    fn phantom_invariants_hold_across_seeds() {
        for seed in 0..300 {
            let ph = generate_phantom(&params(), seed, seed % 2 == 0);
            let n = ph.mask.data().iter().filter(|&&m| m > 0.0).count();
            assert!(n > 500 && n < 64 * 64, "seed {seed}: head covers {n} pixels");
            for i in 0..64 * 64 {
                let v = ph.image.data()[i];
                let inside = ph.mask.data()[i] > 0.0;
                assert!((0.0..=1.0).contains(&v), "seed {seed}: intensity {v}");
                assert_eq!(v > 0.0, inside, "seed {seed}: support mismatch at {i}");
                if ph.label.data()[i] > 0.0 {
                    assert!(inside, "seed {seed}: label escapes the head");
                }
            }
            let lesion = ph.label.data().iter().any(|&v| v > 0.0);
            assert_eq!(lesion, seed % 2 == 0, "seed {seed}: lesion presence");
        }
    }

    #[test]
    fn recovered_mask_equals_stored_mask() {
        for seed in 0..100 {
            let ph = generate_phantom(&params(), seed, seed % 3 == 0);
            let rec = brain_mask(&ph.image);
            assert_eq!(rec.data(), ph.mask.data(), "seed {seed}");
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let a = generate_phantom(&params(), 99, true);
        let b = generate_phantom(&params(), 99, true);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.label.data(), b.label.data());
    }

    #[test]
    fn lesions_stand_out_from_their_surroundings() {
        // Mean lesion intensity beats the mean of a 3-pixel ring around the
        // lesion set by at least 0.2, for every anomalous phantom.
        for seed in 0..100 {
            let ph = generate_phantom(&params(), seed, true);
            let s = 64;
            let lesion: Vec<bool> = ph.label.data().iter().map(|&v| v > 0.0).collect();
            let mut ring = lesion.clone();
            for _ in 0..3 {
                ring = dilate3(&ring, s);
            }
            let (mut lsum, mut ln, mut rsum, mut rn) = (0.0, 0, 0.0, 0);
            for i in 0..s * s {
                if lesion[i] {
                    lsum += ph.image.data()[i];
                    ln += 1;
                } else if ring[i] && ph.mask.data()[i] > 0.0 {
                    rsum += ph.image.data()[i];
                    rn += 1;
                }
            }
            assert!(ln > 0 && rn > 0, "seed {seed}: degenerate lesion geometry");
            let margin = lsum / ln as f32 - rsum / rn as f32;
            assert!(margin >= 0.2, "seed {seed}: lesion margin only {margin}");
        }
    }

    #[test]
    fn resize_matches_hand_stencil() {
        let img = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let out = resize_bilinear(&img, 3, 3);
        let want = [1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 5.0, 6.0, 7.0];
        for (got, want) in out.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn resize_identity_when_sizes_match() {
        let img = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&img, 2, 3).data(), img.data());
    }

    #[test]
    fn normalize_full_range_and_constant() {
        let img = Tensor::new(vec![2, 2], vec![2.0, 4.0, 6.0, 10.0]).unwrap();
        let n = normalize(&img);
        assert_eq!(n.data(), [0.0, 0.25, 0.5, 1.0]);
        let flat = Tensor::filled(vec![2, 2], 3.0);
        assert_eq!(normalize(&flat).data(), [0.0; 4]);
    }
}
