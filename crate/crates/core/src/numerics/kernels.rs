//! Pure forward/backward array kernels shared by the eager executor and the
//! tape. No kernel here allocates tape state or checks finiteness; callers do.

/// C[m,n] = A·B with optional transposes. `a` holds an m×k matrix stored
/// row-major as m×k when `ta` is false and k×m when true; same for `b`.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let (rsa, csa) = if ta { (1isize, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1isize, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, false, b, false, 0.0, &mut out);
    out
}

/// Batched matmul over `batch` independent m×k · k×n products.
/// With `tb`, each `b` slice is stored n×k and used transposed.
pub fn bmm(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    tb: bool,
) -> Vec<f32> {
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a[i * m * k..(i + 1) * m * k],
            false,
            &b[i * k * n..(i + 1) * k * n],
            tb,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    out
}

// ── Convolution geometry ─────────────────────────────────────────────

/// Spatial bookkeeping for one conv2d application (NHWC layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// TF-style `same` padding: output = ceil(in / stride).
    pub fn same(batch: usize, h: usize, w: usize, cin: usize, k: usize, stride: usize) -> ConvGeom {
        let out_h = h.div_ceil(stride);
        let out_w = w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + k).saturating_sub(h);
        let pad_w = ((out_w - 1) * stride + k).saturating_sub(w);
        ConvGeom {
            batch,
            h,
            w,
            cin,
            k,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h,
            out_w,
        }
    }

    /// No padding: output = floor((in - k) / stride) + 1.
    pub fn valid(
        batch: usize,
        h: usize,
        w: usize,
        cin: usize,
        k: usize,
        stride: usize,
    ) -> ConvGeom {
        ConvGeom {
            batch,
            h,
            w,
            cin,
            k,
            stride,
            pad_top: 0,
            pad_left: 0,
            out_h: (h - k) / stride + 1,
            out_w: (w - k) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    pub fn out_positions(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Lower the input into a (positions × patch) matrix; out-of-bounds taps are
/// zero. Row r corresponds to flattened (batch, out_y, out_x), column to
/// flattened (ky, kx, cin).
pub fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let q = g.patch_len();
    let mut cols = vec![0.0; g.out_positions() * q];
    let mut row = 0;
    for b in 0..g.batch {
        let xb = &x[b * g.h * g.w * g.cin..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * q..(row + 1) * q];
                for ky in 0..g.k {
                    let y = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let xcoord = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if xcoord < 0 || xcoord >= g.w as isize {
                            continue;
                        }
                        let src = (y as usize * g.w + xcoord as usize) * g.cin;
                        let col = (ky * g.k + kx) * g.cin;
                        dst[col..col + g.cin].copy_from_slice(&xb[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into image space.
pub fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let q = g.patch_len();
    let mut x = vec![0.0; g.batch * g.h * g.w * g.cin];
    let mut row = 0;
    for b in 0..g.batch {
        let xb_off = b * g.h * g.w * g.cin;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src_row = &cols[row * q..(row + 1) * q];
                for ky in 0..g.k {
                    let y = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let xcoord = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if xcoord < 0 || xcoord >= g.w as isize {
                            continue;
                        }
                        let dst = xb_off + (y as usize * g.w + xcoord as usize) * g.cin;
                        let col = (ky * g.k + kx) * g.cin;
                        for c in 0..g.cin {
                            x[dst + c] += src_row[col + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// conv2d forward: im2col then one GEMM. `w` is k×k×cin×cout row-major.
pub fn conv2d(x: &[f32], w: &[f32], g: &ConvGeom, cout: usize) -> Vec<f32> {
    let cols = im2col(x, g);
    matmul(g.out_positions(), g.patch_len(), cout, &cols, w)
}

/// conv2d_transpose forward == conv2d backward-data: `y` lives on the coarse
/// grid (`g.out_*`), the result on the fine grid (`g.h`, `g.w`).
pub fn conv2d_transpose(y: &[f32], w: &[f32], g: &ConvGeom, cout: usize) -> Vec<f32> {
    let p = g.out_positions();
    let q = g.patch_len();
    let mut cols = vec![0.0; p * q];
    gemm(p, cout, q, y, false, w, true, 0.0, &mut cols);
    col2im(&cols, g)
}

/// Gradient of conv2d w.r.t. the kernel: colsᵀ·dy.
pub fn conv2d_grad_w(x: &[f32], dy: &[f32], g: &ConvGeom, cout: usize) -> Vec<f32> {
    let cols = im2col(x, g);
    let mut dw = vec![0.0; g.patch_len() * cout];
    gemm(g.patch_len(), g.out_positions(), cout, &cols, true, dy, false, 0.0, &mut dw);
    dw
}

// ── Normalization and activations ────────────────────────────────────

pub struct LayerNormSaved {
    pub normalized: Vec<f32>,
    pub rstd: Vec<f32>,
}

/// Per-last-axis standardization followed by an affine map. Population
/// variance, floored by eps, so constant rows map to beta.
pub fn layer_norm(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    k: usize,
    eps: f32,
) -> (Vec<f32>, LayerNormSaved) {
    let rows = x.len() / k;
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * k..(r + 1) * k];
        let mean = row.iter().sum::<f32>() / k as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / k as f32;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..k {
            let xhat = (row[i] - mean) * rs;
            normalized[r * k + i] = xhat;
            out[r * k + i] = xhat * gamma[i] + beta[i];
        }
    }
    (out, LayerNormSaved { normalized, rstd })
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward(
    dy: &[f32],
    gamma: &[f32],
    saved: &LayerNormSaved,
    k: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let rows = dy.len() / k;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; k];
    let mut dbeta = vec![0.0; k];
    for r in 0..rows {
        let dyr = &dy[r * k..(r + 1) * k];
        let xhat = &saved.normalized[r * k..(r + 1) * k];
        let rs = saved.rstd[r];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..k {
            let dxhat = dyr[i] * gamma[i];
            m1 += dxhat;
            m2 += dxhat * xhat[i];
            dgamma[i] += dyr[i] * xhat[i];
            dbeta[i] += dyr[i];
        }
        m1 /= k as f32;
        m2 /= k as f32;
        for i in 0..k {
            let dxhat = dyr[i] * gamma[i];
            dx[r * k + i] = rs * (dxhat - m1 - xhat[i] * m2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Numerically stable softmax along an arbitrary axis.
pub fn softmax(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f32::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(x[base + a * inner]);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = (x[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for a in 0..axis_len {
                out[base + a * inner] *= inv;
            }
        }
    }
    out
}

pub fn softmax_backward(dy: &[f32], y: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = vec![0.0; dy.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut dot = 0.0;
            for a in 0..axis_len {
                dot += dy[base + a * inner] * y[base + a * inner];
            }
            for a in 0..axis_len {
                let idx = base + a * inner;
                dx[idx] = y[idx] * (dy[idx] - dot);
            }
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

/// tanh-approximated GELU.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn leaky_relu(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}
