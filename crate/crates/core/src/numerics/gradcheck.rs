//! Finite-difference gradient verification. Central differences in f32 carry
//! round-off of roughly eps·|loss|/(2h) ≈ 6e-5·|loss| at h = 1e-3, so every
//! comparison gets both a relative gate (for healthy-sized gradients) and an
//! absolute floor scaled by the loss magnitude (for coordinates whose
//! analytic/FD disagreement is indistinguishable from round-off).

use super::tensor::Tensor;
use super::Result;

#[derive(Debug, Clone, Copy)]
pub struct FdSettings {
    pub h: f32,
    pub rel_tol: f32,
    pub abs_floor: f32,
}

impl Default for FdSettings {
    fn default() -> FdSettings {
        FdSettings { h: 1e-3, rel_tol: 1e-3, abs_floor: 2e-4 }
    }
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f32,
    pub worst_abs: f32,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients against central differences at the listed
/// `(tensor index, flat coordinate)` pairs. `loss` must be a pure function of
/// the given tensors; it is re-evaluated with one coordinate nudged ±h.
pub fn check_fd(
    params: &[Tensor],
    analytic: &[Tensor],
    coords: &[(usize, usize)],
    settings: FdSettings,
    mut loss: impl FnMut(&[Tensor]) -> Result<f32>,
) -> Result<FdReport> {
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = FdReport::default();
    let floor = settings.abs_floor * loss(&work)?.abs().max(1.0);
    for &(pi, ci) in coords {
        let orig = work[pi].data()[ci];
        work[pi].data_mut()[ci] = orig + settings.h;
        let up = loss(&work)?;
        work[pi].data_mut()[ci] = orig - settings.h;
        let down = loss(&work)?;
        work[pi].data_mut()[ci] = orig;

        let fd = (up - down) / (2.0 * settings.h);
        let a = analytic[pi].data()[ci];
        let abs = (a - fd).abs();
        let rel = abs / a.abs().max(fd.abs()).max(1e-12);
        report.checked += 1;
        report.worst_abs = report.worst_abs.max(abs);
        if abs > floor {
            report.worst_rel = report.worst_rel.max(rel);
            if rel > settings.rel_tol {
                report.failures.push(format!(
                    "tensor {pi} coord {ci}: analytic {a:.6e} vs fd {fd:.6e} (rel {rel:.3e})"
                ));
            }
        }
    }
    Ok(report)
}

/// Deterministic spread of up to `max_per` coordinates per tensor.
pub fn sample_coords(params: &[Tensor], max_per: usize) -> Vec<(usize, usize)> {
    let mut coords = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let take = max_per.min(n);
        for j in 0..take {
            coords.push((pi, j * n / take));
        }
    }
    coords
}
