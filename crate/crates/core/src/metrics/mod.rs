//! Segmentation and reconstruction metrics, plus dataset-level evaluation.

mod scores;
mod ssim;

use crate::data::Sample;
use crate::models::Model;
use crate::pipeline::{segment_with, PipelineError};

pub use scores::{
    auprc, auroc, best_dice_dataset, best_dice_per_sample, best_dice_sample, dice, mean_std,
};
pub use ssim::{ssim, SSIM_SIGMA, SSIM_WINDOW};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} must be binary (0/1 values only)")]
    NonBinary(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("labels contain a single class; ranking metrics are undefined")]
    SingleClass,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Percentile kept by the mask threshold (the pipeline default is 1%).
    pub percentile: f32,
    /// Points in the best-dice threshold sweep.
    pub n_thresholds: usize,
    /// Sweep a separate threshold per sample instead of one per dataset.
    pub per_sample_sweep: bool,
}

impl Default for EvalOptions {
    fn default() -> EvalOptions {
        EvalOptions {
            percentile: crate::pipeline::SQUASH_PERCENTILE,
            n_thresholds: 100,
            per_sample_sweep: false,
        }
    }
}

/// One row of the evaluation table. Dice statistics are over individual
/// samples (slices); AUROC/AUPRC pool all in-mask pixels of the set.
#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Best dice achievable by threshold sweep ([DSC]).
    pub best_dice: f64,
    /// Mean reconstruction SSIM over the healthy set.
    pub ssim: f64,
    pub params: usize,
    /// Which sweep convention produced `best_dice`.
    pub sweep_per_sample: bool,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        format!(
            "auroc,auprc,dsc_mean,dsc_std,best_dsc,ssim,params\n{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            self.auroc, self.auprc, self.dice_mean, self.dice_std, self.best_dice, self.ssim,
            self.params
        )
    }

    /// Aligned plain-text table; column order AUROC, AUPRC, DSC, [DSC], SSIM.
    pub fn to_table(&self) -> String {
        let sweep = if self.sweep_per_sample { "per-sample" } else { "dataset-level" };
        let mut out = String::new();
        out.push_str("# DSC mean ± std over individual samples (slices); ");
        out.push_str(&format!("[DSC] via {sweep} threshold sweep\n"));
        out.push_str(&format!(
            "{:<8}{:<8}{:<18}{:<8}{:<8}{}\n",
            "AUROC", "AUPRC", "DSC (mean ± std)", "[DSC]", "SSIM", "params"
        ));
        out.push_str(&format!(
            "{:<8.4}{:<8.4}{:<18}{:<8.4}{:<8.4}{}\n",
            self.auroc,
            self.auprc,
            format!("{:.4} ± {:.4}", self.dice_mean, self.dice_std),
            self.best_dice,
            self.ssim,
            self.params
        ));
        out
    }
}

/// Full evaluation protocol: segment every anomalous sample (per-sample dice,
/// pooled pixel AUROC/AUPRC, threshold-sweep [DSC]) and reconstruct every
/// healthy sample (mean SSIM).
pub fn evaluate(
    model: &Model,
    anomalous: &[Sample],
    healthy: &[Sample],
) -> Result<MetricReport, MetricsError> {
    evaluate_with(model, anomalous, healthy, &EvalOptions::default())
}

pub fn evaluate_with(
    model: &Model,
    anomalous: &[Sample],
    healthy: &[Sample],
    opts: &EvalOptions,
) -> Result<MetricReport, MetricsError> {
    if anomalous.is_empty() || healthy.is_empty() {
        return Err(MetricsError::EmptyInput("evaluation sets must be non-empty".into()));
    }

    let mut dices = Vec::with_capacity(anomalous.len());
    let mut filtered = Vec::with_capacity(anomalous.len());
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for sample in anomalous {
        let seg = segment_with(model, sample, opts.percentile)?;
        dices.push(dice(&seg.mask, &sample.label)?);
        for ((&f, &m), &l) in
            seg.filtered.data().iter().zip(sample.mask.data()).zip(sample.label.data())
        {
            if m > 0.0 {
                scores.push(f);
                labels.push(l > 0.0);
            }
        }
        filtered.push(seg.filtered);
    }

    let filtered_refs: Vec<_> = filtered.iter().collect();
    let label_refs: Vec<_> = anomalous.iter().map(|s| &s.label).collect();
    let mask_refs: Vec<_> = anomalous.iter().map(|s| &s.mask).collect();
    let best_dice = if opts.per_sample_sweep {
        best_dice_per_sample(&filtered_refs, &label_refs, &mask_refs, opts.n_thresholds)?
    } else {
        best_dice_dataset(&filtered_refs, &label_refs, &mask_refs, opts.n_thresholds)?
    };

    let (dice_mean, dice_std) = mean_std(&dices);
    let auroc = auroc(&scores, &labels)?;
    let auprc = auprc(&scores, &labels)?;

    let side = model.config.image;
    let mut ssim_sum = 0.0;
    for sample in healthy {
        let x = sample.image.reshaped(vec![1, side, side, 1]).map_err(PipelineError::from)?;
        let recon =
            model.infer(&x).map_err(PipelineError::from)?.reshaped(vec![side, side]).map_err(PipelineError::from)?;
        let flat = sample.image.reshaped(vec![side, side]).map_err(PipelineError::from)?;
        ssim_sum += ssim(&flat, &recon)?;
    }

    Ok(MetricReport {
        auroc,
        auprc,
        dice_mean,
        dice_std,
        best_dice,
        ssim: ssim_sum / healthy.len() as f64,
        params: model.param_count(),
        sweep_per_sample: opts.per_sample_sweep,
    })
}
