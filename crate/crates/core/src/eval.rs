//! Method comparison on a test split: per-item metrics, mean/median
//! aggregates and a method-by-metric results table.

use serde::{Deserialize, Serialize};

use crate::dataset::bicubic_upscale;
use crate::error::{invalid, Result};
use crate::metrics::{aggregate, lpips, psnr, ssim, FeatureExtractor, ItemMetrics, MetricReport, SsimParams};
use crate::models::Model;
use crate::raster::Raster;
use crate::train::Sample;

/// Canonical column order of the results table.
pub const METHOD_ORDER: [&str; 5] = ["Bicubic", "SRCNN", "SRResNet", "ESRGAN", "Real-ESRGAN"];

/// A super-resolution method: bicubic interpolation or a trained model.
#[derive(Debug, Clone)]
pub struct Method {
    pub label: String,
    pub model: Option<Model>,
    pub scale: usize,
}

impl Method {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            label: "Bicubic".into(),
            model: None,
            scale,
        }
    }

    pub fn model(label: impl Into<String>, model: Model) -> Self {
        let scale = model.spec.scale;
        Self {
            label: label.into(),
            model: Some(model),
            scale,
        }
    }

    pub fn predict(&self, lr: &Raster) -> Result<Raster> {
        match &self.model {
            None => bicubic_upscale(lr, self.scale),
            Some(m) => m.super_resolve(lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub report: MetricReport,
}

/// All three quality metrics of one prediction against its target.
pub fn score(pred: &Raster, target: &Raster, extractor: &dyn FeatureExtractor, id: &str) -> Result<ItemMetrics> {
    Ok(ItemMetrics {
        item_id: id.to_string(),
        psnr: psnr(pred, target, 1.0)?,
        ssim: ssim(pred, target, &SsimParams::default())?,
        lpips: lpips(pred, target, extractor)?,
    })
}

/// Reports in canonical method order; a Bicubic baseline is added when
/// none of `methods` is one.
pub fn evaluate(samples: &[Sample], methods: &[Method], extractor: &dyn FeatureExtractor) -> Result<Vec<MethodReport>> {
    if samples.is_empty() {
        return invalid("test set is empty");
    }
    let mut methods = methods.to_vec();
    if !methods.iter().any(|m| m.model.is_none()) {
        let scale = methods.first().map_or(2, |m| m.scale);
        methods.push(Method::bicubic(scale));
    }
    sort_methods(&mut methods);
    methods
        .iter()
        .map(|m| {
            let items = samples
                .iter()
                .map(|s| score(&m.predict(&s.lr)?, &s.hr, extractor, &s.id))
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodReport {
                method: m.label.clone(),
                report: aggregate(items)?,
            })
        })
        .collect()
}

fn rank(label: &str) -> usize {
    METHOD_ORDER
        .iter()
        .position(|&m| m.eq_ignore_ascii_case(label))
        .unwrap_or(METHOD_ORDER.len())
}

/// Stable sort into the canonical column order; unknown labels go last.
pub fn sort_methods(methods: &mut [Method]) {
    methods.sort_by_key(|m| rank(&m.label));
}

/// Metrics as rows, methods as Mean/Median column pairs.
pub fn results_table(reports: &[MethodReport]) -> String {
    let w = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(15);
    let mut s = format!("{:<8}", "method");
    for r in reports {
        s.push_str(&format!(" | {:^w$}", r.method));
    }
    s.push('\n');
    s.push_str(&format!("{:<8}", "metric"));
    let half = (w - 1) / 2;
    let rest = w - 1 - half;
    for _ in reports {
        s.push_str(&format!(" | {:>half$} {:>rest$}", "Mean", "Median"));
    }
    s.push('\n');
    type Pick = fn(&MetricReport) -> (f64, f64);
    let rows: [(&str, Pick, usize); 3] = [
        ("PSNR", |r| (r.aggregates.psnr.mean, r.aggregates.psnr.median), 2),
        ("SSIM", |r| (r.aggregates.ssim.mean, r.aggregates.ssim.median), 4),
        ("LPIPS", |r| (r.aggregates.lpips.mean, r.aggregates.lpips.median), 4),
    ];
    for (name, pick, prec) in rows {
        s.push_str(&format!("{name:<8}"));
        for r in reports {
            let (mean, median) = pick(&r.report);
            s.push_str(&format!(" | {mean:>half$.prec$} {median:>rest$.prec$}"));
        }
        s.push('\n');
    }
    s
}

/// Long-format CSV of every method's per-item metrics.
pub fn results_csv(reports: &[MethodReport]) -> String {
    let mut s = String::from("method,item_id,psnr,ssim,lpips\n");
    for r in reports {
        for i in &r.report.per_item {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                i.item_id,
                crate::metrics::format_db(i.psnr),
                i.ssim,
                i.lpips
            ));
        }
    }
    s
}
