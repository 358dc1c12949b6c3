//! Scripted ablation runs: a matrix of flag configurations trained and
//! evaluated on a shared dataset with a shared seed, reported with deltas
//! against the first (baseline) row.

use serde::Serialize;

use crate::data::Sample;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::network::{build, SANetConfig};
use crate::trainer::{evaluate, train, TrainConfig};

/// One row of the matrix: a name plus the flag overrides it applies.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub use_pinwheel: bool,
    pub use_cbam: bool,
    pub safm_residual: bool,
    pub lambda_learnable: bool,
}

impl AblationRow {
    pub fn apply(&self, base: &SANetConfig) -> SANetConfig {
        SANetConfig {
            use_pinwheel: self.use_pinwheel,
            use_cbam: self.use_cbam,
            safm_residual: self.safm_residual,
            lambda_learnable: self.lambda_learnable,
            ..base.clone()
        }
    }
}

/// The standard six rows: plain-conv baseline, pinwheel added, full encoder
/// block, the two skip-fusion ablations, and the complete model.
pub fn default_matrix() -> Vec<AblationRow> {
    let row = |name: &str, pconv: bool, cbam: bool, residual: bool, learnable: bool| AblationRow {
        name: name.to_string(),
        use_pinwheel: pconv,
        use_cbam: cbam,
        safm_residual: residual,
        lambda_learnable: learnable,
    };
    vec![
        row("baseline_conv", false, false, true, true),
        row("conv_pconv", true, false, true, true),
        row("conv_pconv_cbam", true, true, true, true),
        row("safm_no_residual", true, true, false, true),
        row("safm_lambda_fixed", true, true, true, false),
        row("full", true, true, true, true),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct RowResult {
    pub name: String,
    pub params: usize,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub rows: Vec<RowResult>,
}

/// Trains and evaluates every row with a fresh model and fresh optimizer
/// state, sharing dataset and seed. A failing row is recorded and the rest
/// proceed.
pub fn run_ablation(
    base: &SANetConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    rows: &[AblationRow],
) -> AblationTable {
    let mut results = Vec::with_capacity(rows.len());
    for row in rows {
        results.push(run_row(row, base, train_cfg, train_set, test_set));
    }
    AblationTable { rows: results }
}

/// Runs a single row end to end; exposed so reruns can be compared
/// byte-for-byte.
pub fn run_row(
    row: &AblationRow,
    base: &SANetConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> RowResult {
    match try_row(row, base, train_cfg, train_set, test_set) {
        Ok((params, report)) => RowResult {
            name: row.name.clone(),
            params,
            report: Some(report),
            error: None,
        },
        Err(e) => RowResult {
            name: row.name.clone(),
            params: 0,
            report: None,
            error: Some(e.to_string()),
        },
    }
}

fn try_row(
    row: &AblationRow,
    base: &SANetConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<(usize, MetricReport)> {
    let cfg = row.apply(base);
    let model = build::<f32>(&cfg, train_cfg.seed)?;
    let params = model.count_params();
    train(&model, train_set, Some(test_set), train_cfg)?;
    let report = evaluate(&model, test_set, train_cfg.threshold, train_cfg.match_radius)?;
    Ok((params, report))
}

impl AblationTable {
    fn baseline(&self) -> Option<&RowResult> {
        self.rows.first()
    }

    /// `name,params,iou,niou,pd,fa,d_iou,d_niou,d_pd,d_fa,error`, deltas
    /// against the first row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,params,iou,niou,pd,fa,d_iou,d_niou,d_pd,d_fa,error\n");
        let base = self.baseline().and_then(|r| r.report.as_ref());
        for r in &self.rows {
            match &r.report {
                Some(rep) => {
                    let a = &rep.aggregate;
                    let (d_iou, d_niou, d_pd, d_fa) = match base {
                        Some(b) => (
                            a.iou - b.aggregate.iou,
                            a.niou - b.aggregate.niou,
                            match (a.pd, b.aggregate.pd) {
                                (Some(x), Some(y)) => x - y,
                                _ => f64::NAN,
                            },
                            a.fa - b.aggregate.fa,
                        ),
                        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                    };
                    out.push_str(&format!(
                        "{},{},{:.6},{:.6},{},{:.8},{:+.6},{:+.6},{:+.6},{:+.8},\n",
                        r.name,
                        r.params,
                        a.iou,
                        a.niou,
                        a.pd.map_or("nan".into(), |v| format!("{v:.6}")),
                        a.fa,
                        d_iou,
                        d_niou,
                        d_pd,
                        d_fa
                    ));
                }
                None => out.push_str(&format!(
                    "{},,,,,,,,,,{}\n",
                    r.name,
                    r.error.as_deref().unwrap_or("failed")
                )),
            }
        }
        out
    }

    /// Human-readable fixed-width table.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<20} {:>10} {:>8} {:>8} {:>8} {:>12} {:>8}\n",
            "row", "params", "IoU", "nIoU", "Pd", "Fa", "dIoU"
        );
        let base = self.baseline().and_then(|r| r.report.as_ref());
        for r in &self.rows {
            match &r.report {
                Some(rep) => {
                    let a = &rep.aggregate;
                    let d_iou = base.map_or(f64::NAN, |b| a.iou - b.aggregate.iou);
                    out.push_str(&format!(
                        "{:<20} {:>10} {:>8.4} {:>8.4} {:>8} {:>12.3e} {:>+8.4}\n",
                        r.name,
                        r.params,
                        a.iou,
                        a.niou,
                        a.pd.map_or("nan".into(), |v| format!("{v:.4}")),
                        a.fa,
                        d_iou
                    ));
                }
                None => out.push_str(&format!(
                    "{:<20} FAILED: {}\n",
                    r.name,
                    r.error.as_deref().unwrap_or("?")
                )),
            }
        }
        out
    }
}
