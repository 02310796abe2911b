//! Parameter sweeps: a cross-product of dotted-path override values, each
//! cell run over a set of seeds, reduced to mean/std rows and rendered as
//! deterministic CSV.

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::metrics::mean_std;
use super::trace::TraceMode;
use super::{HarnessError, RuntimeAssets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// Dotted config path, e.g. `defense.temporal.k_hist`.
    pub key: String,
    /// Raw JSON values substituted at that path.
    pub values: Vec<String>,
}

/// Parse `key=v1,v2,v3` into an axis.
pub fn parse_axis(spec: &str) -> Result<SweepAxis, HarnessError> {
    let (key, rest) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Other(format!("bad sweep axis '{spec}', expected key=v1,v2")))?;
    let values: Vec<String> = rest.split(',').map(|v| v.trim().to_string()).collect();
    if values.is_empty() || values.iter().any(String::is_empty) {
        return Err(HarnessError::Other(format!("bad sweep axis '{spec}'")));
    }
    Ok(SweepAxis { key: key.to_string(), values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub settings: Vec<(String, String)>,
    pub seeds: usize,
    pub ap50_mean: f64,
    pub ap50_std: f64,
    pub ap70_mean: f64,
    pub ap70_std: f64,
    pub det_precision_mean: f64,
    pub det_recall_mean: f64,
    pub det_f1_mean: f64,
    pub fdr_mean: f64,
}

/// Cross-product of the axes; every cell runs all seeds through the batch
/// executor. Row order follows the axes' lexicographic enumeration so the
/// CSV is reproducible bit for bit.
pub fn sweep(
    base: &ScenarioConfig,
    axes: &[SweepAxis],
    seeds: &[u64],
    assets: &RuntimeAssets,
) -> Result<Vec<SweepRow>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Other("sweep requires at least one seed".into()));
    }
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for v in &axis.values {
                let mut c = cell.clone();
                c.push((axis.key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }

    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let overrides: Vec<String> = cell.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let cfg = base.with_overrides(&overrides)?;
        let cfgs: Vec<ScenarioConfig> = seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c
            })
            .collect();
        let outputs = super::run_batch(&cfgs, assets, TraceMode::Off);
        let mut ap50 = Vec::new();
        let mut ap70 = Vec::new();
        let mut precision = Vec::new();
        let mut recall = Vec::new();
        let mut f1 = Vec::new();
        let mut fdr = Vec::new();
        for out in outputs {
            let r = out?.result;
            ap50.push(r.ap50);
            ap70.push(r.ap70);
            precision.push(r.detection.precision());
            recall.push(r.detection.recall());
            f1.push(r.detection.f1());
            fdr.push(r.detection.fdr());
        }
        let (ap50_mean, ap50_std) = mean_std(&ap50);
        let (ap70_mean, ap70_std) = mean_std(&ap70);
        rows.push(SweepRow {
            settings: cell,
            seeds: seeds.len(),
            ap50_mean,
            ap50_std,
            ap70_mean,
            ap70_std,
            det_precision_mean: mean_std(&precision).0,
            det_recall_mean: mean_std(&recall).0,
            det_f1_mean: mean_std(&f1).0,
            fdr_mean: mean_std(&fdr).0,
        });
    }
    Ok(rows)
}

/// Deterministic CSV: one column per axis plus fixed metric columns.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        return out;
    }
    let mut header: Vec<String> = rows[0].settings.iter().map(|(k, _)| k.clone()).collect();
    header.extend(
        [
            "seeds",
            "ap50_mean",
            "ap50_std",
            "ap70_mean",
            "ap70_std",
            "det_precision_mean",
            "det_recall_mean",
            "det_f1_mean",
            "fdr_mean",
        ]
        .map(str::to_string),
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut fields: Vec<String> =
            row.settings.iter().map(|(_, v)| v.replace(',', ";")).collect();
        fields.push(row.seeds.to_string());
        for v in [
            row.ap50_mean,
            row.ap50_std,
            row.ap70_mean,
            row.ap70_std,
            row.det_precision_mean,
            row.det_recall_mean,
            row.det_f1_mean,
            row.fdr_mean,
        ] {
            fields.push(format!("{v:.6}"));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
