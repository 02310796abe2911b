//! Variant comparison: one attacked configuration evaluated across the
//! reference settings (upper bound, lower bound, no defense) and the
//! defense variants, aggregated over seeds into a JSON report.

use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ScenarioConfig, Variant};
use super::metrics::mean_std;
use super::trace::TraceMode;
use super::{HarnessError, RuntimeAssets, ScenarioResult};

pub const REPORT_SCHEMA: &str = "cpsim.report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub variant: Variant,
    pub attack: AttackKind,
    pub ap50_mean: f64,
    pub ap50_std: f64,
    pub ap70_mean: f64,
    pub ap70_std: f64,
    pub det_precision: f64,
    pub det_recall: f64,
    pub det_f1: f64,
    pub fdr: f64,
    /// Wall-clock frames per second, mean over seeds. Not replayable.
    pub throughput_fps: f64,
    /// Per-seed AP@0.5 values for paired comparisons.
    pub ap50_per_seed: Vec<f64>,
    pub ap70_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn aggregate(label: &str, variant: Variant, attack: AttackKind, results: &[ScenarioResult]) -> EvalRow {
    let ap50: Vec<f64> = results.iter().map(|r| r.ap50).collect();
    let ap70: Vec<f64> = results.iter().map(|r| r.ap70).collect();
    let (ap50_mean, ap50_std) = mean_std(&ap50);
    let (ap70_mean, ap70_std) = mean_std(&ap70);
    let mut pooled = super::DetectionCounts::default();
    for r in results {
        pooled.true_positives += r.detection.true_positives;
        pooled.false_positives += r.detection.false_positives;
        pooled.false_negatives += r.detection.false_negatives;
    }
    let throughput: Vec<f64> = results.iter().map(|r| r.throughput_fps).collect();
    EvalRow {
        label: label.to_string(),
        variant,
        attack,
        ap50_mean,
        ap50_std,
        ap70_mean,
        ap70_std,
        det_precision: pooled.precision(),
        det_recall: pooled.recall(),
        det_f1: pooled.f1(),
        fdr: pooled.fdr(),
        throughput_fps: mean_std(&throughput).0,
        ap50_per_seed: ap50,
        ap70_per_seed: ap70,
    }
}

/// Run one labeled setting over all seeds.
pub fn run_setting(
    base: &ScenarioConfig,
    label: &str,
    variant: Variant,
    attack: AttackKind,
    seeds: &[u64],
    assets: &RuntimeAssets,
) -> Result<EvalRow, HarnessError> {
    let cfgs: Vec<ScenarioConfig> = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.defense.variant = variant;
            cfg.attack.kind = attack;
            cfg
        })
        .collect();
    let outputs = super::run_batch(&cfgs, assets, TraceMode::Off);
    let mut results = Vec::with_capacity(outputs.len());
    for out in outputs {
        results.push(out?.result);
    }
    Ok(aggregate(label, variant, attack, &results))
}

/// The standard comparison: reference settings plus every defense variant
/// under the configured attack.
pub fn evaluate(
    base: &ScenarioConfig,
    seeds: &[u64],
    assets: &RuntimeAssets,
) -> Result<EvalReport, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Other("evaluate requires at least one seed".into()));
    }
    let attack = base.attack.kind;
    let settings: Vec<(&str, Variant, AttackKind)> = vec![
        ("upper-bound", Variant::None, AttackKind::None),
        ("lower-bound", Variant::LowerBound, attack),
        ("no-defense", Variant::None, attack),
        ("spatial-baseline", Variant::SpatialBaseline, attack),
        ("gcp-s", Variant::GcpS, attack),
        ("gcp-t", Variant::GcpT, attack),
        ("gcp", Variant::Gcp, attack),
    ];
    let mut rows = Vec::with_capacity(settings.len());
    for (label, variant, kind) in settings {
        rows.push(run_setting(base, label, variant, kind, seeds, assets)?);
    }
    Ok(EvalReport { schema: REPORT_SCHEMA.to_string(), seeds: seeds.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_rates_stay_in_unit_interval() {
        let mut cfg = ScenarioConfig::default();
        cfg.frames = 12;
        cfg.scene.n_objects = 8;
        let seeds = [1, 2];
        // Reference settings only (no calibration available).
        let upper = run_setting(&cfg, "upper-bound", Variant::None, AttackKind::None, &seeds, &RuntimeAssets::default()).unwrap();
        let lower = run_setting(&cfg, "lower-bound", Variant::LowerBound, AttackKind::Bac, &seeds, &RuntimeAssets::default()).unwrap();
        for row in [&upper, &lower] {
            for v in [row.ap50_mean, row.ap70_mean, row.det_precision, row.det_recall, row.det_f1, row.fdr] {
                assert!((0.0..=1.0).contains(&v), "{}: {v}", row.label);
            }
        }
        assert!(upper.ap50_mean >= lower.ap50_mean);
    }
}
