use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::data::Dataset;
use super::folds::{Split, FOLDS};
use super::metrics::MetricsReport;
use super::train::{evaluate, train_fold, Selection, TrainConfig};

/// Configs compared on one shared fold plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    /// Fold plan seed; overrides each config's `split_seed`.
    pub seed: u64,
    /// Number of folds to run, from fold 0.
    #[serde(default = "all_folds")]
    pub folds: usize,
    pub configs: Vec<TrainConfig>,
}

fn all_folds() -> usize {
    FOLDS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    /// Test-split report of every fold.
    pub folds: Vec<MetricsReport>,
}

impl BenchRow {
    pub fn from_reports(label: String, folds: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            label,
            macro_precision: col(|r| r.macro_precision),
            macro_recall: col(|r| r.macro_recall),
            macro_f1: col(|r| r.macro_f1),
            folds,
        }
    }

    pub fn fold_f1(&self) -> Vec<f64> {
        self.folds.iter().map(|r| r.macro_f1).collect()
    }
}

/// Trains and tests every config on folds `0..plan.folds`.
pub fn bench(data: &Dataset, plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    if plan.folds == 0 || plan.folds > FOLDS {
        return Err(invalid(format!("bench folds must be in 1..={FOLDS}, got {}", plan.folds)));
    }
    let folds = data.fold_plan(plan.seed)?;
    plan.configs
        .iter()
        .map(|cfg| {
            let cfg = TrainConfig { split_seed: plan.seed, ..cfg.clone() };
            let reports = folds.folds[..plan.folds]
                .iter()
                .map(|fold| {
                    let (ck, _) = train_fold(data, fold, &TrainConfig { fold: fold.id, ..cfg.clone() })?;
                    evaluate(&ck, data, Selection::Fold(fold.id, Split::Test))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BenchRow::from_reports(cfg.label(), reports))
        })
        .collect()
}

/// Mean +- std over folds, one row per config.
pub fn render_table(rows: &[BenchRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>15}  {:>15}  {:>15}\n", "model", "macro-P", "macro-R", "macro-F1");
    let cell = |m: MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>15}  {:>15}  {:>15}\n",
            r.label,
            cell(r.macro_precision),
            cell(r.macro_recall),
            cell(r.macro_f1)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::{ArchConfig, ModelKind};
    use crate::synthbench::{generate, SynthKind, SynthSpec};

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn table_has_one_row_per_config_and_is_reproducible() {
        let mut spec = SynthSpec::new(SynthKind::Redundant, 40, 0.1, 2);
        spec.patches = 3;
        spec.nuclei = 4;
        let data = Dataset::from_samples(generate(&spec).unwrap()).unwrap();
        let arch = ArchConfig { tokens: 1, width: 3, attn_hidden: 3, global: 3, sage: vec![3], knn: 2, expert_hidden: 4, gate_hidden: 4, ..ArchConfig::default() };
        let base = TrainConfig { epochs: 1, arch, ..TrainConfig::default() };
        let plan = BenchPlan {
            seed: 5,
            folds: 2,
            configs: vec![
                TrainConfig { model: ModelKind::PATHMOE_EF, ..base.clone() },
                TrainConfig { model: ModelKind::EF, variant: "W".parse().unwrap(), ..base.clone() },
                TrainConfig { model: ModelKind::PATHMOE_EF, ..base },
            ],
        };
        let rows = bench(&data, &plan).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[2]);
        assert_eq!(rows[1].label, "ef_W");
        assert!(rows.iter().all(|r| r.folds.len() == 2));
        let table = render_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().next().unwrap().contains("macro-F1"));
        assert!(table.contains("pathmoe-ef_WTG"));
    }

    #[test]
    fn plan_json_defaults() {
        let plan: BenchPlan = serde_json::from_str(r#"{"seed": 1, "configs": [{"model": "sg", "variant": "WG"}]}"#).unwrap();
        assert_eq!(plan.folds, 10);
        assert_eq!(plan.configs[0].model, ModelKind::SG);
        assert_eq!(plan.configs[0].epochs, 50);
        assert_eq!(plan.configs[0].lambda_int, 0.1);
    }
}
