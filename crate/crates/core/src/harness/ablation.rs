//! Ablation runner: every variant is trained on the same data with each
//! seed, evaluated on the held-out split, and summarised by per-variant
//! medians.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Variant;

use super::config::ExperimentConfig;
use super::evaluate::evaluate_model;
use super::train::Trainer;

/// Full-scale DUTS-TE reference values `(variant, MaxF, MAE, S)`, kept for
/// documentation; desk-scale runs are not expected to reach them.
pub const REFERENCE_DUTS: [(&str, f64, f64, f64); 3] = [
    ("B", 0.855, 0.060, 0.844),
    ("B+edge_TDLP", 0.879, 0.044, 0.866),
    ("B+edge_TDLP+MRF_OTO", 0.893, 0.039, 0.875),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Run,
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// `None` on median rows.
    pub seed: Option<u64>,
    pub kind: RowKind,
    pub max_f: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub edge_max_f: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl AblationTable {
    pub const CSV_HEADER: [&'static str; 7] = ["variant", "seed", "kind", "max_f", "mae", "s_measure", "edge_max_f"];

    pub fn runs(&self, variant: Variant) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.variant == variant && r.kind == RowKind::Run)
    }

    pub fn median_row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.kind == RowKind::Median)
    }

    /// Appends one median row per variant that has runs and none yet.
    pub fn add_medians(&mut self) {
        let mut variants: Vec<Variant> = self.rows.iter().map(|r| r.variant).collect();
        variants.dedup();
        for v in variants {
            if self.median_row(v).is_some() {
                continue;
            }
            let runs: Vec<&AblationRow> = self.runs(v).collect();
            let pick = |f: fn(&AblationRow) -> f64| median(&mut runs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let row = AblationRow {
                variant: v,
                seed: None,
                kind: RowKind::Median,
                max_f: pick(|r| r.max_f),
                mae: pick(|r| r.mae),
                s_measure: pick(|r| r.s_measure),
                edge_max_f: pick(|r| r.edge_max_f),
            };
            self.rows.push(row);
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let kind = match r.kind {
                RowKind::Run => "run",
                RowKind::Median => "median",
            };
            w.write_record([
                r.variant.label().to_string(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                kind.to_string(),
                format!("{:.6}", r.max_f),
                format!("{:.6}", r.mae),
                format!("{:.6}", r.s_measure),
                format!("{:.6}", r.edge_max_f),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains and evaluates one `(variant, seed)` pair.
pub fn run_single(base: &ExperimentConfig, variant: Variant, seed: u64, train: &[Sample], test: &[Sample]) -> Result<AblationRow> {
    let mut config = base.clone();
    config.model.variant = variant;
    config.seed = seed;
    let mut trainer = Trainer::new(config, train.to_vec())?;
    trainer.run()?;
    let report = evaluate_model(trainer.model(), test, None)?;
    Ok(AblationRow {
        variant,
        seed: Some(seed),
        kind: RowKind::Run,
        max_f: report.saliency.max_f,
        mae: report.saliency.mae,
        s_measure: report.saliency.s_measure,
        edge_max_f: report.edge.max_f,
    })
}

/// Runs every `(variant, seed)` pair on the base config's splits; the
/// callback sees each run row as it completes.
pub fn run_ablation(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let train = base.data.train.materialize()?;
    let test = base.data.test.materialize()?;
    let mut table = AblationTable::default();
    for &variant in variants {
        for &seed in seeds {
            let row = run_single(base, variant, seed, &train, &test)?;
            on_row(&row);
            table.rows.push(row);
        }
    }
    table.add_medians();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: Variant, seed: u64, max_f: f64) -> AblationRow {
        AblationRow {
            variant,
            seed: Some(seed),
            kind: RowKind::Run,
            max_f,
            mae: 0.1,
            s_measure: 0.5,
            edge_max_f: 0.2,
        }
    }

    #[test]
    fn medians_are_appended_per_variant() {
        let mut t = AblationTable {
            rows: vec![
                row(Variant::Baseline, 0, 0.3),
                row(Variant::Baseline, 1, 0.9),
                row(Variant::Baseline, 2, 0.5),
                row(Variant::Full, 0, 0.4),
                row(Variant::Full, 1, 0.6),
                row(Variant::Full, 2, 0.7),
            ],
        };
        t.add_medians();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.median_row(Variant::Baseline).unwrap().max_f, 0.5);
        assert_eq!(t.median_row(Variant::Full).unwrap().max_f, 0.6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("variant,seed,kind,max_f,mae,s_measure,edge_max_f\n"));
    }
}
