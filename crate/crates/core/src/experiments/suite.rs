//! Batches of experiments with CSV and markdown summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{run_experiment, DatasetKind, ExperimentReport, ExperimentSpec, TrainOverrides};
use crate::morpho::{MorphOp, SeKind};

/// Cartesian product of datasets × operations × shapes sharing overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub datasets: Vec<DatasetKind>,
    pub operations: Vec<MorphOp>,
    pub se_shapes: Vec<SeKind>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub mnist_limit: Option<usize>,
    #[serde(default)]
    pub test_samples: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentSpec>,
}

impl SuiteSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    /// Grid cells (dataset-major, then operation, then shape) followed by
    /// the explicit experiments.
    pub fn expand(&self) -> Vec<ExperimentSpec> {
        let mut out = Vec::new();
        if let Some(g) = &self.grid {
            for &d in &g.datasets {
                for &op in &g.operations {
                    for &shape in &g.se_shapes {
                        let mut s = ExperimentSpec::new(d, op, shape);
                        s.train = g.train.clone();
                        s.mnist_limit = g.mnist_limit;
                        if let Some(n) = g.test_samples {
                            s.test_samples = n;
                        }
                        out.push(s);
                    }
                }
            }
        }
        out.extend(self.experiments.iter().cloned());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub label: String,
    pub dataset: DatasetKind,
    pub operation: MorphOp,
    pub se_shape: SeKind,
    pub se_size: usize,
    pub outcome: std::result::Result<ExperimentReport, String>,
}

/// Runs every cell in order. A failing cell becomes an error row instead of
/// aborting the suite. Writes `results.csv`, `results.md` and one
/// sub-directory per cell under `out`.
pub fn run_suite(suite: &SuiteSpec, out: &Path) -> Result<Vec<SuiteRow>> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (k, mut spec) in suite.expand().into_iter().enumerate() {
        let cell = format!(
            "{k:03}_{}_{}_{}",
            spec.dataset.name(),
            spec.operation.name(),
            spec.se_shape.name()
        );
        spec.output_dir = Some(out.join(cell));
        let outcome = run_experiment(&spec).map(|r| r.report).map_err(|e| e.to_string());
        rows.push(SuiteRow {
            label: spec.label(),
            dataset: spec.dataset,
            operation: spec.operation,
            se_shape: spec.se_shape,
            se_size: spec.se_size(),
            outcome,
        });
        write_csv(&rows, &out.join("results.csv"))?;
    }
    write_csv(&rows, &out.join("results.csv"))?;
    std::fs::write(out.join("results.md"), render_markdown(&rows))?;
    Ok(rows)
}

pub fn write_csv(rows: &[SuiteRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset",
        "operation",
        "se_shape",
        "se_size",
        "status",
        "dice_error",
        "activated",
        "matches_target",
        "iterations",
        "seconds",
        "error",
    ])?;
    for r in rows {
        let head = [
            r.dataset.name().to_string(),
            r.operation.name().to_string(),
            r.se_shape.name().to_string(),
            r.se_size.to_string(),
        ];
        let tail = match &r.outcome {
            Ok(rep) => [
                "ok".to_string(),
                format!("{:.4}", rep.final_dice_error),
                rep.activation_marks(),
                rep.matches_target.to_string(),
                rep.iterations_run.to_string(),
                format!("{:.1}", rep.wall_clock_seconds),
                String::new(),
            ],
            Err(e) => [
                "error".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ],
        };
        w.write_record(head.iter().chain(tail.iter()))?;
    }
    w.flush()?;
    Ok(())
}

/// One table per dataset: operations as rows, shapes as columns, cells
/// `DICE-error marks`.
pub fn render_markdown(rows: &[SuiteRow]) -> String {
    let mut md = String::new();
    if rows.is_empty() {
        md.push_str("| Dataset | Operation |\n|---|---|\n");
        return md;
    }
    let mut shapes: Vec<SeKind> = Vec::new();
    let mut keys: Vec<(DatasetKind, MorphOp)> = Vec::new();
    for r in rows {
        if !shapes.contains(&r.se_shape) {
            shapes.push(r.se_shape);
        }
        if !keys.contains(&(r.dataset, r.operation)) {
            keys.push((r.dataset, r.operation));
        }
    }
    let _ = write!(md, "| Dataset | Operation |");
    for s in &shapes {
        let _ = write!(md, " {} |", s.name());
    }
    md.push('\n');
    md.push_str(&"|---".repeat(2 + shapes.len()));
    md.push_str("|\n");
    for (d, op) in keys {
        let _ = write!(md, "| {} | {} |", d.name(), op.name());
        for s in &shapes {
            let cell = rows
                .iter()
                .find(|r| r.dataset == d && r.operation == op && r.se_shape == *s)
                .map(|r| match &r.outcome {
                    Ok(rep) => format!("{:.3} {}", rep.final_dice_error, rep.activation_marks()),
                    Err(_) => "error".to_string(),
                })
                .unwrap_or_default();
            let _ = write!(md, " {cell} |");
        }
        md.push('\n');
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite_gives_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_suite(&SuiteSpec::default(), dir.path()).unwrap();
        assert!(rows.is_empty());
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(dir.path().join("results.md").is_file());
    }

    #[test]
    fn grid_expansion_order() {
        let suite: SuiteSpec = toml::from_str(
            r#"
            [grid]
            datasets = ["diskorect", "mnist", "inverted_mnist"]
            operations = ["dilation", "erosion", "opening", "closing"]
            se_shapes = ["disk", "stick", "cross"]
            "#,
        )
        .unwrap();
        let cells = suite.expand();
        assert_eq!(cells.len(), 36);
        assert_eq!(
            (cells[1].dataset, cells[1].operation, cells[1].se_shape),
            (DatasetKind::Diskorect, MorphOp::Dilation, SeKind::Stick)
        );
        assert_eq!(cells[35].dataset, DatasetKind::InvertedMnist);
    }

    #[test]
    fn failures_become_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = ExperimentSpec::new(DatasetKind::Mnist, MorphOp::Dilation, SeKind::Disk);
        bad.mnist_path = Some("/nonexistent".into());
        let mut ok = ExperimentSpec::new(DatasetKind::Diskorect, MorphOp::Erosion, SeKind::Stick);
        ok.se_size = Some(3);
        ok.diskorect.image_size = 20;
        ok.diskorect.rect_side = (3, 6);
        ok.diskorect.disk_radius = (2, 3);
        ok.train.iterations = Some(5);
        ok.train.batch_size = Some(2);
        ok.eval_samples = 2;
        ok.test_samples = 2;
        let suite = SuiteSpec {
            grid: None,
            experiments: vec![bad, ok],
        };
        let rows = run_suite(&suite, dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.is_err());
        assert!(rows[1].outcome.is_ok());
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().contains(",error,"));
        let md = std::fs::read_to_string(dir.path().join("results.md")).unwrap();
        assert!(md.contains("error"));
    }
}
