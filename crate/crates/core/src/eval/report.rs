use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::metrics::ScoredSet;

/// Metrics of one evaluation unit: a fold, a held-out drug, a λ value or a
/// grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitEntry {
    /// Identifying fields, e.g. `[("repeat", "0"), ("fold", "3")]`.
    pub key: Vec<(String, String)>,
    pub positives: usize,
    pub negatives: usize,
    pub auroc: f64,
    pub auprc: f64,
}

impl UnitEntry {
    pub fn field(&self, name: &str) -> Option<&str> {
        self.key.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn label(&self) -> String {
        self.key
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Mean and sample standard deviation over a group of values.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { count, mean, std }
    }
}

/// Aggregate over a named group of unit entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub name: String,
    pub auroc: Summary,
    pub auprc: Summary,
}

impl Aggregate {
    pub fn over<'a>(name: impl Into<String>, units: impl IntoIterator<Item = &'a UnitEntry>) -> Self {
        let (a, p): (Vec<f64>, Vec<f64>) = units.into_iter().map(|u| (u.auroc, u.auprc)).unzip();
        Self {
            name: name.into(),
            auroc: Summary::of(&a),
            auprc: Summary::of(&p),
        }
    }

    /// Aggregate of precomputed values, e.g. per-repeat means.
    pub fn of_values(name: impl Into<String>, auroc: &[f64], auprc: &[f64]) -> Self {
        Self {
            name: name.into(),
            auroc: Summary::of(auroc),
            auprc: Summary::of(auprc),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub protocol: String,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub units: Vec<UnitEntry>,
    pub aggregates: Vec<Aggregate>,
    /// Units left out, with the reason.
    pub excluded: Vec<(String, String)>,
    /// Extra named figures such as pooled metrics.
    pub extras: Vec<(String, f64)>,
    /// Wall-clock seconds; not part of the payload.
    pub elapsed_secs: f64,
}

impl ExperimentReport {
    pub fn new(protocol: impl Into<String>, config: Vec<(String, String)>, seeds: Vec<u64>) -> Self {
        Self {
            protocol: protocol.into(),
            config,
            seeds,
            units: Vec::new(),
            aggregates: Vec::new(),
            excluded: Vec::new(),
            extras: Vec::new(),
            elapsed_secs: 0.0,
        }
    }

    pub fn aggregate(&self, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.name == name)
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }

    /// Deterministic text payload: header, one record per unit, then the
    /// aggregate block. Timing is left out.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol {}", self.protocol);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds {}", seeds.join(","));
        for (k, v) in &self.config {
            let _ = writeln!(out, "config {k}={v}");
        }
        for u in &self.units {
            let key: Vec<String> = u.key.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(
                out,
                "unit {} positives={} negatives={} auroc={} auprc={}",
                key.join(" "),
                u.positives,
                u.negatives,
                u.auroc,
                u.auprc
            );
        }
        for (unit, reason) in &self.excluded {
            let _ = writeln!(out, "excluded {unit} reason={reason}");
        }
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "aggregate name={} count={} auroc_mean={} auroc_std={} auprc_mean={} auprc_std={}",
                a.name, a.auroc.count, a.auroc.mean, a.auroc.std, a.auprc.mean, a.auprc.std
            );
        }
        for (k, v) in &self.extras {
            let _ = writeln!(out, "summary {k}={v}");
        }
        out
    }

    /// Rebuilds an aggregate named `name` over the units whose key fields
    /// contain every pair of `filter`, and compares it with the stored one.
    pub fn check_aggregate(&self, name: &str, filter: &[(&str, &str)]) -> Result<()> {
        let stored = self
            .aggregate(name)
            .ok_or_else(|| Error::Validation(format!("no aggregate named {name}")))?;
        let fresh = Aggregate::over(
            name,
            self.units
                .iter()
                .filter(|u| filter.iter().all(|(k, v)| u.field(k) == Some(*v))),
        );
        let close = |a: &Summary, b: &Summary| {
            a.count == b.count && (a.mean - b.mean).abs() <= 1e-12 && (a.std - b.std).abs() <= 1e-12
        };
        if close(&stored.auroc, &fresh.auroc) && close(&stored.auprc, &fresh.auprc) {
            Ok(())
        } else {
            Err(Error::Validation(format!("aggregate {name} disagrees with its units")))
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Writes two whitespace-separated columns with a `#` header line.
pub fn write_curve(path: &Path, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut out = format!("# {} {}\n", header.0, header.1);
    for (x, y) in points {
        let _ = writeln!(out, "{x} {y}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Scores of one unit, kept for curve export.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitScores {
    pub label: String,
    pub set: ScoredSet,
}

/// A report plus the raw scores behind it.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub scores: Vec<UnitScores>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(fold: usize, auroc: f64, auprc: f64) -> UnitEntry {
        UnitEntry {
            key: vec![("fold".into(), fold.to_string())],
            positives: 3,
            negatives: 3,
            auroc,
            auprc,
        }
    }

    #[test]
    fn summary_uses_sample_deviation() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!((s.count, s.mean, s.std), (3, 2.0, 1.0));
        assert_eq!(Summary::of(&[0.4]).std, 0.0);
    }

    #[test]
    fn text_is_stable_and_aggregates_check() {
        let mut r = ExperimentReport::new("cv", vec![("stage2.temperature".into(), "2".into())], vec![7]);
        r.units = vec![unit(0, 0.9, 0.8), unit(1, 0.7, 0.6)];
        r.aggregates.push(Aggregate::over("overall", &r.units));
        r.elapsed_secs = 12.0;
        let text = r.to_text();
        assert!(text.starts_with("protocol cv\nseeds 7\nconfig stage2.temperature=2\n"));
        assert!(text.contains("unit fold=1 positives=3 negatives=3 auroc=0.7 auprc=0.6\n"));
        assert!(!text.contains("12"));
        let mut again = r.clone();
        again.elapsed_secs = 99.0;
        assert_eq!(again.to_text(), text);
        r.check_aggregate("overall", &[]).unwrap();
        r.aggregates[0].auroc.mean += 1e-9;
        assert!(r.check_aggregate("overall", &[]).is_err());
    }

    #[test]
    fn curve_file_has_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.txt");
        write_curve(&path, ("fpr", "tpr"), &[(0.0, 0.0), (0.5, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# fpr tpr\n0 0\n0.5 1\n");
    }
}
