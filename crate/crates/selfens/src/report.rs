//! Report rendering: per-run metrics as CSV and aligned text, and the
//! paired supervised / semi-supervised comparison table across run
//! directories, with a mean-and-std aggregate row.

use std::fmt::Write as _;
use std::path::Path;

use selfens_core::metrics::{format_mean_std, MetricsReport};

use crate::error::{Error, Result};

/// Machine-readable metrics CSV. The confusion matrix plus the `classes`
/// and `ordinal` lines carry the full information; the percentage lines
/// are derived conveniences.
pub fn report_csv(r: &MetricsReport, ordinal: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "classes,{}", r.class_names.join(","));
    let _ = writeln!(out, "ordinal,{ordinal}");
    let k = r.num_classes();
    for (i, name) in r.class_names.iter().enumerate() {
        let row: Vec<String> =
            r.confusion[i * k..(i + 1) * k].iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "confusion,{name},{}", row.join(","));
    }
    let _ = writeln!(out, "samples,{}", r.samples);
    let _ = writeln!(out, "accuracy,{:.2}", r.accuracy * 100.0);
    for (name, rec) in r.class_names.iter().zip(&r.per_class_recall) {
        let _ = writeln!(out, "recall,{name},{:.2}", rec * 100.0);
    }
    if let (Some(e), Some(o)) = (r.exact, r.one_off) {
        let _ = writeln!(out, "exact,{:.2}", e * 100.0);
        let _ = writeln!(out, "one_off,{:.2}", o * 100.0);
    }
    out
}

/// Per-run CSV with the experiment scale prepended, as written into a run
/// directory by training.
pub fn run_report_csv(r: &MetricsReport, labeled: usize, unlabeled: usize, alpha: f32) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "labeled,{labeled}");
    let _ = writeln!(out, "unlabeled,{unlabeled}");
    let _ = writeln!(out, "alpha,{alpha}");
    out.push_str(&report_csv(r, r.exact.is_some()));
    out
}

pub fn report_text(r: &MetricsReport) -> String {
    let mut out = String::new();
    let width = r.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(9);
    let _ = writeln!(out, "samples: {}", r.samples);
    let _ = write!(out, "{:>width$} |", "truth\\pred");
    for name in &r.class_names {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    let k = r.num_classes();
    for (i, name) in r.class_names.iter().enumerate() {
        let _ = write!(out, "{name:>width$} |");
        for c in &r.confusion[i * k..(i + 1) * k] {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
    }
    for (name, rec) in r.class_names.iter().zip(&r.per_class_recall) {
        let _ = writeln!(out, "recall {name}: {:.2}%", rec * 100.0);
    }
    let _ = writeln!(out, "accuracy: {:.2}%", r.accuracy * 100.0);
    if let (Some(e), Some(o)) = (r.exact, r.one_off) {
        let _ = writeln!(out, "exact: {:.2}%", e * 100.0);
        let _ = writeln!(out, "one-off: {:.2}%", o * 100.0);
    }
    out
}

/// One trained run's summary, as recovered from its run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub labeled: usize,
    pub unlabeled: usize,
    pub alpha: f32,
    pub report: MetricsReport,
}

pub fn parse_run_report(text: &str, origin: &Path) -> Result<RunSummary> {
    let bad = |lineno: usize, what: &str| {
        Error::Data(format!("{}: line {}: {what}", origin.display(), lineno + 1))
    };
    let mut labeled = None;
    let mut unlabeled = None;
    let mut alpha = None;
    let mut classes: Vec<String> = Vec::new();
    let mut ordinal = false;
    let mut confusion: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0] {
            "labeled" => labeled = fields.get(1).and_then(|v| v.parse().ok()),
            "unlabeled" => unlabeled = fields.get(1).and_then(|v| v.parse().ok()),
            "alpha" => alpha = fields.get(1).and_then(|v| v.parse().ok()),
            "classes" => classes = fields[1..].iter().map(|s| s.to_string()).collect(),
            "ordinal" => {
                ordinal = fields.get(1) == Some(&"true");
            }
            "confusion" => {
                let row: Option<Vec<usize>> =
                    fields[2..].iter().map(|v| v.parse().ok()).collect();
                confusion.push(row.ok_or_else(|| bad(lineno, "bad confusion counts"))?);
            }
            // derived percentage lines are recomputed, not parsed
            "samples" | "accuracy" | "recall" | "exact" | "one_off" => {}
            other => return Err(bad(lineno, &format!("unknown field '{other}'"))),
        }
    }
    let k = classes.len();
    if k == 0 || confusion.len() != k || confusion.iter().any(|row| row.len() != k) {
        return Err(Error::Data(format!(
            "{}: confusion matrix does not match the class list",
            origin.display()
        )));
    }
    // expand the matrix back into (truth, prediction) pairs
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, row) in confusion.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            truth.extend(std::iter::repeat_n(t, count));
            pred.extend(std::iter::repeat_n(p, count));
        }
    }
    let report = MetricsReport::from_predictions(&truth, &pred, &classes, ordinal)
        .map_err(|e| Error::Data(format!("{}: {e}", origin.display())))?;
    Ok(RunSummary {
        labeled: labeled.ok_or_else(|| Error::Data(format!("{}: missing 'labeled' line", origin.display())))?,
        unlabeled: unlabeled.unwrap_or(0),
        alpha: alpha.ok_or_else(|| Error::Data(format!("{}: missing 'alpha' line", origin.display())))?,
        report,
    })
}

pub fn load_run_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("report.csv");
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    parse_run_report(&text, &path)
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn paired(sup: Option<f64>, semi: Option<f64>) -> String {
    let fmt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());
    format!("{}/{}", fmt(sup), fmt(semi))
}

/// The paired comparison table: runs with alpha = 0 are the supervised
/// column, runs with alpha > 0 the semi-supervised column, matched by
/// labeled-set size. Emits CSV; two or more rows add a mean-and-std
/// aggregate over each column.
pub fn comparison_table(runs: &[RunSummary]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Data("report: no runs given".into()));
    }
    let ordinal = runs[0].report.exact.is_some();
    if runs.iter().any(|r| r.report.exact.is_some() != ordinal) {
        return Err(Error::Data("report: cannot mix ordinal and plain classification runs".into()));
    }
    let mut budgets: Vec<usize> = runs.iter().map(|r| r.labeled).collect();
    budgets.sort_unstable();
    budgets.dedup();

    let mut out = String::new();
    let headers: &[&str] = if ordinal {
        &["labeled", "unlabeled", "exact", "one_off"]
    } else {
        &["labeled", "unlabeled", "mcr", "fcr", "acc"]
    };
    let _ = writeln!(out, "{}", headers.join(","));
    let mut sup_accs = Vec::new();
    let mut semi_accs = Vec::new();
    for &b in &budgets {
        let sup = runs.iter().find(|r| r.labeled == b && r.alpha == 0.0);
        let semi = runs.iter().find(|r| r.labeled == b && r.alpha > 0.0);
        let unl = sup.or(semi).map(|r| r.unlabeled).unwrap_or(0);
        let col = |f: fn(&MetricsReport) -> Option<f64>| {
            paired(sup.map(|r| &r.report).and_then(f), semi.map(|r| &r.report).and_then(f))
        };
        if ordinal {
            let _ = writeln!(
                out,
                "{b},{unl},{},{}",
                col(|r| r.exact),
                col(|r| r.one_off)
            );
            if let Some(r) = sup {
                sup_accs.push(r.report.exact.unwrap() * 100.0);
            }
            if let Some(r) = semi {
                semi_accs.push(r.report.exact.unwrap() * 100.0);
            }
        } else {
            let _ = writeln!(
                out,
                "{b},{unl},{},{},{}",
                col(|r| r.per_class_recall.first().copied()),
                col(|r| r.per_class_recall.get(1).copied()),
                col(|r| Some(r.accuracy))
            );
            if let Some(r) = sup {
                sup_accs.push(r.report.accuracy * 100.0);
            }
            if let Some(r) = semi {
                semi_accs.push(r.report.accuracy * 100.0);
            }
        }
    }
    if budgets.len() >= 2 {
        let agg = |v: &[f64]| {
            if v.is_empty() {
                "-".to_string()
            } else {
                format_mean_std(v)
            }
        };
        let _ = writeln!(out, "aggregate,,\"{}\",\"{}\"", agg(&sup_accs), agg(&semi_accs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_report(correct: usize, total: usize, ordinal: bool) -> MetricsReport {
        let truth: Vec<usize> = (0..total).map(|i| i % 2).collect();
        let pred: Vec<usize> =
            truth.iter().enumerate().map(|(i, &t)| if i < correct { t } else { 1 - t }).collect();
        let names = vec!["male".to_string(), "female".to_string()];
        MetricsReport::from_predictions(&truth, &pred, &names, ordinal).unwrap()
    }

    #[test]
    fn run_report_round_trips() {
        let r = mk_report(15, 20, false);
        let csv = run_report_csv(&r, 50, 5000, 1.0);
        let back = parse_run_report(&csv, Path::new("x")).unwrap();
        assert_eq!(back.report, r);
        assert_eq!((back.labeled, back.unlabeled, back.alpha), (50, 5000, 1.0));
    }

    #[test]
    fn ordinal_report_round_trips() {
        let r = mk_report(12, 20, true);
        let csv = run_report_csv(&r, 10, 100, 0.0);
        let back = parse_run_report(&csv, Path::new("x")).unwrap();
        assert_eq!(back.report.exact, r.exact);
        assert_eq!(back.report.one_off, r.one_off);
    }

    #[test]
    fn comparison_pairs_by_budget() {
        let runs = vec![
            RunSummary { labeled: 50, unlabeled: 5000, alpha: 0.0, report: mk_report(10, 20, false) },
            RunSummary { labeled: 50, unlabeled: 5000, alpha: 1.0, report: mk_report(16, 20, false) },
            RunSummary { labeled: 100, unlabeled: 5000, alpha: 0.0, report: mk_report(12, 20, false) },
            RunSummary { labeled: 100, unlabeled: 5000, alpha: 1.0, report: mk_report(18, 20, false) },
        ];
        let csv = comparison_table(&runs).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "labeled,unlabeled,mcr,fcr,acc");
        assert!(lines[1].starts_with("50,5000,"));
        assert!(lines[1].ends_with("50.00/80.00"));
        assert!(lines[2].starts_with("100,5000,"));
        assert!(lines[3].starts_with("aggregate"), "{csv}");
    }

    #[test]
    fn single_run_has_no_aggregate_and_dash_for_missing_pair() {
        let runs = vec![RunSummary {
            labeled: 50,
            unlabeled: 500,
            alpha: 1.0,
            report: mk_report(16, 20, false),
        }];
        let csv = comparison_table(&runs).unwrap();
        assert!(!csv.contains("aggregate"));
        assert!(csv.contains("-/80.00"));
    }

    #[test]
    fn mixing_task_types_rejected() {
        let runs = vec![
            RunSummary { labeled: 5, unlabeled: 0, alpha: 0.0, report: mk_report(10, 20, false) },
            RunSummary { labeled: 5, unlabeled: 0, alpha: 1.0, report: mk_report(10, 20, true) },
        ];
        assert!(comparison_table(&runs).is_err());
    }
}
