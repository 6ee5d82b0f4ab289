use std::fmt::Write;

use super::{AblationReport, AblationVariant, EvalReport, UNPARSED};

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Aligned text summary: headline metrics, per-class figures and the
/// confusion matrix for each report.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "{}  n={}  accuracy={}  weighted-F1={}", r.dataset, r.n, pct(r.accuracy), pct(r.weighted_f1));
        if r.seeds.len() > 1 {
            let each: Vec<String> =
                r.seeds.iter().map(|s| format!("{}/{}", pct(s.weighted_f1), pct(s.accuracy))).collect();
            let _ = writeln!(out, "  runs (w-F1/Acc): {}", each.join("  "));
        }
        let width = r.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(UNPARSED.len());
        let _ = writeln!(out, "  {:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
        for c in &r.per_class {
            let _ = writeln!(
                out,
                "  {:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
                c.label,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                c.support
            );
        }
        let cols: Vec<&str> = r.confusion.labels.iter().map(String::as_str).chain([UNPARSED]).collect();
        let cw = cols.iter().map(|c| c.len()).max().unwrap_or(1);
        let _ = write!(out, "  {:<width$}", "gold \\ pred");
        for c in &cols {
            let _ = write!(out, "  {c:>cw$}");
        }
        out.push('\n');
        for (label, row) in r.confusion.labels.iter().zip(&r.confusion.counts) {
            let _ = write!(out, "  {label:<width$}");
            for v in row {
                let _ = write!(out, "  {v:>cw$}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Variants as rows, datasets as column pairs of w-F1 and accuracy in
/// percent. Skipped cells show `-`.
pub fn render_ablation(report: &AblationReport) -> String {
    const FIRST: usize = 24;
    const CELL: usize = 8;
    let mut out = String::new();
    let _ = write!(out, "{:<FIRST$}", "Variant");
    for d in &report.datasets {
        let _ = write!(out, "{:<w$}", d.as_str(), w = 2 * CELL);
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    let _ = write!(out, "{:<FIRST$}", "");
    for _ in &report.datasets {
        let _ = write!(out, "{:<CELL$}{:<CELL$}", "w-F1", "Acc");
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    for variant in AblationVariant::ALL {
        if !report.rows.iter().any(|r| r.variant == variant) {
            continue;
        }
        let _ = write!(out, "{:<FIRST$}", variant.title());
        for &d in &report.datasets {
            let (f, a) = match report.row(d, variant).and_then(|r| r.report.as_ref()) {
                Some(r) => (pct(r.weighted_f1), pct(r.accuracy)),
                None => ("-".into(), "-".into()),
            };
            let _ = write!(out, "{f:<CELL$}{a:<CELL$}");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    out
}
