use std::fmt::Write;

use super::{Comparison, ExperimentReport};

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Plain-text summary: one line per group, the attention confusion of
/// groups that logged it, then the threshold checks.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let spec = &report.spec;
    let _ = writeln!(
        out,
        "{} seed={} repetitions={} proposals/scene={}..{}",
        spec.experiment_kind.as_str(),
        spec.seed,
        spec.repetitions,
        report.proposal_range[0],
        report.proposal_range[1]
    );
    let width = report
        .groups
        .iter()
        .map(|g| g.name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<width$}  {:>5}  {:>16}  {:>10}  {:>10}",
        "group", "n", "success", "target sel", "distractor"
    );
    for g in &report.groups {
        let n = g.records.len();
        let success = g.success.map_or("-".to_string(), |r| {
            format!("{} ({}/{})", pct(r.rate), r.hits, r.count)
        });
        let sel = g.target_selection.map_or("-".into(), |m| pct(m.mean));
        let dis = g.distractor_selection.map_or("-".into(), |m| pct(m.mean));
        let flagged = g.records.iter().filter(|r| !r.flags.is_empty()).count();
        let _ = write!(
            out,
            "{:<width$}  {:>5}  {:>16}  {:>10}  {:>10}",
            g.name, n, success, sel, dis
        );
        if flagged > 0 {
            let _ = write!(out, "  [{flagged} flagged]");
        }
        let _ = writeln!(out);
    }
    for g in report.groups.iter().filter(|g| !g.confusion.is_empty()) {
        let _ = writeln!(out, "\nattention selections, {}:", g.name);
        for (row, counts) in g.confusion.iter().enumerate() {
            let total: u64 = counts.values().sum();
            let mut sorted: Vec<_> = counts.iter().collect();
            sorted.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            let cells: Vec<String> = sorted
                .iter()
                .map(|(label, n)| format!("{label} {}", pct(**n as f64 / total.max(1) as f64)))
                .collect();
            let truth = g
                .relevant_classes
                .get(row)
                .map_or(String::new(), |c| format!(" (relevant: {c})"));
            let _ = writeln!(out, "  row {row}{truth}: {}", cells.join(", "));
        }
    }
    if !report.checks.is_empty() {
        let _ = writeln!(out, "\nchecks:");
        for c in &report.checks {
            let op = match c.comparison {
                Comparison::AtLeast => ">=",
                Comparison::AtMost => "<=",
            };
            let verdict = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(
                out,
                "  {verdict}  {} = {:.4} {op} {}",
                c.name, c.value, c.threshold
            );
        }
    }
    let _ = writeln!(
        out,
        "\nattention weights unchanged by policy training: {}",
        if report.w_unchanged { "yes" } else { "NO" }
    );
    if let Some(t) = report.wall_clock_seconds {
        let _ = writeln!(out, "wall clock: {t:.1} s");
    }
    out
}
