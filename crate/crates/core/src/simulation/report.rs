//! CSV and markdown output for simulation results.

use std::fmt::Write as _;
use std::io::Write;

use super::{OperatingCharacteristics, ReplicateSummary, Scenario};
use crate::error::{Error, Result};
use crate::inference::Method;

fn io_error(e: impl std::fmt::Display) -> Error {
    Error::config("out", e.to_string())
}

/// Fixed CSV header for rows with `num_levels` levels.
pub fn csv_header(num_levels: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "method", "L", "n"].map(String::from).to_vec();
    h.extend((1..=num_levels).map(|l| format!("sel_pct_{l}")));
    h.extend((1..=num_levels).map(|l| format!("mean_n_{l}")));
    h.extend(
        ["early_term_pct", "total_mean", "total_sd", "reps", "seed"].map(String::from),
    );
    h
}

/// Writes one row per result. All rows must share the same number of levels.
pub fn write_csv<W: Write>(out: W, rows: &[OperatingCharacteristics]) -> Result<()> {
    let num_levels = rows.first().map_or(0, |r| r.num_levels);
    if rows.iter().any(|r| r.num_levels != num_levels) {
        return Err(Error::Domain("CSV rows must share one grid size".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(num_levels)).map_err(io_error)?;
    for r in rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.method.to_string(),
            r.num_levels.to_string(),
            r.n.to_string(),
        ];
        rec.extend(r.sel_pct.iter().map(|v| format!("{v:.1}")));
        rec.extend(r.mean_n.iter().map(|v| format!("{v:.2}")));
        rec.push(format!("{:.1}", r.early_term_pct));
        rec.push(format!("{:.2}", r.total_mean));
        rec.push(format!("{:.2}", r.total_sd));
        rec.push(r.reps.to_string());
        rec.push(r.seed.to_string());
        w.write_record(&rec).map_err(io_error)?;
    }
    w.flush().map_err(io_error)?;
    Ok(())
}

/// Per-replicate counts for selection bar charts and allocation boxplots.
pub fn write_plot_data<W: Write>(
    out: W,
    scenario: &Scenario,
    method: Method,
    n: usize,
    replicates: &[ReplicateSummary],
    include_header: bool,
) -> Result<()> {
    let num_levels = scenario.phi.len();
    let mut w = csv::Writer::from_writer(out);
    if include_header {
        let mut h: Vec<String> = ["scenario", "method", "L", "n", "replicate", "seed", "selected"]
            .map(String::from)
            .to_vec();
        h.extend((1..=num_levels).map(|l| format!("n_{l}")));
        h.push("total".into());
        h.push("phase".into());
        w.write_record(h).map_err(io_error)?;
    }
    for rep in replicates {
        let mut rec = vec![
            scenario.name.clone(),
            method.to_string(),
            num_levels.to_string(),
            n.to_string(),
            rep.index.to_string(),
            rep.seed.to_string(),
            rep.final_selection.map_or_else(|| "none".into(), |l| l.to_string()),
        ];
        rec.extend(rep.allocated.iter().map(|a| a.to_string()));
        rec.push(rep.enrolled.to_string());
        rec.push(
            serde_json::to_value(rep.phase)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
        );
        w.write_record(&rec).map_err(io_error)?;
    }
    w.flush().map_err(io_error)?;
    Ok(())
}

/// Markdown tables laid out like the usual operating-characteristics tables:
/// one block per scenario, one row per sample size, `selection% (mean n)` per
/// level, then early termination and `mean (sd)` of total enrollment.
/// `results` pairs each scenario with its rows for one method and grid size.
pub fn markdown_report(
    method: Method,
    num_levels: usize,
    results: &[(Scenario, Vec<OperatingCharacteristics>)],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Method `{method}`, L = {num_levels}\n");
    let _ = writeln!(
        s,
        "Cells are selection percentage with the mean number of subjects in parentheses.\n"
    );
    let mut header = String::from("| |");
    let mut rule = String::from("|---|");
    for l in 1..=num_levels {
        let _ = write!(header, " {l} |");
        rule.push_str("---|");
    }
    header.push_str(" Early termination | Total |");
    rule.push_str("---|---|");
    for (scenario, rows) in results {
        let _ = writeln!(s, "## Scenario {}\n", scenario.name);
        let _ = writeln!(s, "{header}\n{rule}");
        let mut phi_row = String::from("| phi |");
        for (l, p) in scenario.phi.iter().enumerate() {
            if scenario.mad_truth == Some(l + 1) {
                let _ = write!(phi_row, " **{p}** |");
            } else {
                let _ = write!(phi_row, " {p} |");
            }
        }
        phi_row.push_str(" | |");
        let _ = writeln!(s, "{phi_row}");
        for r in rows {
            let _ = write!(s, "| n = {} |", r.n);
            for (pct, mean) in r.sel_pct.iter().zip(&r.mean_n) {
                let _ = write!(s, " {pct:.1} ({mean:.1}) |");
            }
            let _ = writeln!(
                s,
                " {:.1} | {:.1} ({:.1}) |",
                r.early_term_pct, r.total_mean, r.total_sd
            );
        }
        s.push('\n');
    }
    s
}
