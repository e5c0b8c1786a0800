//! Read training logs back in and render them: a per-run summary table,
//! long-format CSV of the loss curves, and a self-contained SVG chart.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use crate::trainer::{summarize, EvalRecord, LogLine, RunMeta, TrainError, TrainSummary};

#[derive(Clone, Debug)]
pub struct RunReport {
    pub label: String,
    pub meta: RunMeta,
    pub records: Vec<EvalRecord>,
    pub summary: TrainSummary,
}

/// Parse one JSONL log. A missing summary line (aborted run) is tolerated:
/// the summary is recomputed from the eval records with the default
/// overfit rule. Corrupt logs (bad JSON, non-increasing steps, non-finite
/// losses) are errors.
pub fn parse_log<R: BufRead>(reader: R, label: &str) -> Result<RunReport, TrainError> {
    let mut meta: Option<RunMeta> = None;
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut summary: Option<TrainSummary> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .map_err(|e| TrainError::LogFormat(format!("{label}, line {}: {e}", lineno + 1)))?;
        match parsed {
            LogLine::Meta(m) => meta = Some(m),
            LogLine::Eval(r) => {
                if !r.train_loss.is_finite() || !r.eval_loss.is_finite() {
                    return Err(TrainError::LogFormat(format!(
                        "{label}, line {}: non-finite loss",
                        lineno + 1
                    )));
                }
                if let Some(prev) = records.last() {
                    if r.step <= prev.step {
                        return Err(TrainError::LogFormat(format!(
                            "{label}, line {}: step {} not increasing",
                            lineno + 1,
                            r.step
                        )));
                    }
                }
                records.push(r);
            }
            LogLine::Summary(s) => summary = Some(s),
        }
    }
    let meta = meta.ok_or_else(|| TrainError::LogFormat(format!("{label}: missing meta line")))?;
    if records.is_empty() {
        return Err(TrainError::LogFormat(format!("{label}: no eval records")));
    }
    let summary = summary.unwrap_or_else(|| summarize(&records, 0.005, 3));
    Ok(RunReport { label: label.to_string(), meta, records, summary })
}

/// Load a run from a directory containing `log.jsonl` or from a log file
/// directly. The label is the directory (or file stem) name.
pub fn load_run(path: &Path) -> Result<RunReport, TrainError> {
    let file = if path.is_dir() { path.join("log.jsonl") } else { path.to_path_buf() };
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.display().to_string());
    let f = fs::File::open(&file)?;
    parse_log(std::io::BufReader::new(f), &label)
}

/// Aligned text table: one row per run with the quantities the repetition
/// experiment compares.
pub fn table(runs: &[RunReport]) -> String {
    let mut rows = vec![vec![
        "run".to_string(),
        "variant".to_string(),
        "R".to_string(),
        "seed".to_string(),
        "steps".to_string(),
        "best_eval_loss".to_string(),
        "best_step".to_string(),
        "overfit_step".to_string(),
    ]];
    for r in runs {
        rows.push(vec![
            r.label.clone(),
            r.meta.variant.clone(),
            r.meta.repetitions.to_string(),
            r.meta.seed.to_string(),
            r.meta.total_steps.to_string(),
            format!("{:.4}", r.summary.best_eval_loss),
            r.summary.best_step.to_string(),
            r.summary.overfit_step.map_or("-".to_string(), |s| s.to_string()),
        ]);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let _ = write!(out, "{cell:<width$}  ", width = widths[c]);
        }
        out.push('\n');
        if i == 0 {
            for &w in &widths {
                out.push_str(&"-".repeat(w));
                out.push_str("  ");
            }
            out.push('\n');
        }
    }
    out
}

/// Long-format CSV: run,variant,repetitions,seed,step,train_loss,eval_loss,lr
pub fn curves_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("run,variant,repetitions,seed,step,train_loss,eval_loss,lr\n");
    for r in runs {
        for rec in &r.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label,
                r.meta.variant,
                r.meta.repetitions,
                r.meta.seed,
                rec.step,
                rec.train_loss,
                rec.eval_loss,
                rec.lr
            );
        }
    }
    out
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// Minimal self-contained SVG line chart of eval loss against step.
pub fn curves_svg(runs: &[RunReport]) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 20.0, 45.0);
    let max_step = runs
        .iter()
        .flat_map(|r| r.records.iter().map(|rec| rec.step))
        .max()
        .unwrap_or(1) as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in runs {
        for rec in &r.records {
            lo = lo.min(rec.eval_loss);
            hi = hi.max(rec.eval_loss);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |step: f64| ml + (step / max_step) * (w - ml - mr);
    let y = |loss: f64| h - mb - ((loss - lo) / (hi - lo)) * (h - mt - mb);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb,
        h - mb
    );
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let step = frac * max_step;
        let loss = lo + frac * (hi - lo);
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.0}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>",
            x(step),
            h - mb + 18.0,
            step,
            ml - 6.0,
            y(loss) + 4.0,
            loss
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">step</text>",
        (ml + w - mr) / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" \
         text-anchor=\"middle\">eval loss</text>",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    );
    for (i, r) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = r
            .records
            .iter()
            .map(|rec| format!("{:.1},{:.1}", x(rec.step as f64), y(rec.eval_loss)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = mt + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{ly}\" x2=\"{:.1}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"3\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            ml + 8.0,
            ml + 30.0,
            ml + 36.0,
            ly + 4.0,
            r.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}
