use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bench::{BenchmarkReport, Timing};
use crate::HarnessError;

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, HarnessError> {
    std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from(
        "bucket_lo_deg,bucket_hi_deg,rot_threshold_deg,trans_threshold_m,trials,successes,failures,\
         success_fraction,mean_iters_to_threshold,outlier_fraction,mean_rot_err_deg,median_rot_err_deg,\
         mean_trans_err_m,median_trans_err_m\n",
    );
    for b in &report.buckets {
        for t in &b.thresholds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                b.lo_deg,
                b.hi_deg,
                t.rot_deg,
                t.trans_m,
                b.trials,
                t.successes,
                t.failures,
                t.fraction,
                opt(t.mean_iters_to_threshold),
                opt(b.outlier_fraction),
                opt(b.mean_rot_err_deg),
                opt(b.median_rot_err_deg),
                opt(b.mean_trans_err_m),
                opt(b.median_trans_err_m),
            );
        }
    }
    s
}

pub fn curves_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from("bucket_lo_deg,bucket_hi_deg,rot_threshold_deg,trans_threshold_m,iter,success_fraction\n");
    for b in report.buckets.iter().filter(|b| b.trials > 0) {
        for t in &b.thresholds {
            for (i, f) in t.curve.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{},{}", b.lo_deg, b.hi_deg, t.rot_deg, t.trans_m, i, f);
            }
        }
    }
    s
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const DASHES: [&str; 4] = ["", "6,3", "2,3", "8,3,2,3"];

/// Success fraction vs iteration, one line per bucket and threshold.
pub fn curves_svg(report: &BenchmarkReport) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 220.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let iters = report.config.optimizer.max_iters.max(2) as f64 - 1.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = top + ph * (1.0 - f);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{f:.2}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for i in 0..=5 {
        let it = (iters * i as f64 / 5.0).round();
        let x = left + pw * it / iters;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{it}</text>"#,
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">success fraction</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let mut legend_y = top + 10.0;
    for (bi, b) in report.buckets.iter().enumerate().filter(|(_, b)| b.trials > 0) {
        for (ti, t) in b.thresholds.iter().enumerate() {
            let color = COLORS[bi % COLORS.len()];
            let dash = DASHES[ti % DASHES.len()];
            let pts: Vec<String> = t
                .curve
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{:.2},{:.2}", left + pw * i as f64 / iters, top + ph * (1.0 - f)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}" points="{}"/>"#,
                pts.join(" ")
            );
            let lx = left + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/><text x="{}" y="{}">[{}, {}] deg, {} deg / {} m</text>"#,
                lx + 22.0,
                lx + 28.0,
                legend_y + 4.0,
                b.lo_deg,
                b.hi_deg,
                t.rot_deg,
                t.trans_m
            );
            legend_y += 16.0;
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `summary.csv`, `curves.csv` and `curves.svg`.
pub fn emit_report(report: &BenchmarkReport, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    Ok(vec![
        write(out_dir.join("report.json"), &json)?,
        write(out_dir.join("summary.csv"), &summary_csv(report))?,
        write(out_dir.join("curves.csv"), &curves_csv(report))?,
        write(out_dir.join("curves.svg"), &curves_svg(report))?,
    ])
}

/// Wall-clock numbers go to their own file so `report.json` stays reproducible.
pub fn emit_timing(timing: &Timing, out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let json = serde_json::to_string_pretty(timing).expect("timing serializes") + "\n";
    write(out_dir.join("timing.json"), &json)
}

pub fn read_report(path: &Path) -> Result<BenchmarkReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}
