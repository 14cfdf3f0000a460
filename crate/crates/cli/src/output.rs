//! Run-directory writers: atomic files, tables and SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use qubo_svm::embedding::{HardwareConstraints, Register};
use qubo_svm::experiment::ExperimentResult;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes to a temporary sibling, then renames over `name`.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let dest = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &dest).with_context(|| format!("renaming into {}", dest.display()))?;
        log::info!("wrote {}", dest.display());
        Ok(dest)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.write(name, &bytes)
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub fn cell_rows(result: &ExperimentResult) -> Vec<Vec<String>> {
    result
        .cells
        .iter()
        .map(|c| {
            let mut row = vec![c.model.clone(), c.train_size.to_string(), c.repeat.to_string()];
            match &c.result {
                Ok(o) => {
                    let m = o.test.metrics;
                    let k = &o.test.confusion;
                    row.extend([m.accuracy, m.precision, m.recall, m.f1].map(num));
                    row.extend([k.tp, k.fp, k.tn, k.fn_].map(|v| v.to_string()));
                    row.push(o.ensemble_size.map(|s| s.to_string()).unwrap_or_default());
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 9));
                    row.push(e.clone());
                }
            }
            row
        })
        .collect()
}

pub const CELL_HEADER: [&str; 13] = [
    "model",
    "train_size",
    "repeat",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "tp",
    "fp",
    "tn",
    "fn",
    "ensemble_size",
    "error",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "model",
    "train_size",
    "ok",
    "failed",
    "accuracy_mean",
    "accuracy_std",
    "f1_mean",
    "f1_std",
    "precision_mean",
];

pub fn summary_rows(result: &ExperimentResult) -> Vec<Vec<String>> {
    result
        .summary
        .iter()
        .map(|r| {
            let mut row = vec![r.model.clone(), r.train_size.to_string(), r.ok.to_string(), r.failed.to_string()];
            match &r.report {
                Some(rep) => row.extend(
                    [rep.mean.accuracy, rep.std.accuracy, rep.mean.f1, rep.std.f1, rep.mean.precision].map(num),
                ),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            row
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one group per training size, one bar per model, whiskers at
/// ±1 std. Failed cells are left blank.
pub fn bar_chart_svg(result: &ExperimentResult, models: &[String], sizes: &[usize], metric: &str) -> String {
    let pick = |m: &qubo_svm::metrics::Metrics| if metric == "f1" { m.f1 } else { m.accuracy };
    let (w, h) = (160.0 + 90.0 * sizes.len() as f64 * (models.len() as f64 * 0.35 + 1.0), 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let group_w = plot_w / sizes.len().max(1) as f64;
    let bar_w = group_w * 0.8 / models.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{metric}</text>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + plot_w,
            y(v),
            y(v),
            left - 6.0,
            y(v) + 4.0
        );
    }
    for (g, &n) in sizes.iter().enumerate() {
        let gx = left + g as f64 * group_w + group_w * 0.1;
        for (k, model) in models.iter().enumerate() {
            let Some(rep) = result.row(model, n).and_then(|r| r.report.as_ref()) else {
                continue;
            };
            let (mean, std) = (pick(&rep.mean), pick(&rep.std));
            let x = gx + k as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} n={n}: {mean:.3} ± {std:.3}</title></rect>"#,
                y(mean),
                bar_w * 0.9,
                y(0.0) - y(mean),
                PALETTE[k % PALETTE.len()],
                escape(model)
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                y(mean + std),
                y(mean - std)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n = {n}</text>"#,
            gx + group_w * 0.4,
            h - bottom + 20.0
        );
    }
    for (k, model) in models.iter().enumerate() {
        let ly = top + 16.0 * k as f64;
        let lx = w - right + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[k % PALETTE.len()],
            lx + 14.0,
            ly + 9.0,
            escape(model)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Atom positions inside the allowed disc, in micrometres.
pub fn register_svg(reg: &Register, constraints: &HardwareConstraints) -> String {
    let r = constraints.max_radius;
    let size = 400.0;
    let scale = size / (2.2 * r);
    let c = size / 2.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<circle cx="{c}" cy="{c}" r="{:.1}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##,
        r * scale
    );
    let dot = (constraints.min_distance * scale / 2.0).max(3.0);
    for (i, p) in reg.coords().iter().enumerate() {
        let (x, y) = (c + p[0] * scale, c - p[1] * scale);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{dot:.1}" fill="#4e79a7" fill-opacity="0.8"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" fill="white">{i}</text>"##,
            y + 3.5
        );
    }
    let _ = writeln!(s, r#"<text x="6" y="{:.0}">radius {r} um</text>"#, size - 6.0);
    s.push_str("</svg>\n");
    s
}
