//! CSV and SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::error::{SimError, SimResult};
use crate::monte_carlo::RunStatistics;

pub const CSV_HEADER: [&str; 4] = ["k", "sensor", "MSE", "TrP"];

/// Twelve significant digits, `.` decimal separator.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub sensor: usize,
    pub mse: f64,
    pub trp: f64,
}

pub fn rows(stats: &RunStatistics) -> Vec<CsvRow> {
    let mut out = Vec::new();
    for k in 0..=stats.horizon() {
        for (s, &id) in stats.sensor_ids.iter().enumerate() {
            out.push(CsvRow {
                k,
                sensor: id,
                mse: stats.mse[k][s],
                trp: stats.trp[k][s],
            });
        }
    }
    out
}

pub fn write_csv<W: io::Write>(stats: &RunStatistics, out: W) -> SimResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows(stats) {
        w.write_record([
            r.k.to_string(),
            r.sensor.to_string(),
            fmt_num(r.mse),
            fmt_num(r.trp),
        ])?;
    }
    w.flush().map_err(|e| SimError::Csv(e.into()))?;
    Ok(())
}

pub fn csv_string(stats: &RunStatistics) -> SimResult<String> {
    let mut buf = Vec::new();
    write_csv(stats, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is ascii"))
}

pub fn read_csv<R: io::Read>(input: R) -> SimResult<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(SimError::Invalid(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    let parse_err = |what: &str, v: &str| SimError::Invalid(format!("bad {what} '{v}' in CSV"));
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CsvRow {
                k: rec[0].parse().map_err(|_| parse_err("k", &rec[0]))?,
                sensor: rec[1].parse().map_err(|_| parse_err("sensor", &rec[1]))?,
                mse: rec[2].parse().map_err(|_| parse_err("MSE", &rec[2]))?,
                trp: rec[3].parse().map_err(|_| parse_err("TrP", &rec[3]))?,
            })
        })
        .collect()
}

/// Summary record: `MSE_max` and `P_max` over the tail window.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub filter: String,
    pub runs: usize,
    pub seed: u64,
    pub tail: (usize, usize),
    pub mse_max: f64,
    pub p_max: f64,
}

impl Summary {
    pub fn new(stats: &RunStatistics, seed: u64, tail: (usize, usize)) -> Self {
        Summary {
            scenario: stats.scenario.clone(),
            filter: stats.filter.to_string(),
            runs: stats.runs,
            seed,
            tail,
            mse_max: stats.mse_max(tail.0..=tail.1),
            p_max: stats.p_max(tail.0..=tail.1),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "scenario,filter,runs,seed,k_from,k_to,MSE_max,P_max\n{},{},{},{},{},{},{},{}\n",
            self.scenario,
            self.filter,
            self.runs,
            self.seed,
            self.tail.0,
            self.tail.1,
            fmt_num(self.mse_max),
            fmt_num(self.p_max)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    TrP,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::TrP => "Tr(P)",
        }
    }
}

const GRID: &str = "#dddddd";

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of one metric per sensor on a log scale, built only from CSV rows.
pub fn svg_chart(rows: &[CsvRow], metric: Metric, title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 110.0, 40.0, 50.0);
    let value = |r: &CsvRow| match metric {
        Metric::Mse => r.mse,
        Metric::TrP => r.trp,
    };
    let mut sensors: Vec<usize> = rows.iter().map(|r| r.sensor).collect();
    sensors.sort_unstable();
    sensors.dedup();
    let kmax = rows.iter().map(|r| r.k).max().unwrap_or(1).max(1) as f64;
    let positive: Vec<f64> = rows
        .iter()
        .map(value)
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if positive.is_empty() {
        (1e-3, 1.0)
    } else {
        (lo, hi)
    };
    let (llo, lhi) = (
        lo.log10().floor(),
        hi.log10().ceil().max(lo.log10().floor() + 1.0),
    );
    let px = |k: f64| left + (w - left - right) * k / kmax;
    let py = |v: f64| {
        let l = v.max(lo).log10();
        top + (h - top - bottom) * (1.0 - (l - llo) / (lhi - llo))
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (px(0.0), px(kmax), top, h - bottom);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0} V{y1} H{x1}" fill="none" stroke="black"/>"#
    );
    for e in (llo as i32)..=(lhi as i32) {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" x2="{x1}" y1="{y:.2}" y2="{y:.2}" stroke="{GRID}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let step = nice_step(kmax);
    let mut k = 0.0;
    while k <= kmax + 1e-9 {
        let x = px(k);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" x2="{x:.2}" y1="{y1}" y2="{}" stroke="black"/>"#,
            y1 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{k}</text>"#,
            y1 + 18.0
        );
        k += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        metric.label()
    );
    for (idx, sensor) in sensors.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut d = String::new();
        for r in rows.iter().filter(|r| r.sensor == *sensor) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2} {:.2} ", px(r.k as f64), py(value(r)));
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        if idx < 12 {
            let ly = top + 16.0 * idx as f64;
            let lx = w - right + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let name = if *sensor == 0 {
                "central".to_string()
            } else {
                format!("sensor {sensor}")
            };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{name}</text>"#,
                lx + 22.0,
                ly + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(mag * 10.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Paths written by `write_artifacts`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub svgs: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &[u8]) -> SimResult<()> {
    fs::write(path, contents).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<scenario>_<filter>.csv`, a summary file and optionally the two
/// charts, which are rendered from the CSV text just written.
pub fn write_artifacts(
    stats: &RunStatistics,
    summary: &Summary,
    dir: &Path,
    svg: bool,
) -> SimResult<Artifacts> {
    fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let stem = format!("{}_{}", stats.scenario, stats.filter);
    let csv_text = csv_string(stats)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_file(&csv, csv_text.as_bytes())?;
    let summary_path = dir.join(format!("{stem}_summary.csv"));
    write_file(&summary_path, summary.to_csv().as_bytes())?;
    let mut svgs = Vec::new();
    if svg {
        let parsed = read_csv(csv_text.as_bytes())?;
        for (metric, suffix) in [(Metric::Mse, "mse"), (Metric::TrP, "trp")] {
            let path = dir.join(format!("{stem}_{suffix}.svg"));
            let title = format!("{} {} ({} runs)", stats.scenario, stats.filter, stats.runs);
            write_file(&path, svg_chart(&parsed, metric, &title).as_bytes())?;
            svgs.push(path);
        }
    }
    Ok(Artifacts {
        csv,
        summary: summary_path,
        svgs,
    })
}
