//! Report assembly and emission: JSONL time series, CSV summaries, and
//! self-contained SVG line plots.

use anyhow::{bail, Context, Result};
use mflab_core::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One sampled instant of one (N, theta, seed) cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub theta: Scalar,
    pub seed: u64,
    pub t: Scalar,
    pub kinetic: Scalar,
    pub f_n: Scalar,
    pub h: Scalar,
    pub term1: Scalar,
    pub term2: Scalar,
    pub term3: Scalar,
    pub term4: Scalar,
    pub gronwall_rhs: Scalar,
    pub min_dist: Scalar,
    pub min_mu: Scalar,
    pub metrics: Vec<Scalar>,
    /// Wall-clock seconds since cell start; excluded from the determinism
    /// contract.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub theta: Scalar,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub battery: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
}

impl Report {
    pub fn new(battery: Vec<String>, rows: Vec<ReportRow>, failures: Vec<CellFailure>) -> Self {
        Report { battery, rows, failures }
    }

    /// Distinct (n, theta, seed) cells in row order.
    pub fn cells(&self) -> Vec<(usize, Scalar, u64)> {
        let mut cells = Vec::new();
        for row in &self.rows {
            let key = (row.n, row.theta, row.seed);
            if cells.last() != Some(&key) && !cells.contains(&key) {
                cells.push(key);
            }
        }
        cells
    }

    pub fn cell_rows(&self, n: usize, theta: Scalar, seed: u64) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.n == n && r.theta == theta && r.seed == seed)
            .collect()
    }

    /// max_t |h| per cell.
    pub fn max_abs_h(&self, n: usize, theta: Scalar, seed: u64) -> Scalar {
        self.cell_rows(n, theta, seed).iter().map(|r| r.h.abs()).fold(0.0, f64::max)
    }

    /// max_t of one battery metric per cell.
    pub fn max_metric(&self, n: usize, theta: Scalar, seed: u64, metric: usize) -> Scalar {
        self.cell_rows(n, theta, seed).iter().map(|r| r.metrics[metric]).fold(0.0, f64::max)
    }

    /// Emit every requested artifact into a directory.
    pub fn emit(&self, dir: &Path, formats: &[ReportFormat]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for format in formats {
            match format {
                ReportFormat::Jsonl => self.write_jsonl(&dir.join("report.jsonl"))?,
                ReportFormat::Csv => self.write_csv(&dir.join("summary.csv"))?,
                ReportFormat::Svg => self.write_svg_plots(dir)?,
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "{}",
            serde_json::to_string(&serde_json::json!({"battery": self.battery}))?
        )?;
        for row in &self.rows {
            writeln!(w, "{}", serde_json::to_string(row)?)?;
        }
        for failure in &self.failures {
            writeln!(
                w,
                "{}",
                serde_json::to_string(&serde_json::json!({"failure": failure}))?
            )?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(
            std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
        );
        let mut battery = Vec::new();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if let Some(b) = value.get("battery") {
                battery = serde_json::from_value(b.clone())?;
            } else if let Some(f) = value.get("failure") {
                failures.push(serde_json::from_value(f.clone())?);
            } else {
                rows.push(serde_json::from_value(value)?);
            }
        }
        if rows.is_empty() && failures.is_empty() {
            bail!("empty report at {}", path.display());
        }
        Ok(Report { battery, rows, failures })
    }

    /// Summary table: one line per cell with max_t |h| and max_t of each
    /// metric. Floats carry 17 significant digits so the CSV round-trips.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let metric_cols: Vec<String> =
            self.battery.iter().map(|b| format!("max_metric_{b}")).collect();
        writeln!(w, "n,theta,seed,max_abs_h,{},wall_clock_s", metric_cols.join(","))?;
        for (n, theta, seed) in self.cells() {
            let rows = self.cell_rows(n, theta, seed);
            let wall = rows.last().map(|r| r.wall_clock_s).unwrap_or(0.0);
            let metrics: Vec<String> = (0..self.battery.len())
                .map(|m| format!("{:.16e}", self.max_metric(n, theta, seed, m)))
                .collect();
            writeln!(
                w,
                "{n},{theta:.16e},{seed},{:.16e},{},{wall:.3}",
                self.max_abs_h(n, theta, seed),
                metrics.join(",")
            )?;
        }
        Ok(())
    }

    /// Read a summary CSV back into (header, numeric rows).
    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header: Vec<String> = lines
            .next()
            .context("empty CSV")??
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(
                line.split(',')
                    .map(|tok| tok.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("{e}")))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Ok((header, rows))
    }

    /// Line plots of h(t), the Gronwall envelope, and the first nontrivial
    /// metric, one polyline per N at fixed theta.
    pub fn write_svg_plots(&self, dir: &Path) -> Result<()> {
        let mut thetas: Vec<Scalar> = self.rows.iter().map(|r| r.theta).collect();
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();
        for theta in thetas {
            let theta_tag = format!("{theta}").replace('.', "p");
            for (name, extract) in [
                ("h", Box::new(|r: &ReportRow| r.h) as Box<dyn Fn(&ReportRow) -> f64>),
                ("gronwall", Box::new(|r: &ReportRow| r.gronwall_rhs)),
                ("metric", Box::new(|r: &ReportRow| *r.metrics.get(1).unwrap_or(&0.0))),
            ] {
                let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
                for row in self.rows.iter().filter(|r| r.theta == theta) {
                    // average across seeds at equal times by accumulating and
                    // dividing later would hide spread; plot per-seed points
                    series.entry(row.n).or_default().push((row.t, extract(row)));
                }
                if series.is_empty() {
                    continue;
                }
                let named: Vec<(String, Vec<(f64, f64)>)> = series
                    .into_iter()
                    .map(|(n, pts)| (format!("N={n}"), pts))
                    .collect();
                let svg = svg_line_plot(&format!("{name} (theta = {theta})"), &named);
                std::fs::write(dir.join(format!("{name}_theta{theta_tag}.svg")), svg)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            "svg" => Ok(ReportFormat::Svg),
            other => bail!("unknown report format {other} (csv|jsonl|svg)"),
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal self-contained SVG line plot.
pub fn svg_line_plot(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (width, height, margin) = (720.0, 440.0, 60.0);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0).max(1e-300) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y - y0) / (y1 - y0).max(1e-300) * (height - 2.0 * margin);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        width / 2.0
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    ));
    for (tick, value) in [(0.0, x0), (1.0, x1)] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{value:.3}</text>\n",
            margin + tick * (width - 2.0 * margin),
            height - margin + 18.0
        ));
    }
    for (tick, value) in [(0.0, y0), (1.0, y1)] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{value:.3e}</text>\n",
            margin - 6.0,
            height - margin - tick * (height - 2.0 * margin) + 4.0
        ));
    }
    for (idx, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
                 points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{label}</text>\n",
            width - margin + 6.0 - 52.0,
            margin + 16.0 * idx as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
