//! Result persistence: CSV tables, the JSON run report, and the scan chart.
//! All files are UTF-8 with LF line endings and comma-separated values;
//! numbers carry 17 significant digits so they round-trip exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::config::RunConfig;
use crate::driver::IterationReport;
use crate::error::Result;
use crate::grid::{ProbabilityPath, SpaceTimeGrid};
use crate::model::AssumptionReport;

/// Shortest representation that restores the exact f64: 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Time indices written to the field snapshot files: every `stride` steps,
/// with the terminal level always included.
pub fn snapshot_indices(n_t: usize, stride: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n_t).step_by(stride.max(1)).collect();
    if *indices.last().unwrap() != n_t - 1 {
        indices.push(n_t - 1);
    }
    indices
}

pub fn write_p_path(
    path: &Path,
    p: &ProbabilityPath,
    theta: &ProbabilityPath,
    residual: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,p,theta,residual")?;
    for j in 0..p.times.len() {
        writeln!(
            w,
            "{},{},{},{}",
            format_float(p.times[j]),
            format_float(p.values[j]),
            format_float(theta.values[j]),
            format_float(residual[j]),
        )?;
    }
    Ok(())
}

/// Field snapshots: first row is the x coordinates, each following row one
/// time level.
pub fn write_snapshots(
    path: &Path,
    grid: &SpaceTimeGrid,
    values: &Array2<f64>,
    stride: usize,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let row = |w: &mut BufWriter<File>, values: &[f64]| -> Result<()> {
        let line: Vec<String> = values.iter().map(|v| format_float(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
        Ok(())
    };
    row(&mut w, &grid.x_nodes())?;
    for j in snapshot_indices(grid.n_t, stride) {
        row(&mut w, values.row(j).to_slice().expect("row-major layout"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ScanRow {
    pub p0: f64,
    pub p_t: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
}

pub fn write_scan_csv(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "p0,pT,converged,iterations,max_residual")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_float(r.p0),
            format_float(r.p_t),
            r.converged,
            r.iterations,
            format_float(r.max_residual),
        )?;
    }
    Ok(())
}

/// Self-contained SVG polyline chart of p(T) against p(0), both on [0, 1].
pub fn write_scan_svg(path: &Path, rows: &[ScanRow]) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const MARGIN: f64 = 56.0;
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let sx = |p0: f64| MARGIN + p0.clamp(0.0, 1.0) * plot_w;
    let sy = |pt: f64| MARGIN + (1.0 - pt.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let x = sx(f);
        let y = sy(f);
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{f:.2}</text>\n",
            H - MARGIN + 20.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{f:.2}</text>\n",
            MARGIN - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">p(0)</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">p(T)</text>\n",
        H / 2.0,
        H / 2.0
    ));

    let converged: Vec<&ScanRow> = rows
        .iter()
        .filter(|r| r.converged && r.p_t.is_finite())
        .collect();
    if !converged.is_empty() {
        let points: Vec<String> = converged
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.p0), sy(r.p_t)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
        for r in &converged {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
                sx(r.p0),
                sy(r.p_t)
            ));
        }
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

/// Everything `report.json` carries.
#[derive(Serialize)]
pub struct ReportDocument<'a> {
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub anchored_p0: f64,
    pub iteration: &'a IterationReport,
    pub assumptions: &'a AssumptionReport,
    pub snapshot_times: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_oracle_csv(path: &Path, w1: [f64; 2]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "population,w1")?;
    writeln!(w, "1,{}", format_float(w1[0]))?;
    writeln!(w, "2,{}", format_float(w1[1]))?;
    Ok(())
}
