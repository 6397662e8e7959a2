//! Artifact emission: manifest and result JSON, CSV tables, SVG slice plots.
//!
//! losses.csv and errors.csv contain nothing machine-dependent, so two runs
//! of the same seeded config produce byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::metrics::SliceProfile;

use super::{RunResult, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot encode {what}: {source}")]
    Encode {
        what: &'static str,
        source: serde_json::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|source| OutputError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest-roundtrip float formatting; exact and deterministic.
fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn losses_csv(result: &RunResult) -> String {
    let mut s = String::from("iter,total");
    for name in &result.manifest.term_names {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for r in &result.loss_records {
        let _ = write!(s, "{},{}", r.iter, fmt(r.value));
        if r.terms.is_empty() {
            for _ in &result.manifest.term_names {
                s.push(',');
            }
        } else {
            for t in &r.terms {
                s.push(',');
                s.push_str(&fmt(*t));
            }
        }
        s.push('\n');
    }
    s
}

pub fn errors_csv(result: &RunResult) -> String {
    let mut s = String::from("iter,e1,e2,einf\n");
    for (iter, t) in &result.error_trace {
        let _ = writeln!(s, "{},{},{},{}", iter, fmt(t.e1), fmt(t.e2), fmt(t.einf));
    }
    s
}

pub fn grid_csv(result: &RunResult) -> String {
    let axes = if result.grid.dim == 2 {
        "x,z"
    } else {
        "x,y,z"
    };
    let mut s = format!("{axes},predicted,exact\n");
    for (i, p) in result.grid.points().enumerate() {
        for c in p.iter().take(result.grid.dim) {
            let _ = write!(s, "{},", fmt(*c));
        }
        let _ = writeln!(
            s,
            "{},{}",
            fmt(result.grid_predicted[i]),
            fmt(result.grid_exact[i])
        );
    }
    s
}

pub fn slice_csv(profile: &SliceProfile) -> String {
    let mut s = String::from("coordinate,predicted,exact\n");
    for i in 0..profile.coords.len() {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt(profile.coords[i]),
            fmt(profile.predicted[i]),
            fmt(profile.exact[i])
        );
    }
    s
}

pub fn eps_trace_csv(result: &RunResult) -> String {
    let mut s = String::from("iter,epsilon\n");
    for (iter, eps) in &result.eps_trace {
        let _ = writeln!(s, "{},{}", iter, fmt(*eps));
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("hidden_layers,neurons,e1,e2,einf\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.hidden_layers,
            r.neurons,
            fmt(r.errors.e1),
            fmt(r.errors.e2),
            fmt(r.errors.einf)
        );
    }
    s
}

/// Self-contained SVG with the predicted and exact profiles as two
/// polylines.
pub fn slice_svg(title: &str, profile: &SliceProfile) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (56.0, 16.0, 34.0, 40.0);
    let all = profile.predicted.iter().chain(&profile.exact);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in all {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi += 0.5;
        lo -= 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (c0, c1) = (
        *profile.coords.first().unwrap_or(&0.0),
        *profile.coords.last().unwrap_or(&1.0),
    );
    let sx = |c: f64| ml + (c - c0) / (c1 - c0).max(1e-300) * (w - ml - mr);
    let sy = |v: f64| {
        if v.is_finite() {
            h - mb - (v - lo) / (hi - lo) * (h - mt - mb)
        } else {
            h - mb
        }
    };
    let poly = |values: &[f64]| {
        let mut pts = String::new();
        for (c, v) in profile.coords.iter().zip(values) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(*c), sy(*v));
        }
        pts
    };
    let mut s = String::new();
    let _ = write!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>
<line x1="{ml}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black" stroke-width="1"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{yb}" stroke="black" stroke-width="1"/>
<text x="{ml}" y="{ylab}" font-family="sans-serif" font-size="11" text-anchor="middle">{c0}</text>
<text x="{xr}" y="{ylab}" font-family="sans-serif" font-size="11" text-anchor="middle">{c1}</text>
<text x="8" y="{yb}" font-family="sans-serif" font-size="11">{lo:.3}</text>
<text x="8" y="{mt}" font-family="sans-serif" font-size="11">{hi:.3}</text>
<polyline fill="none" stroke="#d62728" stroke-width="2" points="{pred}"/>
<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" stroke-dasharray="5,3" points="{exact}"/>
<rect x="{lx}" y="{mt}" width="10" height="3" fill="#d62728"/>
<text x="{ltx}" y="{lty}" font-family="sans-serif" font-size="11">predicted</text>
<rect x="{lx}" y="{lt2}" width="10" height="3" fill="#1f77b4"/>
<text x="{ltx}" y="{lty2}" font-family="sans-serif" font-size="11">exact</text>
</svg>
"##,
        tx = w / 2.0,
        yb = h - mb,
        xr = w - mr,
        ylab = h - mb + 16.0,
        pred = poly(&profile.predicted).trim_end(),
        exact = poly(&profile.exact).trim_end(),
        lx = w - mr - 110.0,
        ltx = w - mr - 95.0,
        lty = mt + 4.0,
        lt2 = mt + 14.0,
        lty2 = mt + 18.0,
    );
    s
}

/// Write every artifact for a run into `dir`: manifest.json, result.json,
/// losses.csv, errors.csv, solution_grid.csv, slice CSVs (and SVGs when
/// enabled), eps_trace.csv for identification runs.
pub fn write_all(dir: &Path, result: &RunResult, svg: bool) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = serde_json::to_string_pretty(&result.manifest).map_err(|source| {
        OutputError::Encode {
            what: "manifest",
            source,
        }
    })?;
    write_file(&dir.join("manifest.json"), &manifest)?;
    let full = serde_json::to_string(result).map_err(|source| OutputError::Encode {
        what: "result",
        source,
    })?;
    write_file(&dir.join("result.json"), &full)?;
    write_file(&dir.join("losses.csv"), &losses_csv(result))?;
    write_file(&dir.join("errors.csv"), &errors_csv(result))?;
    write_file(&dir.join("solution_grid.csv"), &grid_csv(result))?;
    for (name, profile) in &result.slices {
        write_file(&dir.join(format!("slice_{name}.csv")), &slice_csv(profile))?;
        if svg {
            write_file(
                &dir.join(format!("slice_{name}.svg")),
                &slice_svg(name, profile),
            )?;
        }
    }
    if !result.eps_trace.is_empty() {
        write_file(&dir.join("eps_trace.csv"), &eps_trace_csv(result))?;
    }
    Ok(())
}
