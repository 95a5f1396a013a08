//! Text emitters for covariance functions and Monte Carlo reports.

use std::fmt::Write;

use spde_cov_core::oracle::eigenfunction;
use spde_cov_core::{CovMatrix, DenseMatrix, McReport, Mesh1D, ReportFormat};

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

/// `cov[p, q]` at `(xs[p], xs[q])`; gnuplot output uses one block per `x`
/// so `splot` draws a surface.
fn grid(xs: &[f64], cov: &DenseMatrix, t: f64, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("x,y,cov\n");
            for (p, x) in xs.iter().enumerate() {
                for (q, y) in xs.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{}", num(*x), num(*y), num(cov[(p, q)]));
                }
            }
            let _ = writeln!(out, "# t={}", num(t));
        }
        ReportFormat::Gnuplot => {
            let _ = writeln!(out, "# t={}\n# x y cov", num(t));
            for (p, x) in xs.iter().enumerate() {
                for (q, y) in xs.iter().enumerate() {
                    let _ = writeln!(out, "{} {} {}", num(*x), num(*y), num(cov[(p, q)]));
                }
                out.push('\n');
            }
        }
        ReportFormat::JsonLines => {
            for (p, x) in xs.iter().enumerate() {
                for (q, y) in xs.iter().enumerate() {
                    let row = serde_json::json!({ "t": t, "x": x, "y": y, "cov": cov[(p, q)] });
                    let _ = writeln!(out, "{row}");
                }
            }
        }
    }
    out
}

fn nodes(n_cells: usize) -> Vec<f64> {
    (0..=n_cells).map(|i| i as f64 / n_cells as f64).collect()
}

/// Covariance function of finite element coefficients at all mesh nodes.
pub fn covariance(k: &CovMatrix, mesh: &Mesh1D, t: f64, format: ReportFormat) -> String {
    let xs = nodes(mesh.n_cells());
    grid(&xs, &k.on_grid(&mesh.basis_matrix(&xs)), t, format)
}

/// Covariance function of sine-mode coefficients at the nodes of a uniform
/// mesh with `n_cells` cells.
pub fn modal_covariance(k: &CovMatrix, n_cells: usize, t: f64, format: ReportFormat) -> String {
    let xs = nodes(n_cells);
    let basis = DenseMatrix::from_fn(xs.len(), k.dim(), |p, m| eigenfunction(m + 1, xs[p]));
    grid(&xs, &k.on_grid(&basis), t, format)
}

pub fn mc_report(r: &McReport, seed: u64, format: ReportFormat) -> String {
    let fields = [
        ("n_samples", r.n_samples.to_string()),
        ("seed", seed.to_string()),
        ("hs_distance", num(r.hs_distance)),
        ("trace_distance", num(r.trace_distance)),
        ("sampling_error_estimate", num(r.sampling_error_estimate)),
        ("consistency_margin", num(r.consistency_margin)),
        ("consistency_gap", r.consistency_gap.to_string()),
        ("agrees", r.agrees.to_string()),
    ];
    let names: Vec<&str> = fields.iter().map(|f| f.0).collect();
    let values: Vec<&str> = fields.iter().map(|f| f.1.as_str()).collect();
    match format {
        ReportFormat::Csv => format!("{}\n{}\n", names.join(","), values.join(",")),
        ReportFormat::Gnuplot => format!("# {}\n{}\n", names.join(" "), values.join(" ")),
        ReportFormat::JsonLines => {
            let obj = serde_json::json!({
                "n_samples": r.n_samples,
                "seed": seed,
                "hs_distance": r.hs_distance,
                "trace_distance": r.trace_distance,
                "sampling_error_estimate": r.sampling_error_estimate,
                "consistency_margin": r.consistency_margin,
                "consistency_gap": r.consistency_gap,
                "agrees": r.agrees,
            });
            format!("{obj}\n")
        }
    }
}
