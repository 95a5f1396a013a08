//! Refinement sweeps against a fine reference solution, log–log rate fits
//! and report serialisation.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::advdiff::{advdiff_run, advdiff_run_observed, AdvDiffConfig};
use crate::cov::{CovMatrix, InvariantProbe, InvariantRecord};
use crate::errnorms::ErrorGeometry;
use crate::error::{Error, Result};
use crate::fem::{assemble_mass, BoundaryCondition, Coefficients, Mesh1D};
use crate::kernels::KernelSpec;
use crate::linalg::block_diag;
use crate::wave::{extract_position_cov, wave_run_observed, GSpec, WaveConfig, WaveSystem};

/// Slack on `err_L2 ≤ err_L1`.
const SCHATTEN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum Equation {
    AdvDiff {
        coeffs: Coefficients,
        c0: f64,
        bc: BoundaryCondition,
    },
    Wave {
        g: GSpec,
    },
}

impl Equation {
    pub fn name(&self) -> &'static str {
        match self {
            Equation::AdvDiff { .. } => "advdiff",
            Equation::Wave { .. } => "wave",
        }
    }

    fn bc(&self) -> BoundaryCondition {
        match self {
            Equation::AdvDiff { bc, .. } => *bc,
            Equation::Wave { .. } => BoundaryCondition::Dirichlet,
        }
    }
}

/// How mesh size and time step shrink together across dyadic levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `h = Δt = 2^-ℓ`
    HEqualsDt,
    /// `h = √Δt = 2^-ℓ`
    HEqualsSqrtDt,
}

impl std::str::FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(' ', "").as_str() {
            "h=dt" => Ok(Coupling::HEqualsDt),
            "h=sqrt(dt)" | "h=√dt" => Ok(Coupling::HEqualsSqrtDt),
            other => Err(Error::InvalidConfig(format!("unknown coupling rule {other:?}"))),
        }
    }
}

/// One discretisation of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    pub index: u32,
    pub n_cells: usize,
    pub n_steps: usize,
}

fn whole(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if !(r >= 1.0) || (x - r).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "{what} = {x} is not a positive whole number"
        )));
    }
    Ok(r as usize)
}

impl Level {
    pub fn coupled(rule: Coupling, index: u32, t_end: f64) -> Result<Self> {
        let h = 0.5f64.powi(index as i32);
        let dt = match rule {
            Coupling::HEqualsDt => h,
            Coupling::HEqualsSqrtDt => h * h,
        };
        Self::from_sizes(index, h, dt, t_end)
    }

    pub fn from_sizes(index: u32, h: f64, dt: f64, t_end: f64) -> Result<Self> {
        Ok(Self {
            index,
            n_cells: whole(1.0 / h, "1/h")?,
            n_steps: whole(t_end / dt, "T/dt")?,
        })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn dt(&self, t_end: f64) -> f64 {
        t_end / self.n_steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormSet {
    pub l1: bool,
    pub l2: bool,
}

impl Default for NormSet {
    fn default() -> Self {
        Self { l1: true, l2: true }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub equation: Equation,
    pub kernel: KernelSpec,
    pub t_end: f64,
    /// Sorted by decreasing `h`.
    pub levels: Vec<Level>,
    pub reference: Level,
    pub norms: NormSet,
    pub expected_rate: Option<f64>,
    /// Run the symmetry/PSD probe after every step of every level and on the
    /// final reference covariance.
    pub check_invariants: bool,
}

impl StudyConfig {
    /// Levels `range` and reference level under a coupling rule.
    pub fn coupled(
        equation: Equation,
        kernel: KernelSpec,
        t_end: f64,
        rule: Coupling,
        range: std::ops::RangeInclusive<u32>,
        reference: u32,
    ) -> Result<Self> {
        let levels = range
            .map(|l| Level::coupled(rule, l, t_end))
            .collect::<Result<Vec<_>>>()?;
        let config = Self {
            equation,
            kernel,
            t_end,
            levels,
            reference: Level::coupled(rule, reference, t_end)?,
            norms: NormSet::default(),
            expected_rate: None,
            check_invariants: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!("T must be positive, got {}", self.t_end)));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("a sweep needs at least one level".into()));
        }
        if !self.norms.l1 && !self.norms.l2 {
            return Err(Error::InvalidConfig(
                "select at least one of the L1 and L2 norms".into(),
            ));
        }
        for pair in self.levels.windows(2) {
            if pair[1].n_cells <= pair[0].n_cells {
                return Err(Error::InvalidConfig("levels must be strictly decreasing in h".into()));
            }
        }
        for level in &self.levels {
            if level.n_cells > self.reference.n_cells || level.n_steps > self.reference.n_steps {
                return Err(Error::InvalidConfig(format!(
                    "reference ({} cells, {} steps) is coarser than level {}",
                    self.reference.n_cells, self.reference.n_steps, level.index
                )));
            }
        }
        if let Equation::Wave { g: GSpec::Custom(_) } = &self.equation {
            return Err(Error::InvalidConfig(
                "a mesh-specific G matrix cannot be used across levels".into(),
            ));
        }
        self.kernel.validate()
    }

    fn mesh(&self, level: &Level) -> Result<Mesh1D> {
        Mesh1D::new(level.n_cells, self.equation.bc())
    }

    pub fn advdiff_config(&self, level: &Level) -> Result<AdvDiffConfig> {
        match &self.equation {
            Equation::AdvDiff { coeffs, c0, .. } => Ok(AdvDiffConfig {
                mesh: self.mesh(level)?,
                coeffs: coeffs.clone(),
                c0: *c0,
                kernel: self.kernel.clone(),
                k0: None,
                t_end: self.t_end,
                n_steps: level.n_steps,
            }),
            Equation::Wave { .. } => Err(Error::InvalidConfig("not an advection-diffusion study".into())),
        }
    }

    pub fn wave_config(&self, level: &Level) -> Result<WaveConfig> {
        match &self.equation {
            Equation::Wave { g } => Ok(WaveConfig {
                mesh: self.mesh(level)?,
                kernel: self.kernel.clone(),
                g: g.clone(),
                k0: None,
                t_end: self.t_end,
                n_steps: level.n_steps,
            }),
            Equation::AdvDiff { .. } => Err(Error::InvalidConfig("not a wave study".into())),
        }
    }
}

/// Invariant checks of one level (or of the reference, with `level = None`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelInvariants {
    pub level: Option<u32>,
    pub record: InvariantRecord,
    /// `det(L⁻¹ R)` of the Crank–Nicolson step (wave only).
    pub cn_determinant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: u32,
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "err_L1")]
    pub err_l1: f64,
    #[serde(rename = "err_L2")]
    pub err_l2: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    /// Root mean square residual of the log–log fit.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateReport {
    /// Sorted by decreasing `h`.
    pub rows: Vec<LevelRow>,
    pub fit_l1: Option<RateFit>,
    pub fit_l2: Option<RateFit>,
    /// Filled when the study asked for invariant checks.
    pub invariants: Vec<LevelInvariants>,
}

/// Least-squares fit of `log err = slope · log h + c`, skipping zero errors.
pub fn fit_rate_detailed(hs: &[f64], errs: &[f64]) -> Result<RateFit> {
    if hs.len() != errs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mesh sizes but {} errors",
            hs.len(),
            errs.len()
        )));
    }
    let mut pts = Vec::with_capacity(hs.len());
    for (&h, &e) in hs.iter().zip(errs) {
        if h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite() {
            pts.push((h.ln(), e.ln()));
        } else if e == 0.0 {
            log::warn!("dropping zero error at h = {h} from the rate fit");
        }
    }
    if pts.len() < 2 {
        return Err(Error::DegenerateFit(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(1));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    Ok(RateFit {
        slope,
        residual: (ss / n).sqrt(),
    })
}

pub fn fit_rate(hs: &[f64], errs: &[f64]) -> Result<f64> {
    Ok(fit_rate_detailed(hs, errs)?.slope)
}

impl RateReport {
    pub fn slope_l1(&self) -> f64 {
        self.fit_l1.map_or(f64::NAN, |f| f.slope)
    }

    pub fn slope_l2(&self) -> f64 {
        self.fit_l2.map_or(f64::NAN, |f| f.slope)
    }

    /// Refits both norms from the rows.
    pub fn refit(&mut self) {
        let hs: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let fit = |errs: Vec<f64>| fit_rate_detailed(&hs, &errs).ok();
        self.fit_l1 = fit(self.rows.iter().map(|r| r.err_l1).collect());
        self.fit_l2 = fit(self.rows.iter().map(|r| r.err_l2).collect());
    }

    /// The same report without its coarsest level.
    pub fn without_coarsest(&self) -> Self {
        let mut r = Self {
            rows: self.rows.iter().skip(1).cloned().collect(),
            ..Self::default()
        };
        r.refit();
        r
    }

    /// True if every fitted slope is within `tol` of `expected`.
    pub fn meets_rate(&self, expected: f64, tol: f64) -> bool {
        let fits: Vec<_> = [self.fit_l1, self.fit_l2].into_iter().flatten().collect();
        !fits.is_empty() && fits.iter().all(|f| (f.slope - expected).abs() <= tol)
    }
}

struct LevelOutcome {
    cov: CovMatrix,
    mesh: Mesh1D,
    invariants: Option<LevelInvariants>,
    seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Probe {
    Off,
    /// Final covariance only.
    Final,
    EveryStep,
}

fn run_level(study: &StudyConfig, level: &Level, label: Option<u32>, probe: Probe) -> Result<LevelOutcome> {
    let start = Instant::now();
    let mut record = InvariantRecord::default();
    let (cov, mesh, invariants) = match &study.equation {
        Equation::AdvDiff { .. } => {
            let cfg = study.advdiff_config(level)?;
            let checker = match probe {
                Probe::Off => None,
                _ => Some(InvariantProbe::new(&assemble_mass(&cfg.mesh))?),
            };
            let k = match (&checker, probe) {
                (Some(p), Probe::EveryStep) => advdiff_run_observed(&cfg, |_, k| p.check(k.matrix(), &mut record))?,
                _ => advdiff_run(&cfg)?,
            };
            if let (Some(p), Probe::Final) = (&checker, probe) {
                p.check(k.matrix(), &mut record)?;
            }
            let inv = checker.map(|_| LevelInvariants {
                level: label,
                record,
                cn_determinant: None,
            });
            (k, cfg.mesh, inv)
        }
        Equation::Wave { .. } => {
            let cfg = study.wave_config(level)?;
            let (checker, det) = match probe {
                Probe::Off => (None, None),
                _ => {
                    let system = WaveSystem::assemble(&cfg)?;
                    let gram = block_diag(&system.mass, &system.mass);
                    (Some(InvariantProbe::new(&gram)?), Some(system.step.cn_determinant()?))
                }
            };
            let k = wave_run_observed(&cfg, |_, k| match (&checker, probe) {
                (Some(p), Probe::EveryStep) => p.check(k.matrix(), &mut record),
                _ => Ok(()),
            })?;
            if let (Some(p), Probe::Final) = (&checker, probe) {
                p.check(k.matrix(), &mut record)?;
            }
            let inv = checker.map(|_| LevelInvariants {
                level: label,
                record,
                cn_determinant: det,
            });
            (extract_position_cov(&k)?, cfg.mesh, inv)
        }
    };
    Ok(LevelOutcome {
        cov,
        mesh,
        invariants,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Computes the reference once and every level's errors against it; levels
/// run in parallel and are reported in input order.
pub fn run_sweep(study: &StudyConfig) -> Result<RateReport> {
    study.validate()?;
    let (level_probe, reference_probe) = if study.check_invariants {
        (Probe::EveryStep, Probe::Final)
    } else {
        (Probe::Off, Probe::Off)
    };
    let (reference, levels) = rayon::join(
        || run_level(study, &study.reference, None, reference_probe),
        || {
            study
                .levels
                .par_iter()
                .map(|l| {
                    if *l == study.reference {
                        Ok(None)
                    } else {
                        run_level(study, l, Some(l.index), level_probe).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()
        },
    );
    let reference = reference?;
    let levels = levels?;

    let rows_and_checks = study
        .levels
        .par_iter()
        .zip(levels.par_iter())
        .map(|(level, outcome)| -> Result<(LevelRow, Option<LevelInvariants>)> {
            let start = Instant::now();
            let (err_l1, err_l2, seconds, inv) = match outcome {
                None => (0.0, 0.0, reference.seconds, reference.invariants.clone()),
                Some(out) => {
                    let geometry = ErrorGeometry::new(&out.mesh, &reference.mesh)?;
                    let l1 = if study.norms.l1 {
                        geometry.trace_norm(&out.cov, &reference.cov)?
                    } else {
                        f64::NAN
                    };
                    let l2 = if study.norms.l2 {
                        geometry.hs_norm(&out.cov, &reference.cov)?
                    } else {
                        f64::NAN
                    };
                    (
                        l1,
                        l2,
                        out.seconds + start.elapsed().as_secs_f64(),
                        out.invariants.clone(),
                    )
                }
            };
            if study.norms.l1 && study.norms.l2 && err_l2 > err_l1 * (1.0 + SCHATTEN_SLACK) + SCHATTEN_SLACK {
                log::warn!("level {}: HS error {err_l2} exceeds trace error {err_l1}", level.index);
            }
            let row = LevelRow {
                level: level.index,
                h: level.h(),
                dt: level.dt(study.t_end),
                err_l1,
                err_l2,
                wall_time_s: seconds,
            };
            Ok((row, inv))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = RateReport::default();
    if let Some(inv) = reference.invariants {
        report.invariants.push(inv);
    }
    for (row, inv) in rows_and_checks {
        report.rows.push(row);
        report.invariants.extend(inv);
    }
    report.refit();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
    Gnuplot,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            "gnuplot" | "gnuplot-data" => Ok(ReportFormat::Gnuplot),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "level,h,dt,err_L1,err_L2,wall_time_s";

/// Shortest round-trip decimal, `nan` for NaN.
fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

fn trailer(report: &RateReport, out: &mut String) {
    let residual = |f: Option<RateFit>| f.map_or(f64::NAN, |f| f.residual);
    let _ = writeln!(out, "# residual_L1={}", num(residual(report.fit_l1)));
    let _ = writeln!(out, "# residual_L2={}", num(residual(report.fit_l2)));
    let _ = writeln!(out, "# slope_L1={}", num(report.slope_l1()));
    let _ = writeln!(out, "# slope_L2={}", num(report.slope_l2()));
}

pub fn emit(report: &RateReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.level,
                    num(r.h),
                    num(r.dt),
                    num(r.err_l1),
                    num(r.err_l2),
                    num(r.wall_time_s)
                );
            }
            trailer(report, &mut out);
        }
        ReportFormat::Gnuplot => {
            out.push_str("# level h dt err_L1 err_L2 wall_time_s\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    r.level,
                    num(r.h),
                    num(r.dt),
                    num(r.err_l1),
                    num(r.err_l2),
                    num(r.wall_time_s)
                );
            }
            trailer(report, &mut out);
        }
        ReportFormat::JsonLines => {
            for r in &report.rows {
                out.push_str(&serde_json::to_string(r).expect("rows serialise"));
                out.push('\n');
            }
            let fit = |f: Option<RateFit>| match f {
                Some(f) => serde_json::json!({ "slope": f.slope, "residual": f.residual }),
                None => serde_json::Value::Null,
            };
            let summary = serde_json::json!({ "fit_L1": fit(report.fit_l1), "fit_L2": fit(report.fit_l2) });
            out.push_str(&summary.to_string());
            out.push('\n');
        }
    }
    out
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse number {s:?}")))
}

/// Reads back the CSV written by [`emit`].
pub fn parse_csv(text: &str) -> Result<RateReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::InvalidConfig(format!("missing header {CSV_HEADER:?}"))),
    }
    let mut report = RateReport::default();
    let (mut slopes, mut residuals) = ([f64::NAN; 2], [f64::NAN; 2]);
    for (i, line) in lines {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.trim().split_once('=') else {
                continue;
            };
            let slot = match key.trim() {
                "slope_L1" => &mut slopes[0],
                "slope_L2" => &mut slopes[1],
                "residual_L1" => &mut residuals[0],
                "residual_L2" => &mut residuals[1],
                _ => continue,
            };
            *slot = parse_num(value, n)?;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidConfig(format!(
                "line {n}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        report.rows.push(LevelRow {
            level: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {n}: bad level {:?}", fields[0])))?,
            h: parse_num(fields[1], n)?,
            dt: parse_num(fields[2], n)?,
            err_l1: parse_num(fields[3], n)?,
            err_l2: parse_num(fields[4], n)?,
            wall_time_s: parse_num(fields[5], n)?,
        });
    }
    let fit = |slope: f64, residual: f64| (!slope.is_nan()).then_some(RateFit { slope, residual });
    report.fit_l1 = fit(slopes[0], residuals[0]);
    report.fit_l2 = fit(slopes[1], residuals[1]);
    Ok(report)
}
