//! TOML run configuration with `[equation]`, `[kernel]` and `[study]` sections.

use std::path::Path;

use serde::Deserialize;
use spde_cov_core::{
    compute_c0, AdvDiffConfig, BoundaryCondition, CoefFn, Coefficients, Coupling, Equation, GSpec, KernelSpec, Level,
    NormSet, StudyConfig, WaveConfig,
};

use crate::CliError;

/// Default `ε` in the coercivity shift when `c0` is not given.
const DEFAULT_EPSILON: f64 = 0.5;
const DEFAULT_ORACLE_MODES: usize = 256;
const DEFAULT_RATE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    equation: EquationSection,
    kernel: KernelSection,
    study: StudySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EquationSection {
    #[serde(rename = "type")]
    kind: String,
    bc: Option<String>,
    a11: Option<String>,
    a1: Option<String>,
    a0: Option<String>,
    lambda0: Option<f64>,
    c0: Option<f64>,
    epsilon: Option<f64>,
    g: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSection {
    #[serde(rename = "type")]
    kind: String,
    scale: Option<f64>,
    sigma: Option<f64>,
    nu: Option<f64>,
    rho: Option<f64>,
}

/// A level given either by dyadic index (with a coupling rule) or as `[h, dt]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LevelSpec {
    Index(u32),
    Sizes([f64; 2]),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LevelList {
    /// `"1..6"`, inclusive.
    Range(String),
    List(Vec<LevelSpec>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudySection {
    #[serde(alias = "T")]
    t_end: Option<f64>,
    coupling: Option<String>,
    levels: LevelList,
    reference: LevelSpec,
    norms: Option<Vec<String>>,
    expected_rate: Option<f64>,
    rate_tolerance: Option<f64>,
    #[serde(default)]
    check_invariants: bool,
    seed: Option<u64>,
    n_samples: Option<usize>,
    snapshot_t: Option<f64>,
    /// Discretisation for single runs; defaults to the finest sweep level.
    level: Option<LevelSpec>,
    oracle_modes: Option<usize>,
}

/// Everything the subcommands need, validated.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub study: StudyConfig,
    pub single_level: Level,
    pub rate_tolerance: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub snapshot_t: Option<f64>,
    pub oracle_modes: usize,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn coef(s: &Option<String>, default: &str) -> Result<CoefFn, CliError> {
    Ok(s.as_deref().unwrap_or(default).parse::<CoefFn>()?)
}

fn equation(sec: &EquationSection) -> Result<Equation, CliError> {
    match sec.kind.to_ascii_lowercase().as_str() {
        "advdiff" => {
            if sec.g.is_some() {
                return Err(config_err("`g` only applies to the wave equation"));
            }
            let bc = match &sec.bc {
                Some(s) => s.parse::<BoundaryCondition>()?,
                None => BoundaryCondition::Dirichlet,
            };
            let a11 = coef(&sec.a11, "const:1")?;
            let lambda0 = match sec.lambda0 {
                Some(l) => l,
                None => (0..=1000)
                    .map(|i| a11.eval(i as f64 / 1000.0))
                    .fold(f64::INFINITY, f64::min),
            };
            let coeffs = Coefficients {
                a11,
                a1: coef(&sec.a1, "zero")?,
                a0: coef(&sec.a0, "zero")?,
                lambda0,
            };
            let c0 = match sec.c0 {
                Some(c) => c,
                None => compute_c0(&coeffs, sec.epsilon.unwrap_or(DEFAULT_EPSILON))?,
            };
            Ok(Equation::AdvDiff { coeffs, c0, bc })
        }
        "wave" => {
            let advdiff_only = [&sec.a11, &sec.a1, &sec.a0].iter().any(|c| c.is_some())
                || sec.lambda0.is_some()
                || sec.c0.is_some()
                || sec.epsilon.is_some();
            if advdiff_only {
                return Err(config_err("coefficient keys only apply to the advdiff equation"));
            }
            if let Some(bc) = &sec.bc {
                if bc.parse::<BoundaryCondition>()? != BoundaryCondition::Dirichlet {
                    return Err(config_err("the wave equation needs Dirichlet boundary conditions"));
                }
            }
            let g = match sec.g.as_deref().unwrap_or("minus_q").to_ascii_lowercase().as_str() {
                "minus_q" | "-q" => GSpec::MinusQ,
                "zero" | "0" => GSpec::Zero,
                other => return Err(config_err(format!("unknown g {other:?}; use \"minus_q\" or \"zero\""))),
            };
            Ok(Equation::Wave { g })
        }
        other => Err(config_err(format!("unknown equation type {other:?}"))),
    }
}

fn kernel(sec: &KernelSection) -> Result<KernelSpec, CliError> {
    let need = |name: &str, v: Option<f64>| v.ok_or_else(|| config_err(format!("kernel needs `{name}`")));
    let spec = match sec.kind.to_ascii_lowercase().as_str() {
        "white" | "white_noise" => KernelSpec::WhiteNoise,
        "exponential" => KernelSpec::Exponential {
            scale: need("scale", sec.scale)?,
        },
        "matern" => KernelSpec::Matern {
            sigma: need("sigma", sec.sigma)?,
            nu: need("nu", sec.nu)?,
            rho: need("rho", sec.rho)?,
        },
        "brownian_bridge" => KernelSpec::BrownianBridge,
        other => return Err(config_err(format!("unknown kernel type {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn level(spec: &LevelSpec, position: u32, coupling: Option<Coupling>, t_end: f64) -> Result<Level, CliError> {
    match spec {
        LevelSpec::Index(i) => {
            let rule = coupling.ok_or_else(|| config_err("level indices need a `coupling` rule"))?;
            Ok(Level::coupled(rule, *i, t_end)?)
        }
        LevelSpec::Sizes([h, dt]) => Ok(Level::from_sizes(position, *h, *dt, t_end)?),
    }
}

fn parse_range(s: &str) -> Result<Vec<LevelSpec>, CliError> {
    let bad = || config_err(format!("level range {s:?} is not of the form \"a..b\""));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).map(LevelSpec::Index).collect())
}

fn norms(names: &Option<Vec<String>>) -> Result<NormSet, CliError> {
    let Some(names) = names else {
        return Ok(NormSet::default());
    };
    let mut set = NormSet { l1: false, l2: false };
    for n in names {
        match n.to_ascii_uppercase().as_str() {
            "L1" => set.l1 = true,
            "L2" => set.l2 = true,
            other => return Err(config_err(format!("unknown norm {other:?}"))),
        }
    }
    Ok(set)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let s = &file.study;
        let t_end = s.t_end.unwrap_or(1.0);
        let coupling = s.coupling.as_deref().map(str::parse::<Coupling>).transpose()?;
        let specs = match &s.levels {
            LevelList::Range(r) => parse_range(r)?,
            LevelList::List(l) => l.clone(),
        };
        if specs.is_empty() {
            return Err(config_err("`levels` is empty"));
        }
        let levels = specs
            .iter()
            .zip(1..)
            .map(|(spec, pos)| level(spec, pos, coupling, t_end))
            .collect::<Result<Vec<_>, _>>()?;
        let reference = level(&s.reference, levels.len() as u32 + 1, coupling, t_end)?;
        let single_level = match &s.level {
            Some(spec) => level(spec, 0, coupling, t_end)?,
            None => *levels.last().expect("levels is non-empty"),
        };
        let study = StudyConfig {
            equation: equation(&file.equation)?,
            kernel: kernel(&file.kernel)?,
            t_end,
            levels,
            reference,
            norms: norms(&s.norms)?,
            expected_rate: s.expected_rate,
            check_invariants: s.check_invariants,
        };
        study.validate()?;
        if let Some(t) = s.snapshot_t {
            if !(t > 0.0 && t <= t_end) {
                return Err(config_err(format!("snapshot_t = {t} is outside (0, {t_end}]")));
            }
        }
        let n_samples = s.n_samples.unwrap_or(1000);
        let oracle_modes = s.oracle_modes.unwrap_or(DEFAULT_ORACLE_MODES);
        if oracle_modes == 0 {
            return Err(config_err("oracle_modes must be positive"));
        }
        Ok(Self {
            study,
            single_level,
            rate_tolerance: s.rate_tolerance.unwrap_or(DEFAULT_RATE_TOLERANCE),
            seed: s.seed.unwrap_or(0),
            n_samples,
            snapshot_t: s.snapshot_t,
            oracle_modes,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Single-run level, shortened to end at the snapshot time if one is set.
    fn run_window(&self) -> (usize, f64) {
        let n = self.single_level.n_steps;
        let dt = self.single_level.dt(self.study.t_end);
        let Some(t) = self.snapshot_t else {
            return (n, self.study.t_end);
        };
        let j = ((t / dt).round() as usize).clamp(1, n);
        if ((j as f64) * dt - t).abs() > 1e-9 * t {
            log::warn!(
                "snapshot_t = {t} is not a multiple of dt = {dt}; using t = {}",
                j as f64 * dt
            );
        }
        (j, j as f64 * dt)
    }

    pub fn advdiff(&self) -> Result<AdvDiffConfig, CliError> {
        let mut c = self.study.advdiff_config(&self.single_level)?;
        (c.n_steps, c.t_end) = self.run_window();
        Ok(c)
    }

    pub fn wave(&self) -> Result<WaveConfig, CliError> {
        let mut c = self.study.wave_config(&self.single_level)?;
        (c.n_steps, c.t_end) = self.run_window();
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
[equation]
type = "advdiff"
bc = "neumann"
a11 = "const:4"
a1 = "sin2pix"

[kernel]
type = "white"

[study]
T = 1.0
coupling = "h=sqrt(dt)"
levels = "1..3"
reference = 4
"#;

    #[test]
    fn parses_heat_study() {
        let c = RunConfig::from_toml(HEAT).unwrap();
        assert_eq!(c.study.levels.len(), 3);
        assert_eq!(c.study.reference.n_cells, 16);
        assert_eq!(c.study.reference.n_steps, 256);
        assert_eq!(c.single_level, c.study.levels[2]);
        match &c.study.equation {
            Equation::AdvDiff { c0, bc, .. } => {
                assert!((c0 - 0.125).abs() < 1e-12);
                assert_eq!(*bc, BoundaryCondition::Neumann);
            }
            _ => panic!("expected advdiff"),
        }
    }

    #[test]
    fn explicit_sizes_and_snapshot() {
        let text = r#"
[equation]
type = "wave"
[kernel]
type = "brownian_bridge"
[study]
levels = [[0.5, 0.25], [0.25, 0.0625]]
reference = [0.125, 0.015625]
snapshot_t = 0.1
"#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.study.levels[1].n_cells, 4);
        let w = c.wave().unwrap();
        assert_eq!(w.n_steps, 2);
        assert!((w.t_end - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        for (from, to) in [
            ("type = \"white\"", "type = \"pink\""),
            ("reference = 4", "reference = 2"),
            ("coupling = \"h=sqrt(dt)\"", ""),
            ("a1 = \"sin2pix\"", "a1 = \"tan\""),
            ("T = 1.0", "T = 1.0\nbogus = 3"),
        ] {
            let text = HEAT.replace(from, to);
            assert!(matches!(RunConfig::from_toml(&text), Err(CliError::Config(_))), "{to}");
        }
    }
}
