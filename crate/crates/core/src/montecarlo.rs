//! Path sampling with the same space–time discretisations, used to check the
//! covariance recursions statistically.
//!
//! Advection–diffusion paths solve
//! `(M + Δt A) x_j = (1 + c0 Δt) M x_{j-1} + b_j` with `b_j = √Δt L_Q ξ_j`,
//! `L_Q L_Qᵀ = Q_h`. Their exact covariance differs from the deterministic
//! recursion only through `(1 + c0 Δt)²` versus `1 + 2 c0 Δt`; that gap is
//! computed exactly and reported as a margin.
//!
//! Wave paths apply the perturbed Crank–Nicolson map and then add
//! `[0; M⁻¹ b_j]`, which reproduces the block recursion exactly.
//!
//! Path `i` draws from ChaCha stream `i` under the run seed, so results do
//! not depend on thread scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::advdiff::{AdvDiffConfig, AdvDiffStepper};
use crate::cov::CovMatrix;
use crate::error::{Error, Result};
use crate::fem::{assemble_form, assemble_mass};
use crate::kernels::assemble_q;
use crate::linalg::{
    block_diag, cholesky_with_jitter, psd_sqrt, sandwich, sym_eig, symmetrize, DenseMatrix, LuFactor, PSD_TOL,
};
use crate::wave::{wave_run, WaveConfig, WaveSystem};

/// Number of jackknife groups (fewer if there are fewer samples).
pub const JACKKNIFE_GROUPS: usize = 20;
/// Standard errors allowed between empirical and deterministic covariance.
pub const SE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone)]
pub enum McScheme {
    AdvDiff(AdvDiffConfig),
    Wave(WaveConfig),
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub scheme: McScheme,
    pub n_samples: usize,
    pub seed: u64,
}

/// Affine path map `x ↦ F x + N ξ`, iterated from `x_0 = L_0 ξ_0`.
#[derive(Debug, Clone)]
pub struct PathSampler {
    propagator: DenseMatrix,
    noise_factor: DenseMatrix,
    initial_factor: Option<DenseMatrix>,
    n_steps: usize,
}

impl PathSampler {
    pub fn advdiff(config: &AdvDiffConfig) -> Result<Self> {
        config.validate()?;
        let dt = config.dt();
        let mass = assemble_mass(&config.mesh);
        let form = assemble_form(&config.mesh, &config.coeffs, config.c0)?;
        let q_h = assemble_q(&config.mesh, &config.kernel)?;
        let lu = LuFactor::new(&(&mass + &form * dt))?;
        let propagator = lu.solve(&mass)? * (1.0 + config.c0 * dt);
        let noise_factor = lu.solve(&cholesky_with_jitter(&q_h)?)? * dt.sqrt();
        Ok(Self {
            propagator,
            noise_factor,
            initial_factor: initial_factor(config.k0.as_ref())?,
            n_steps: config.n_steps,
        })
    }

    pub fn wave(config: &WaveConfig) -> Result<Self> {
        let system = WaveSystem::assemble(config)?;
        let n = config.mesh.n_dofs();
        let velocity = LuFactor::new(&system.mass)?.solve(&cholesky_with_jitter(&system.q_h)?)? * config.dt().sqrt();
        let mut noise_factor = DenseMatrix::zeros(2 * n, n);
        noise_factor.view_mut((n, 0), (n, n)).copy_from(&velocity);
        Ok(Self {
            propagator: system.stepper.propagator().clone(),
            noise_factor,
            initial_factor: initial_factor(config.k0.as_ref())?,
            n_steps: config.n_steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.propagator.nrows()
    }

    /// Final state of path `path_index` under `seed`.
    pub fn sample(&self, seed: u64, path_index: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let mut normals = |len: usize| DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(&mut rng)));
        let mut x = match &self.initial_factor {
            Some(l) => l * normals(l.ncols()),
            None => DVector::zeros(self.dim()),
        };
        for _ in 0..self.n_steps {
            let xi = normals(self.noise_factor.ncols());
            x = &self.propagator * x + &self.noise_factor * xi;
        }
        x
    }

    /// Paths `0..n` in index order.
    pub fn sample_many(&self, seed: u64, n: usize) -> Vec<DVector<f64>> {
        (0..n as u64).into_par_iter().map(|i| self.sample(seed, i)).collect()
    }
}

fn initial_factor(k0: Option<&CovMatrix>) -> Result<Option<DenseMatrix>> {
    k0.map(|k| cholesky_with_jitter(k.matrix())).transpose()
}

pub fn sample_path_advdiff(config: &AdvDiffConfig, seed: u64) -> Result<DVector<f64>> {
    Ok(PathSampler::advdiff(config)?.sample(seed, 0))
}

pub fn sample_path_wave(config: &WaveConfig, seed: u64) -> Result<DVector<f64>> {
    Ok(PathSampler::wave(config)?.sample(seed, 0))
}

fn check_samples(samples: &[DVector<f64>]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "sample of length {} among length {dim}",
            bad.len()
        )));
    }
    Ok(dim)
}

/// First and second raw moment sums of a batch.
struct MomentSums {
    count: usize,
    first: DVector<f64>,
    second: DenseMatrix,
}

impl MomentSums {
    fn of(samples: &[DVector<f64>], dim: usize) -> Self {
        let data = DenseMatrix::from_fn(dim, samples.len(), |i, s| samples[s][i]);
        Self {
            count: samples.len(),
            first: data.column_sum(),
            second: &data * data.transpose(),
        }
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            count: self.count - other.count,
            first: &self.first - &other.first,
            second: &self.second - &other.second,
        }
    }

    fn covariance(&self) -> DenseMatrix {
        let n = self.count as f64;
        let mean = &self.first / n;
        symmetrize((&self.second - &mean * mean.transpose() * n) / (n - 1.0))
    }
}

/// Unbiased sample covariance (divisor `n - 1`).
pub fn empirical_cov(samples: &[DVector<f64>]) -> Result<CovMatrix> {
    let dim = check_samples(samples)?;
    // centre first; the raw-moment form loses digits when the mean is large
    let n = samples.len();
    let mean = samples.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / n as f64;
    let centred = DenseMatrix::from_fn(dim, n, |i, s| samples[s][i] - mean[i]);
    let cov = &centred * centred.transpose() / (n as f64 - 1.0);
    Ok(CovMatrix::from_symmetric(symmetrize(cov)))
}

/// `tr|√G (A - B) √G|` and `‖√G (A - B) √G‖_F` for a shared Gram matrix.
pub fn same_space_distances(a: &DenseMatrix, b: &DenseMatrix, gram_sqrt: &DenseMatrix) -> Result<(f64, f64)> {
    let w = sandwich(gram_sqrt, &(a - b));
    let trace = sym_eig(&w)?.eigenvalues.iter().map(|l| l.abs()).sum();
    Ok((trace, w.norm()))
}

/// Grouped delete-one jackknife estimate of the Hilbert–Schmidt size of the
/// sampling error, `SE² = (G-1)/G Σ_g ‖√G(Ĉ_(-g) - Ĉ_(·))√G‖²_F`.
pub fn jackknife_hs_error(samples: &[DVector<f64>], gram_sqrt: &DenseMatrix, groups: usize) -> Result<f64> {
    let dim = check_samples(samples)?;
    let groups = groups.min(samples.len() / 2).max(2);
    if samples.len() < 2 * groups {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let size = samples.len().div_ceil(groups);
    let parts: Vec<MomentSums> = samples.chunks(size).map(|c| MomentSums::of(c, dim)).collect();
    let total = parts.iter().skip(1).fold(
        MomentSums {
            count: parts[0].count,
            first: parts[0].first.clone(),
            second: parts[0].second.clone(),
        },
        |acc, p| MomentSums {
            count: acc.count + p.count,
            first: acc.first + &p.first,
            second: acc.second + &p.second,
        },
    );
    let leave_out: Vec<DenseMatrix> = parts
        .iter()
        .map(|p| sandwich(gram_sqrt, &total.minus(p).covariance()))
        .collect();
    let g = leave_out.len() as f64;
    let mean = leave_out.iter().fold(DenseMatrix::zeros(dim, dim), |acc, c| acc + c) / g;
    let spread: f64 = leave_out.iter().map(|c| (c - &mean).norm_squared()).sum();
    Ok(((g - 1.0) / g * spread).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub n_samples: usize,
    pub hs_distance: f64,
    pub trace_distance: f64,
    /// Jackknife estimate of the HS norm of the sampling error.
    pub sampling_error_estimate: f64,
    /// HS distance between the deterministic recursion and the exact
    /// covariance of the path scheme; `O(c0² Δt²)` per step.
    pub consistency_margin: f64,
    /// True when the path scheme is only consistent with the recursion up
    /// to the margin above.
    pub consistency_gap: bool,
    /// `hs_distance ≤ 3 · sampling_error_estimate + consistency_margin`.
    pub agrees: bool,
}

/// Samples `n_samples` paths and compares their covariance with the
/// deterministic recursion.
pub fn mc_validate(config: &McConfig) -> Result<McReport> {
    if config.n_samples < 2 {
        return Err(Error::TooFewSamples(config.n_samples));
    }
    let (sampler, deterministic, path_exact, gram, gap) = match &config.scheme {
        McScheme::AdvDiff(cfg) => {
            let sampler = PathSampler::advdiff(cfg)?;
            let dt = cfg.dt();
            let mass = assemble_mass(&cfg.mesh);
            let form = assemble_form(&cfg.mesh, &cfg.coeffs, cfg.c0)?;
            let q_h = assemble_q(&cfg.mesh, &cfg.kernel)?;
            let stepper = AdvDiffStepper::new(&mass, &form, &q_h, dt, cfg.c0)?;
            let path_growth = (1.0 + cfg.c0 * dt).powi(2);
            let path_stepper = stepper.clone().with_growth(path_growth);
            let start = cfg.k0.clone().unwrap_or_else(|| CovMatrix::zeros(cfg.mesh.n_dofs()));
            let (mut det, mut exact) = (start.clone(), start);
            for _ in 0..cfg.n_steps {
                det = stepper.step(&det);
                exact = path_stepper.step(&exact);
            }
            (sampler, det, exact, mass, cfg.c0 != 0.0)
        }
        McScheme::Wave(cfg) => {
            let sampler = PathSampler::wave(cfg)?;
            let det = wave_run(cfg)?;
            let mass = assemble_mass(&cfg.mesh);
            (sampler, det.clone(), det, block_diag(&mass, &mass), false)
        }
    };
    let gram_sqrt = psd_sqrt(&gram, PSD_TOL)?;
    let samples = sampler.sample_many(config.seed, config.n_samples);
    let empirical = empirical_cov(&samples)?;
    let (trace_distance, hs_distance) = same_space_distances(empirical.matrix(), deterministic.matrix(), &gram_sqrt)?;
    let (_, consistency_margin) = same_space_distances(path_exact.matrix(), deterministic.matrix(), &gram_sqrt)?;
    let sampling_error_estimate = if config.n_samples >= 4 {
        jackknife_hs_error(&samples, &gram_sqrt, JACKKNIFE_GROUPS)?
    } else {
        f64::INFINITY
    };
    let agrees = hs_distance <= SE_MULTIPLIER * sampling_error_estimate + consistency_margin;
    Ok(McReport {
        n_samples: config.n_samples,
        hs_distance,
        trace_distance,
        sampling_error_estimate,
        consistency_margin,
        consistency_gap: gap,
        agrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryCondition, Coefficients, Mesh1D};
    use crate::kernels::KernelSpec;
    use crate::wave::GSpec;
    use std::sync::Arc;

    fn one_dof(c0: f64) -> AdvDiffConfig {
        AdvDiffConfig {
            mesh: Mesh1D::new(2, BoundaryCondition::Dirichlet).unwrap(),
            coeffs: Coefficients::heat(),
            c0,
            kernel: KernelSpec::WhiteNoise,
            k0: None,
            t_end: 0.5,
            n_steps: 1,
        }
    }

    fn zero_kernel() -> KernelSpec {
        KernelSpec::Custom(Arc::new(|_, _| 0.0))
    }

    fn scalars(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn zero_noise_gives_zero_paths() {
        let mut cfg = one_dof(0.0);
        cfg.kernel = zero_kernel();
        cfg.mesh = Mesh1D::new(8, BoundaryCondition::Neumann).unwrap();
        assert!(sample_path_advdiff(&cfg, 7).unwrap().iter().all(|&v| v == 0.0));
        let report = mc_validate(&McConfig {
            scheme: McScheme::AdvDiff(cfg),
            n_samples: 50,
            seed: 1,
        })
        .unwrap();
        assert_eq!(report.hs_distance, 0.0);
        assert_eq!(report.trace_distance, 0.0);
        assert_eq!(report.sampling_error_estimate, 0.0);
    }

    #[test]
    fn paths_are_deterministic() {
        let mut cfg = one_dof(0.0);
        cfg.mesh = Mesh1D::new(6, BoundaryCondition::Neumann).unwrap();
        cfg.n_steps = 5;
        let a = sample_path_advdiff(&cfg, 42).unwrap();
        assert_eq!(a, sample_path_advdiff(&cfg, 42).unwrap());
        assert_ne!(a, sample_path_advdiff(&cfg, 43).unwrap());
        let sampler = PathSampler::advdiff(&cfg).unwrap();
        assert_eq!(sampler.sample_many(3, 16), sampler.sample_many(3, 16));
        assert_ne!(sampler.sample(3, 0), sampler.sample(3, 1));
    }

    #[test]
    fn one_dof_step_is_exact_scaling() {
        let cfg = one_dof(0.0);
        let sampler = PathSampler::advdiff(&cfg).unwrap();
        // x_1 = √(1/2) √(1/3) ξ / (7/3)
        let want = (0.5f64).sqrt() * (1.0f64 / 3.0).sqrt() / (7.0 / 3.0);
        assert!((sampler.noise_factor[(0, 0)] - want).abs() <= 1e-15);
        assert!((want * want - 3.0 / 98.0).abs() <= 1e-15);
    }

    #[test]
    fn empirical_cov_examples() {
        assert_eq!(empirical_cov(&scalars(&[1.0])), Err(Error::TooFewSamples(1)));
        assert_eq!(empirical_cov(&scalars(&[2.5, 2.5, 2.5])).unwrap(), CovMatrix::zeros(1));
        assert_eq!(empirical_cov(&scalars(&[1.0, -1.0])).unwrap().matrix()[(0, 0)], 2.0);
        let ragged = vec![DVector::zeros(2), DVector::zeros(3)];
        assert!(matches!(empirical_cov(&ragged), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn empirical_variance_of_normals() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = empirical_cov(&scalars(&xs)).unwrap().matrix()[(0, 0)];
        assert!((v - 1.0).abs() <= 3.0 * (2.0 / (n as f64 - 1.0)).sqrt(), "{v}");
    }

    #[test]
    fn sampling_error_decays_like_inverse_root_n() {
        let sigma = DenseMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 0.5]);
        let l = cholesky_with_jitter(&sigma).unwrap();
        let id = DenseMatrix::identity(3, 3);
        let mean_distance = |n: usize| {
            let reps = 40;
            (0..reps)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
                    let xs: Vec<DVector<f64>> = (0..n)
                        .map(|_| &l * DVector::from_iterator(3, (0..3).map(|_| StandardNormal.sample(&mut rng))))
                        .collect();
                    (empirical_cov(&xs).unwrap().matrix() - &sigma).norm()
                })
                .sum::<f64>()
                / reps as f64
        };
        let ratio = mean_distance(4000) / mean_distance(1000);
        assert!((0.5 / 3.0..=0.5 * 4.0 / 3.0).contains(&ratio), "{ratio}");
        // the jackknife tracks the same scale
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<DVector<f64>> = (0..4000)
            .map(|_| &l * DVector::from_iterator(3, (0..3).map(|_| StandardNormal.sample(&mut rng))))
            .collect();
        let se = jackknife_hs_error(&xs, &id, JACKKNIFE_GROUPS).unwrap();
        let typical = mean_distance(4000);
        assert!(se > 0.5 * typical && se < 2.0 * typical, "{se} vs {typical}");
    }

    #[test]
    fn one_dof_validation_within_three_standard_errors() {
        let report = mc_validate(&McConfig {
            scheme: McScheme::AdvDiff(one_dof(0.0)),
            n_samples: 100_000,
            seed: 2024,
        })
        .unwrap();
        assert_eq!(report.consistency_margin, 0.0);
        assert!(!report.consistency_gap);
        assert!(
            report.trace_distance <= 3.0 * report.sampling_error_estimate,
            "{report:?}"
        );
        assert!(report.agrees);
    }

    #[test]
    fn positive_c0_flags_second_order_gap() {
        let c0 = 0.5;
        let cfg = one_dof(c0);
        let dt = cfg.dt();
        let report = mc_validate(&McConfig {
            scheme: McScheme::AdvDiff(cfg),
            n_samples: 2000,
            seed: 9,
        })
        .unwrap();
        assert!(report.consistency_gap);
        // one step from zero: the growth factor never acts
        assert_eq!(report.consistency_margin, 0.0);

        let mut cfg = one_dof(c0);
        cfg.n_steps = 2;
        cfg.t_end = 2.0 * dt;
        let report = mc_validate(&McConfig {
            scheme: McScheme::AdvDiff(cfg),
            n_samples: 2000,
            seed: 9,
        })
        .unwrap();
        // K_2 differs by c0² dt² T K_1 Tᵀ, measured in the M-norm
        let (m, a) = (1.0 / 3.0, 4.0 + c0 / 3.0);
        let k1 = dt * m / (m + dt * a).powi(2);
        let t = m / (m + dt * a);
        let want = c0 * c0 * dt * dt * t * t * k1 * m;
        assert!((report.consistency_margin - want).abs() <= 1e-15, "{report:?}");
        assert!(report.agrees, "{report:?}");
    }

    #[test]
    fn wave_paths_match_block_recursion() {
        let cfg = WaveConfig {
            mesh: Mesh1D::new(6, BoundaryCondition::Dirichlet).unwrap(),
            kernel: KernelSpec::Exponential { scale: 2.0 },
            g: GSpec::MinusQ,
            k0: None,
            t_end: 1.0,
            n_steps: 8,
        };
        let path = sample_path_wave(&cfg, 1).unwrap();
        assert_eq!(path.len(), 10);
        let report = mc_validate(&McConfig {
            scheme: McScheme::Wave(cfg),
            n_samples: 20_000,
            seed: 77,
        })
        .unwrap();
        assert_eq!(report.consistency_margin, 0.0);
        assert!(report.agrees, "{report:?}");
        assert!(report.hs_distance <= report.trace_distance + 1e-15);
    }

    #[test]
    fn initial_covariance_is_sampled() {
        let mut cfg = one_dof(0.0);
        cfg.k0 = Some(CovMatrix::new(DenseMatrix::from_element(1, 1, 4.0)).unwrap());
        let report = mc_validate(&McConfig {
            scheme: McScheme::AdvDiff(cfg),
            n_samples: 20_000,
            seed: 3,
        })
        .unwrap();
        assert!(report.agrees, "{report:?}");
    }

    #[test]
    fn too_few_samples() {
        let cfg = McConfig {
            scheme: McScheme::AdvDiff(one_dof(0.0)),
            n_samples: 1,
            seed: 0,
        };
        assert_eq!(mc_validate(&cfg), Err(Error::TooFewSamples(1)));
    }
}
