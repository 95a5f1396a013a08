//! Crank–Nicolson / P1 covariance recursion for the stochastic wave equation
//! `Ü = -Λ U + G U + Ẇ` with Dirichlet conditions.
//!
//! State coefficients are stacked as `[u; v]` (position, velocity). One step
//! of the perturbed discrete group is `T̂ = L⁻¹ R P`, where `L`, `R` are the
//! Crank–Nicolson block matrices and `P` applies the forcing `G` to the
//! velocity. The covariance recursion is
//! `K_j = T̂ K_{j-1} T̂ᵀ + Δt blockdiag(0, M⁻¹ Q_h M⁻¹)`.

use crate::cov::CovMatrix;
use crate::error::{Error, Result};
use crate::fem::{assemble_laplacian, assemble_mass, BoundaryCondition, Mesh1D};
use crate::kernels::{assemble_q, KernelSpec};
use crate::linalg::{block2, block_diag, sandwich, symmetrize, DenseMatrix, LuFactor};

/// The linear forcing `G` in Gram form, `G_h[i, j] = ⟨G φ_j, φ_i⟩`.
#[derive(Debug, Clone)]
pub enum GSpec {
    /// `G = -Q`: the damped string driven by the same covariance.
    MinusQ,
    Zero,
    Custom(DenseMatrix),
}

#[derive(Debug, Clone)]
pub struct WaveConfig {
    pub mesh: Mesh1D,
    pub kernel: KernelSpec,
    pub g: GSpec,
    /// Initial block covariance (2N x 2N); `None` means deterministic data.
    pub k0: Option<CovMatrix>,
    pub t_end: f64,
    pub n_steps: usize,
}

impl WaveConfig {
    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.bc() != BoundaryCondition::Dirichlet {
            return Err(Error::InvalidConfig("the wave equation needs a Dirichlet mesh".into()));
        }
        if self.n_steps == 0 || !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need T > 0 and at least one step, got T = {}, N = {}",
                self.t_end, self.n_steps
            )));
        }
        if self.dt() > 1.0 {
            return Err(Error::InvalidConfig(format!("time step {} exceeds 1", self.dt())));
        }
        let n = self.mesh.n_dofs();
        if let Some(k0) = &self.k0 {
            if k0.dim() != 2 * n {
                return Err(Error::ShapeMismatch(format!(
                    "initial block covariance is {0}x{0}, expected {1}x{1}",
                    k0.dim(),
                    2 * n
                )));
            }
        }
        if let GSpec::Custom(g) = &self.g {
            if g.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!(
                    "G_h is {}x{}, mesh has {n} dofs",
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
        self.kernel.validate()
    }

    /// Gram matrix of `G` for a given noise Gram `Q_h`.
    pub fn g_gram(&self, q_h: &DenseMatrix) -> DenseMatrix {
        match &self.g {
            GSpec::MinusQ => -q_h,
            GSpec::Zero => DenseMatrix::zeros(q_h.nrows(), q_h.ncols()),
            GSpec::Custom(g) => g.clone(),
        }
    }
}

fn check_square_pair(m: &DenseMatrix, s: &DenseMatrix) -> Result<usize> {
    let n = m.nrows();
    if m.shape() != (n, n) || s.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "expected two NxN matrices, got {}x{} and {}x{}",
            m.nrows(),
            m.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(n)
}

/// `L = [[M, -Δt/2 M], [Δt/2 S, M]]`, `R = [[M, Δt/2 M], [-Δt/2 S, M]]`.
pub fn build_cn_blocks(m: &DenseMatrix, s: &DenseMatrix, dt: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    check_square_pair(m, s)?;
    let half = 0.5 * dt;
    let l = block2(m, &(m * -half), &(s * half), m);
    let r = block2(m, &(m * half), &(s * -half), m);
    Ok((l, r))
}

/// `P = [[I, 0], [Δt M⁻¹ G_h, I]]`.
pub fn build_perturbation(g_h: &DenseMatrix, m: &DenseMatrix, dt: f64) -> Result<DenseMatrix> {
    let n = check_square_pair(m, g_h)?;
    let coupling = LuFactor::new(m)?.solve(g_h)? * dt;
    let id = DenseMatrix::identity(n, n);
    Ok(block2(&id, &DenseMatrix::zeros(n, n), &coupling, &id))
}

/// The block matrices of one perturbed Crank–Nicolson step.
#[derive(Debug, Clone)]
pub struct BlockStep {
    pub l: DenseMatrix,
    pub r: DenseMatrix,
    pub p: DenseMatrix,
    l_factor: LuFactor,
}

impl BlockStep {
    pub fn new(m: &DenseMatrix, s: &DenseMatrix, g_h: &DenseMatrix, dt: f64) -> Result<Self> {
        let (l, r) = build_cn_blocks(m, s, dt)?;
        let p = build_perturbation(g_h, m, dt)?;
        let l_factor = LuFactor::new(&l)?;
        Ok(Self { l, r, p, l_factor })
    }

    /// Unperturbed Crank–Nicolson coefficient map `L⁻¹ R`.
    pub fn cn_propagator(&self) -> Result<DenseMatrix> {
        self.l_factor.solve(&self.r)
    }

    /// `T̂ = L⁻¹ R P` (perturbation first, then the CN step).
    pub fn propagator(&self) -> Result<DenseMatrix> {
        self.l_factor.solve(&(&self.r * &self.p))
    }

    /// `det(L⁻¹ R)`, evaluated through log-determinants.
    pub fn cn_determinant(&self) -> Result<f64> {
        let (sl, ll) = self.l_factor.log_det();
        let (sr, lr) = LuFactor::new(&self.r)?.log_det();
        Ok(sl * sr * (lr - ll).exp())
    }
}

/// `blockdiag(0, Δt M⁻¹ Q_h M⁻¹)`.
fn noise_block(q_h: &DenseMatrix, m: &DenseMatrix, dt: f64) -> Result<DenseMatrix> {
    let n = check_square_pair(m, q_h)?;
    let inner = LuFactor::new(m)?.congruence(&(q_h * dt))?;
    Ok(block_diag(&DenseMatrix::zeros(n, n), &inner))
}

/// One step `K_j = T̂ K_{j-1} T̂ᵀ + Δt blockdiag(0, M⁻¹ Q_h M⁻¹)`.
pub fn wave_cov_step(
    k_prev: &CovMatrix,
    step: &BlockStep,
    q_h: &DenseMatrix,
    m: &DenseMatrix,
    dt: f64,
) -> Result<CovMatrix> {
    if k_prev.dim() != step.l.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "block covariance is {0}x{0}, step is {1}x{1}",
            k_prev.dim(),
            step.l.nrows()
        )));
    }
    let t_hat = step.propagator()?;
    let mut next = sandwich(&t_hat, k_prev.matrix());
    next += noise_block(q_h, m, dt)?;
    Ok(CovMatrix::from_symmetric(next))
}

/// Recursion with `T̂` and the noise block precomputed.
#[derive(Debug, Clone)]
pub struct WaveStepper {
    propagator: DenseMatrix,
    noise: DenseMatrix,
}

impl WaveStepper {
    pub fn new(step: &BlockStep, q_h: &DenseMatrix, m: &DenseMatrix, dt: f64) -> Result<Self> {
        Ok(Self {
            propagator: step.propagator()?,
            noise: noise_block(q_h, m, dt)?,
        })
    }

    pub fn step(&self, k: &CovMatrix) -> CovMatrix {
        let mut next = sandwich(&self.propagator, k.matrix());
        next += &self.noise;
        CovMatrix::from_symmetric(next)
    }

    pub fn propagator(&self) -> &DenseMatrix {
        &self.propagator
    }
}

/// Position–position block `P_1 K P_1*`.
pub fn extract_position_cov(k: &CovMatrix) -> Result<CovMatrix> {
    let dim = k.dim();
    if dim % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("block covariance has odd size {dim}")));
    }
    let n = dim / 2;
    Ok(CovMatrix::from_symmetric(k.matrix().view((0, 0), (n, n)).into_owned()))
}

/// Expected discrete energy `tr(S K_uu) + tr(M K_vv)`, conserved by the
/// noiseless, unperturbed scheme.
pub fn wave_energy(k: &CovMatrix, m: &DenseMatrix, s: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let kk = k.matrix();
    let uu = kk.view((0, 0), (n, n));
    let vv = kk.view((n, n), (n, n));
    (s * uu).trace() + (m * vv).trace()
}

/// Assembled matrices of a wave run.
#[derive(Debug, Clone)]
pub struct WaveSystem {
    pub mass: DenseMatrix,
    pub stiffness: DenseMatrix,
    pub q_h: DenseMatrix,
    pub step: BlockStep,
    pub stepper: WaveStepper,
}

impl WaveSystem {
    pub fn assemble(config: &WaveConfig) -> Result<Self> {
        config.validate()?;
        let mass = assemble_mass(&config.mesh);
        let stiffness = assemble_laplacian(&config.mesh);
        let q_h = symmetrize(assemble_q(&config.mesh, &config.kernel)?);
        let g_h = config.g_gram(&q_h);
        let dt = config.dt();
        let step = BlockStep::new(&mass, &stiffness, &g_h, dt)?;
        let stepper = WaveStepper::new(&step, &q_h, &mass, dt)?;
        Ok(Self {
            mass,
            stiffness,
            q_h,
            step,
            stepper,
        })
    }
}

/// Runs to `T` and returns the full block covariance, calling
/// `observer(j, K_j)` after every step.
pub fn wave_run_observed(
    config: &WaveConfig,
    mut observer: impl FnMut(usize, &CovMatrix) -> Result<()>,
) -> Result<CovMatrix> {
    let system = WaveSystem::assemble(config)?;
    let mut k = config
        .k0
        .clone()
        .unwrap_or_else(|| CovMatrix::zeros(2 * config.mesh.n_dofs()));
    for j in 1..=config.n_steps {
        k = system.stepper.step(&k);
        observer(j, &k)?;
    }
    Ok(k)
}

pub fn wave_run(config: &WaveConfig) -> Result<CovMatrix> {
    wave_run_observed(config, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, DenseMatrix};
    use approx::assert_relative_eq;
    use nalgebra::Complex;

    fn scalar(x: f64) -> DenseMatrix {
        DenseMatrix::from_element(1, 1, x)
    }

    fn dirichlet(n: usize) -> Mesh1D {
        Mesh1D::new(n, BoundaryCondition::Dirichlet).unwrap()
    }

    #[test]
    fn single_dof_cn_propagator() {
        let step = BlockStep::new(&scalar(1.0 / 3.0), &scalar(4.0), &scalar(0.0), 1.0).unwrap();
        let t = step.cn_propagator().unwrap();
        let want = DenseMatrix::from_row_slice(2, 2, &[-0.5, 0.25, -3.0, -0.5]);
        assert!(max_abs(&(&t - &want)) <= 1e-12);
        assert!((t.determinant() - 1.0).abs() <= 1e-12);
        assert!((step.cn_determinant().unwrap() - 1.0).abs() <= 1e-12);
        let eig: Vec<Complex<f64>> = t.complex_eigenvalues().iter().copied().collect();
        for e in eig {
            assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let mesh = dirichlet(5);
        let (m, s) = (assemble_mass(&mesh), assemble_laplacian(&mesh));
        let q = assemble_q(&mesh, &KernelSpec::WhiteNoise).unwrap();
        let step = BlockStep::new(&m, &s, &-&q, 0.0).unwrap();
        let id = DenseMatrix::identity(8, 8);
        assert!(max_abs(&(step.cn_propagator().unwrap() - &id)) <= 1e-14);
        assert!(max_abs(&(&step.p - &id)) == 0.0);
    }

    #[test]
    fn cn_determinant_is_one() {
        for n in [3, 8, 32, 128] {
            let mesh = dirichlet(n);
            let (m, s) = (assemble_mass(&mesh), assemble_laplacian(&mesh));
            for dt in [1.0 / n as f64, 0.5, 1e-3] {
                let step = BlockStep::new(&m, &s, &DenseMatrix::zeros(n - 1, n - 1), dt).unwrap();
                assert!(
                    (step.cn_determinant().unwrap() - 1.0).abs() <= 1e-8,
                    "n = {n}, dt = {dt}"
                );
            }
        }
    }

    #[test]
    fn perturbation_examples() {
        let m = assemble_mass(&dirichlet(6));
        let id = DenseMatrix::identity(10, 10);
        assert_eq!(build_perturbation(&DenseMatrix::zeros(5, 5), &m, 0.3).unwrap(), id);
        assert_eq!(build_perturbation(&DenseMatrix::identity(5, 5), &m, 0.0).unwrap(), id);
        let p = build_perturbation(&scalar(-1.0 / 3.0), &scalar(1.0 / 3.0), 0.5).unwrap();
        let want = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 1.0]);
        assert!(max_abs(&(p - want)) <= 1e-15);
        assert!(matches!(
            build_perturbation(&DenseMatrix::zeros(2, 2), &m, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn first_step_puts_noise_in_velocity_only() {
        let mesh = dirichlet(4);
        let cfg = WaveConfig {
            mesh,
            kernel: KernelSpec::BrownianBridge,
            g: GSpec::MinusQ,
            k0: None,
            t_end: 0.25,
            n_steps: 1,
        };
        let k1 = wave_run(&cfg).unwrap();
        let sys = WaveSystem::assemble(&cfg).unwrap();
        let inner = LuFactor::new(&sys.mass)
            .unwrap()
            .congruence(&(&sys.q_h * 0.25))
            .unwrap();
        let want = block_diag(&DenseMatrix::zeros(3, 3), &inner);
        assert!(max_abs(&(k1.matrix() - &want)) <= 1e-15 * max_abs(&want).max(1.0));
        assert_eq!(max_abs(extract_position_cov(&k1).unwrap().matrix()), 0.0);

        let direct = wave_cov_step(&CovMatrix::zeros(6), &sys.step, &sys.q_h, &sys.mass, 0.25).unwrap();
        assert!(max_abs(&(direct.matrix() - k1.matrix())) <= 1e-15);
    }

    #[test]
    fn noiseless_zero_stays_zero() {
        let mesh = dirichlet(4);
        let (m, s) = (assemble_mass(&mesh), assemble_laplacian(&mesh));
        let step = BlockStep::new(&m, &s, &DenseMatrix::zeros(3, 3), 0.1).unwrap();
        let k = wave_cov_step(&CovMatrix::zeros(6), &step, &DenseMatrix::zeros(3, 3), &m, 0.1).unwrap();
        assert_eq!(max_abs(k.matrix()), 0.0);
    }

    #[test]
    fn position_block_extraction() {
        let a = DenseMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DenseMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 7.0]);
        let k = CovMatrix::new(block_diag(&a, &b)).unwrap();
        assert_eq!(*extract_position_cov(&k).unwrap().matrix(), a);
        assert_eq!(
            max_abs(extract_position_cov(&CovMatrix::zeros(6)).unwrap().matrix()),
            0.0
        );
        assert!(extract_position_cov(&CovMatrix::zeros(3)).is_err());
    }

    #[test]
    fn energy_is_conserved_without_noise_or_forcing() {
        let mesh = dirichlet(16);
        let n = mesh.n_dofs();
        let cfg = WaveConfig {
            mesh,
            kernel: KernelSpec::Custom(std::sync::Arc::new(|_, _| 0.0)),
            g: GSpec::Zero,
            k0: Some(CovMatrix::new(DenseMatrix::identity(2 * n, 2 * n)).unwrap()),
            t_end: 1000.0 / 64.0,
            n_steps: 1000,
        };
        let sys = WaveSystem::assemble(&cfg).unwrap();
        let e0 = wave_energy(cfg.k0.as_ref().unwrap(), &sys.mass, &sys.stiffness);
        let mut worst: f64 = 0.0;
        wave_run_observed(&cfg, |_, k| {
            worst = worst.max((wave_energy(k, &sys.mass, &sys.stiffness) - e0).abs() / e0);
            Ok(())
        })
        .unwrap();
        assert!(worst <= 1e-6, "relative energy drift {worst}");
    }

    #[test]
    fn rejects_neumann_mesh() {
        let cfg = WaveConfig {
            mesh: Mesh1D::new(4, BoundaryCondition::Neumann).unwrap(),
            kernel: KernelSpec::WhiteNoise,
            g: GSpec::Zero,
            k0: None,
            t_end: 1.0,
            n_steps: 4,
        };
        assert!(wave_run(&cfg).is_err());
    }
}
