//! Backward Euler / P1 covariance recursion for the stochastic
//! advection–diffusion equation
//!
//! `(M + Δt A) K_j (M + Δt A)ᵀ = (1 + 2 c0 Δt) M K_{j-1} M + Δt Q_h`.

use crate::cov::CovMatrix;
use crate::error::{Error, Result};
use crate::fem::{assemble_form, assemble_mass, Coefficients, Mesh1D};
use crate::kernels::{assemble_q, KernelSpec};
use crate::linalg::{congruence_solve, sandwich, CovFlow, DenseMatrix, LuFactor};

#[derive(Debug, Clone)]
pub struct AdvDiffConfig {
    pub mesh: Mesh1D,
    pub coeffs: Coefficients,
    pub c0: f64,
    pub kernel: KernelSpec,
    /// Initial covariance coefficients; `None` means deterministic initial data.
    pub k0: Option<CovMatrix>,
    pub t_end: f64,
    pub n_steps: usize,
}

impl AdvDiffConfig {
    /// Time step `T / N`.
    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need T > 0 and at least one step, got T = {}, N = {}",
                self.t_end, self.n_steps
            )));
        }
        if self.dt() > 1.0 {
            return Err(Error::InvalidConfig(format!("time step {} exceeds 1", self.dt())));
        }
        if !self.c0.is_finite() {
            return Err(Error::InvalidConfig("c0 must be finite".into()));
        }
        if let Some(k0) = &self.k0 {
            if k0.dim() != self.mesh.n_dofs() {
                return Err(Error::ShapeMismatch(format!(
                    "initial covariance is {0}x{0}, mesh has {1} dofs",
                    k0.dim(),
                    self.mesh.n_dofs()
                )));
            }
        }
        self.kernel.validate()
    }
}

/// One step of the recursion, solved directly through the congruence.
pub fn advdiff_step(
    k_prev: &CovMatrix,
    mass: &DenseMatrix,
    form: &DenseMatrix,
    q_h: &DenseMatrix,
    dt: f64,
    c0: f64,
) -> Result<CovMatrix> {
    let n = mass.nrows();
    for (name, m) in [("form", form), ("noise Gram", q_h), ("covariance", k_prev.matrix())] {
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "{name} matrix is {}x{}, mass is {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let lhs = mass + form * dt;
    let rhs = sandwich(mass, k_prev.matrix()) * (1.0 + 2.0 * c0 * dt) + q_h * dt;
    Ok(CovMatrix::from_symmetric(congruence_solve(&lhs, &rhs)?))
}

/// The recursion with `(M + Δt A)` factored once:
/// `K_j = (1 + 2 c0 Δt) T K_{j-1} Tᵀ + N` with `T = (M + Δt A)⁻¹ M` and
/// `N = Δt (M + Δt A)⁻¹ Q_h (M + Δt A)⁻ᵀ`.
#[derive(Debug, Clone)]
pub struct AdvDiffStepper {
    propagator: DenseMatrix,
    noise: DenseMatrix,
    growth: f64,
}

impl AdvDiffStepper {
    pub fn new(mass: &DenseMatrix, form: &DenseMatrix, q_h: &DenseMatrix, dt: f64, c0: f64) -> Result<Self> {
        let lu = LuFactor::new(&(mass + form * dt))?;
        Ok(Self {
            propagator: lu.solve(mass)?,
            noise: lu.congruence(&(q_h * dt))?,
            growth: 1.0 + 2.0 * c0 * dt,
        })
    }

    pub fn step(&self, k: &CovMatrix) -> CovMatrix {
        let mut next = sandwich(&self.propagator, k.matrix());
        next *= self.growth;
        next += &self.noise;
        CovMatrix::from_symmetric(next)
    }

    /// `n` steps at once by repeated squaring of the affine step map; the
    /// same recursion at `O(log n)` matrix products. Falls back to plain
    /// stepping if the growth factor is not positive.
    pub fn advance(&self, k: &CovMatrix, n: usize) -> CovMatrix {
        if self.growth <= 0.0 {
            return (0..n).fold(k.clone(), |k, _| self.step(&k));
        }
        let flow = CovFlow {
            phi: &self.propagator * self.growth.sqrt(),
            sigma: self.noise.clone(),
        };
        CovMatrix::from_symmetric(flow.power(n).apply(k.matrix()))
    }

    /// Replaces the per-step factor `1 + 2 c0 Δt`.
    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }

    /// Coefficient action of the deterministic part, `x ↦ (M + Δt A)⁻¹ M x`.
    pub fn propagator(&self) -> &DenseMatrix {
        &self.propagator
    }
}

/// Runs the recursion to `T`, calling `observer(j, K_j)` after every step.
pub fn advdiff_run_observed(
    config: &AdvDiffConfig,
    mut observer: impl FnMut(usize, &CovMatrix) -> Result<()>,
) -> Result<CovMatrix> {
    config.validate()?;
    let mass = assemble_mass(&config.mesh);
    let form = assemble_form(&config.mesh, &config.coeffs, config.c0)?;
    let q_h = assemble_q(&config.mesh, &config.kernel)?;
    let stepper = AdvDiffStepper::new(&mass, &form, &q_h, config.dt(), config.c0)?;
    let mut k = config
        .k0
        .clone()
        .unwrap_or_else(|| CovMatrix::zeros(config.mesh.n_dofs()));
    for j in 1..=config.n_steps {
        k = stepper.step(&k);
        observer(j, &k)?;
    }
    Ok(k)
}

/// Final covariance only; uses [`AdvDiffStepper::advance`].
pub fn advdiff_run(config: &AdvDiffConfig) -> Result<CovMatrix> {
    config.validate()?;
    let mass = assemble_mass(&config.mesh);
    let form = assemble_form(&config.mesh, &config.coeffs, config.c0)?;
    let q_h = assemble_q(&config.mesh, &config.kernel)?;
    let stepper = AdvDiffStepper::new(&mass, &form, &q_h, config.dt(), config.c0)?;
    let k0 = config
        .k0
        .clone()
        .unwrap_or_else(|| CovMatrix::zeros(config.mesh.n_dofs()));
    Ok(stepper.advance(&k0, config.n_steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::{InvariantProbe, InvariantRecord};
    use crate::fem::{BoundaryCondition, CoefFn};
    use crate::linalg::{max_abs, psd_sqrt, PSD_TOL};
    use approx::assert_relative_eq;

    fn scalar(x: f64) -> DenseMatrix {
        DenseMatrix::from_element(1, 1, x)
    }

    fn neumann_config(level: u32, kernel: KernelSpec) -> AdvDiffConfig {
        AdvDiffConfig {
            mesh: Mesh1D::dyadic(level, BoundaryCondition::Neumann).unwrap(),
            coeffs: Coefficients {
                a11: CoefFn::Const(4.0),
                a1: CoefFn::Sin2Pi(1.0),
                a0: CoefFn::zero(),
                lambda0: 4.0,
            },
            c0: 0.125,
            kernel,
            k0: None,
            t_end: 1.0,
            n_steps: 1 << (2 * level),
        }
    }

    #[test]
    fn single_dof_step() {
        // M = 1/3, A = 4, dt = 1/2: (M + dt A)² = 49/9, RHS = dt Q_h = 1/6
        let k = advdiff_step(
            &CovMatrix::zeros(1),
            &scalar(1.0 / 3.0),
            &scalar(4.0),
            &scalar(1.0 / 3.0),
            0.5,
            0.0,
        )
        .unwrap();
        assert!((k.matrix()[(0, 0)] - 3.0 / 98.0).abs() <= 1e-14);
    }

    #[test]
    fn noiseless_from_zero_stays_zero() {
        let m = DenseMatrix::identity(3, 3);
        let k = advdiff_step(&CovMatrix::zeros(3), &m, &m, &DenseMatrix::zeros(3, 3), 0.1, 0.2).unwrap();
        assert_eq!(max_abs(k.matrix()), 0.0);
    }

    #[test]
    fn pure_accumulation() {
        let prev = CovMatrix::new(DenseMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let q = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let dt = 0.37;
        let k = advdiff_step(
            &prev,
            &DenseMatrix::identity(2, 2),
            &DenseMatrix::zeros(2, 2),
            &q,
            dt,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(*k.matrix(), prev.matrix() + &q * dt, epsilon = 1e-15);
    }

    #[test]
    fn shape_errors() {
        let r = advdiff_step(&CovMatrix::zeros(2), &scalar(1.0), &scalar(1.0), &scalar(1.0), 0.1, 0.0);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn stepper_agrees_with_direct_step() {
        let cfg = neumann_config(3, KernelSpec::Exponential { scale: 2.0 });
        let mass = assemble_mass(&cfg.mesh);
        let form = assemble_form(&cfg.mesh, &cfg.coeffs, cfg.c0).unwrap();
        let q = assemble_q(&cfg.mesh, &cfg.kernel).unwrap();
        let dt = 0.05;
        let stepper = AdvDiffStepper::new(&mass, &form, &q, dt, cfg.c0).unwrap();
        let mut a = CovMatrix::zeros(cfg.mesh.n_dofs());
        let mut b = a.clone();
        for _ in 0..5 {
            a = stepper.step(&a);
            b = advdiff_step(&b, &mass, &form, &q, dt, cfg.c0).unwrap();
        }
        assert!(max_abs(&(a.matrix() - b.matrix())) <= 1e-12 * max_abs(b.matrix()));
    }

    #[test]
    fn powered_run_matches_stepping() {
        let mut cfg = neumann_config(4, KernelSpec::Exponential { scale: 2.0 });
        cfg.n_steps = 777;
        cfg.k0 = Some(CovMatrix::new(DenseMatrix::identity(17, 17) * 0.3).unwrap());
        let fast = advdiff_run(&cfg).unwrap();
        let slow = advdiff_run_observed(&cfg, |_, _| Ok(())).unwrap();
        assert!(max_abs(&(fast.matrix() - slow.matrix())) <= 1e-12 * max_abs(slow.matrix()));
    }

    #[test]
    fn single_step_run_is_one_step() {
        let mut cfg = neumann_config(2, KernelSpec::WhiteNoise);
        cfg.n_steps = 1;
        let run = advdiff_run(&cfg).unwrap();
        let mass = assemble_mass(&cfg.mesh);
        let form = assemble_form(&cfg.mesh, &cfg.coeffs, cfg.c0).unwrap();
        let step = advdiff_step(&CovMatrix::zeros(5), &mass, &form, &mass, 1.0, cfg.c0).unwrap();
        assert!(max_abs(&(run.matrix() - step.matrix())) <= 1e-13 * max_abs(step.matrix()));
    }

    #[test]
    fn invariants_hold_along_variable_coefficient_run() {
        let cfg = neumann_config(3, KernelSpec::WhiteNoise);
        let mass = assemble_mass(&cfg.mesh);
        let probe = InvariantProbe::new(&mass).unwrap();
        let root = psd_sqrt(&mass, PSD_TOL).unwrap();
        let mut rec = InvariantRecord::default();
        let mut last_trace = 0.0;
        advdiff_run_observed(&cfg, |_, k| {
            probe.check(k.matrix(), &mut rec)?;
            let tr = sandwich(&root, k.matrix()).trace();
            assert!(tr >= last_trace - 1e-15);
            last_trace = tr;
            Ok(())
        })
        .unwrap();
        assert_eq!(rec.checks, cfg.n_steps);
        assert!(rec.holds(), "{rec:?}");
    }

    #[test]
    fn halving_the_step_is_first_order_consistent() {
        // scalar model: M = 1/3, A = 4, white noise, run to T = 1
        let (m, a, q) = (scalar(1.0 / 3.0), scalar(4.0), scalar(1.0 / 3.0));
        let run = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut k = CovMatrix::zeros(1);
            for _ in 0..steps {
                k = advdiff_step(&k, &m, &a, &q, dt, 0.0).unwrap();
            }
            k.matrix()[(0, 0)]
        };
        let gaps: Vec<f64> = [80, 160, 320, 640]
            .iter()
            .map(|&n| (run(n) - run(2 * n)).abs())
            .collect();
        for w in gaps.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..2.3).contains(&ratio), "{gaps:?}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = neumann_config(2, KernelSpec::WhiteNoise);
        cfg.n_steps = 0;
        assert!(advdiff_run(&cfg).is_err());
        let mut cfg = neumann_config(2, KernelSpec::WhiteNoise);
        cfg.k0 = Some(CovMatrix::zeros(3));
        assert!(matches!(advdiff_run(&cfg), Err(Error::ShapeMismatch(_))));
        let mut cfg = neumann_config(2, KernelSpec::WhiteNoise);
        cfg.t_end = 4.0;
        cfg.n_steps = 2;
        assert!(advdiff_run(&cfg).is_err());
    }
}
