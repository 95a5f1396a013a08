//! Reference covariances in the Dirichlet eigenbasis `e_k = √2 sin(kπx)`,
//! `λ_k = (kπ)²`, where the mass matrix is the identity.
//!
//! The closed forms cover the unperturbed heat and wave equations with noise
//! diagonal in the eigenbasis. [`spectral_galerkin_cov`] handles the general
//! case: the operator is projected onto the leading modes and the resulting
//! Lyapunov equation `Σ' = DΣ + ΣDᵀ + Q` is integrated exactly in time
//! (Taylor series on a tiny step, then doubling and binary composition), so
//! the only error left is the mode truncation.
//!
//! Comparisons with finite element results happen on covariance functions
//! sampled on an [`EvalGrid`].

use std::f64::consts::{PI, SQRT_2};

use crate::advdiff::AdvDiffConfig;
use crate::cov::CovMatrix;
use crate::error::{Error, Result};
use crate::fem::{BoundaryCondition, Mesh1D};
use crate::kernels::{KernelSpec, PointKernel};
use crate::linalg::{block_diag, sandwich, symmetrize, CovFlow, DenseMatrix};
use crate::quadrature::composite;
use crate::wave::{GSpec, WaveConfig};

pub const MAX_MODES: usize = 256;
/// Oracle steps must be at least this much finer than compared runs.
pub const FINE_DT_RATIO: f64 = 16.0;
/// Taylor series are used on steps with `τ ‖D‖_F` at most this.
const TAYLOR_RADIUS: f64 = 0.1;
const TAYLOR_TERMS: usize = 14;
/// Panels used to project kernels onto the eigenbasis.
const NOISE_PANELS: usize = 256;
const NOISE_POINTS: usize = 4;
/// Points per panel when projecting the differential operator.
const DRIFT_POINTS: usize = 8;

pub fn eigenvalue(k: usize) -> f64 {
    let w = k as f64 * PI;
    w * w
}

pub fn eigenfunction(k: usize, x: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * x).sin()
}

fn eigenfunction_derivative(k: usize, x: f64) -> f64 {
    let w = k as f64 * PI;
    SQRT_2 * w * (w * x).cos()
}

fn check_modal_input(n_modes: usize, t: f64, q_diag: &[f64]) -> Result<()> {
    if q_diag.len() != n_modes {
        return Err(Error::ShapeMismatch(format!(
            "{} noise variances for {n_modes} modes",
            q_diag.len()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "final time must be finite and non-negative, got {t}"
        )));
    }
    Ok(())
}

/// Mode variances of the heat equation `dX = ΔX dt + dW`, `X(0) = 0`:
/// `q_k (1 - e^{-2λ_k T}) / (2λ_k)`.
pub fn heat_cov_closed_form(n_modes: usize, t: f64, q_diag: &[f64]) -> Result<Vec<f64>> {
    check_modal_input(n_modes, t, q_diag)?;
    Ok(q_diag
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let lam = eigenvalue(i + 1);
            -q * (-2.0 * lam * t).exp_m1() / (2.0 * lam)
        })
        .collect())
}

/// Position variances of the wave equation `Ü = ΔU + Ẇ` from rest:
/// `q_k (T/2 - sin(2√λ_k T) / (4√λ_k)) / λ_k`.
pub fn wave_cov_closed_form(n_modes: usize, t: f64, q_diag: &[f64]) -> Result<Vec<f64>> {
    check_modal_input(n_modes, t, q_diag)?;
    Ok(q_diag
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let w = (i + 1) as f64 * PI;
            q * (0.5 * t - (2.0 * w * t).sin() / (4.0 * w)) / (w * w)
        })
        .collect())
}

/// Eigenbasis variances of kernels that are diagonal there, if any.
pub fn diagonal_noise(kernel: &KernelSpec, n_modes: usize) -> Option<Vec<f64>> {
    match kernel {
        KernelSpec::WhiteNoise => Some(vec![1.0; n_modes]),
        // min(x, y) - xy is the Green's function of -d²/dx²
        KernelSpec::BrownianBridge => Some((1..=n_modes).map(|k| 1.0 / eigenvalue(k)).collect()),
        _ => None,
    }
}

/// Sample points and weights of a quadrature rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EvalGrid {
    pub fn new(panels: usize, points_per_panel: usize) -> Self {
        let (points, weights) = composite(0.0, 1.0, panels, points_per_panel);
        Self { points, weights }
    }

    /// 256 panels with 4 Gauss points each; panel edges line up with every
    /// dyadic mesh up to 256 cells.
    pub fn standard() -> Self {
        Self::new(256, 4)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `E[p, k] = e_{k+1}(x_p)`.
    pub fn eigen_basis(&self, n_modes: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.len(), n_modes, |p, k| eigenfunction(k + 1, self.points[p]))
    }

    /// Covariance function of finite element coefficients at the grid points.
    pub fn fem_covariance(&self, k: &CovMatrix, mesh: &Mesh1D) -> Result<DenseMatrix> {
        if k.dim() != mesh.n_dofs() {
            return Err(Error::ShapeMismatch(format!(
                "covariance is {0}x{0}, mesh has {1} dofs",
                k.dim(),
                mesh.n_dofs()
            )));
        }
        Ok(k.on_grid(&mesh.basis_matrix(&self.points)))
    }

    /// Covariance function of eigenbasis coefficients at the grid points.
    pub fn modal_covariance(&self, k: &DenseMatrix) -> Result<DenseMatrix> {
        if k.nrows() != k.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "modal covariance is {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(sandwich(&self.eigen_basis(k.nrows()), k))
    }

    pub fn diagonal_modal_covariance(&self, variances: &[f64]) -> DenseMatrix {
        let e = self.eigen_basis(variances.len());
        let mut scaled = e.clone();
        for (k, &v) in variances.iter().enumerate() {
            scaled.column_mut(k).scale_mut(v);
        }
        symmetrize(&scaled * e.transpose())
    }

    /// Weighted ℓ² norm approximating the `L²((0,1)²)` norm.
    pub fn l2_norm(&self, f: &DenseMatrix) -> Result<f64> {
        let n = self.len();
        if f.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "grid function is {}x{}, grid has {n} points",
                f.nrows(),
                f.ncols()
            )));
        }
        let mut s = 0.0;
        for j in 0..n {
            let wj = self.weights[j];
            for i in 0..n {
                s += self.weights[i] * wj * f[(i, j)] * f[(i, j)];
            }
        }
        Ok(s.sqrt())
    }

    pub fn l2_distance(&self, a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch("grid functions differ in shape".into()));
        }
        self.l2_norm(&(a - b))
    }
}

/// Problems the spectral integrator accepts.
#[derive(Debug, Clone, Copy)]
pub enum OracleProblem<'a> {
    AdvDiff(&'a AdvDiffConfig),
    Wave(&'a WaveConfig),
}

/// Truncated Taylor expansion of the flow of `Σ' = DΣ + ΣDᵀ + Q` over `τ`;
/// only valid for `τ ‖D‖ ≲ TAYLOR_RADIUS`.
fn taylor_flow(drift: &DenseMatrix, noise: &DenseMatrix, tau: f64) -> CovFlow {
    let n = drift.nrows();
    let mut phi = DenseMatrix::identity(n, n);
    let mut sigma = DenseMatrix::zeros(n, n);
    let mut power = DenseMatrix::identity(n, n);
    let mut lyap = noise.clone();
    let mut coef = 1.0;
    for term in 1..=TAYLOR_TERMS {
        coef *= tau / term as f64;
        power = drift * &power;
        phi += &power * coef;
        sigma += &lyap * coef;
        let next = drift * &lyap;
        lyap = &next + next.transpose();
    }
    CovFlow {
        phi,
        sigma: symmetrize(sigma),
    }
}

/// Exact flow over `steps * step`.
fn integrate(drift: &DenseMatrix, noise: &DenseMatrix, step: f64, steps: usize) -> CovFlow {
    let norm = drift.norm();
    let mut halvings = 0;
    let mut tau = step;
    while tau * norm > TAYLOR_RADIUS {
        tau *= 0.5;
        halvings += 1;
    }
    let mut base = taylor_flow(drift, noise, tau);
    for _ in 0..halvings {
        base = base.then(&base);
    }
    base.power(steps)
}

/// Coefficients of projecting finite element basis functions onto the
/// eigenbasis, `P[k, i] = ⟨e_k, φ_i⟩`.
fn fem_to_modes(mesh: &Mesh1D, n_modes: usize) -> DenseMatrix {
    let grid = EvalGrid::new(mesh.n_cells().max(NOISE_PANELS), DRIFT_POINTS);
    let mut e = grid.eigen_basis(n_modes);
    for (p, &w) in grid.weights.iter().enumerate() {
        e.row_mut(p).scale_mut(w);
    }
    e.transpose() * mesh.basis_matrix(&grid.points)
}

/// Kernel Gram matrix in the eigenbasis, `Q[k, l] = ∫∫ q(x, y) e_k(x) e_l(y)`.
fn modal_noise(kernel: &KernelSpec, n_modes: usize) -> Result<DenseMatrix> {
    if let Some(d) = diagonal_noise(kernel, n_modes) {
        return Ok(DenseMatrix::from_diagonal(&d.into()));
    }
    let point = PointKernel::new(kernel)?;
    let grid = EvalGrid::new(NOISE_PANELS.max(2 * n_modes), NOISE_POINTS);
    let n = grid.len();
    let kmat = DenseMatrix::from_fn(n, n, |i, j| {
        grid.weights[i] * grid.weights[j] * point.eval(grid.points[i], grid.points[j])
    });
    let e = grid.eigen_basis(n_modes);
    Ok(symmetrize(e.transpose() * kmat * e))
}

fn check_oracle_input(n_modes: usize, mesh: &Mesh1D, dt: f64, fine_dt: f64) -> Result<()> {
    if n_modes == 0 || n_modes > MAX_MODES {
        return Err(Error::InvalidConfig(format!(
            "mode count must lie in 1..={MAX_MODES}, got {n_modes}"
        )));
    }
    if mesh.bc() != BoundaryCondition::Dirichlet {
        return Err(Error::InvalidConfig(
            "the spectral oracle needs Dirichlet conditions".into(),
        ));
    }
    if !(fine_dt > 0.0) || fine_dt > dt / FINE_DT_RATIO * (1.0 + 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "oracle step {fine_dt} must be positive and at most dt/{FINE_DT_RATIO} = {}",
            dt / FINE_DT_RATIO
        )));
    }
    Ok(())
}

/// Splits `[0, T]` into whole steps no longer than `fine_dt`.
fn fine_steps(t: f64, fine_dt: f64) -> (f64, usize) {
    let steps = ((t / fine_dt) - 1e-9).ceil().max(1.0) as usize;
    (t / steps as f64, steps)
}

fn advdiff_drift(config: &AdvDiffConfig, n_modes: usize) -> DenseMatrix {
    // -a(e_l, e_k) + c0 δ_kl: the coercivity shift cancels against the
    // growth factor, so it never enters
    let cells = (4 * n_modes).max(64);
    let grid = EvalGrid::new(cells, DRIFT_POINTS);
    let n = grid.len();
    let e = grid.eigen_basis(n_modes);
    let de = DenseMatrix::from_fn(n, n_modes, |p, k| eigenfunction_derivative(k + 1, grid.points[p]));
    let weighted = |f: &dyn Fn(f64) -> f64, m: &DenseMatrix| {
        let mut out = m.clone();
        for p in 0..n {
            out.row_mut(p).scale_mut(grid.weights[p] * f(grid.points[p]));
        }
        out
    };
    let c = &config.coeffs;
    let mut form = weighted(&|x| c.a11.eval(x), &de).transpose() * &de;
    if !c.a1.is_zero() {
        form += weighted(&|x| c.a1.eval(x), &e).transpose() * &de;
    }
    if !c.a0.is_zero() {
        form += weighted(&|x| c.a0.eval(x), &e).transpose() * &e;
    }
    -form
}

/// Covariance coefficients in the eigenbasis at `T`, obtained by projecting
/// the problem onto `n_modes` modes and integrating the covariance equation
/// exactly. Wave results are `2n × 2n` in `[u; v]` order.
pub fn spectral_galerkin_cov(n_modes: usize, problem: OracleProblem<'_>, fine_dt: f64) -> Result<CovMatrix> {
    match problem {
        OracleProblem::AdvDiff(cfg) => {
            cfg.validate()?;
            check_oracle_input(n_modes, &cfg.mesh, cfg.dt(), fine_dt)?;
            let drift = advdiff_drift(cfg, n_modes);
            let noise = modal_noise(&cfg.kernel, n_modes)?;
            let k0 = match &cfg.k0 {
                Some(k0) => sandwich(&fem_to_modes(&cfg.mesh, n_modes), k0.matrix()),
                None => DenseMatrix::zeros(n_modes, n_modes),
            };
            let (step, steps) = fine_steps(cfg.t_end, fine_dt);
            let flow = integrate(&drift, &noise, step, steps);
            Ok(CovMatrix::from_symmetric(symmetrize(flow.apply(&k0))))
        }
        OracleProblem::Wave(cfg) => {
            cfg.validate()?;
            check_oracle_input(n_modes, &cfg.mesh, cfg.dt(), fine_dt)?;
            let n = n_modes;
            let q = modal_noise(&cfg.kernel, n)?;
            let g = match &cfg.g {
                GSpec::Zero => DenseMatrix::zeros(n, n),
                GSpec::MinusQ => -&q,
                GSpec::Custom(_) => {
                    return Err(Error::InvalidConfig(
                        "a mesh-specific G matrix cannot be projected onto the eigenbasis".into(),
                    ))
                }
            };
            // work in (Λ^{1/2} u, v) so the flow is close to orthogonal
            let root: Vec<f64> = (1..=n).map(|k| k as f64 * PI).collect();
            let mut drift = DenseMatrix::zeros(2 * n, 2 * n);
            for k in 0..n {
                drift[(k, n + k)] = root[k];
            }
            for k in 0..n {
                for l in 0..n {
                    let lap = if k == l { eigenvalue(k + 1) } else { 0.0 };
                    drift[(n + k, l)] = (g[(k, l)] - lap) / root[l];
                }
            }
            let noise = block_diag(&DenseMatrix::zeros(n, n), &q);
            let scale: Vec<f64> = root.iter().copied().chain(std::iter::repeat(1.0).take(n)).collect();
            let k0 = match &cfg.k0 {
                Some(k0) => {
                    let p = fem_to_modes(&cfg.mesh, n);
                    let k = sandwich(&block_diag(&p, &p), k0.matrix());
                    DenseMatrix::from_fn(2 * n, 2 * n, |i, j| scale[i] * scale[j] * k[(i, j)])
                }
                None => DenseMatrix::zeros(2 * n, 2 * n),
            };
            let (step, steps) = fine_steps(cfg.t_end, fine_dt);
            let flow = integrate(&drift, &noise, step, steps);
            let scaled = flow.apply(&k0);
            let k = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| scaled[(i, j)] / (scale[i] * scale[j]));
            Ok(CovMatrix::from_symmetric(symmetrize(k)))
        }
    }
}
