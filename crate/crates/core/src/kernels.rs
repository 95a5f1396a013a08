//! Covariance kernels of the driving noise and their Gram matrices
//! `Q_h[i, j] = ⟨Q φ_i, φ_j⟩`.

use std::fmt;
use std::sync::Arc;

use crate::bessel::{bessel_k, gamma};
use crate::error::{Error, Result};
use crate::fem::{assemble_mass, Mesh1D};
use crate::linalg::DenseMatrix;
use crate::quadrature::GaussLegendre;

/// Tensor Gauss points per direction for well-separated cell pairs.
pub const FAR_FIELD_POINTS: usize = 6;

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelSpec {
    /// `Q = I`; no pointwise kernel.
    WhiteNoise,
    /// `exp(-scale |x - y|)`
    Exponential { scale: f64 },
    /// `σ² 2^{1-ν}/Γ(ν) (√(2ν) z/ρ)^ν K_ν(√(2ν) z/ρ)` with `z = |x - y|`.
    Matern { sigma: f64, nu: f64, rho: f64 },
    /// `min(x, y) - x y`
    BrownianBridge,
    /// Symmetric user kernel.
    Custom(KernelFn),
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::WhiteNoise => f.write_str("WhiteNoise"),
            KernelSpec::Exponential { scale } => write!(f, "Exponential({scale})"),
            KernelSpec::Matern { sigma, nu, rho } => {
                write!(f, "Matern(sigma={sigma}, nu={nu}, rho={rho})")
            }
            KernelSpec::BrownianBridge => f.write_str("BrownianBridge"),
            KernelSpec::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match self {
            KernelSpec::Exponential { scale } => positive("scale", *scale),
            KernelSpec::Matern { sigma, nu, rho } => {
                positive("sigma", *sigma)?;
                positive("nu", *nu)?;
                positive("rho", *rho)
            }
            _ => Ok(()),
        }
    }

    pub fn is_white(&self) -> bool {
        matches!(self, KernelSpec::WhiteNoise)
    }
}

/// A validated kernel with any constants precomputed.
#[derive(Clone)]
pub(crate) enum PointKernel {
    Exponential(f64),
    Matern {
        sigma2: f64,
        nu: f64,
        scale: f64,
        prefactor: f64,
    },
    BrownianBridge,
    Custom(KernelFn),
}

impl PointKernel {
    pub(crate) fn new(spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            KernelSpec::WhiteNoise => return Err(Error::NoPointwiseKernel),
            KernelSpec::Exponential { scale } => PointKernel::Exponential(*scale),
            KernelSpec::Matern { sigma, nu, rho } => PointKernel::Matern {
                sigma2: sigma * sigma,
                nu: *nu,
                scale: (2.0 * nu).sqrt() / rho,
                prefactor: sigma * sigma * 2f64.powf(1.0 - nu) / gamma(*nu),
            },
            KernelSpec::BrownianBridge => PointKernel::BrownianBridge,
            KernelSpec::Custom(f) => PointKernel::Custom(f.clone()),
        })
    }

    #[inline]
    pub(crate) fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            PointKernel::Exponential(s) => (-s * (x - y).abs()).exp(),
            PointKernel::Matern {
                sigma2,
                nu,
                scale,
                prefactor,
            } => {
                let arg = scale * (x - y).abs();
                if arg == 0.0 {
                    *sigma2
                } else {
                    prefactor * arg.powf(*nu) * bessel_k(*nu, arg)
                }
            }
            PointKernel::BrownianBridge => x.min(y) - x * y,
            PointKernel::Custom(f) => f(x, y),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: f64, y: f64) -> Result<f64> {
    Ok(PointKernel::new(spec)?.eval(x, y))
}

/// Composite rule on `[0, 1]` with geometrically graded panels towards 0,
/// for integrands with a weak singularity at the origin.
fn graded_rule(levels: usize, ratio: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let gl = GaussLegendre::new(points);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    let mut hi = 1.0;
    for level in 0..=levels {
        let lo = if level == levels { 0.0 } else { hi * ratio };
        for (x, w) in gl.on(lo, hi) {
            xs.push(x);
            ws.push(w);
        }
        hi = lo;
    }
    (xs, ws)
}

struct GramRules {
    far: GaussLegendre,
    /// along the distance-to-diagonal direction of a diagonal cell
    near_t: (Vec<f64>, Vec<f64>),
    /// along the radial direction of a diagonal cell / both directions of a
    /// corner-touching pair
    near_s: (Vec<f64>, Vec<f64>),
}

impl GramRules {
    fn new() -> Self {
        Self {
            far: GaussLegendre::new(FAR_FIELD_POINTS),
            near_t: graded_rule(12, 0.2, FAR_FIELD_POINTS),
            near_s: graded_rule(6, 0.15, FAR_FIELD_POINTS),
        }
    }
}

/// `L[α][β] = ∫_{cell c} ∫_{cell d} q(x, y) ψ_α(x) ψ_β(y)` with local hats
/// `ψ_0 = 1 - s`, `ψ_1 = s`.
fn local_block(k: &PointKernel, rules: &GramRules, mesh: &Mesh1D, c: usize, d: usize) -> [[f64; 2]; 2] {
    let h = mesh.h();
    let xa = mesh.node(c);
    let ya = mesh.node(d);
    let mut out = [[0.0; 2]; 2];
    let mut add = |sx: f64, sy: f64, w: f64| {
        let q = w * k.eval(xa + h * sx, ya + h * sy);
        let px = [1.0 - sx, sx];
        let py = [1.0 - sy, sy];
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] += q * px[a] * py[b];
            }
        }
    };
    if c == d {
        // lower triangle {x < y}: y = s, x = s (1 - t), Jacobian s; the upper
        // triangle follows from symmetry of q
        let (ts, tw) = &rules.near_t;
        let (ss, sw) = &rules.near_s;
        for (&s, &ws) in ss.iter().zip(sw) {
            for (&t, &wt) in ts.iter().zip(tw) {
                add(s * (1.0 - t), s, ws * wt * s);
            }
        }
        let lower = out;
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] = lower[a][b] + lower[b][a];
            }
        }
    } else if d == c + 1 || c == d + 1 {
        // distances u, v from the shared node
        let (us, uw) = &rules.near_s;
        type Map = fn(f64) -> f64;
        let (x_of, y_of): (Map, Map) = if d == c + 1 {
            (|u| 1.0 - u, |v| v)
        } else {
            (|u| u, |v| 1.0 - v)
        };
        for (&u, &wu) in us.iter().zip(uw) {
            for (&v, &wv) in us.iter().zip(uw) {
                add(x_of(u), y_of(v), wu * wv);
            }
        }
    } else {
        let far = &rules.far;
        for (&sx, &wx) in far.nodes.iter().zip(&far.weights) {
            for (&sy, &wy) in far.nodes.iter().zip(&far.weights) {
                add(0.5 * (sx + 1.0), 0.5 * (sy + 1.0), 0.25 * wx * wy);
            }
        }
    }
    let jac = h * h;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= jac;
        }
    }
    out
}

/// Gram matrix of the noise covariance operator in the hat basis.
///
/// White noise gives the mass matrix. Kernel operators use tensor
/// Gauss–Legendre quadrature per cell pair; cells that touch the diagonal
/// `x = y`, where the kernels lose smoothness, get graded rules in
/// coordinates aligned with the diagonal.
pub fn assemble_q(mesh: &Mesh1D, spec: &KernelSpec) -> Result<DenseMatrix> {
    if spec.is_white() {
        return Ok(assemble_mass(mesh));
    }
    let kernel = PointKernel::new(spec)?;
    let rules = GramRules::new();
    let n = mesh.n_dofs();
    let mut q = DenseMatrix::zeros(n, n);
    for c in 0..mesh.n_cells() {
        for d in c..mesh.n_cells() {
            let block = local_block(&kernel, &rules, mesh, c, d);
            for (a, row) in block.iter().enumerate() {
                let Some(i) = mesh.node_dof(c + a) else {
                    continue;
                };
                for (b, &v) in row.iter().enumerate() {
                    let Some(j) = mesh.node_dof(d + b) else {
                        continue;
                    };
                    q[(i, j)] += v;
                    if c != d {
                        q[(j, i)] += v;
                    }
                }
            }
        }
    }
    Ok(q)
}
