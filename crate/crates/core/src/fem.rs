//! Piecewise-linear finite elements on uniform partitions of (0, 1).
//!
//! Matrix convention: row `i` is the test function, column `j` the trial
//! function, so `form[(i, j)] = a(φ_j, φ_i)` and the Galerkin system for
//! `u_h = Σ x_j φ_j` reads `M ẋ + A x = …`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::quadrature::GaussLegendre;

/// Gauss points per cell for variable-coefficient integrals.
pub const FORM_QUADRATURE_POINTS: usize = 8;
/// Grid size used to estimate `sup`/`inf` of coefficient functions.
pub const COEFFICIENT_SAMPLES: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    /// Homogeneous Dirichlet; boundary nodes are eliminated.
    Dirichlet,
    /// Homogeneous Neumann; every node carries a degree of freedom.
    Neumann,
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(Self::Dirichlet),
            "neumann" => Ok(Self::Neumann),
            other => Err(Error::InvalidConfig(format!("unknown boundary condition {other:?}"))),
        }
    }
}

/// Uniform mesh of (0, 1) with `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mesh1D {
    n_cells: usize,
    bc: BoundaryCondition,
}

impl Mesh1D {
    pub fn new(n_cells: usize, bc: BoundaryCondition) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidMesh(format!("need at least 2 cells, got {n_cells}")));
        }
        Ok(Self { n_cells, bc })
    }

    /// Mesh with width `2^-level`.
    pub fn dyadic(level: u32, bc: BoundaryCondition) -> Result<Self> {
        if level == 0 || level > 24 {
            return Err(Error::InvalidMesh(format!("dyadic level {level} out of range 1..=24")));
        }
        Self::new(1usize << level, bc)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn n_dofs(&self) -> usize {
        match self.bc {
            BoundaryCondition::Dirichlet => self.n_cells - 1,
            BoundaryCondition::Neumann => self.n_cells + 1,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_cells as f64
    }

    /// Degree of freedom attached to mesh node `node`, if any.
    pub fn node_dof(&self, node: usize) -> Option<usize> {
        match self.bc {
            BoundaryCondition::Neumann => Some(node),
            BoundaryCondition::Dirichlet if node == 0 || node == self.n_cells => None,
            BoundaryCondition::Dirichlet => Some(node - 1),
        }
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        match self.bc {
            BoundaryCondition::Neumann => dof,
            BoundaryCondition::Dirichlet => dof + 1,
        }
    }

    /// Node coordinates of all degrees of freedom.
    pub fn dof_coordinates(&self) -> Vec<f64> {
        (0..self.n_dofs()).map(|d| self.node(self.dof_node(d))).collect()
    }

    /// Cell containing `x` (the right cell at interior nodes, clamped to the domain).
    pub fn cell_of(&self, x: f64) -> usize {
        let c = (x * self.n_cells as f64).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.n_cells - 1)
        }
    }

    /// Non-zero basis functions at `x` as `(dof, value)` pairs.
    pub fn basis_at(&self, x: f64) -> impl Iterator<Item = (usize, f64)> {
        let c = self.cell_of(x);
        let s = (x - self.node(c)) * self.n_cells as f64;
        let left = self.node_dof(c).map(|d| (d, 1.0 - s));
        let right = self.node_dof(c + 1).map(|d| (d, s));
        left.into_iter().chain(right)
    }

    /// `B[p, i] = φ_i(xs[p])`.
    pub fn basis_matrix(&self, xs: &[f64]) -> DenseMatrix {
        let mut b = DenseMatrix::zeros(xs.len(), self.n_dofs());
        for (p, &x) in xs.iter().enumerate() {
            for (d, v) in self.basis_at(x) {
                b[(p, d)] += v;
            }
        }
        b
    }

    /// Evaluates `Σ coeffs_i φ_i(x)`.
    pub fn eval(&self, coeffs: &DVector<f64>, x: f64) -> f64 {
        self.basis_at(x).map(|(d, v)| coeffs[d] * v).sum()
    }
}

/// Scalar coefficient function selected from a small catalogue.
#[derive(Clone)]
pub enum CoefFn {
    Const(f64),
    /// `amplitude * sin(2πx)`
    Sin2Pi(f64),
    /// `amplitude * cos(2πx)`
    Cos2Pi(f64),
    /// `intercept + slope * x`
    Affine {
        intercept: f64,
        slope: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl CoefFn {
    pub fn zero() -> Self {
        CoefFn::Const(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CoefFn::Const(c) => *c,
            CoefFn::Sin2Pi(a) => a * (2.0 * PI * x).sin(),
            CoefFn::Cos2Pi(a) => a * (2.0 * PI * x).cos(),
            CoefFn::Affine { intercept, slope } => intercept + slope * x,
            CoefFn::Custom(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CoefFn::Const(c) if *c == 0.0)
            || matches!(self, CoefFn::Sin2Pi(a) | CoefFn::Cos2Pi(a) if *a == 0.0)
            || matches!(self, CoefFn::Affine { intercept, slope } if *intercept == 0.0 && *slope == 0.0)
    }

    fn sampled(&self) -> impl Iterator<Item = f64> + '_ {
        let n = COEFFICIENT_SAMPLES - 1;
        (0..=n).map(move |i| self.eval(i as f64 / n as f64))
    }
}

impl fmt::Debug for CoefFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefFn::Const(c) => write!(f, "const:{c}"),
            CoefFn::Sin2Pi(a) => write!(f, "{a}*sin2pix"),
            CoefFn::Cos2Pi(a) => write!(f, "{a}*cos2pix"),
            CoefFn::Affine { intercept, slope } => write!(f, "affine:{intercept}:{slope}"),
            CoefFn::Custom(_) => f.write_str("custom"),
        }
    }
}

/// Parses catalogue names: `const:<c>`, `zero`, `sin2pix`, `cos2pix`,
/// `sin2pix:<amp>`, `cos2pix:<amp>`, `affine:<intercept>:<slope>`.
impl FromStr for CoefFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("unknown coefficient function {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or("").to_ascii_lowercase();
        let rest: Vec<&str> = parts.collect();
        match (head.as_str(), rest.as_slice()) {
            ("zero", []) => Ok(CoefFn::zero()),
            ("const", [c]) => Ok(CoefFn::Const(num(c)?)),
            ("sin2pix", []) => Ok(CoefFn::Sin2Pi(1.0)),
            ("sin2pix", [a]) => Ok(CoefFn::Sin2Pi(num(a)?)),
            ("cos2pix", []) => Ok(CoefFn::Cos2Pi(1.0)),
            ("cos2pix", [a]) => Ok(CoefFn::Cos2Pi(num(a)?)),
            ("affine", [i, k]) => Ok(CoefFn::Affine {
                intercept: num(i)?,
                slope: num(k)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Coefficients of `-(a11 u')' + a1 u' + a0 u` with ellipticity bound `lambda0`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a11: CoefFn,
    pub a1: CoefFn,
    pub a0: CoefFn,
    pub lambda0: f64,
}

impl Coefficients {
    /// The plain heat operator `-u''`.
    pub fn heat() -> Self {
        Self {
            a11: CoefFn::Const(1.0),
            a1: CoefFn::zero(),
            a0: CoefFn::zero(),
            lambda0: 1.0,
        }
    }

    fn check_ellipticity(&self, x: f64) -> Result<f64> {
        let v = self.a11.eval(x);
        if !(v >= self.lambda0) {
            return Err(Error::EllipticityViolated {
                x,
                value: v,
                lambda0: self.lambda0,
            });
        }
        Ok(v)
    }
}

/// Coercivity shift `sup|a1| / (4 λ0 ε) - inf a0`, with sup/inf taken over a
/// uniform grid of [`COEFFICIENT_SAMPLES`] points.
pub fn compute_c0(coeffs: &Coefficients, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(coeffs.lambda0 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda0 must be positive, got {}",
            coeffs.lambda0
        )));
    }
    let sup_a1 = coeffs.a1.sampled().fold(0.0_f64, |m, v| m.max(v.abs()));
    let inf_a0 = coeffs.a0.sampled().fold(f64::INFINITY, f64::min);
    Ok(sup_a1 / (4.0 * coeffs.lambda0 * epsilon) - inf_a0)
}

/// `∫ f g` over a segment of length `len` for linear `f`, `g` given by their
/// end values.
#[inline]
fn segment_product(len: f64, fa: f64, fb: f64, ga: f64, gb: f64) -> f64 {
    len / 6.0 * (2.0 * fa * ga + fa * gb + fb * ga + 2.0 * fb * gb)
}

const LOCAL: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

/// Mass matrix `M[i, j] = ⟨φ_i, φ_j⟩`.
pub fn assemble_mass(mesh: &Mesh1D) -> DenseMatrix {
    let n = mesh.n_dofs();
    let h = mesh.h();
    let mut m = DenseMatrix::zeros(n, n);
    for c in 0..mesh.n_cells() {
        for (alpha, va) in LOCAL.iter().enumerate() {
            let Some(i) = mesh.node_dof(c + alpha) else {
                continue;
            };
            for (beta, vb) in LOCAL.iter().enumerate() {
                let Some(j) = mesh.node_dof(c + beta) else {
                    continue;
                };
                m[(i, j)] += segment_product(h, va[0], va[1], vb[0], vb[1]);
            }
        }
    }
    m
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Gram matrix `G[i, j] = ⟨φ^a_i, φ^b_j⟩` between the hat bases of two meshes.
///
/// Integration is exact: both meshes are refined to their common uniform
/// partition and each piece is a product of two linear functions.
pub fn cross_mass(a: &Mesh1D, b: &Mesh1D) -> Result<DenseMatrix> {
    if a.bc() != b.bc() {
        return Err(Error::MismatchedBc);
    }
    let (na, nb) = (a.n_cells(), b.n_cells());
    let common = na / gcd(na, nb) * nb;
    let (ra, rb) = (common / na, common / nb);
    let len = 1.0 / common as f64;
    let mut g = DenseMatrix::zeros(a.n_dofs(), b.n_dofs());
    for k in 0..common {
        let (ca, cb) = (k / ra, k / rb);
        // local coordinates of the piece's end points within each cell
        let sa = [(k - ca * ra) as f64 / ra as f64, (k + 1 - ca * ra) as f64 / ra as f64];
        let sb = [(k - cb * rb) as f64 / rb as f64, (k + 1 - cb * rb) as f64 / rb as f64];
        let psi = |alpha: usize, s: f64| if alpha == 0 { 1.0 - s } else { s };
        for alpha in 0..2 {
            let Some(i) = a.node_dof(ca + alpha) else {
                continue;
            };
            for beta in 0..2 {
                let Some(j) = b.node_dof(cb + beta) else {
                    continue;
                };
                g[(i, j)] += segment_product(
                    len,
                    psi(alpha, sa[0]),
                    psi(alpha, sa[1]),
                    psi(beta, sb[0]),
                    psi(beta, sb[1]),
                );
            }
        }
    }
    Ok(g)
}

/// Stiffness matrix of the Laplacian, `S[i, j] = ⟨φ_j', φ_i'⟩`.
pub fn assemble_laplacian(mesh: &Mesh1D) -> DenseMatrix {
    let n = mesh.n_dofs();
    let inv_h = mesh.n_cells() as f64;
    let mut s = DenseMatrix::zeros(n, n);
    for c in 0..mesh.n_cells() {
        for alpha in 0..2 {
            let Some(i) = mesh.node_dof(c + alpha) else {
                continue;
            };
            for beta in 0..2 {
                let Some(j) = mesh.node_dof(c + beta) else {
                    continue;
                };
                s[(i, j)] += if alpha == beta { inv_h } else { -inv_h };
            }
        }
    }
    s
}

/// Matrix of `a(u, v) = ∫ a11 u'v' + a1 u' v + a0 u v dx + c0 ⟨u, v⟩` with
/// `form[(i, j)] = a(φ_j, φ_i)`.
pub fn assemble_form(mesh: &Mesh1D, coeffs: &Coefficients, c0: f64) -> Result<DenseMatrix> {
    let n = mesh.n_dofs();
    let h = mesh.h();
    let rule = GaussLegendre::new(FORM_QUADRATURE_POINTS);
    let mut a = DenseMatrix::zeros(n, n);
    let dpsi = [-1.0 / h, 1.0 / h];
    for c in 0..mesh.n_cells() {
        let x0 = mesh.node(c);
        let x1 = mesh.node(c + 1);
        let mut local = [[0.0; 2]; 2];
        for (x, w) in rule.on(x0, x1) {
            let a11 = coeffs.check_ellipticity(x)?;
            let a1 = coeffs.a1.eval(x);
            let a0 = coeffs.a0.eval(x);
            let s = (x - x0) / h;
            let psi = [1.0 - s, s];
            for test in 0..2 {
                for trial in 0..2 {
                    local[test][trial] += w
                        * (a11 * dpsi[trial] * dpsi[test] + a1 * dpsi[trial] * psi[test] + a0 * psi[trial] * psi[test]);
                }
            }
        }
        for test in 0..2 {
            let Some(i) = mesh.node_dof(c + test) else {
                continue;
            };
            for trial in 0..2 {
                let Some(j) = mesh.node_dof(c + trial) else {
                    continue;
                };
                let shift = c0 * segment_product(h, LOCAL[test][0], LOCAL[test][1], LOCAL[trial][0], LOCAL[trial][1]);
                a[(i, j)] += local[test][trial] + shift;
            }
        }
    }
    Ok(a)
}

/// Mass and form matrix of an advection–diffusion discretisation.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub mass: DenseMatrix,
    pub form: DenseMatrix,
}

impl FemMatrices {
    pub fn assemble(mesh: &Mesh1D, coeffs: &Coefficients, c0: f64) -> Result<Self> {
        Ok(Self {
            mass: assemble_mass(mesh),
            form: assemble_form(mesh, coeffs, c0)?,
        })
    }
}
