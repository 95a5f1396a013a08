//! Dense matrix primitives shared by the covariance recursions.
//!
//! Storage is plain column-major [`nalgebra::DMatrix`]. Every routine here is
//! a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Default relative clamp for [`psd_sqrt`].
pub const PSD_TOL: f64 = 1e-10;
/// Relative pivot floor for LU factorisations.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Largest absolute entry, `0` for an empty matrix.
pub fn max_abs(a: &DenseMatrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `max |A - Aᵀ|`.
pub fn asymmetry(a: &DenseMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..a.ncols().min(n) {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Replaces `a` by `(a + aᵀ) / 2` in place.
pub fn symmetrize_mut(a: &mut DenseMatrix) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetrize needs a square matrix");
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn symmetrize(mut a: DenseMatrix) -> DenseMatrix {
    symmetrize_mut(&mut a);
    a
}

fn ensure_square(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    /// Columns are the orthonormal eigenvectors, ordered like `eigenvalues`.
    pub eigenvectors: DenseMatrix,
}

impl SymEig {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        symmetrize(&scaled * self.eigenvectors.transpose())
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.map_spectrum(|l| l)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    ensure_square(a, "sym_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEig {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DenseMatrix::zeros(0, 0),
        });
    }
    let scale = max_abs(a);
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NonSymmetric { asymmetry: asym, scale });
    }
    let eig =
        SymmetricEigen::try_new(symmetrize(a.clone()), f64::EPSILON, 100 * n.max(10)).ok_or(Error::NoConvergence)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = DenseMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues down to `-tol * max(1, λ_max)` are clamped to zero; anything
/// more negative is rejected.
pub fn psd_sqrt(a: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    let eig = sym_eig(a)?;
    check_psd(&eig, tol)?;
    Ok(eig.map_spectrum(|l| l.max(0.0).sqrt()))
}

fn check_psd(eig: &SymEig, tol: f64) -> Result<()> {
    if eig.eigenvalues.is_empty() {
        return Ok(());
    }
    let threshold = -tol * eig.max().max(1.0);
    let lo = eig.min();
    if lo < threshold {
        return Err(Error::NotPsd {
            eigenvalue: lo,
            threshold,
        });
    }
    Ok(())
}

/// LU factorisation with partial pivoting and an explicit pivot floor.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        ensure_square(a, "LU input")?;
        let n = a.nrows();
        let floor = PIVOT_FLOOR * max_abs(a);
        let lu = LU::new(a.clone());
        let u = lu.u();
        for k in 0..n {
            let pivot = u[(k, k)].abs();
            if !(pivot >= floor) || pivot == 0.0 {
                return Err(Error::Singular { pivot, floor });
            }
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.nrows() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.nrows(),
                self.n,
                self.n
            )));
        }
        let mut x = b.clone();
        if !self.lu.solve_mut(&mut x) {
            return Err(Error::Singular { pivot: 0.0, floor: 0.0 });
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        // pivots were validated at construction
        self.lu.solve_mut(&mut x);
        x
    }

    /// `A⁻¹ B A⁻ᵀ`, symmetrised.
    pub fn congruence(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let y = self.solve(b)?;
        let x = self.solve(&y.transpose())?;
        Ok(symmetrize(x.transpose()))
    }

    /// `(sign, ln|det A|)`.
    pub fn log_det(&self) -> (f64, f64) {
        let u = self.lu.u();
        let mut sign = if self.lu.p().determinant::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        };
        let mut log = 0.0;
        for k in 0..self.n {
            let d = u[(k, k)];
            if d < 0.0 {
                sign = -sign;
            }
            log += d.abs().ln();
        }
        (sign, log)
    }
}

/// Solves `L X Lᵀ = RHS` for `X`.
pub fn congruence_solve(l: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_square(rhs, "congruence right-hand side")?;
    if l.nrows() != rhs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "L is {}x{}, RHS is {}x{}",
            l.nrows(),
            l.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    LuFactor::new(l)?.congruence(rhs)
}

/// Relative jitter ladder tried by [`cholesky_with_jitter`].
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

/// Lower Cholesky factor of a symmetric PSD matrix, adding
/// `jitter * trace / n` to the diagonal when the plain factorisation fails.
pub fn cholesky_with_jitter(a: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_square(a, "Cholesky input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let mean_diag = (a.trace() / n as f64).abs();
    if mean_diag == 0.0 && max_abs(a) == 0.0 {
        return Ok(DenseMatrix::zeros(n, n));
    }
    let sym = symmetrize(a.clone());
    for &rel in JITTER_LADDER.iter() {
        let mut trial = sym.clone();
        let shift = rel * mean_diag;
        for i in 0..n {
            trial[(i, i)] += shift;
        }
        if let Some(ch) = trial.cholesky() {
            return Ok(ch.unpack());
        }
    }
    Err(Error::CholeskyFailure {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Builds the 2x2 block matrix `[[a, b], [c, d]]`.
pub fn block2(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix, d: &DenseMatrix) -> DenseMatrix {
    let (r0, c0) = a.shape();
    let (r1, c1) = d.shape();
    assert_eq!(b.shape(), (r0, c1));
    assert_eq!(c.shape(), (r1, c0));
    let mut out = DenseMatrix::zeros(r0 + r1, c0 + c1);
    out.view_mut((0, 0), (r0, c0)).copy_from(a);
    out.view_mut((0, c0), (r0, c1)).copy_from(b);
    out.view_mut((r0, 0), (r1, c0)).copy_from(c);
    out.view_mut((r0, c0), (r1, c1)).copy_from(d);
    out
}

pub fn block_diag(a: &DenseMatrix, d: &DenseMatrix) -> DenseMatrix {
    block2(
        a,
        &DenseMatrix::zeros(a.nrows(), d.ncols()),
        &DenseMatrix::zeros(d.nrows(), a.ncols()),
        d,
    )
}

/// `T K Tᵀ`, symmetrised.
pub fn sandwich(t: &DenseMatrix, k: &DenseMatrix) -> DenseMatrix {
    let tk = t * k;
    symmetrize(&tk * t.transpose())
}

/// Affine covariance map `K ↦ Φ K Φᵀ + Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFlow {
    pub phi: DenseMatrix,
    pub sigma: DenseMatrix,
}

impl CovFlow {
    pub fn identity(n: usize) -> Self {
        Self {
            phi: DenseMatrix::identity(n, n),
            sigma: DenseMatrix::zeros(n, n),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            phi: &next.phi * &self.phi,
            sigma: sandwich(&next.phi, &self.sigma) + &next.sigma,
        }
    }

    /// `n`-fold composition by repeated squaring.
    pub fn power(&self, mut n: usize) -> Self {
        let mut total = Self::identity(self.phi.nrows());
        let mut base = self.clone();
        while n > 0 {
            if n & 1 == 1 {
                total = total.then(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.then(&base);
            }
        }
        total
    }

    pub fn apply(&self, k: &DenseMatrix) -> DenseMatrix {
        sandwich(&self.phi, k) + &self.sigma
    }
}
