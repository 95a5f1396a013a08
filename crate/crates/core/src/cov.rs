//! Covariance coefficient matrices `K` with `Cov = Σ k_mn φ_m ⊗ φ_n`.

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs, psd_sqrt, sandwich, sym_eig, symmetrize, DenseMatrix, PSD_TOL};

/// Relative asymmetry a covariance coefficient matrix may carry.
pub const COV_SYMMETRY_TOL: f64 = 1e-12;
/// Relative negative eigenvalue accepted in the operator-PSD check.
pub const COV_PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DenseMatrix);

impl CovMatrix {
    /// Wraps a square matrix, symmetrising it after checking that it is
    /// symmetric to [`COV_SYMMETRY_TOL`].
    pub fn new(k: DenseMatrix) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "covariance matrix must be square, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        let scale = max_abs(&k);
        let asym = asymmetry(&k);
        if asym > COV_SYMMETRY_TOL * scale {
            return Err(Error::NonSymmetric { asymmetry: asym, scale });
        }
        Ok(Self(symmetrize(k)))
    }

    /// Trusted constructor for results of symmetric updates.
    pub(crate) fn from_symmetric(k: DenseMatrix) -> Self {
        debug_assert_eq!(k.nrows(), k.ncols());
        Self(k)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DenseMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    /// Covariance function on a grid: `B K Bᵀ` where `B[p, i] = φ_i(x_p)`.
    pub fn on_grid(&self, basis: &DenseMatrix) -> DenseMatrix {
        sandwich(basis, &self.0)
    }
}

/// Checks a covariance against the geometry given by a Gram matrix.
#[derive(Debug, Clone)]
pub struct InvariantProbe {
    gram_sqrt: DenseMatrix,
}

/// Worst values seen by an [`InvariantProbe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantRecord {
    pub checks: usize,
    /// max over checks of `max|K - Kᵀ| / max|K|`
    pub max_rel_asymmetry: f64,
    /// min over checks of `λ_min / λ_max` of `√G K √G` (0 when K = 0)
    pub min_rel_eigenvalue: f64,
}

impl Default for InvariantRecord {
    fn default() -> Self {
        Self {
            checks: 0,
            max_rel_asymmetry: 0.0,
            min_rel_eigenvalue: f64::INFINITY,
        }
    }
}

impl InvariantRecord {
    pub fn symmetric(&self) -> bool {
        self.max_rel_asymmetry <= COV_SYMMETRY_TOL
    }

    pub fn psd(&self) -> bool {
        self.min_rel_eigenvalue >= -COV_PSD_TOL
    }

    pub fn holds(&self) -> bool {
        self.symmetric() && self.psd()
    }
}

impl InvariantProbe {
    pub fn new(gram: &DenseMatrix) -> Result<Self> {
        Ok(Self {
            gram_sqrt: psd_sqrt(gram, PSD_TOL)?,
        })
    }

    pub fn check(&self, k: &DenseMatrix, record: &mut InvariantRecord) -> Result<()> {
        let scale = max_abs(k);
        record.checks += 1;
        if scale == 0.0 {
            record.min_rel_eigenvalue = record.min_rel_eigenvalue.min(0.0);
            return Ok(());
        }
        record.max_rel_asymmetry = record.max_rel_asymmetry.max(asymmetry(k) / scale);
        let w = sandwich(&self.gram_sqrt, k);
        let eig = sym_eig(&w)?;
        let top = eig.max().abs().max(f64::MIN_POSITIVE);
        record.min_rel_eigenvalue = record.min_rel_eigenvalue.min(eig.min() / top);
        Ok(())
    }
}
