//! Trace-class and Hilbert–Schmidt distances between covariance operators
//! stored on (possibly different) finite element meshes.
//!
//! With the concatenated basis `ψ = [φ^h; φ^{h'}]` and its Gram matrix
//! `N = [[M_h, M_{h,h'}], [M_{h',h}, M_{h'}]]`, the difference operator has
//! coefficient matrix `D = blockdiag(K, -K')`; its nonzero eigenvalues are
//! those of `√N D √N`. `N` is singular for nested meshes. Its numerically
//! null eigenvalues are dropped before taking the root, since `√(1e-17)`
//! would otherwise leak `O(1e-9)` into the spectrum.

use crate::cov::CovMatrix;
use crate::error::{Error, Result};
use crate::fem::{assemble_mass, cross_mass, Mesh1D};
use crate::linalg::{block2, block_diag, sandwich, sym_eig, DenseMatrix, PSD_TOL};

/// Relative slack before a negative squared HS distance is an error.
pub const HS_NEGATIVE_TOL: f64 = 1e-10;
/// Joint Gram eigenvalues below this fraction of the largest are treated as null.
const GRAM_NULL_TOL: f64 = 1e-12;

fn check_dims(k: &CovMatrix, mesh: &Mesh1D, what: &str) -> Result<()> {
    if k.dim() != mesh.n_dofs() {
        return Err(Error::ShapeMismatch(format!(
            "{what} covariance is {0}x{0} but its mesh has {1} dofs",
            k.dim(),
            mesh.n_dofs()
        )));
    }
    Ok(())
}

/// Precomputed Gram matrices for comparing covariances on two fixed meshes.
#[derive(Debug, Clone)]
pub struct ErrorGeometry {
    mesh: Mesh1D,
    mesh_ref: Mesh1D,
    mass: DenseMatrix,
    mass_ref: DenseMatrix,
    cross: DenseMatrix,
    joint_sqrt: DenseMatrix,
}

impl ErrorGeometry {
    pub fn new(mesh: &Mesh1D, mesh_ref: &Mesh1D) -> Result<Self> {
        let cross = cross_mass(mesh, mesh_ref)?;
        let mass = assemble_mass(mesh);
        let mass_ref = assemble_mass(mesh_ref);
        let joint = block2(&mass, &cross, &cross.transpose(), &mass_ref);
        let eig = sym_eig(&joint)?;
        let top = eig.max();
        if eig.min() < -PSD_TOL * top {
            return Err(Error::NotPsd {
                eigenvalue: eig.min(),
                threshold: -PSD_TOL * top,
            });
        }
        let joint_sqrt = eig.map_spectrum(|l| if l > GRAM_NULL_TOL * top { l.sqrt() } else { 0.0 });
        Ok(Self {
            mesh: *mesh,
            mesh_ref: *mesh_ref,
            mass,
            mass_ref,
            cross,
            joint_sqrt,
        })
    }

    /// `Σ |eig(√N blockdiag(K, -K') √N)|`.
    pub fn trace_norm(&self, k: &CovMatrix, k_ref: &CovMatrix) -> Result<f64> {
        check_dims(k, &self.mesh, "first")?;
        check_dims(k_ref, &self.mesh_ref, "reference")?;
        let d = block_diag(k.matrix(), &-k_ref.matrix());
        let w = sandwich(&self.joint_sqrt, &d);
        Ok(sym_eig(&w)?.eigenvalues.iter().map(|l| l.abs()).sum())
    }

    /// `sqrt(tr((K M)²) - 2 tr(K M_{h,h'} K' M_{h',h}) + tr((K' M')²))`.
    pub fn hs_norm(&self, k: &CovMatrix, k_ref: &CovMatrix) -> Result<f64> {
        check_dims(k, &self.mesh, "first")?;
        check_dims(k_ref, &self.mesh_ref, "reference")?;
        let km = k.matrix() * &self.mass;
        let krm = k_ref.matrix() * &self.mass_ref;
        let first = trace_of_product(&km, &km);
        let last = trace_of_product(&krm, &krm);
        let left = k.matrix() * &self.cross;
        let right = k_ref.matrix() * self.cross.transpose();
        let middle = trace_of_product(&left, &right);
        let value = first - 2.0 * middle + last;
        let leading = first.abs().max(last.abs());
        if value < -HS_NEGATIVE_TOL * leading {
            return Err(Error::NegativeSquare { value, leading });
        }
        Ok(value.max(0.0).sqrt())
    }
}

/// `tr(A B)` without forming the product.
fn trace_of_product(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

pub fn err_trace_norm(k: &CovMatrix, mesh: &Mesh1D, k_ref: &CovMatrix, mesh_ref: &Mesh1D) -> Result<f64> {
    ErrorGeometry::new(mesh, mesh_ref)?.trace_norm(k, k_ref)
}

pub fn err_hs_norm(k: &CovMatrix, mesh: &Mesh1D, k_ref: &CovMatrix, mesh_ref: &Mesh1D) -> Result<f64> {
    ErrorGeometry::new(mesh, mesh_ref)?.hs_norm(k, k_ref)
}
