//! Fixtures shared by the benchmarks.

use spde_cov_core::{AdvDiffConfig, BoundaryCondition, CoefFn, Coefficients, GSpec, KernelSpec, Mesh1D, WaveConfig};

/// Neumann problem with `a11 = 4`, `a1 = sin 2πx`, white noise.
pub fn advdiff_config(n_cells: usize, n_steps: usize) -> AdvDiffConfig {
    AdvDiffConfig {
        mesh: Mesh1D::new(n_cells, BoundaryCondition::Neumann).expect("valid mesh"),
        coeffs: Coefficients {
            a11: CoefFn::Const(4.0),
            a1: CoefFn::Sin2Pi(1.0),
            a0: CoefFn::zero(),
            lambda0: 4.0,
        },
        c0: 0.125,
        kernel: KernelSpec::WhiteNoise,
        k0: None,
        t_end: 1.0,
        n_steps,
    }
}

pub fn wave_config(n_cells: usize, n_steps: usize, kernel: KernelSpec) -> WaveConfig {
    WaveConfig {
        mesh: Mesh1D::new(n_cells, BoundaryCondition::Dirichlet).expect("valid mesh"),
        kernel,
        g: GSpec::MinusQ,
        k0: None,
        t_end: 1.0,
        n_steps,
    }
}

pub fn matern() -> KernelSpec {
    KernelSpec::Matern {
        sigma: 10.0,
        nu: 0.01,
        rho: 0.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        advdiff_config(8, 64).validate().unwrap();
        wave_config(8, 8, matern()).validate().unwrap();
    }
}
