//! The multiscale coarse system `B((id+K)u, (id+K)v) = (f, (id+K)v)`.

use faer::linalg::solvers::SolveCore;
use faer::{c64, Conj, Mat};

use crate::corrector::{ideal_corrector_basis, CorrectorBasis, CorrectorProblem, CorrectorSolver, Discretization};
use crate::error::{LodError, Result};
use crate::fem::assemble_load;
use crate::sparse::{norm2, SparseOperator, ONE, ZERO};

/// Singular values below this fraction of the largest mark the LOD matrix
/// as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Dense coarse system on the free coarse DOFs.
#[derive(Clone, Debug)]
pub struct LodSystem {
    pub matrix: Mat<c64>,
    pub load: Vec<c64>,
    /// `None` for the ideal scheme.
    pub m: Option<usize>,
    pub omega: f64,
    pub coarse_h: f64,
    pub fine_h: f64,
    /// Fraction of entries above `1e-12·max|entry|` (quasi-locality diagnostic).
    pub fill_fraction: f64,
}

impl LodSystem {
    pub fn dim(&self) -> usize {
        self.load.len()
    }

    /// `max |L_ij − conj(L_ji)|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim();
        let mut d = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                d = d.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// `L x` with the dense matrix.
    pub fn apply(&self, x: &[c64]) -> Vec<c64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.matrix[(i, j)] * x[j]).sum()).collect()
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        if self.dim() == 0 {
            return Ok(Vec::new());
        }
        let mut s = self
            .matrix
            .singular_values()
            .map_err(|e| LodError::Resonance(format!("singular value computation failed: {e:?}")))?;
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }
}

/// `Φ = R + K`, the multiscale basis on the fine free DOFs.
pub fn multiscale_basis(disc: &Discretization, basis: &CorrectorBasis) -> Result<SparseOperator> {
    if basis.k.nrows() != disc.num_fine() || basis.k.ncols() != disc.num_coarse() {
        return Err(LodError::DimensionMismatch(format!(
            "corrector basis is {}x{}, discretization has {} fine and {} coarse DOFs",
            basis.k.nrows(),
            basis.k.ncols(),
            disc.num_fine(),
            disc.num_coarse()
        )));
    }
    disc.interp.r.add_scaled(ONE, &basis.k)
}

pub fn assemble_lod(disc: &Discretization, basis: &CorrectorBasis) -> Result<LodSystem> {
    let phi = multiscale_basis(disc, basis)?;
    let bphi = disc.b.matmul(&phi)?;
    let l = phi.adjoint().matmul(&bphi)?;
    let n = disc.num_coarse();
    let mut matrix = Mat::<c64>::zeros(n, n);
    for (i, j, v) in l.iter() {
        matrix[(i, j)] += v;
    }
    let f = assemble_load(&disc.pair.fine, disc.fine_dofs(), &disc.spec.source);
    let load = phi.adjoint().matvec(&f);
    let max = l.max_abs();
    let big = l.iter().filter(|(_, _, v)| v.norm() > 1e-12 * max).count();
    Ok(LodSystem {
        matrix,
        load,
        m: basis.m,
        omega: disc.spec.omega,
        coarse_h: disc.coarse_h(),
        fine_h: disc.fine_h(),
        fill_fraction: if n == 0 { 0.0 } else { big as f64 / (n * n) as f64 },
    })
}

/// Coarse solution and its fine-scale reconstruction.
#[derive(Clone, Debug)]
pub struct LodSolution {
    pub coarse: Vec<c64>,
    /// `R u_H + K u_H` on the fine free DOFs.
    pub fine: Vec<c64>,
    /// `‖L u − b‖ / ‖b‖`.
    pub residual: f64,
    pub sigma_min: f64,
}

pub fn solve_lod(disc: &Discretization, system: &LodSystem, basis: &CorrectorBasis) -> Result<LodSolution> {
    let n = system.dim();
    if system.matrix.nrows() != n || basis.num_coarse() != n {
        return Err(LodError::DimensionMismatch(format!(
            "LOD system of size {n} with a basis for {} coarse DOFs",
            basis.num_coarse()
        )));
    }
    let s = system.singular_values()?;
    let sigma_min = s.last().copied().unwrap_or(0.0);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    if n > 0 && !(sigma_min > SINGULAR_RTOL * sigma_max) {
        return Err(LodError::LodResonance { sigma_min });
    }
    let mut x = Mat::<c64>::from_fn(n, 1, |i, _| system.load[i]);
    if n > 0 {
        system.matrix.partial_piv_lu().solve_in_place_with_conj(Conj::No, x.as_mut());
    }
    let coarse: Vec<c64> = (0..n).map(|i| x[(i, 0)]).collect();
    let lu = system.apply(&coarse);
    let r: Vec<c64> = lu.iter().zip(&system.load).map(|(a, b)| a - b).collect();
    let nb = norm2(&system.load);
    let residual = if nb == 0.0 { norm2(&r) } else { norm2(&r) / nb };
    let mut fine = disc.prolongate(&coarse);
    for (a, b) in fine.iter_mut().zip(basis.apply(&coarse)) {
        *a += b;
    }
    Ok(LodSolution { coarse, fine, residual, sigma_min })
}

/// Pieces of the ideal scheme: `u_h = R u_H + K u_H + G(f)`.
#[derive(Clone, Debug)]
pub struct IdealSolution {
    pub coarse: Vec<c64>,
    /// `R u_H + K u_H`.
    pub fine: Vec<c64>,
    /// `G(f)`.
    pub green: Vec<c64>,
    pub basis: CorrectorBasis,
    pub system: LodSystem,
}

impl IdealSolution {
    /// `R u_H + K u_H + G(f)`.
    pub fn reconstruction(&self) -> Vec<c64> {
        self.fine.iter().zip(&self.green).map(|(a, b)| a + b).collect()
    }
}

pub fn solve_ideal(disc: &Discretization, cap: usize) -> Result<IdealSolution> {
    let basis = ideal_corrector_basis(disc, cap)?;
    let system = assemble_lod(disc, &basis)?;
    let sol = solve_lod(disc, &system, &basis)?;
    let f = assemble_load(&disc.pair.fine, disc.fine_dofs(), &disc.spec.source);
    let green = if f.iter().all(|v| *v == ZERO) {
        vec![ZERO; f.len()]
    } else {
        let problem = CorrectorProblem::global(disc, cap)?;
        CorrectorSolver::new(&problem)?.solve_global(&[f])?.0.pop().unwrap()
    };
    Ok(IdealSolution { coarse: sol.coarse, fine: sol.fine, green, basis, system })
}
