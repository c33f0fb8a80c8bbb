//! Sparse direct solves and small dense helpers.
//!
//! Operators are stored with complex entries; when every entry is real the
//! factorization runs in `f64` and complex right-hand sides are split into
//! real and imaginary columns. Real symmetric operators (including the
//! indefinite saddle-point systems) use a supernodal Bunch-Kaufman `LBLᵀ`
//! factorization with an AMD ordering; everything else uses LU with partial
//! pivoting.

use std::sync::Once;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::SolveCore;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, IntranodeLbltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Conj, Mat, MatMut, Par, Side};

use crate::error::{LodError, Result};
use crate::sparse::{norm2, SparseOperator, ZERO};

static SEQUENTIAL: Once = Once::new();

/// Factorizations run single-threaded; parallelism lives one level up
/// (over patches), which keeps results independent of the thread count.
pub fn ensure_sequential_kernels() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Why a factorization or solve was rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveFailure {
    pub reason: String,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.reason)
    }
}

struct Lblt {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    fwd: Vec<usize>,
    inv: Vec<usize>,
}

impl Lblt {
    fn factor(a: &SparseOperator) -> std::result::Result<Self, SolveFailure> {
        let n = a.nrows();
        let failure = |e: &dyn std::fmt::Debug| SolveFailure { reason: format!("factorization failed: {e:?}") };
        let trip: Vec<Triplet<usize, usize, f64>> =
            a.iter().filter(|(i, j, _)| i >= j).map(|(i, j, v)| Triplet::new(i, j, v.re)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip).map_err(|e| failure(&e))?;
        let params = CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let symbolic = factorize_symbolic_cholesky(m.symbolic(), Side::Lower, SymmetricOrdering::Amd, params)
            .map_err(|e| failure(&e))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut subdiag = vec![0.0; n];
        let mut fwd = vec![0usize; n];
        let mut inv = vec![0usize; n];
        let mut buf = MemBuffer::try_new(symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(Par::Seq, Default::default()))
            .map_err(|e| failure(&e))?;
        symbolic.factorize_numeric_intranode_lblt(
            &mut values,
            &mut subdiag,
            &mut fwd,
            &mut inv,
            m.as_ref(),
            Side::Lower,
            Par::Seq,
            MemStack::new(&mut buf),
            Default::default(),
        );
        Ok(Lblt { symbolic, values, subdiag, fwd, inv })
    }

    fn solve_in_place(&self, x: MatMut<'_, f64>) {
        let n = self.fwd.len();
        let perm = PermRef::new_checked(&self.fwd, &self.inv, n);
        let f = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, perm);
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(x.ncols(), Par::Seq));
        f.solve_in_place_with_conj(Conj::No, x, Par::Seq, MemStack::new(&mut buf));
    }
}

enum Factor {
    Symmetric(Lblt),
    Real(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Complex(faer::sparse::linalg::solvers::Lu<usize, c64>),
}

pub struct DirectSolver {
    n: usize,
    factor: Factor,
}

impl DirectSolver {
    pub fn factor(a: &SparseOperator) -> std::result::Result<Self, SolveFailure> {
        ensure_sequential_kernels();
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SolveFailure { reason: format!("matrix is {}x{}, not square", n, a.ncols()) });
        }
        let failure = |e: &dyn std::fmt::Debug| SolveFailure { reason: format!("factorization failed: {e:?}") };
        let real = a.is_real();
        let factor = if real && n > 0 && a.symmetry_defect() == 0.0 {
            Factor::Symmetric(Lblt::factor(a)?)
        } else if real {
            let trip: Vec<Triplet<usize, usize, f64>> = a.iter().map(|(i, j, v)| Triplet::new(i, j, v.re)).collect();
            let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip).map_err(|e| failure(&e))?;
            Factor::Real(m.sp_lu().map_err(|e| failure(&e))?)
        } else {
            let trip: Vec<Triplet<usize, usize, c64>> = a.iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
            let m = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &trip).map_err(|e| failure(&e))?;
            Factor::Complex(m.sp_lu().map_err(|e| failure(&e))?)
        };
        Ok(DirectSolver { n, factor })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[c64]) -> Vec<c64> {
        self.solve_many(std::slice::from_ref(&rhs.to_vec())).pop().unwrap()
    }

    pub fn solve_many(&self, rhs: &[Vec<c64>]) -> Vec<Vec<c64>> {
        let n = self.n;
        let k = rhs.len();
        if k == 0 {
            return Vec::new();
        }
        assert!(rhs.iter().all(|r| r.len() == n), "right-hand side length mismatch");
        match &self.factor {
            Factor::Complex(lu) => {
                let mut x = Mat::<c64>::from_fn(n, k, |i, j| rhs[j][i]);
                lu.solve_in_place_with_conj(Conj::No, x.as_mut());
                (0..k).map(|j| (0..n).map(|i| x[(i, j)]).collect()).collect()
            }
            real => {
                let complex: Vec<bool> = rhs.iter().map(|r| r.iter().any(|v| v.im != 0.0)).collect();
                let mut cols = Vec::with_capacity(2 * k);
                for c in 0..k {
                    cols.push((c, false));
                    if complex[c] {
                        cols.push((c, true));
                    }
                }
                let mut x = Mat::<f64>::from_fn(n, cols.len(), |i, j| {
                    let (c, imag) = cols[j];
                    if imag { rhs[c][i].im } else { rhs[c][i].re }
                });
                match real {
                    Factor::Symmetric(f) => f.solve_in_place(x.as_mut()),
                    Factor::Real(lu) => lu.solve_in_place_with_conj(Conj::No, x.as_mut()),
                    Factor::Complex(_) => unreachable!(),
                }
                let mut out = vec![vec![ZERO; n]; k];
                for (j, &(c, imag)) in cols.iter().enumerate() {
                    for i in 0..n {
                        if imag {
                            out[c][i].im = x[(i, j)];
                        } else {
                            out[c][i].re = x[(i, j)];
                        }
                    }
                }
                out
            }
        }
    }

    /// Solves and rejects results whose relative residual exceeds `tol`
    /// (or that are not finite), which is how numerical singularity shows up.
    /// A few steps of iterative refinement are tried before giving up.
    pub fn solve_checked(
        &self,
        a: &SparseOperator,
        rhs: &[Vec<c64>],
        tol: f64,
    ) -> std::result::Result<Vec<Vec<c64>>, SolveFailure> {
        let mut xs = self.solve_many(rhs);
        for (x, b) in xs.iter_mut().zip(rhs) {
            let mut res = relative_residual(a, x, b);
            let mut steps = 0;
            while res.is_finite() && res > tol && steps < REFINEMENT_STEPS {
                let ax = a.matvec(x);
                let r: Vec<c64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
                let dx = self.solve(&r);
                for (xi, d) in x.iter_mut().zip(&dx) {
                    *xi += d;
                }
                res = relative_residual(a, x, b);
                steps += 1;
            }
            if !res.is_finite() || res > tol {
                return Err(SolveFailure {
                    reason: format!("relative residual {res:.3e} exceeds {tol:.1e} (system numerically singular)"),
                });
            }
        }
        Ok(xs)
    }
}

const REFINEMENT_STEPS: usize = 3;

/// `‖A x − b‖ / ‖b‖`, or `‖A x‖` when `b = 0`.
pub fn relative_residual(a: &SparseOperator, x: &[c64], b: &[c64]) -> f64 {
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return f64::INFINITY;
    }
    let ax = a.matvec(x);
    let r: Vec<c64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    if nb == 0.0 { norm2(&r) } else { norm2(&r) / nb }
}

/// Factor, solve and check in one go.
pub fn solve_system(
    a: &SparseOperator,
    rhs: &[Vec<c64>],
    tol: f64,
) -> std::result::Result<Vec<Vec<c64>>, SolveFailure> {
    DirectSolver::factor(a)?.solve_checked(a, rhs, tol)
}

/// `[B Cᴴ; C 0]`.
pub fn saddle_point(b: &SparseOperator, c: &SparseOperator) -> Result<SparseOperator> {
    if b.nrows() != b.ncols() || c.ncols() != b.ncols() {
        return Err(LodError::DimensionMismatch(format!(
            "saddle point with B {}x{} and C {}x{}",
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let n = b.nrows();
    let k = c.nrows();
    let mut trip: Vec<(usize, usize, c64)> = b.iter().collect();
    for (i, j, v) in c.iter() {
        trip.push((n + i, j, v));
        trip.push((j, n + i, v.conj()));
    }
    Ok(SparseOperator::from_triplets(n + k, n + k, trip)?.with_symmetric(b.symmetric))
}

/// Dense matrix from a sparse operator.
pub fn dense(a: &SparseOperator) -> Mat<c64> {
    let mut m = Mat::<c64>::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.iter() {
        m[(i, j)] += v;
    }
    m
}

/// Real dense matrix from a real sparse operator (imaginary parts dropped).
pub fn dense_real(a: &SparseOperator) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.iter() {
        m[(i, j)] += v.re;
    }
    m
}

/// Eigenvalues of a real symmetric dense matrix, ascending.
pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    let mut ev = a
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| LodError::Resonance(format!("eigenvalue computation failed: {e:?}")))?;
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

/// Smallest |λ| of the pencil `(A, N)` with `A` symmetric and `N` symmetric
/// positive definite, via `L⁻¹ A L⁻ᵀ` with `N = L Lᵀ`. This is the smallest
/// generalized singular value of `A` in the geometry of `N`.
pub fn min_abs_generalized_eigenvalue(a: &Mat<f64>, n: &Mat<f64>) -> Result<f64> {
    let llt = n
        .llt(faer::Side::Lower)
        .map_err(|e| LodError::InvalidArgument(format!("norm matrix is not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut c = a.clone();
    // c <- L^{-1} A, then c <- (L^{-1} c^T) = L^{-1} A L^{-T}
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, ct.as_mut(), Par::Seq);
    let sym = Mat::<f64>::from_fn(ct.nrows(), ct.ncols(), |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let ev = symmetric_eigenvalues(&sym)?;
    Ok(ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min))
}

/// Minimum-norm least-squares solution of `A x = b` (dense, real) via the
/// SVD, with singular values below `rcond · σ_max` treated as zero.
pub fn lstsq_min_norm(a: &Mat<f64>, b: &[f64], rcond: f64) -> Result<Vec<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    if b.len() != m {
        return Err(LodError::DimensionMismatch(format!("lstsq with {m} rows and rhs of length {}", b.len())));
    }
    if m == 0 || n == 0 {
        return Ok(vec![0.0; n]);
    }
    let svd = a
        .thin_svd()
        .map_err(|e| LodError::InvalidArgument(format!("svd failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let s = s.column_vector();
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    let mut x = vec![0.0; n];
    for k in 0..s.nrows() {
        if s[k] <= rcond * smax || s[k] == 0.0 {
            continue;
        }
        let coef: f64 = (0..m).map(|i| u[(i, k)] * b[i]).sum::<f64>() / s[k];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += coef * v[(j, k)];
        }
    }
    Ok(x)
}

/// Orthonormal basis of the null space of a real dense `k×n` matrix with
/// full row rank, as the trailing columns of the complete QR factor of `Cᵀ`.
pub fn null_space_basis(c: &Mat<f64>) -> Mat<f64> {
    let (k, n) = (c.nrows(), c.ncols());
    let qr = c.transpose().to_owned().qr();
    let q = qr.compute_Q();
    Mat::<f64>::from_fn(n, n - k, |i, j| q[(i, k + j)])
}
