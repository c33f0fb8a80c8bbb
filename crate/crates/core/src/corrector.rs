//! Kernel-constrained corrector problems.
//!
//! A corrector solves `B(w, q) = F(q)` for all `q` in the kernel of the
//! (patch-local) interpolation, written as the saddle-point system
//! `[B Pᴴ; P 0] [w; λ] = [F; 0]`. Patches that happen to coincide share one
//! factorization.

use std::collections::BTreeMap;

use faer::c64;
use rayon::prelude::*;

use crate::error::{LodError, Result};
use crate::fem::{assemble_b, assemble_b_on, norm_matrix, DofMap, ProblemSpec, NOT_FREE};
use crate::interp::{build_interpolation, build_interpolation_on, embed_coarse, InterpolationPair};
use crate::mesh::{patch, MeshPair, Patch};
use crate::solver::{ensure_sequential_kernels, relative_residual, saddle_point, DirectSolver};
use crate::sparse::{energy, norm2, SparseOperator, ZERO};

/// Default cap on fine free DOFs for global (ideal) corrector solves.
pub const DEFAULT_IDEAL_CAP: usize = 100_000;

/// Relative residual accepted for the saddle-point solves.
pub const SADDLE_TOL: f64 = 1e-10;

/// Patch groups solved concurrently; results are merged in a fixed order.
const BATCH: usize = 8;

/// Everything the corrector and LOD stages share: the mesh pair, the
/// problem on the fine mesh, the global interpolation and the fine `B`.
pub struct Discretization {
    pub pair: MeshPair,
    pub spec: ProblemSpec,
    pub interp: InterpolationPair,
    /// Coarse basis functions on all fine edges.
    pub r_full: SparseOperator,
    /// `B` on the fine free DOFs.
    pub b: SparseOperator,
}

impl Discretization {
    pub fn new(pair: MeshPair, spec: ProblemSpec) -> Result<Self> {
        if spec.num_cells() != pair.fine.num_cells() {
            return Err(LodError::DimensionMismatch(format!(
                "coefficients given on {} cells, fine mesh has {}",
                spec.num_cells(),
                pair.fine.num_cells()
            )));
        }
        let r_full = embed_coarse(&pair)?;
        let interp = if pair.factor == 1 {
            build_interpolation(&pair)?
        } else {
            build_interpolation_on(&pair, &r_full, &crate::mesh::Region::whole(&pair.coarse))?
        };
        let b = assemble_b(&spec, &pair.fine, &interp.fine_dofs)?;
        Ok(Discretization { pair, spec, interp, r_full, b })
    }

    pub fn fine_dofs(&self) -> &DofMap {
        &self.interp.fine_dofs
    }

    pub fn coarse_dofs(&self) -> &DofMap {
        &self.interp.coarse_dofs
    }

    pub fn num_fine(&self) -> usize {
        self.interp.fine_dofs.num_free()
    }

    pub fn num_coarse(&self) -> usize {
        self.interp.coarse_dofs.num_free()
    }

    /// Side length of a coarse cube (`1/n` on the unit box).
    pub fn coarse_h(&self) -> f64 {
        side_length(&self.pair.coarse)
    }

    pub fn fine_h(&self) -> f64 {
        side_length(&self.pair.fine)
    }

    /// `(·,·)_{curl,ω}` Gram matrix on the fine free DOFs.
    pub fn fine_norm_matrix(&self) -> Result<SparseOperator> {
        norm_matrix(&self.pair.fine, self.fine_dofs(), self.spec.omega)
    }

    /// Same on the coarse free DOFs.
    pub fn coarse_norm_matrix(&self) -> Result<SparseOperator> {
        norm_matrix(&self.pair.coarse, self.coarse_dofs(), self.spec.omega)
    }

    /// `R v_H` on the fine free DOFs.
    pub fn prolongate(&self, v_h: &[c64]) -> Vec<c64> {
        self.interp.r.matvec(v_h)
    }

    /// Coarse free basis function `j` on the fine free DOFs.
    pub fn basis_function(&self, j: usize) -> Vec<c64> {
        let mut e = vec![ZERO; self.num_coarse()];
        e[j] = c64::new(1.0, 0.0);
        self.prolongate(&e)
    }
}

fn side_length(mesh: &crate::mesh::Mesh) -> f64 {
    match mesh.structure {
        Some(s) => (s.domain.max[0] - s.domain.min[0]) / s.n as f64,
        None => mesh.mesh_size,
    }
}

/// `w ↦ B_T(v_H, w)` on the global fine free DOFs, using only fine cells of `T`.
pub fn element_source(disc: &Discretization, v_h: &[c64], t: usize) -> Result<Vec<c64>> {
    if v_h.len() != disc.num_coarse() {
        return Err(LodError::DimensionMismatch(format!(
            "coarse vector has length {}, expected {}",
            v_h.len(),
            disc.num_coarse()
        )));
    }
    if t >= disc.pair.coarse.num_cells() {
        return Err(LodError::InvalidArgument(format!("coarse cell {t} out of range")));
    }
    let b_t = assemble_b_on(&disc.spec, &disc.pair.fine, disc.fine_dofs(), &disc.pair.coarse_children[t])?;
    Ok(b_t.matvec(&disc.prolongate(v_h)))
}

/// A saddle-point problem on a patch (or the whole domain).
pub struct CorrectorProblem {
    /// `None` for the global problem.
    pub patch: Option<Patch>,
    /// Fine DOF map of `Ω_T`.
    pub dofs: DofMap,
    /// `B` on the patch free DOFs.
    pub system: SparseOperator,
    /// `P_T`: coarse DOFs interior to `Ω_T` × fine patch free DOFs.
    pub constraints: SparseOperator,
    /// Global fine free index of each local DOF.
    pub to_global: Vec<usize>,
}

impl CorrectorProblem {
    /// Patch problem on `N^m(T)` with the patch-local interpolation.
    pub fn local(disc: &Discretization, t: usize, m: usize) -> Result<Self> {
        let p = patch(&disc.pair.coarse, t, m)?;
        if p.region.covers(&disc.pair.coarse) {
            let mut whole = Self::global(disc, usize::MAX)?;
            whole.patch = Some(p);
            return Ok(whole);
        }
        let ip = build_interpolation_on(&disc.pair, &disc.r_full, &p.region)?;
        let system = assemble_b(&disc.spec, &disc.pair.fine, &ip.fine_dofs)?;
        let to_global = ip.fine_dofs.free.iter().map(|&e| disc.fine_dofs().index_of[e]).collect();
        Ok(CorrectorProblem { patch: Some(p), dofs: ip.fine_dofs, system, constraints: ip.p, to_global })
    }

    /// Global problem with `W = ker P`; refused above `cap` fine free DOFs.
    pub fn global(disc: &Discretization, cap: usize) -> Result<Self> {
        let n = disc.num_fine();
        if n > cap {
            return Err(LodError::CapExceeded { what: "ideal corrector".into(), size: n, cap });
        }
        Ok(CorrectorProblem {
            patch: None,
            dofs: disc.fine_dofs().clone(),
            system: disc.b.clone(),
            constraints: disc.interp.p.clone(),
            to_global: (0..n).collect(),
        })
    }

    pub fn num_free(&self) -> usize {
        self.dofs.num_free()
    }

    /// Cells of `Ω_T` (coarse); all coarse cells for the global problem.
    pub fn coarse_cells(&self, disc: &Discretization) -> Vec<usize> {
        match &self.patch {
            Some(p) => p.cells().to_vec(),
            None => (0..disc.pair.coarse.num_cells()).collect(),
        }
    }

    /// Global fine free vector → local free DOFs (entries outside dropped).
    pub fn restrict(&self, v: &[c64]) -> Vec<c64> {
        self.to_global.iter().map(|&g| v[g]).collect()
    }

    /// Local free DOFs → global fine free vector.
    pub fn extend(&self, w: &[c64], n_global: usize) -> Vec<c64> {
        let mut out = vec![ZERO; n_global];
        for (k, &g) in self.to_global.iter().enumerate() {
            out[g] = w[k];
        }
        out
    }

    fn resonance(&self, reason: String) -> LodError {
        match &self.patch {
            Some(p) => LodError::PatchResonance { cell: p.seed_cell, m: p.order, reason },
            None => LodError::Resonance(format!("global corrector problem: {reason}")),
        }
    }
}

/// A factored corrector problem that can be solved for many sources.
pub struct CorrectorSolver<'a> {
    pub problem: &'a CorrectorProblem,
    saddle: SparseOperator,
    factor: DirectSolver,
}

/// Residuals of one batch of corrector solves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveReport {
    /// Largest `‖P_T w‖ / ‖w‖`.
    pub constraint_residual: f64,
    /// Largest relative residual of the saddle-point system.
    pub saddle_residual: f64,
}

impl<'a> CorrectorSolver<'a> {
    pub fn new(problem: &'a CorrectorProblem) -> Result<Self> {
        ensure_sequential_kernels();
        let saddle = saddle_point(&problem.system, &problem.constraints)?;
        let factor = DirectSolver::factor(&saddle).map_err(|e| problem.resonance(e.reason))?;
        Ok(CorrectorSolver { problem, saddle, factor })
    }

    /// Solves for local sources (length = patch free DOFs).
    pub fn solve(&self, sources: &[Vec<c64>]) -> Result<(Vec<Vec<c64>>, SolveReport)> {
        let n = self.problem.num_free();
        let k = self.problem.constraints.nrows();
        for s in sources {
            if s.len() != n {
                return Err(LodError::DimensionMismatch(format!("source has length {}, expected {n}", s.len())));
            }
        }
        let rhs: Vec<Vec<c64>> = sources
            .iter()
            .map(|s| {
                let mut r = s.clone();
                r.resize(n + k, ZERO);
                r
            })
            .collect();
        let sols = self
            .factor
            .solve_checked(&self.saddle, &rhs, SADDLE_TOL)
            .map_err(|e| self.problem.resonance(e.reason))?;
        let mut report = SolveReport::default();
        let mut out = Vec::with_capacity(sols.len());
        for (x, b) in sols.into_iter().zip(&rhs) {
            report.saddle_residual = report.saddle_residual.max(relative_residual(&self.saddle, &x, b));
            let w = x[..n].to_vec();
            let nw = norm2(&w);
            if nw > 0.0 {
                let c = norm2(&self.problem.constraints.matvec(&w)) / nw;
                if !(c <= SADDLE_TOL) {
                    return Err(self.problem.resonance(format!("constraint residual {c:.3e}")));
                }
                report.constraint_residual = report.constraint_residual.max(c);
            }
            out.push(w);
        }
        Ok((out, report))
    }

    /// Solves for global fine free sources and returns global vectors.
    pub fn solve_global(&self, sources: &[Vec<c64>]) -> Result<(Vec<Vec<c64>>, SolveReport)> {
        let local: Vec<Vec<c64>> = sources.iter().map(|s| self.problem.restrict(s)).collect();
        let (w, rep) = self.solve(&local)?;
        let n = sources.first().map_or(0, |s| s.len());
        Ok((w.iter().map(|x| self.problem.extend(x, n)).collect(), rep))
    }
}

/// One-shot solve of a corrector problem for local sources.
pub fn solve_corrector(problem: &CorrectorProblem, sources: &[Vec<c64>]) -> Result<Vec<Vec<c64>>> {
    Ok(CorrectorSolver::new(problem)?.solve(sources)?.0)
}

/// `G(F)` with the global constraint, for a global fine free functional.
pub fn ideal_corrector(disc: &Discretization, f: &[c64], cap: usize) -> Result<Vec<c64>> {
    let problem = CorrectorProblem::global(disc, cap)?;
    let solver = CorrectorSolver::new(&problem)?;
    Ok(solver.solve_global(&[f.to_vec()])?.0.pop().unwrap())
}

/// Bookkeeping for one coarse cell's patch solve.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub cell: usize,
    /// Index into the list of distinct patches.
    pub patch_id: usize,
    pub patch_cells: usize,
    pub free_dofs: usize,
    pub report: SolveReport,
}

/// Corrector images `K_m φ_j` of the coarse free basis.
#[derive(Clone, Debug)]
pub struct CorrectorBasis {
    /// `None` for the ideal (global) corrector.
    pub m: Option<usize>,
    /// Fine free DOFs × coarse free DOFs; column `j` is `K_m φ_j`.
    pub k: SparseOperator,
    /// Per coarse cell, in cell order (empty for the ideal basis).
    pub patches: Vec<PatchRecord>,
    /// `‖P K_m φ_j‖_{curl,ω}` on the coarse mesh, per coarse DOF.
    pub nonconformity: Vec<f64>,
}

impl CorrectorBasis {
    pub fn num_coarse(&self) -> usize {
        self.k.ncols()
    }

    /// `K_m v_H`.
    pub fn apply(&self, v_h: &[c64]) -> Vec<c64> {
        self.k.matvec(v_h)
    }

    /// Column `j` as a dense fine vector.
    pub fn column(&self, j: usize) -> Vec<c64> {
        let mut e = vec![ZERO; self.k.ncols()];
        e[j] = c64::new(1.0, 0.0);
        self.k.matvec(&e)
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.patches.iter().map(|p| p.report.constraint_residual).fold(0.0, f64::max)
    }

    pub fn max_nonconformity(&self) -> f64 {
        self.nonconformity.iter().copied().fold(0.0, f64::max)
    }

    pub fn num_distinct_patches(&self) -> usize {
        self.patches.iter().map(|p| p.patch_id + 1).max().unwrap_or(0)
    }
}

/// Local coarse free DOFs of a coarse cell (those on free coarse edges).
fn cell_coarse_dofs(disc: &Discretization, t: usize) -> Vec<usize> {
    let mut out: Vec<usize> = disc.pair.coarse.cell_edges[t]
        .iter()
        .map(|&e| disc.coarse_dofs().index_of[e])
        .filter(|&j| j != NOT_FREE)
        .collect();
    out.sort_unstable();
    out
}

/// `B_T R φ_j` for every free coarse DOF `j` of `T`, as global fine vectors.
fn element_sources(disc: &Discretization, t: usize) -> Result<Vec<(usize, Vec<c64>)>> {
    let b_t = assemble_b_on(&disc.spec, &disc.pair.fine, disc.fine_dofs(), &disc.pair.coarse_children[t])?;
    Ok(cell_coarse_dofs(disc, t).into_iter().map(|j| (j, b_t.matvec(&disc.basis_function(j)))).collect())
}

/// Localized corrector basis `K_m φ_j = −Σ_T G_{T,m}(B_T R φ_j)`.
pub fn assemble_corrector_basis(disc: &Discretization, m: usize) -> Result<CorrectorBasis> {
    if m == 0 {
        return Err(LodError::InvalidArgument("oversampling order m must be at least 1".into()));
    }
    let coarse = &disc.pair.coarse;
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for t in 0..coarse.num_cells() {
        groups.entry(patch(coarse, t, m)?.region.cells).or_default().push(t);
    }
    // fixed order: by the first seed of each group
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by_key(|g| g[0]);

    let nf = disc.num_fine();
    let nc = disc.num_coarse();
    let mut columns: Vec<Vec<c64>> = vec![Vec::new(); nc];
    let mut records: Vec<Option<PatchRecord>> = vec![None; coarse.num_cells()];

    for (batch_no, batch) in groups.chunks(BATCH).enumerate() {
        let results: Vec<Result<GroupResult>> = batch
            .par_iter()
            .enumerate()
            .map(|(k, seeds)| solve_group(disc, seeds, m, batch_no * BATCH + k))
            .collect();
        for res in results {
            let res = res?;
            for (t, contributions, record) in res.cells {
                for (j, w) in contributions {
                    let col = &mut columns[j];
                    if col.is_empty() {
                        col.resize(nf, ZERO);
                    }
                    for (k, &g) in res.to_global.iter().enumerate() {
                        col[g] -= w[k];
                    }
                }
                records[t] = Some(record);
            }
        }
    }

    let mut trip = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v != ZERO {
                trip.push((i, j, v));
            }
        }
    }
    drop(columns);
    let k = SparseOperator::from_triplets(nf, nc, trip)?;
    let nonconformity = nonconformity_norms(disc, &k)?;
    Ok(CorrectorBasis { m: Some(m), k, patches: records.into_iter().map(Option::unwrap).collect(), nonconformity })
}

struct GroupResult {
    to_global: Vec<usize>,
    cells: Vec<(usize, Vec<(usize, Vec<c64>)>, PatchRecord)>,
}

fn solve_group(disc: &Discretization, seeds: &[usize], m: usize, patch_id: usize) -> Result<GroupResult> {
    let mut cells = Vec::with_capacity(seeds.len());
    let problem = CorrectorProblem::local(disc, seeds[0], m)?;
    let solver = CorrectorSolver::new(&problem)?;
    for &t in seeds {
        let sources = element_sources(disc, t)?;
        let local: Vec<Vec<c64>> = sources.iter().map(|(_, s)| problem.restrict(s)).collect();
        let (w, report) = solver.solve(&local).map_err(|e| match e {
            LodError::PatchResonance { m, reason, .. } => LodError::PatchResonance { cell: t, m, reason },
            other => other,
        })?;
        let record = PatchRecord {
            cell: t,
            patch_id,
            patch_cells: problem.coarse_cells(disc).len(),
            free_dofs: problem.num_free(),
            report,
        };
        cells.push((t, sources.into_iter().map(|(j, _)| j).zip(w).collect(), record));
    }
    Ok(GroupResult { to_global: problem.to_global.clone(), cells })
}

/// Ideal corrector basis `K φ_j = −G(B R φ_j)` from one global factorization.
pub fn ideal_corrector_basis(disc: &Discretization, cap: usize) -> Result<CorrectorBasis> {
    let problem = CorrectorProblem::global(disc, cap)?;
    let solver = CorrectorSolver::new(&problem)?;
    let nc = disc.num_coarse();
    let sources: Vec<Vec<c64>> = (0..nc).map(|j| disc.b.matvec(&disc.basis_function(j))).collect();
    let (w, _) = solver.solve_global(&sources)?;
    let mut trip = Vec::new();
    for (j, col) in w.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v != ZERO {
                trip.push((i, j, -v));
            }
        }
    }
    let k = SparseOperator::from_triplets(disc.num_fine(), nc, trip)?;
    let nonconformity = nonconformity_norms(disc, &k)?;
    Ok(CorrectorBasis { m: None, k, patches: Vec::new(), nonconformity })
}

/// `‖P k_j‖_{curl,ω}` (coarse mesh) for each column of `k`.
fn nonconformity_norms(disc: &Discretization, k: &SparseOperator) -> Result<Vec<f64>> {
    let pk = disc.interp.p.matmul(k)?;
    let n = disc.coarse_norm_matrix()?;
    let cols = pk.transpose();
    Ok((0..k.ncols())
        .into_par_iter()
        .map(|j| {
            let mut v = vec![ZERO; pk.nrows()];
            for (i, x) in cols.row(j) {
                v[i] = x;
            }
            energy(&n, &v).max(0.0).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{CoefficientKind, Source};
    use crate::mesh::{build_structured_mesh, graph_diameter, refine, BoxDomain};
    use crate::sparse::dotc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, f: usize, kind: CoefficientKind) -> Discretization {
        let pair = refine(&build_structured_mesh(n, BoxDomain::unit()).unwrap(), f).unwrap();
        let spec = ProblemSpec::from_kind(&pair.fine, &kind, 3, 1.0, Source::Smooth).unwrap();
        Discretization::new(pair, spec).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<c64> {
        (0..n).map(|_| c64::new(rng.random_range(-1.0..1.0), 0.0)).collect()
    }

    #[test]
    fn element_sources_sum_to_global_form() {
        let d = setup(2, 2, CoefficientKind::Checkerboard { contrast: 10.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_vec(d.num_coarse(), &mut rng);
        let mut sum = vec![ZERO; d.num_fine()];
        for t in 0..d.pair.coarse.num_cells() {
            let s = element_source(&d, &v, t).unwrap();
            // support inside the closure of T
            for (k, &e) in d.fine_dofs().free.iter().enumerate() {
                if s[k] != ZERO {
                    let touches = d.pair.fine.edge_cells[e].iter().any(|&c| d.pair.fine_to_coarse[c] == t);
                    assert!(touches);
                }
            }
            for (a, b) in sum.iter_mut().zip(&s) {
                *a += b;
            }
        }
        let full = d.b.matvec(&d.prolongate(&v));
        let scale = norm2(&full);
        let diff: Vec<c64> = sum.iter().zip(&full).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-12 * scale);
        assert!(element_source(&d, &vec![ZERO; d.num_coarse()], 0).unwrap().iter().all(|x| *x == ZERO));
    }

    #[test]
    fn patch_solution_properties() {
        let d = setup(3, 2, CoefficientKind::Random { min: 1.0, max: 10.0 });
        let centre = d.pair.coarse.locate(&[0.5, 0.5, 0.5]).unwrap();
        let problem = CorrectorProblem::local(&d, centre, 1).unwrap();
        assert!(problem.num_free() < d.num_fine());
        let solver = CorrectorSolver::new(&problem).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = problem.num_free();
        let f1 = random_vec(n, &mut rng);
        let f2 = random_vec(n, &mut rng);
        let f12: Vec<c64> = f1.iter().zip(&f2).map(|(a, b)| a + b * 2.0).collect();
        let (w, rep) = solver.solve(&[f1.clone(), f2.clone(), f12, vec![ZERO; n]]).unwrap();
        assert!(rep.constraint_residual <= 1e-10);
        assert!(w[3].iter().all(|x| *x == ZERO));
        // linearity
        let lin: Vec<c64> = w[0].iter().zip(&w[1]).zip(&w[2]).map(|((a, b), c)| a + b * 2.0 - c).collect();
        assert!(norm2(&lin) <= 1e-10 * norm2(&w[2]));
        // variational residual against kernel test vectors
        let c = &problem.constraints;
        let pct = crate::solver::dense_real(c);
        let basis = crate::solver::null_space_basis(&pct);
        let nf = norm2(&f1);
        let bw = problem.system.matvec(&w[0]);
        for col in (0..basis.ncols()).step_by(basis.ncols() / 50 + 1).take(50) {
            let q: Vec<c64> = (0..n).map(|i| c64::new(basis[(i, col)], 0.0)).collect();
            let lhs = dotc(&q, &bw) - dotc(&q, &f1);
            assert!(lhs.norm() <= 1e-9 * norm2(&q) * nf, "{}", lhs.norm());
        }
    }

    #[test]
    fn zero_order_rejected_and_resonance_named() {
        let d = setup(2, 2, CoefficientKind::Identity);
        assert!(matches!(assemble_corrector_basis(&d, 0), Err(LodError::InvalidArgument(_))));
        assert!(matches!(
            CorrectorProblem::global(&d, 10),
            Err(LodError::CapExceeded { size, cap: 10, .. }) if size == d.num_fine()
        ));
    }

    #[test]
    fn saturated_basis_equals_ideal() {
        let d = setup(2, 2, CoefficientKind::Identity);
        let diam = graph_diameter(&d.pair.coarse);
        let local = assemble_corrector_basis(&d, diam).unwrap();
        let ideal = ideal_corrector_basis(&d, DEFAULT_IDEAL_CAP).unwrap();
        assert_eq!(local.num_distinct_patches(), 1);
        let n = d.fine_norm_matrix().unwrap();
        for j in 0..d.num_coarse() {
            let a = local.column(j);
            let b = ideal.column(j);
            let diff: Vec<c64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let nb = energy(&n, &b).sqrt();
            assert!(nb > 0.0);
            assert!(energy(&n, &diff).max(0.0).sqrt() <= 1e-8 * nb);
        }
        assert!(ideal.max_nonconformity() <= 1e-10);
        // kernel membership of the ideal correctors
        let pk = d.interp.p.matmul(&ideal.k).unwrap();
        assert!(pk.max_abs() <= 1e-10 * ideal.k.max_abs());
    }

    #[test]
    fn localized_support_and_grouping() {
        let d = setup(3, 2, CoefficientKind::Checkerboard { contrast: 10.0 });
        let basis = assemble_corrector_basis(&d, 1).unwrap();
        assert!(basis.num_distinct_patches() > 1);
        assert!(basis.max_constraint_residual() <= 1e-10);
        let coarse = &d.pair.coarse;
        let kt = basis.k.transpose();
        for (j, &e) in d.coarse_dofs().free.iter().enumerate() {
            let mut allowed = std::collections::BTreeSet::new();
            for &t in &coarse.edge_cells[e] {
                allowed.extend(patch(coarse, t, 1).unwrap().region.cells);
            }
            for (i, _) in kt.row(j) {
                let fe = d.fine_dofs().free[i];
                assert!(d.pair.fine.edge_cells[fe].iter().any(|&c| allowed.contains(&d.pair.fine_to_coarse[c])));
            }
        }
    }

    #[test]
    fn nonconformity_shrinks_with_m() {
        let d = setup(4, 2, CoefficientKind::Identity);
        let a = assemble_corrector_basis(&d, 1).unwrap();
        let b = assemble_corrector_basis(&d, 2).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&b.nonconformity) < mean(&a.nonconformity));
    }
}
