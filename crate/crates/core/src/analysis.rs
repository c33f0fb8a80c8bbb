//! Reference solves, error and decay measurements, inf-sup estimates and the
//! parameter-study driver.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{
    assemble_corrector_basis, element_source, CorrectorBasis, CorrectorProblem, CorrectorSolver, Discretization,
    DEFAULT_IDEAL_CAP,
};
use crate::error::{LodError, Result};
use crate::fem::{assemble_b, assemble_load, cellwise_norm_sq, global_dof_map, CoefficientKind, DofMap, ProblemSpec, Source};
use crate::lod::{assemble_lod, multiscale_basis, solve_lod, LodSolution, LodSystem};
use crate::mesh::{build_structured_mesh, patch, refine, BoxDomain, Mesh};
use crate::solver::{dense_real, min_abs_generalized_eigenvalue, null_space_basis, saddle_point, DirectSolver};
use crate::sparse::{dotc, energy, norm2, SparseOperator, ZERO};

/// Dense inf-sup computations are refused above this many DOFs.
pub const INFSUP_CAP: usize = 5_000;

/// Accepted relative residual of the fine reference solve.
pub const FINE_TOL: f64 = 1e-10;

/// Fine Galerkin solution on the free DOFs of the whole mesh.
pub fn fine_solve(spec: &ProblemSpec, mesh: &Mesh) -> Result<(DofMap, Vec<c64>)> {
    let dofs = global_dof_map(mesh);
    let b = assemble_b(spec, mesh, &dofs)?;
    let u = solve_fine_system(&b, &assemble_load(mesh, &dofs, &spec.source), spec.omega)?;
    Ok((dofs, u))
}

/// As [`fine_solve`], reusing the operator of a discretization.
pub fn fine_solve_on(disc: &Discretization) -> Result<Vec<c64>> {
    let f = assemble_load(&disc.pair.fine, disc.fine_dofs(), &disc.spec.source);
    solve_fine_system(&disc.b, &f, disc.spec.omega)
}

fn solve_fine_system(b: &SparseOperator, f: &[c64], omega: f64) -> Result<Vec<c64>> {
    if f.iter().all(|v| *v == ZERO) {
        return Ok(vec![ZERO; f.len()]);
    }
    let resonance = |reason: String| LodError::Resonance(format!("omega = {omega}: {reason}"));
    let solver = DirectSolver::factor(b).map_err(|e| resonance(e.reason))?;
    let mut x = solver.solve_checked(b, &[f.to_vec()], FINE_TOL).map_err(|e| resonance(e.reason))?;
    Ok(x.pop().unwrap())
}

/// `‖a − b‖_N / ‖b‖_N`.
pub fn relative_error(n: &SparseOperator, a: &[c64], b: &[c64]) -> f64 {
    let d: Vec<c64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = energy(n, b).max(0.0).sqrt();
    let nd = energy(n, &d).max(0.0).sqrt();
    if nb == 0.0 { nd } else { nd / nb }
}

/// Coarse cell containing the centre of the domain.
pub fn central_cell(mesh: &Mesh) -> Result<usize> {
    let d = mesh.structure.map(|s| s.domain).unwrap_or_else(BoxDomain::unit);
    let c = [0.5 * (d.min[0] + d.max[0]), 0.5 * (d.min[1] + d.max[1]), 0.5 * (d.min[2] + d.max[2])];
    mesh.locate(&c)
}

/// Source of unit Euclidean norm supported in coarse cell `t`:
/// `B_T(R φ_j, ·)` for the lowest free coarse DOF `j` of `T`.
pub fn unit_element_source(disc: &Discretization, t: usize) -> Result<Vec<c64>> {
    let j = disc.pair.coarse.cell_edges[t]
        .iter()
        .map(|&e| disc.coarse_dofs().index_of[e])
        .filter(|&j| j != crate::fem::NOT_FREE)
        .min()
        .ok_or_else(|| LodError::InvalidArgument(format!("coarse cell {t} has no free edge")))?;
    let mut e = vec![ZERO; disc.num_coarse()];
    e[j] = c64::new(1.0, 0.0);
    let mut f = element_source(disc, &e, t)?;
    let s = norm2(&f);
    if s == 0.0 {
        return Err(LodError::InvalidArgument(format!("element source on cell {t} vanishes")));
    }
    f.iter_mut().for_each(|v| *v /= s);
    Ok(f)
}

/// Ideal corrector of a single-element source and its norm outside `N^m(T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub cell: usize,
    /// `‖G(F_T)‖_{curl,ω}` on the whole domain.
    pub total: f64,
    /// Entry `m` is the norm on the fine cells outside `N^m(T)`, `m = 0..=m_max`.
    pub exterior: Vec<f64>,
    pub green: Vec<c64>,
}

pub fn measure_decay(disc: &Discretization, ideal: &CorrectorSolver, t: usize, m_max: usize) -> Result<DecayReport> {
    let f = unit_element_source(disc, t)?;
    let green = ideal.solve_global(&[f])?.0.pop().unwrap();
    let (fine, coarse) = (&disc.pair.fine, &disc.pair.coarse);
    let full = disc.fine_dofs().expand(&green);
    let cells: Vec<usize> = (0..fine.num_cells()).collect();
    let per_cell = cellwise_norm_sq(fine, &full, disc.spec.omega, &cells);
    let total = per_cell.iter().sum::<f64>().sqrt();
    let mut exterior = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let mut inside = vec![false; coarse.num_cells()];
        for &c in patch(coarse, t, m)?.cells() {
            inside[c] = true;
        }
        let sq: f64 = per_cell.iter().enumerate().filter(|(c, _)| !inside[disc.pair.fine_to_coarse[*c]]).map(|(_, v)| v).sum();
        exterior.push(sq.sqrt());
    }
    Ok(DecayReport { cell: t, total, exterior, green })
}

/// Localized against ideal corrector for one element source.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationReport {
    pub cell: usize,
    pub orders: Vec<usize>,
    /// `‖G(F_T) − G_{T,m}(F_T)‖_{curl,ω} / ‖G(F_T)‖_{curl,ω}`.
    pub error: Vec<f64>,
    /// `‖P G_{T,m}(F_T)‖_{curl,ω} / ‖G(F_T)‖_{curl,ω}` (coarse mesh norm).
    pub nonconformity: Vec<f64>,
}

pub fn measure_truncation(disc: &Discretization, ideal: &CorrectorSolver, t: usize, m_max: usize) -> Result<TruncationReport> {
    let f = unit_element_source(disc, t)?;
    let green = ideal.solve_global(std::slice::from_ref(&f))?.0.pop().unwrap();
    let n_fine = disc.fine_norm_matrix()?;
    let n_coarse = disc.coarse_norm_matrix()?;
    let scale = energy(&n_fine, &green).max(0.0).sqrt();
    let mut rep = TruncationReport { cell: t, orders: Vec::new(), error: Vec::new(), nonconformity: Vec::new() };
    for m in 1..=m_max {
        let problem = CorrectorProblem::local(disc, t, m)?;
        let w = CorrectorSolver::new(&problem)?.solve_global(std::slice::from_ref(&f))?.0.pop().unwrap();
        let d: Vec<c64> = green.iter().zip(&w).map(|(a, b)| a - b).collect();
        let pw = disc.interp.p.matvec(&w);
        rep.orders.push(m);
        rep.error.push(energy(&n_fine, &d).max(0.0).sqrt() / scale);
        rep.nonconformity.push(energy(&n_coarse, &pw).max(0.0).sqrt() / scale);
    }
    Ok(rep)
}

/// Least-squares fit of `log v` against the index; returns `(slope, R²)`.
pub fn log_linear_fit(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, yi) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (yi - ym);
        sxx += dx * dx;
        syy += (yi - ym) * (yi - ym);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Geometric mean of consecutive ratios, `(v_last / v_first)^(1/(n−1))`.
pub fn geometric_mean_ratio(values: &[f64]) -> f64 {
    let n = values.len();
    (values[n - 1] / values[0]).powf(1.0 / (n - 1) as f64)
}

/// Observed order `log(e₁/e₂) / log(H₁/H₂)`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    if h.len() == 2 {
        return (e[0] / e[1]).ln() / (h[0] / h[1]).ln();
    }
    // least-squares slope of log e against log h
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (xm, ym) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let sxx: f64 = x.iter().map(|a| (a - xm) * (a - xm)).sum();
    sxy / sxx
}

fn real_dense(name: &str, a: &SparseOperator) -> Result<Mat<f64>> {
    if !a.is_real() {
        return Err(LodError::Unsupported(format!("inf-sup estimate for complex {name}")));
    }
    Ok(dense_real(a))
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(LodError::CapExceeded { what: "inf-sup estimate".into(), size: n, cap });
    }
    Ok(())
}

/// Smallest generalized singular value of the symmetric form `b` in the
/// geometry of the SPD matrix `n`.
pub fn estimate_infsup(b: &SparseOperator, n: &SparseOperator, cap: usize) -> Result<f64> {
    check_cap(b.nrows(), cap)?;
    min_abs_generalized_eigenvalue(&real_dense("B", b)?, &real_dense("norm matrix", n)?)
}

/// Inf-sup constant of `b` over `ker c`, both arguments and test functions
/// taken from the kernel (orthonormal basis by QR of `cᵀ`).
pub fn estimate_infsup_kernel(b: &SparseOperator, n: &SparseOperator, c: &SparseOperator, cap: usize) -> Result<f64> {
    check_cap(b.nrows(), cap)?;
    let z = null_space_basis(&real_dense("constraint", c)?);
    let project = |a: &Mat<f64>| z.transpose() * (a * &z);
    min_abs_generalized_eigenvalue(&project(&real_dense("B", b)?), &project(&real_dense("norm matrix", n)?))
}

/// Inf-sup constant of the LOD matrix with the norm `‖(R + K)·‖_{curl,ω}`.
pub fn estimate_infsup_lod(disc: &Discretization, system: &LodSystem, basis: &CorrectorBasis, cap: usize) -> Result<f64> {
    check_cap(system.dim(), cap)?;
    let phi = multiscale_basis(disc, basis)?;
    let gram = phi.adjoint().matmul(&disc.fine_norm_matrix()?.matmul(&phi)?)?;
    let n = dense_real(&gram);
    let dim = system.dim();
    if (0..dim).any(|i| (0..dim).any(|j| system.matrix[(i, j)].im != 0.0)) {
        return Err(LodError::Unsupported("inf-sup estimate for a complex LOD matrix".into()));
    }
    let l = Mat::<f64>::from_fn(system.dim(), system.dim(), |i, j| system.matrix[(i, j)].re);
    let sym = Mat::<f64>::from_fn(l.nrows(), l.ncols(), |i, j| 0.5 * (l[(i, j)] + l[(j, i)]));
    let nsym = Mat::<f64>::from_fn(n.nrows(), n.ncols(), |i, j| 0.5 * (n[(i, j)] + n[(j, i)]));
    min_abs_generalized_eigenvalue(&sym, &nsym)
}

/// `sup |(f, w)| / ‖w‖_{curl,ω}` over `w ∈ ker P`: sampled and exact.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSmallness {
    /// Largest ratio over the sampled kernel vectors.
    pub sampled: f64,
    /// The supremum itself, from the Riesz representative in `ker P`.
    pub exact: f64,
    pub samples: usize,
}

/// Samples are `w = (I − R P) N⁻¹ g` with `g` uniform in `[−1, 1]` per DOF,
/// so they lie in `ker P` and carry the smoothing of the norm's inverse.
pub fn kernel_smallness_proxy(disc: &Discretization, f: &Source, samples: usize, seed: u64) -> Result<KernelSmallness> {
    let load = assemble_load(&disc.pair.fine, disc.fine_dofs(), f);
    let n = disc.fine_norm_matrix()?;
    let nf = disc.num_fine();
    let fail = |e: crate::solver::SolveFailure| LodError::Resonance(e.reason);

    let saddle = saddle_point(&n, &disc.interp.p)?;
    let factor = DirectSolver::factor(&saddle).map_err(fail)?;
    let mut rhs = load.clone();
    rhs.resize(saddle.nrows(), ZERO);
    let y = factor.solve_checked(&saddle, &[rhs], FINE_TOL).map_err(fail)?.pop().unwrap();
    let exact = dotc(&y[..nf], &load).norm().sqrt();

    let nfac = DirectSolver::factor(&n).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<Vec<c64>> =
        (0..samples).map(|_| (0..nf).map(|_| c64::new(rng.random_range(-1.0..1.0), 0.0)).collect()).collect();
    let v = nfac.solve_checked(&n, &g, FINE_TOL).map_err(fail)?;
    let mut sampled = 0.0f64;
    for vk in &v {
        let rp = disc.prolongate(&disc.interp.p.matvec(vk));
        let w: Vec<c64> = vk.iter().zip(&rp).map(|(a, b)| a - b).collect();
        let nw = energy(&n, &w).max(0.0).sqrt();
        if nw > 0.0 {
            sampled = sampled.max(dotc(&load, &w).norm() / nw);
        }
    }
    Ok(KernelSmallness { sampled, exact, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Decay,
    Infsup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshLevel {
    pub n_coarse: usize,
    pub factor: usize,
}

/// Oversampling order as a function of `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MSchedule {
    Fixed { m: usize },
    /// `m = max(2, ⌈|log₂ H|⌉)`.
    Log,
}

impl MSchedule {
    pub fn order(&self, h: f64) -> usize {
        match *self {
            MSchedule::Fixed { m } => m,
            MSchedule::Log => 2.max(h.log2().abs().ceil() as usize),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub run_id: String,
    pub kind: StudyKind,
    pub levels: Vec<MeshLevel>,
    pub omegas: Vec<f64>,
    pub coefficient: CoefficientKind,
    pub source: Source,
    pub seeds: Vec<u64>,
    pub schedule: MSchedule,
    /// Largest patch order in the decay columns.
    pub m_max: usize,
    pub ideal_cap: usize,
    pub infsup_cap: usize,
    /// Off by default: timings would break bit-identical reruns.
    pub record_wall_time: bool,
}

impl StudyConfig {
    pub fn new(kind: StudyKind, levels: Vec<MeshLevel>, omegas: Vec<f64>, coefficient: CoefficientKind) -> Self {
        StudyConfig {
            run_id: String::new(),
            kind,
            levels,
            omegas,
            coefficient,
            source: Source::Smooth,
            seeds: vec![0],
            schedule: MSchedule::Log,
            m_max: 4,
            ideal_cap: DEFAULT_IDEAL_CAP,
            infsup_cap: INFSUP_CAP,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.levels {
            if l.n_coarse == 0 || l.factor < 2 {
                return Err(LodError::InvalidArgument(format!(
                    "levels: n_coarse must be >= 1 and factor >= 2, got ({}, {})",
                    l.n_coarse, l.factor
                )));
            }
        }
        if let Some(w) = self.omegas.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(LodError::InvalidArgument(format!("omega must be positive, got {w}")));
        }
        if let MSchedule::Fixed { m: 0 } = self.schedule {
            return Err(LodError::InvalidArgument("m must be at least 1".into()));
        }
        if self.kind == StudyKind::Decay && self.m_max == 0 {
            return Err(LodError::InvalidArgument("m_max must be at least 1".into()));
        }
        self.coefficient.validate()
    }
}

/// One CSV row. Missing measurements are `None` (empty cells).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub run_id: String,
    pub h_coarse: f64,
    pub h_fine: f64,
    pub m: Option<usize>,
    pub omega: f64,
    pub coeff_kind: String,
    pub seed: u64,
    pub err_curl_omega: Option<f64>,
    pub err_coarse: Option<f64>,
    pub decay: Vec<Option<f64>>,
    pub nonconf_norm: Option<f64>,
    pub infsup_w: Option<f64>,
    pub infsup_lod: Option<f64>,
    pub omega_h_flag: bool,
    pub wall_ms: u64,
    pub status: String,
}

impl StudyRow {
    fn blank(cfg: &StudyConfig, level: MeshLevel, omega: f64, seed: u64) -> Self {
        let h = 1.0 / level.n_coarse as f64;
        StudyRow {
            run_id: cfg.run_id.clone(),
            h_coarse: h,
            h_fine: h / level.factor as f64,
            m: None,
            omega,
            coeff_kind: cfg.coefficient.label().into(),
            seed,
            err_curl_omega: None,
            err_coarse: None,
            decay: vec![None; cfg.m_max + 1],
            nonconf_norm: None,
            infsup_w: None,
            infsup_lod: None,
            omega_h_flag: omega * h > 1.0,
            wall_ms: 0,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl StudyResult {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["run_id", "H", "h", "m", "omega", "coeff_kind", "seed", "err_curl_omega", "err_coarse"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..=self.config.m_max).map(|m| format!("decay_m{m}")));
        h.extend(
            ["nonconf_norm", "infsup_W", "infsup_LOD", "omegaH_flag", "wall_ms", "status"].iter().map(|s| s.to_string()),
        );
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LodError::Io(std::io::Error::other(e));
        w.write_record(self.header()).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.run_id.clone(),
                format!("{:e}", r.h_coarse),
                format!("{:e}", r.h_fine),
                r.m.map(|m| m.to_string()).unwrap_or_default(),
                format!("{:e}", r.omega),
                r.coeff_kind.clone(),
                r.seed.to_string(),
                cell(r.err_curl_omega),
                cell(r.err_coarse),
            ];
            rec.extend(r.decay.iter().map(|v| cell(*v)));
            rec.extend([
                cell(r.nonconf_norm),
                cell(r.infsup_w),
                cell(r.infsup_lod),
                u8::from(r.omega_h_flag).to_string(),
                r.wall_ms.to_string(),
                r.status.clone(),
            ]);
            w.write_record(rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| LodError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `results.csv` and `config.json` (config plus `extra`) into `dir`.
    pub fn write(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.to_csv()?)?;
        let manifest = serde_json::json!({
            "config": self.config,
            "environment": extra,
            "rows": self.rows.len(),
            "failed_rows": self.rows.iter().filter(|r| !r.is_ok()).count(),
        });
        let mut f = std::fs::File::create(dir.join("config.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| LodError::Io(std::io::Error::other(e)))?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

fn discretize(cfg: &StudyConfig, level: MeshLevel, omega: f64, seed: u64) -> Result<Discretization> {
    let coarse = build_structured_mesh(level.n_coarse, BoxDomain::unit())?;
    let pair = refine(&coarse, level.factor)?;
    let spec = ProblemSpec::from_kind(&pair.fine, &cfg.coefficient, seed, omega, cfg.source.clone())?;
    Discretization::new(pair, spec)
}

/// Everything produced by one LOD solve with its fine reference.
pub struct SolveOutput {
    pub disc: Discretization,
    pub basis: CorrectorBasis,
    pub system: LodSystem,
    pub solution: LodSolution,
    pub reference: Vec<c64>,
}

/// One convergence row together with the objects behind it.
pub fn solve_case(cfg: &StudyConfig, level: MeshLevel, omega: f64, seed: u64) -> (StudyRow, Result<SolveOutput>) {
    let mut row = StudyRow::blank(cfg, level, omega, seed);
    let out = convergence_row(cfg, &mut row, level, omega, seed);
    if let Err(e) = &out {
        row.status = status_of(e);
    }
    (row, out)
}

fn convergence_row(cfg: &StudyConfig, row: &mut StudyRow, level: MeshLevel, omega: f64, seed: u64) -> Result<SolveOutput> {
    let disc = discretize(cfg, level, omega, seed)?;
    let m = cfg.schedule.order(row.h_coarse);
    row.m = Some(m);
    let u = fine_solve_on(&disc)?;
    let basis = assemble_corrector_basis(&disc, m)?;
    let system = assemble_lod(&disc, &basis)?;
    let sol = solve_lod(&disc, &system, &basis)?;
    let n_fine = disc.fine_norm_matrix()?;
    let n_coarse = disc.coarse_norm_matrix()?;
    row.err_curl_omega = Some(relative_error(&n_fine, &sol.fine, &u));
    let pu = disc.interp.p.matvec(&u);
    row.err_coarse = Some(relative_error(&n_coarse, &sol.coarse, &pu));
    let pk = disc.interp.p.matvec(&basis.apply(&sol.coarse));
    let ums = energy(&n_fine, &sol.fine).max(0.0).sqrt();
    row.nonconf_norm = Some(if ums > 0.0 { energy(&n_coarse, &pk).max(0.0).sqrt() / ums } else { 0.0 });
    if system.dim() <= cfg.infsup_cap {
        row.infsup_lod = Some(estimate_infsup_lod(&disc, &system, &basis, cfg.infsup_cap)?);
    }
    if disc.num_fine() <= cfg.infsup_cap {
        row.infsup_w = Some(estimate_infsup_kernel(&disc.b, &n_fine, &disc.interp.p, cfg.infsup_cap)?);
    }
    Ok(SolveOutput { disc, basis, system, solution: sol, reference: u })
}

fn decay_rows(cfg: &StudyConfig, template: &StudyRow, level: MeshLevel, omega: f64, seed: u64) -> Result<Vec<StudyRow>> {
    let disc = discretize(cfg, level, omega, seed)?;
    let t = central_cell(&disc.pair.coarse)?;
    let problem = CorrectorProblem::global(&disc, cfg.ideal_cap)?;
    let ideal = CorrectorSolver::new(&problem)?;
    let decay = measure_decay(&disc, &ideal, t, cfg.m_max)?;
    let trunc = measure_truncation(&disc, &ideal, t, cfg.m_max)?;
    let columns: Vec<Option<f64>> = decay.exterior.iter().map(|v| Some(v / decay.total)).collect();
    Ok(trunc
        .orders
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let mut r = template.clone();
            r.m = Some(m);
            r.decay = columns.clone();
            r.err_curl_omega = Some(trunc.error[k]);
            r.nonconf_norm = Some(trunc.nonconformity[k]);
            r
        })
        .collect())
}

fn infsup_row(cfg: &StudyConfig, row: &mut StudyRow, level: MeshLevel, omega: f64, seed: u64) -> Result<()> {
    let disc = discretize(cfg, level, omega, seed)?;
    let m = cfg.schedule.order(row.h_coarse);
    row.m = Some(m);
    let n_fine = disc.fine_norm_matrix()?;
    row.infsup_w = Some(estimate_infsup_kernel(&disc.b, &n_fine, &disc.interp.p, cfg.infsup_cap)?);
    let basis = assemble_corrector_basis(&disc, m)?;
    let system = assemble_lod(&disc, &basis)?;
    row.infsup_lod = Some(estimate_infsup_lod(&disc, &system, &basis, cfg.infsup_cap)?);
    Ok(())
}

fn status_of(e: &LodError) -> String {
    let kind = match e {
        LodError::PatchResonance { .. } => "patch_resonance",
        LodError::Resonance(_) => "resonance",
        LodError::LodResonance { .. } => "lod_resonance",
        LodError::CapExceeded { .. } => "cap_exceeded",
        LodError::Construction { .. } => "construction",
        _ => "error",
    };
    format!("{kind}: {e}")
}

/// Runs every (level, ω, seed) combination in order. A failing row is kept
/// with its error in `status` and the study moves on.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &level in &cfg.levels {
        for &omega in &cfg.omegas {
            for &seed in &cfg.seeds {
                let start = Instant::now();
                let mut row = StudyRow::blank(cfg, level, omega, seed);
                let produced = match cfg.kind {
                    StudyKind::Convergence => convergence_row(cfg, &mut row, level, omega, seed).map(|_| vec![row.clone()]),
                    StudyKind::Infsup => infsup_row(cfg, &mut row, level, omega, seed).map(|_| vec![row.clone()]),
                    StudyKind::Decay => decay_rows(cfg, &row, level, omega, seed),
                };
                let mut produced = produced.unwrap_or_else(|e| {
                    row.status = status_of(&e);
                    vec![row]
                });
                if cfg.record_wall_time {
                    let ms = start.elapsed().as_millis() as u64;
                    produced.iter_mut().for_each(|r| r.wall_ms = ms);
                }
                rows.extend(produced);
            }
        }
    }
    Ok(StudyResult { config: cfg.clone(), rows })
}
