//! Lowest-order Nédélec (Whitney) edge elements: element matrices, DOF maps,
//! coefficient fields, global assembly, the discrete gradient and the
//! ω-weighted H(curl) norm.
//!
//! The local basis function of the edge `(a, b)` of a cell is
//! `λ_a ∇λ_b − λ_b ∇λ_a`; its tangential moment along the edge is 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use faer::c64;

use crate::error::{LodError, Result};
use crate::mesh::{cross, dot, sub, Mesh, Point, Region, LOCAL_EDGES};
use crate::sparse::{re, SparseOperator, ZERO};

pub type Tensor = [[f64; 3]; 3];

pub const IDENTITY: Tensor = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn scaled_identity(s: f64) -> Tensor {
    [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]
}

fn apply(t: &Tensor, v: &Point) -> Point {
    [dot(&t[0], v), dot(&t[1], v), dot(&t[2], v)]
}

/// Gradients of the barycentric coordinates of a tetrahedron.
pub fn barycentric_gradients(p: &[Point; 4]) -> [Point; 4] {
    let e1 = sub(&p[1], &p[0]);
    let e2 = sub(&p[2], &p[0]);
    let e3 = sub(&p[3], &p[0]);
    let det = dot(&e1, &cross(&e2, &e3));
    let scale = |v: Point| [v[0] / det, v[1] / det, v[2] / det];
    let g1 = scale(cross(&e2, &e3));
    let g2 = scale(cross(&e3, &e1));
    let g3 = scale(cross(&e1, &e2));
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    [g0, g1, g2, g3]
}

/// Barycentric coordinates of `x` in a tetrahedron.
pub fn barycentric(p: &[Point; 4], x: &Point) -> [f64; 4] {
    let g = barycentric_gradients(p);
    let d = sub(x, &p[0]);
    let l1 = dot(&g[1], &d);
    let l2 = dot(&g[2], &d);
    let l3 = dot(&g[3], &d);
    [1.0 - l1 - l2 - l3, l1, l2, l3]
}

/// Values of the six signed local basis functions at barycentric point `l`.
pub fn whitney_values(g: &[Point; 4], signs: &[f64; 6], l: &[f64; 4]) -> [Point; 6] {
    let mut out = [[0.0; 3]; 6];
    for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        for d in 0..3 {
            out[k][d] = signs[k] * (l[*a] * g[*b][d] - l[*b] * g[*a][d]);
        }
    }
    out
}

/// Constant curls of the six signed local basis functions.
pub fn whitney_curls(g: &[Point; 4], signs: &[f64; 6]) -> [Point; 6] {
    let mut out = [[0.0; 3]; 6];
    for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        let c = cross(&g[*a], &g[*b]);
        out[k] = [2.0 * signs[k] * c[0], 2.0 * signs[k] * c[1], 2.0 * signs[k] * c[2]];
    }
    out
}

fn tet_volume(p: &[Point; 4]) -> f64 {
    let e1 = sub(&p[1], &p[0]);
    let e2 = sub(&p[2], &p[0]);
    let e3 = sub(&p[3], &p[0]);
    dot(&e1, &cross(&e2, &e3)).abs() / 6.0
}

/// Element curl-curl matrix `∫ μ curl φ_k · curl φ_l`.
pub fn element_curl_curl(p: &[Point; 4], signs: &[f64; 6], mu: &Tensor) -> [[f64; 6]; 6] {
    let vol = tet_volume(p);
    let c = whitney_curls(&barycentric_gradients(p), signs);
    let mut a = [[0.0; 6]; 6];
    for k in 0..6 {
        let mc = apply(mu, &c[k]);
        for l in 0..6 {
            a[k][l] = vol * dot(&mc, &c[l]);
        }
    }
    a
}

/// Element mass matrix `∫ ε φ_k · φ_l`, using `∫ λ_a λ_b = |T|(1 + δ_ab)/20`.
pub fn element_mass(p: &[Point; 4], signs: &[f64; 6], eps: &Tensor) -> [[f64; 6]; 6] {
    let vol = tet_volume(p);
    let g = barycentric_gradients(p);
    let lam = |a: usize, b: usize| vol * if a == b { 2.0 } else { 1.0 } / 20.0;
    let ge = |a: usize, b: usize| dot(&apply(eps, &g[a]), &g[b]);
    let mut m = [[0.0; 6]; 6];
    for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        for (l, [c, d]) in LOCAL_EDGES.iter().enumerate() {
            let v = lam(*a, *c) * ge(*b, *d) - lam(*a, *d) * ge(*b, *c) - lam(*b, *c) * ge(*a, *d)
                + lam(*b, *d) * ge(*a, *c);
            m[k][l] = signs[k] * signs[l] * v;
        }
    }
    m
}

/// Degree-5 rule on the reference simplex with 14 points, given as
/// (barycentric coordinates, weight relative to the cell volume).
pub fn quadrature_rule() -> Vec<([f64; 4], f64)> {
    let mut out = Vec::with_capacity(14);
    let groups = [(0.092_735_250_310_891_2, 0.073_493_043_116_361_95), (0.310_885_919_263_300_6, 0.112_687_925_718_015_85)];
    for (a, w) in groups {
        for k in 0..4 {
            let mut l = [a; 4];
            l[k] = 1.0 - 3.0 * a;
            out.push((l, w));
        }
    }
    let (b, c, w) = (0.045_503_704_125_649_6, 0.454_496_295_874_350_4, 0.042_546_020_777_081_47);
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        let mut l = [c; 4];
        l[i] = b;
        l[j] = b;
        out.push((l, w));
    }
    out
}

/// Edge degrees of freedom restricted to a region: the free DOFs are the
/// edges interior to the region, all other edges are essential (zero
/// tangential trace).
#[derive(Clone, Debug)]
pub struct DofMap {
    /// Global edge index of each free DOF, increasing.
    pub free: Vec<usize>,
    /// Free index of each mesh edge, `usize::MAX` when essential or outside.
    pub index_of: Vec<usize>,
    pub essential: Vec<bool>,
    /// Cells the region consists of; assembly runs over these.
    pub cells: Vec<usize>,
}

pub const NOT_FREE: usize = usize::MAX;

impl DofMap {
    pub fn num_dofs(&self) -> usize {
        self.index_of.len()
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, e: usize) -> bool {
        self.index_of[e] != NOT_FREE
    }

    /// Expands a free-DOF vector to all mesh edges (zeros elsewhere).
    pub fn expand(&self, v: &[c64]) -> Vec<c64> {
        let mut out = vec![ZERO; self.num_dofs()];
        for (k, &e) in self.free.iter().enumerate() {
            out[e] = v[k];
        }
        out
    }

    /// Restricts a full edge vector to the free DOFs.
    pub fn restrict(&self, v: &[c64]) -> Vec<c64> {
        self.free.iter().map(|&e| v[e]).collect()
    }
}

/// Global map (essential on `∂Ω`) for the whole mesh.
pub fn build_dof_map(mesh: &Mesh, region: &Region) -> DofMap {
    let mut index_of = vec![NOT_FREE; mesh.num_edges()];
    for (k, &e) in region.interior_edges.iter().enumerate() {
        index_of[e] = k;
    }
    DofMap {
        free: region.interior_edges.clone(),
        essential: index_of.iter().map(|&k| k == NOT_FREE).collect(),
        index_of,
        cells: region.cells.clone(),
    }
}

pub fn global_dof_map(mesh: &Mesh) -> DofMap {
    build_dof_map(mesh, &Region::whole(mesh))
}

/// Per-cell 3×3 coefficient tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub values: Vec<Tensor>,
}

impl CoefficientField {
    pub fn uniform(n_cells: usize, t: Tensor) -> Self {
        CoefficientField { values: vec![t; n_cells] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        CoefficientField {
            values: self.values.iter().map(|t| t.map(|row| row.map(|x| s * x))).collect(),
        }
    }

    /// Smallest and largest eigenvalue over all cells; errors on a
    /// non-symmetric or non-positive-definite cell.
    pub fn eigen_bounds(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (c, t) in self.values.iter().enumerate() {
            let scale = t.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            if t.iter().flatten().any(|x| !x.is_finite()) {
                return Err(LodError::InvalidCoefficient { cell: c, reason: "non-finite entry".into() });
            }
            for i in 0..3 {
                for j in 0..i {
                    if (t[i][j] - t[j][i]).abs() > 1e-12 * scale {
                        return Err(LodError::InvalidCoefficient { cell: c, reason: "not symmetric".into() });
                    }
                }
            }
            let (a, b) = symmetric3_eigen_bounds(t);
            if !(a > 0.0) {
                return Err(LodError::InvalidCoefficient {
                    cell: c,
                    reason: format!("not positive definite (smallest eigenvalue {a:.3e})"),
                });
            }
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Ok((lo, hi))
    }
}

/// Extreme eigenvalues of a symmetric 3×3 matrix (trigonometric formula).
fn symmetric3_eigen_bounds(t: &Tensor) -> (f64, f64) {
    let p1 = t[0][1] * t[0][1] + t[0][2] * t[0][2] + t[1][2] * t[1][2];
    if p1 == 0.0 {
        let d = [t[0][0], t[1][1], t[2][2]];
        return (d.iter().cloned().fold(f64::INFINITY, f64::min), d.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let q = (t[0][0] + t[1][1] + t[2][2]) / 3.0;
    let p2 = (t[0][0] - q).powi(2) + (t[1][1] - q).powi(2) + (t[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| (t[i][j] - if i == j { q } else { 0.0 }) / p;
    let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    (e3, e1)
}

/// How coefficient fields are generated on the fine mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientKind {
    /// `μ = ε = I`.
    Identity,
    /// Two-phase `μ` on a checkerboard of the fine sub-cubes, `μ ∈ {1, contrast}·I`, `ε = I`.
    Checkerboard { contrast: f64 },
    /// Independent scalar `μ`, `ε` per fine cell, uniform in `[min, max]`.
    Random { min: f64, max: f64 },
}

impl CoefficientKind {
    pub fn label(&self) -> &'static str {
        match self {
            CoefficientKind::Identity => "identity",
            CoefficientKind::Checkerboard { .. } => "checkerboard",
            CoefficientKind::Random { .. } => "random",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CoefficientKind::Identity => Ok(()),
            CoefficientKind::Checkerboard { contrast } if contrast > 0.0 && contrast.is_finite() => Ok(()),
            CoefficientKind::Checkerboard { .. } => {
                Err(LodError::InvalidArgument("coefficient.contrast must be positive".into()))
            }
            CoefficientKind::Random { min, max } if min > 0.0 && max >= min && max.is_finite() => Ok(()),
            CoefficientKind::Random { .. } => {
                Err(LodError::InvalidArgument("coefficient bounds must satisfy 0 < min <= max".into()))
            }
        }
    }

    /// `(μ, ε)` sampled on the cells of `mesh` (cell centroids for the
    /// checkerboard, seeded draws for the random field).
    pub fn generate(&self, mesh: &Mesh, seed: u64) -> Result<(CoefficientField, CoefficientField)> {
        self.validate()?;
        let nc = mesh.num_cells();
        Ok(match *self {
            CoefficientKind::Identity => (CoefficientField::uniform(nc, IDENTITY), CoefficientField::uniform(nc, IDENTITY)),
            CoefficientKind::Checkerboard { contrast } => {
                let s = mesh
                    .structure
                    .ok_or_else(|| LodError::Unsupported("checkerboard needs a structured mesh".into()))?;
                let mu = (0..nc)
                    .map(|c| {
                        let x = mesh.centroid(c);
                        let parity: usize = (0..3)
                            .map(|d| {
                                let t = (x[d] - s.domain.min[d]) / (s.domain.max[d] - s.domain.min[d]);
                                ((t * s.n as f64).floor() as usize).min(s.n - 1)
                            })
                            .sum();
                        scaled_identity(if parity.is_multiple_of(2) { contrast } else { 1.0 })
                    })
                    .collect();
                (CoefficientField { values: mu }, CoefficientField::uniform(nc, IDENTITY))
            }
            CoefficientKind::Random { min, max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || scaled_identity(if max > min { rng.random_range(min..=max) } else { min });
                let mu: Vec<Tensor> = (0..nc).map(|_| draw()).collect();
                let eps: Vec<Tensor> = (0..nc).map(|_| draw()).collect();
                (CoefficientField { values: mu }, CoefficientField { values: eps })
            }
        })
    }
}

/// Right-hand side `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Zero,
    /// `(sin(π y) sin(π z), 0, 0)` in coordinates relative to the unit box.
    Smooth,
    Constant { value: [f64; 3] },
    /// One constant vector per fine cell.
    Cellwise { values: Vec<[f64; 3]> },
}

impl Source {
    pub fn label(&self) -> &'static str {
        match self {
            Source::Zero => "zero",
            Source::Smooth => "smooth",
            Source::Constant { .. } => "constant",
            Source::Cellwise { .. } => "cellwise",
        }
    }

    pub fn eval(&self, cell: usize, x: &Point) -> Point {
        match self {
            Source::Zero => [0.0; 3],
            Source::Smooth => {
                let pi = std::f64::consts::PI;
                [(pi * x[1]).sin() * (pi * x[2]).sin(), 0.0, 0.0]
            }
            Source::Constant { value } => *value,
            Source::Cellwise { values } => values[cell],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Zero => true,
            Source::Constant { value } => value.iter().all(|v| *v == 0.0),
            Source::Cellwise { values } => values.iter().flatten().all(|v| *v == 0.0),
            Source::Smooth => false,
        }
    }
}

/// Coefficients, frequency and source of one problem on the fine mesh.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub mu: CoefficientField,
    pub eps: CoefficientField,
    pub omega: f64,
    pub source: Source,
    /// Uniform ellipticity bounds over `μ` and `ε`.
    pub bounds: (f64, f64),
}

impl ProblemSpec {
    pub fn new(mu: CoefficientField, eps: CoefficientField, omega: f64, source: Source) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(LodError::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        if mu.values.len() != eps.values.len() {
            return Err(LodError::DimensionMismatch("mu and eps have different cell counts".into()));
        }
        if let Source::Cellwise { values } = &source {
            if values.len() != mu.values.len() {
                return Err(LodError::DimensionMismatch("cellwise source has the wrong length".into()));
            }
        }
        let (a, b) = mu.eigen_bounds()?;
        let (c, d) = eps.eigen_bounds()?;
        Ok(ProblemSpec { mu, eps, omega, source, bounds: (a.min(c), b.max(d)) })
    }

    pub fn from_kind(mesh: &Mesh, kind: &CoefficientKind, seed: u64, omega: f64, source: Source) -> Result<Self> {
        let (mu, eps) = kind.generate(mesh, seed)?;
        ProblemSpec::new(mu, eps, omega, source)
    }

    pub fn num_cells(&self) -> usize {
        self.mu.values.len()
    }
}

fn check_cells(mesh: &Mesh, field: &CoefficientField) -> Result<()> {
    if field.values.len() != mesh.num_cells() {
        return Err(LodError::DimensionMismatch(format!(
            "coefficient has {} cells, mesh has {}",
            field.values.len(),
            mesh.num_cells()
        )));
    }
    Ok(())
}

/// `a_curl · ∫ μ curl u · curl v + a_mass · ∫ ε u · v` over `cells`,
/// restricted to the free DOFs of `dofs`.
pub fn assemble_form(
    mesh: &Mesh,
    dofs: &DofMap,
    cells: &[usize],
    mu: &CoefficientField,
    eps: &CoefficientField,
    a_curl: f64,
    a_mass: f64,
) -> Result<SparseOperator> {
    check_cells(mesh, mu)?;
    check_cells(mesh, eps)?;
    let per_cell: Vec<Vec<(usize, usize, c64)>> = cells
        .par_iter()
        .map(|&c| {
            let p = mesh.cell_points(c);
            let s = &mesh.cell_edge_signs[c];
            let a = if a_curl != 0.0 { element_curl_curl(&p, s, &mu.values[c]) } else { [[0.0; 6]; 6] };
            let m = if a_mass != 0.0 { element_mass(&p, s, &eps.values[c]) } else { [[0.0; 6]; 6] };
            let idx = mesh.cell_edges[c].map(|e| dofs.index_of[e]);
            let mut out = Vec::with_capacity(36);
            for k in 0..6 {
                if idx[k] == NOT_FREE {
                    continue;
                }
                for l in 0..6 {
                    if idx[l] != NOT_FREE {
                        out.push((idx[k], idx[l], re(a_curl * a[k][l] + a_mass * m[k][l])));
                    }
                }
            }
            out
        })
        .collect();
    let n = dofs.num_free();
    Ok(SparseOperator::from_triplets(n, n, per_cell.into_iter().flatten().collect())?.with_symmetric(true))
}

pub fn assemble_curl_curl(mesh: &Mesh, dofs: &DofMap, mu: &CoefficientField) -> Result<SparseOperator> {
    mu.eigen_bounds()?;
    assemble_form(mesh, dofs, &dofs.cells, mu, mu, 1.0, 0.0)
}

pub fn assemble_mass(mesh: &Mesh, dofs: &DofMap, eps: &CoefficientField) -> Result<SparseOperator> {
    eps.eigen_bounds()?;
    assemble_form(mesh, dofs, &dofs.cells, eps, eps, 0.0, 1.0)
}

/// `B = A_curl(μ) − ω² M(ε)` over the cells of `dofs`.
pub fn assemble_b(spec: &ProblemSpec, mesh: &Mesh, dofs: &DofMap) -> Result<SparseOperator> {
    assemble_b_on(spec, mesh, dofs, &dofs.cells)
}

/// `B_G`: the form restricted to the given cells.
pub fn assemble_b_on(spec: &ProblemSpec, mesh: &Mesh, dofs: &DofMap, cells: &[usize]) -> Result<SparseOperator> {
    assemble_form(mesh, dofs, cells, &spec.mu, &spec.eps, 1.0, -spec.omega * spec.omega)
}

/// The `(·,·)_{curl,ω}` Gram matrix with identity coefficients.
pub fn norm_matrix(mesh: &Mesh, dofs: &DofMap, omega: f64) -> Result<SparseOperator> {
    let id = CoefficientField::uniform(mesh.num_cells(), IDENTITY);
    assemble_form(mesh, dofs, &dofs.cells, &id, &id, 1.0, omega * omega)
}

/// Load vector `(f, φ_e)` on the free DOFs, by the degree-5 rule.
pub fn assemble_load(mesh: &Mesh, dofs: &DofMap, f: &Source) -> Vec<c64> {
    let mut out = vec![ZERO; dofs.num_free()];
    if f.is_zero() {
        return out;
    }
    let rule = quadrature_rule();
    let per_cell: Vec<[f64; 6]> = dofs
        .cells
        .par_iter()
        .map(|&c| {
            let p = mesh.cell_points(c);
            let g = barycentric_gradients(&p);
            let vol = tet_volume(&p);
            let mut acc = [0.0; 6];
            for (l, w) in &rule {
                let x = combine(&p, l);
                let fx = f.eval(c, &x);
                let phi = whitney_values(&g, &mesh.cell_edge_signs[c], l);
                for k in 0..6 {
                    acc[k] += w * vol * dot(&fx, &phi[k]);
                }
            }
            acc
        })
        .collect();
    for (&c, acc) in dofs.cells.iter().zip(&per_cell) {
        for k in 0..6 {
            let i = dofs.index_of[mesh.cell_edges[c][k]];
            if i != NOT_FREE {
                out[i] += re(acc[k]);
            }
        }
    }
    out
}

/// Point with barycentric coordinates `l`.
pub fn combine(p: &[Point; 4], l: &[f64; 4]) -> Point {
    let mut x = [0.0; 3];
    for k in 0..4 {
        for d in 0..3 {
            x[d] += l[k] * p[k][d];
        }
    }
    x
}

/// Edge × vertex incidence: `(G p)_e = p(head) − p(tail)`.
pub fn discrete_gradient(mesh: &Mesh) -> SparseOperator {
    let mut t = Vec::with_capacity(2 * mesh.num_edges());
    for (e, [a, b]) in mesh.edges.iter().enumerate() {
        t.push((e, *a, -1.0));
        t.push((e, *b, 1.0));
    }
    SparseOperator::from_real_triplets(mesh.num_edges(), mesh.num_vertices(), t).unwrap()
}

/// `G` restricted to free edges and region-interior vertices.
pub fn discrete_gradient_free(mesh: &Mesh, dofs: &DofMap, interior_vertices: &[usize]) -> SparseOperator {
    discrete_gradient(mesh).select(&dofs.free, interior_vertices)
}

/// `‖v‖_{curl,ω}` of a free-DOF vector.
pub fn curl_omega_norm(v: &[c64], omega: f64, mesh: &Mesh, dofs: &DofMap) -> Result<f64> {
    let n = norm_matrix(mesh, dofs, omega)?;
    Ok(crate::sparse::energy(&n, v).max(0.0).sqrt())
}

/// `‖v‖²_{curl,ω}` contributed by each listed cell, for a full edge vector.
pub fn cellwise_norm_sq(mesh: &Mesh, v_full: &[c64], omega: f64, cells: &[usize]) -> Vec<f64> {
    cells
        .par_iter()
        .map(|&c| {
            let p = mesh.cell_points(c);
            let s = &mesh.cell_edge_signs[c];
            let a = element_curl_curl(&p, s, &IDENTITY);
            let m = element_mass(&p, s, &IDENTITY);
            let x = mesh.cell_edges[c].map(|e| v_full[e]);
            let mut acc = 0.0;
            for k in 0..6 {
                for l in 0..6 {
                    acc += (x[k].conj() * x[l]).re * (a[k][l] + omega * omega * m[k][l]);
                }
            }
            acc.max(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, BoxDomain};
    use crate::solver::{dense_real, symmetric_eigenvalues};

    fn reference_tet() -> [Point; 4] {
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    fn skewed_tet() -> [Point; 4] {
        [[0.1, 0.0, 0.2], [1.3, 0.2, 0.0], [0.2, 0.9, 0.1], [0.3, 0.4, 1.1]]
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn quadrature_integrates_degree_five() {
        let rule = quadrature_rule();
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-14);
        // ∫ λ^α / |T| = α! 3! / (|α| + 3)!
        for a in 0..=5usize {
            for b in 0..=5 - a {
                for c in 0..=5 - a - b {
                    let d = 5 - a - b - c;
                    for exps in [[a, b, c, 0], [a, b, 0, c], [a, 0, b, c], [a, b, c, d]] {
                        let deg: usize = exps.iter().sum();
                        let exact = exps.iter().map(|&k| factorial(k)).product::<f64>() * 6.0 / factorial(deg + 3);
                        let q: f64 = rule
                            .iter()
                            .map(|(l, w)| w * (0..4).map(|i| l[i].powi(exps[i] as i32)).product::<f64>())
                            .sum();
                        assert!((q - exact).abs() < 1e-14, "{exps:?}: {q} vs {exact}");
                    }
                }
            }
        }
    }

    /// Element matrices against brute-force quadrature of the basis functions.
    #[test]
    fn element_matrices_match_quadrature() {
        let rule = quadrature_rule();
        let signs = [1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let mu: Tensor = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]];
        for p in [reference_tet(), skewed_tet()] {
            let vol = tet_volume(&p);
            let g = barycentric_gradients(&p);
            let a = element_curl_curl(&p, &signs, &mu);
            let m = element_mass(&p, &signs, &mu);
            let curls = whitney_curls(&g, &signs);
            for k in 0..6 {
                for l in 0..6 {
                    let mq: f64 = rule
                        .iter()
                        .map(|(lam, w)| {
                            let phi = whitney_values(&g, &signs, lam);
                            w * vol * dot(&apply(&mu, &phi[k]), &phi[l])
                        })
                        .sum();
                    assert!((m[k][l] - mq).abs() < 1e-14, "mass {k} {l}");
                    let aq = vol * dot(&apply(&mu, &curls[k]), &curls[l]);
                    assert!((a[k][l] - aq).abs() < 1e-13, "curl {k} {l}");
                }
            }
            // curl of φ_ab = λ_a∇λ_b − λ_b∇λ_a, checked by finite differences
            let h = 1e-6;
            let x0 = combine(&p, &[0.3, 0.2, 0.25, 0.25]);
            for k in 0..6 {
                let field = |x: Point| whitney_values(&g, &signs, &barycentric(&p, &x))[k];
                let d = |i: usize, j: usize| {
                    let mut xp = x0;
                    let mut xm = x0;
                    xp[j] += h;
                    xm[j] -= h;
                    (field(xp)[i] - field(xm)[i]) / (2.0 * h)
                };
                let fd = [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)];
                for i in 0..3 {
                    assert!((fd[i] - curls[k][i]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn tangential_moments_are_unit() {
        let p = skewed_tet();
        let g = barycentric_gradients(&p);
        for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            let mut l = [0.0; 4];
            l[*a] = 0.5;
            l[*b] = 0.5;
            let phi = whitney_values(&g, &[1.0; 6], &l);
            for (j, [c, d]) in LOCAL_EDGES.iter().enumerate() {
                let mut lm = [0.0; 4];
                lm[*c] = 0.5;
                lm[*d] = 0.5;
                let val = dot(&whitney_values(&g, &[1.0; 6], &lm)[k], &sub(&p[*d], &p[*c]));
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((val - expect).abs() < 1e-14);
            }
            let _ = phi;
        }
    }

    #[test]
    fn relabeling_conjugates_by_signs() {
        // Swapping two vertices permutes the local edges and flips the sign
        // of the edges whose orientation reverses.
        let p = skewed_tet();
        let q = [p[1], p[0], p[2], p[3]];
        let a = element_mass(&p, &[1.0; 6], &IDENTITY);
        let b = element_mass(&q, &[1.0; 6], &IDENTITY);
        // local edge k of q in terms of p's edges (index, sign)
        let map = [(0, -1.0), (3, 1.0), (4, 1.0), (1, 1.0), (2, 1.0), (5, 1.0)];
        for k in 0..6 {
            for l in 0..6 {
                let (pk, sk) = map[k];
                let (pl, sl) = map[l];
                assert!((b[k][l] - sk * sl * a[pk][pl]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dof_counts() {
        let m1 = build_structured_mesh(1, BoxDomain::unit()).unwrap();
        let d1 = global_dof_map(&m1);
        assert_eq!(d1.num_dofs(), 19);
        // the Kuhn main diagonal of the single cube runs through its interior
        assert_eq!(d1.free, vec![m1.edges.iter().position(|&[a, b]| a == 0 && b == 7).unwrap()]);
        let m2 = build_structured_mesh(2, BoxDomain::unit()).unwrap();
        let d2 = global_dof_map(&m2);
        assert_eq!(d2.num_dofs(), 98);
        // oracle: an edge is free unless both endpoints lie on a common box face
        let on_face = |x: &Point, d: usize, v: f64| (x[d] - v).abs() < 1e-12;
        let free = m2
            .edges
            .iter()
            .filter(|[a, b]| {
                let (xa, xb) = (m2.vertices[*a], m2.vertices[*b]);
                !(0..3).any(|d| [0.0, 1.0].iter().any(|&v| on_face(&xa, d, v) && on_face(&xb, d, v)))
            })
            .count();
        assert_eq!(d2.num_free(), free);
        for c in 0..m2.num_cells() {
            assert_eq!(m2.cell_edges[c].len(), 6);
        }
    }

    #[test]
    fn curl_annihilates_gradients() {
        for n in [1, 2, 3] {
            let mesh = build_structured_mesh(n, BoxDomain::unit()).unwrap();
            // all edges free, so the full complex is tested
            let dofs = DofMap {
                free: (0..mesh.num_edges()).collect(),
                index_of: (0..mesh.num_edges()).collect(),
                essential: vec![false; mesh.num_edges()],
                cells: (0..mesh.num_cells()).collect(),
            };
            let mu = CoefficientKind::Random { min: 1.0, max: 10.0 }.generate(&mesh, 3).unwrap().0;
            let a = assemble_curl_curl(&mesh, &dofs, &mu).unwrap();
            let g = discrete_gradient(&mesh);
            let ag = a.matmul(&g).unwrap();
            assert!(ag.max_abs() <= 1e-12 * a.max_abs(), "n = {n}");
            for i in 0..g.nrows() {
                let s: c64 = g.row(i).map(|(_, v)| v).sum();
                assert_eq!(s, ZERO);
            }
        }
    }

    #[test]
    fn gradient_rank_on_free_dofs() {
        for n in [2, 3] {
            let mesh = build_structured_mesh(n, BoxDomain::unit()).unwrap();
            let region = Region::whole(&mesh);
            let dofs = build_dof_map(&mesh, &region);
            let g = discrete_gradient_free(&mesh, &dofs, &region.interior_vertices);
            let gd = dense_real(&g);
            let sv = gd.singular_values().unwrap();
            let rank = sv.iter().filter(|s| **s > 1e-10).count();
            assert_eq!(rank, (n - 1).pow(3));
        }
    }

    #[test]
    fn scaling_symmetry_and_definiteness() {
        let mesh = build_structured_mesh(2, BoxDomain::unit()).unwrap();
        let dofs = global_dof_map(&mesh);
        let (mu, eps) = CoefficientKind::Checkerboard { contrast: 10.0 }.generate(&mesh, 0).unwrap();
        let a = assemble_curl_curl(&mesh, &dofs, &mu).unwrap();
        let a2 = assemble_curl_curl(&mesh, &dofs, &mu.scaled(2.0)).unwrap();
        assert_eq!(a2, a.scale(re(2.0)));
        let m = assemble_mass(&mesh, &dofs, &eps).unwrap();
        let m2 = assemble_mass(&mesh, &dofs, &eps.scaled(2.0)).unwrap();
        assert_eq!(m2, m.scale(re(2.0)));
        let ev = symmetric_eigenvalues(&dense_real(&m)).unwrap();
        assert!(ev[0] > 0.0);

        let id = CoefficientField::uniform(mesh.num_cells(), IDENTITY);
        let small = ProblemSpec::new(id.clone(), id.clone(), 1e-9, Source::Zero).unwrap();
        let b0 = assemble_b(&small, &mesh, &dofs).unwrap();
        let a_id = assemble_curl_curl(&mesh, &dofs, &id).unwrap();
        assert!(b0.add_scaled(re(-1.0), &a_id).unwrap().max_abs() < 1e-15);

        let spec = ProblemSpec::new(id.clone(), id, 12.0, Source::Zero).unwrap();
        let b = assemble_b(&spec, &mesh, &dofs).unwrap();
        assert!(b.symmetry_defect() <= 1e-13 * b.max_abs());
        let ev = symmetric_eigenvalues(&dense_real(&b)).unwrap();
        assert!(ev[0] < 0.0 && *ev.last().unwrap() > 0.0);
    }

    #[test]
    fn patch_form_is_sum_of_cell_forms() {
        let mesh = build_structured_mesh(2, BoxDomain::unit()).unwrap();
        let dofs = global_dof_map(&mesh);
        let spec = ProblemSpec::from_kind(&mesh, &CoefficientKind::Random { min: 1.0, max: 10.0 }, 7, 2.0, Source::Zero)
            .unwrap();
        let full = assemble_b(&spec, &mesh, &dofs).unwrap();
        let mut sum = SparseOperator::zeros(full.nrows(), full.ncols());
        for c in 0..mesh.num_cells() {
            sum = sum.add_scaled(re(1.0), &assemble_b_on(&spec, &mesh, &dofs, &[c]).unwrap()).unwrap();
        }
        assert!(sum.add_scaled(re(-1.0), &full).unwrap().max_abs() < 1e-12 * full.max_abs());
    }

    #[test]
    fn invalid_coefficients_rejected() {
        let mut f = CoefficientField::uniform(3, IDENTITY);
        f.values[1][2][2] = -1.0;
        match f.eigen_bounds() {
            Err(LodError::InvalidCoefficient { cell, .. }) => assert_eq!(cell, 1),
            other => panic!("unexpected {other:?}"),
        }
        f.values[1] = [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(f.eigen_bounds().is_err());
        let t: Tensor = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let (lo, hi) = symmetric3_eigen_bounds(&t);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
        assert!(ProblemSpec::new(f.clone(), f, -1.0, Source::Zero).is_err());
    }

    #[test]
    fn load_vector_properties() {
        let mesh = build_structured_mesh(2, BoxDomain::unit()).unwrap();
        let dofs = global_dof_map(&mesh);
        assert!(assemble_load(&mesh, &dofs, &Source::Zero).iter().all(|v| *v == ZERO));
        // constant f: (f, φ_ab) = |T| f·(∇λ_b − ∇λ_a)/4 exactly
        let fval = [0.3, -1.2, 0.7];
        let load = assemble_load(&mesh, &dofs, &Source::Constant { value: fval });
        let mut exact = vec![0.0; mesh.num_edges()];
        for c in 0..mesh.num_cells() {
            let p = mesh.cell_points(c);
            let g = barycentric_gradients(&p);
            for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                exact[mesh.cell_edges[c][k]] +=
                    mesh.cell_edge_signs[c][k] * tet_volume(&p) * dot(&fval, &sub(&g[*b], &g[*a])) / 4.0;
            }
        }
        for (k, &e) in dofs.free.iter().enumerate() {
            assert!((load[k].re - exact[e]).abs() < 1e-15);
        }
        let f1: Vec<[f64; 3]> = (0..mesh.num_cells()).map(|c| [c as f64, 1.0, -0.5]).collect();
        let f2: Vec<[f64; 3]> = (0..mesh.num_cells()).map(|c| [0.2, (c % 5) as f64, 3.0]).collect();
        let f12: Vec<[f64; 3]> = f1.iter().zip(&f2).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
        let l1 = assemble_load(&mesh, &dofs, &Source::Cellwise { values: f1 });
        let l2 = assemble_load(&mesh, &dofs, &Source::Cellwise { values: f2 });
        let l12 = assemble_load(&mesh, &dofs, &Source::Cellwise { values: f12 });
        for k in 0..l1.len() {
            assert!((l1[k] + l2[k] - l12[k]).norm() < 1e-13);
        }
        assert!(assemble_load(&mesh, &dofs, &Source::Smooth).iter().any(|v| v.re != 0.0));
    }

    #[test]
    fn norm_of_gradient_is_omega_times_l2() {
        let mesh = build_structured_mesh(2, BoxDomain::unit()).unwrap();
        let region = Region::whole(&mesh);
        let dofs = build_dof_map(&mesh, &region);
        let g = discrete_gradient_free(&mesh, &dofs, &region.interior_vertices);
        let p: Vec<c64> = (0..g.ncols()).map(|i| re(1.0 + i as f64)).collect();
        let v = g.matvec(&p);
        let id = CoefficientField::uniform(mesh.num_cells(), IDENTITY);
        let mass = assemble_mass(&mesh, &dofs, &id).unwrap();
        let l2 = crate::sparse::energy(&mass, &v).sqrt();
        for omega in [0.5, 1.0, 3.0] {
            let n = curl_omega_norm(&v, omega, &mesh, &dofs).unwrap();
            assert!((n - omega * l2).abs() < 1e-12 * n);
        }
        assert_eq!(curl_omega_norm(&vec![ZERO; dofs.num_free()], 1.0, &mesh, &dofs).unwrap(), 0.0);
        let full = dofs.expand(&v);
        let parts: f64 = cellwise_norm_sq(&mesh, &full, 2.0, &region.cells).iter().sum();
        assert!((parts.sqrt() - 2.0 * l2).abs() < 1e-12 * l2);
    }
}
