//! Coarse interpolation from fine to coarse edge elements.
//!
//! The operator `P` maps fine edge DOFs (zero tangential trace on the region
//! boundary) to coarse edge DOFs. It is a projection (`P R = I`), it commutes
//! with the gradient (`P G_h = G_H Q` for a nodal companion `Q`) and row `E`
//! only reads fine DOFs inside the first vertex layer around the coarse edge.
//!
//! Construction of the row of a coarse edge `E = (z₁, z₂)`:
//!
//! 1. `Q`: vertex `z` reads the L² dual basis of `z` averaged over one coarse
//!    cell `T_z` of its star. Vertices on the region boundary carry no DOF.
//! 2. `b_E`: the L² dual functional of the edge function on one coarse cell
//!    `T_E ∋ E`. It already satisfies `b_E(R φ_E') = δ_EE'`.
//! 3. `f_E = G y` fixes the gradient defect: `Gᵀ f_E = ψ_z₂ − ψ_z₁ − Gᵀ b_E`
//!    on the vertices of `U = ω_E ∪ T_z₁ ∪ T_z₂` (a graph-Laplacian solve,
//!    homogeneous on region-boundary vertices).
//! 4. Cell curl means `Z_{K,j}(v) = |K|⁻¹ ∫_K (curl v)_j` vanish on gradients;
//!    a least-squares combination of them cancels `f_E(R φ_E')` so that the
//!    projection property is restored without touching step 3.

use rayon::prelude::*;

use faer::linalg::solvers::SolveCore;
use faer::{c64, Mat};

use crate::error::{LodError, Result};
use crate::fem::{
    barycentric, barycentric_gradients, build_dof_map, element_mass, whitney_curls, whitney_values, DofMap,
    IDENTITY,
};
use crate::mesh::{dot, sub, MeshPair, Patch, Region};
use crate::solver::{lstsq_min_norm, DirectSolver};
use crate::sparse::{re, SparseOperator};

/// Layers of coarse cells around `ω_E` that a row of `P` may read.
pub const LOCALITY_RADIUS: usize = 1;

/// `P`, `R` and `Q` on the free DOFs of a (coarse, fine) region.
#[derive(Clone, Debug)]
pub struct InterpolationPair {
    /// Coarse free edges × fine free edges.
    pub p: SparseOperator,
    /// Fine free edges × coarse free edges.
    pub r: SparseOperator,
    /// Coarse interior vertices × fine interior vertices.
    pub q: SparseOperator,
    pub coarse_dofs: DofMap,
    pub fine_dofs: DofMap,
    pub coarse_vertices: Vec<usize>,
    pub fine_vertices: Vec<usize>,
    pub locality_radius: usize,
}

/// Tangential moments of the coarse basis on every fine edge: a fine-edge ×
/// coarse-edge matrix over all edges (boundary included).
pub fn embed_coarse(pair: &MeshPair) -> Result<SparseOperator> {
    let (coarse, fine) = (&pair.coarse, &pair.fine);
    if pair.fine_to_coarse.len() != fine.num_cells() {
        return Err(LodError::InvalidArgument("mesh pair is not nested".into()));
    }
    if pair.factor == 1 {
        return Ok(SparseOperator::identity(coarse.num_edges()));
    }
    let rows: Vec<Vec<(usize, usize, c64)>> = (0..fine.num_edges())
        .into_par_iter()
        .map(|e| {
            let k = pair.coarse_cell_of_fine_edge(e);
            let p = coarse.cell_points(k);
            let g = barycentric_gradients(&p);
            let lam = barycentric(&p, &fine.edge_midpoint(e));
            let t = fine.edge_vector(e);
            let phi = whitney_values(&g, &coarse.cell_edge_signs[k], &lam);
            let vals: Vec<f64> = phi.iter().map(|v| dot(v, &t)).collect();
            let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (0..6)
                .filter(|&j| vals[j].abs() > 1e-13 * scale)
                .map(|j| (e, coarse.cell_edges[k][j], re(vals[j])))
                .collect()
        })
        .collect();
    SparseOperator::from_triplets(fine.num_edges(), coarse.num_edges(), rows.into_iter().flatten().collect())
}

/// Global interpolation for `H₀(curl)` (essential on `∂Ω`).
pub fn build_interpolation(pair: &MeshPair) -> Result<InterpolationPair> {
    let r_full = embed_coarse(pair)?;
    build_on_region(pair, &r_full, &Region::whole(&pair.coarse))
}

/// Interpolation onto coarse functions with zero tangential trace on `∂Ω_T`,
/// reading only fine DOFs inside `Ω_T`.
pub fn build_interpolation_local(pair: &MeshPair, patch: &Patch) -> Result<InterpolationPair> {
    let r_full = embed_coarse(pair)?;
    build_interpolation_on(pair, &r_full, &patch.region)
}

/// As [`build_interpolation_local`], reusing a precomputed full embedding.
pub fn build_interpolation_on(pair: &MeshPair, r_full: &SparseOperator, region: &Region) -> Result<InterpolationPair> {
    if region.cells.is_empty() {
        return Err(LodError::InvalidArgument("empty patch".into()));
    }
    build_on_region(pair, r_full, region)
}

struct Context<'a> {
    pair: &'a MeshPair,
    r_full: &'a SparseOperator,
    fine_region: Region,
    coarse_vertex_interior: Vec<bool>,
    coarse_edge_interior: Vec<bool>,
    fine_vertex_interior: Vec<bool>,
    fine_edge_free: Vec<bool>,
}

fn build_on_region(pair: &MeshPair, r_full: &SparseOperator, region: &Region) -> Result<InterpolationPair> {
    let (coarse, fine) = (&pair.coarse, &pair.fine);
    let fine_region = pair.fine_region(region);
    let mut coarse_vertex_interior = vec![false; coarse.num_vertices()];
    for &v in &region.interior_vertices {
        coarse_vertex_interior[v] = true;
    }
    let mut coarse_edge_interior = vec![false; coarse.num_edges()];
    for &e in &region.interior_edges {
        coarse_edge_interior[e] = true;
    }
    let mut fine_vertex_interior = vec![false; fine.num_vertices()];
    for &v in &fine_region.interior_vertices {
        fine_vertex_interior[v] = true;
    }
    let mut fine_edge_free = vec![false; fine.num_edges()];
    for &e in &fine_region.interior_edges {
        fine_edge_free[e] = true;
    }
    let ctx = Context {
        pair,
        r_full,
        fine_region,
        coarse_vertex_interior,
        coarse_edge_interior,
        fine_vertex_interior,
        fine_edge_free,
    };
    let coarse_dofs = build_dof_map(coarse, region);
    let fine_dofs = build_dof_map(fine, &ctx.fine_region);

    let psi: Vec<Vec<(usize, f64)>> = region.interior_vertices.par_iter().map(|&z| ctx.nodal_row(z)).collect();
    let mut psi_of = vec![usize::MAX; coarse.num_vertices()];
    for (k, &z) in region.interior_vertices.iter().enumerate() {
        psi_of[z] = k;
    }

    let rows: Vec<Result<Vec<(usize, f64)>>> =
        region.interior_edges.par_iter().map(|&e| ctx.edge_row(e, &psi, &psi_of)).collect();

    let mut p_trip = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        for (e, v) in row? {
            p_trip.push((i, fine_dofs.index_of[e], re(v)));
        }
    }
    let p = SparseOperator::from_triplets(coarse_dofs.num_free(), fine_dofs.num_free(), p_trip)?;

    let mut fine_vertex_col = vec![usize::MAX; fine.num_vertices()];
    for (k, &v) in ctx.fine_region.interior_vertices.iter().enumerate() {
        fine_vertex_col[v] = k;
    }
    let mut q_trip = Vec::new();
    for (i, row) in psi.iter().enumerate() {
        for &(v, w) in row {
            if fine_vertex_col[v] != usize::MAX {
                q_trip.push((i, fine_vertex_col[v], re(w)));
            }
        }
    }
    let q = SparseOperator::from_triplets(
        region.interior_vertices.len(),
        ctx.fine_region.interior_vertices.len(),
        q_trip,
    )?;
    let r = r_full.select(&fine_dofs.free, &coarse_dofs.free);
    Ok(InterpolationPair {
        p,
        r,
        q,
        coarse_dofs,
        fine_dofs,
        coarse_vertices: region.interior_vertices.clone(),
        fine_vertices: ctx.fine_region.interior_vertices.clone(),
        locality_radius: LOCALITY_RADIUS,
    })
}

/// Sorted fine vertices and edges of the fine cells inside the given coarse cells.
fn fine_entities(pair: &MeshPair, coarse_cells: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let cells = pair.fine_cells_of(coarse_cells);
    let mut verts: Vec<usize> = cells.iter().flat_map(|&c| pair.fine.cells[c]).collect();
    let mut edges: Vec<usize> = cells.iter().flat_map(|&c| pair.fine.cell_edges[c]).collect();
    verts.sort_unstable();
    verts.dedup();
    edges.sort_unstable();
    edges.dedup();
    (cells, verts, edges)
}

fn local_index(sorted: &[usize], x: usize) -> usize {
    sorted.binary_search(&x).expect("entity outside the local patch")
}

/// Connected pieces of the region boundary inside a union of coarse cells,
/// joined along coarse boundary edges of those cells.
struct BoundaryComponents {
    /// Sorted boundary vertices of the cells and their component.
    vertices: Vec<usize>,
    component: Vec<usize>,
    count: usize,
}

impl BoundaryComponents {
    fn of_coarse_vertex(&self, z: usize) -> usize {
        self.component[local_index(&self.vertices, z)]
    }

    /// A fine boundary vertex lies in the relative interior of a coarse
    /// boundary simplex; any vertex of that simplex names its component.
    fn of_fine_vertex(&self, pair: &MeshPair, u_cells: &[usize], v: usize) -> usize {
        let k = pair.fine.vertex_cells[v]
            .iter()
            .map(|&t| pair.fine_to_coarse[t])
            .find(|k| u_cells.binary_search(k).is_ok())
            .expect("fine vertex outside the coarse cells");
        let lam = barycentric(&pair.coarse.cell_points(k), &pair.fine.vertices[v]);
        let best = (0..4).max_by(|&a, &b| lam[a].total_cmp(&lam[b]).then(b.cmp(&a))).unwrap();
        self.of_coarse_vertex(pair.coarse.cells[k][best])
    }
}

impl Context<'_> {
    /// Coarse cell of the star of `z` used for its nodal average: the one whose
    /// centroid lies furthest along a fixed generic direction.
    fn star_cell(&self, z: usize) -> usize {
        let coarse = &self.pair.coarse;
        let x = coarse.vertices[z];
        let dir = [3.0, 2.0, 1.0];
        *coarse.vertex_cells[z]
            .iter()
            .max_by(|&&a, &&b| {
                let da = dot(&sub(&coarse.centroid(a), &x), &dir);
                let db = dot(&sub(&coarse.centroid(b), &x), &dir);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("vertex without cells")
    }

    fn boundary_components(&self, u_cells: &[usize]) -> BoundaryComponents {
        let coarse = &self.pair.coarse;
        let mut vertices: Vec<usize> = u_cells
            .iter()
            .flat_map(|&k| coarse.cells[k])
            .filter(|&z| !self.coarse_vertex_interior[z])
            .collect();
        vertices.sort_unstable();
        vertices.dedup();
        let mut parent: Vec<usize> = (0..vertices.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for &k in u_cells {
            for &e in &coarse.cell_edges[k] {
                if self.coarse_edge_interior[e] {
                    continue;
                }
                let [a, b] = coarse.edges[e];
                let (ra, rb) = (find(&mut parent, local_index(&vertices, a)), find(&mut parent, local_index(&vertices, b)));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut label = vec![usize::MAX; vertices.len()];
        let mut component = vec![0; vertices.len()];
        let mut count = 0;
        for i in 0..vertices.len() {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = count;
                count += 1;
            }
            component[i] = label[r];
        }
        BoundaryComponents { vertices, component, count }
    }

    /// `ψ_z(p) = ∫_{T_z} d_z p` with the P1 dual basis `d_z = (20 λ_z − 4)/|T_z|`.
    fn nodal_row(&self, z: usize) -> Vec<(usize, f64)> {
        let (coarse, fine) = (&self.pair.coarse, &self.pair.fine);
        let k = self.star_cell(z);
        let pk = coarse.cell_points(k);
        let local = coarse.cells[k].iter().position(|&v| v == z).unwrap();
        let vol_k = coarse.volume(k);
        let dual = |x: &[f64; 3]| (20.0 * barycentric(&pk, x)[local] - 4.0) / vol_k;
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for &t in &self.pair.coarse_children[k] {
            let vt = fine.volume(t);
            let vals: Vec<f64> = fine.cells[t].iter().map(|&v| dual(&fine.vertices[v])).collect();
            let total: f64 = vals.iter().sum();
            for (i, &v) in fine.cells[t].iter().enumerate() {
                acc.push((v, vt / 20.0 * (total + vals[i])));
            }
        }
        acc.sort_by_key(|a| a.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (v, w) in acc {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => out.push((v, w)),
            }
        }
        out
    }

    fn edge_row(&self, ce: usize, psi: &[Vec<(usize, f64)>], psi_of: &[usize]) -> Result<Vec<(usize, f64)>> {
        let (coarse, fine) = (&self.pair.coarse, &self.pair.fine);
        let [z1, z2] = coarse.edges[ce];
        let fail = |reason: String| LodError::Construction { entity: format!("edge {ce} ({z1}, {z2})"), reason };

        // U = ω_E ∪ T_z₁ ∪ T_z₂
        let mut u_cells: Vec<usize> = coarse.edge_cells[ce].clone();
        for z in [z1, z2] {
            if self.coarse_vertex_interior[z] {
                u_cells.push(self.star_cell(z));
            }
        }
        u_cells.sort_unstable();
        u_cells.dedup();
        let (fine_cells, u_verts, u_edges) = fine_entities(self.pair, &u_cells);
        let _ = fine_cells;
        let n_e = u_edges.len();

        // b_E on the coarse cell T_E
        let t_e = *coarse.edge_cells[ce].iter().min().unwrap();
        let k_local = coarse.cell_edges[t_e].iter().position(|&x| x == ce).unwrap();
        let pk = coarse.cell_points(t_e);
        let mk = element_mass(&pk, &coarse.cell_edge_signs[t_e], &IDENTITY);
        let mut unit = Mat::<f64>::from_fn(6, 1, |i, _| if i == k_local { 1.0 } else { 0.0 });
        Mat::<f64>::from_fn(6, 6, |i, j| mk[i][j])
            .partial_piv_lu()
            .solve_in_place_with_conj(faer::Conj::No, unit.as_mut());
        let coef: Vec<f64> = (0..6).map(|k| unit[(k, 0)]).collect();
        let mut w = vec![0.0; n_e];
        let (te_cells, _, te_edges) = fine_entities(self.pair, &[t_e]);
        for &e in &te_edges {
            let mut val = 0.0;
            for (j, v) in self.r_full.row(e) {
                if let Some(k) = coarse.cell_edges[t_e].iter().position(|&x| x == j) {
                    val += coef[k] * v.re;
                }
            }
            w[local_index(&u_edges, e)] = val;
        }
        let mut c = vec![0.0; n_e];
        for &t in &te_cells {
            let m = element_mass(&fine.cell_points(t), &fine.cell_edge_signs[t], &IDENTITY);
            let idx = fine.cell_edges[t].map(|e| local_index(&u_edges, e));
            for k in 0..6 {
                for l in 0..6 {
                    c[idx[k]] += m[k][l] * w[idx[l]];
                }
            }
        }

        // ρ = ψ_z₂ − ψ_z₁ − Gᵀ b_E on the vertices of U
        let nv = u_verts.len();
        let mut rho = vec![0.0; nv];
        for (k, &e) in u_edges.iter().enumerate() {
            let [a, b] = fine.edges[e];
            rho[local_index(&u_verts, a)] += c[k];
            rho[local_index(&u_verts, b)] -= c[k];
        }
        for (z, sign) in [(z2, 1.0), (z1, -1.0)] {
            if psi_of[z] != usize::MAX {
                for &(v, wv) in &psi[psi_of[z]] {
                    rho[local_index(&u_verts, v)] += sign * wv;
                }
            }
        }

        // Gᵀ G y = ρ on the interior vertices of U. Region-boundary vertices
        // form one floating node per connected piece of the boundary inside U
        // (pieces taken along coarse boundary edges); the node balances the
        // summed equation of its piece. A boundary endpoint z of E carries
        // unit mass on its piece instead of a nodal average.
        let components = self.boundary_components(&u_cells);
        let mut node = vec![usize::MAX; nv];
        let mut n_nodes = 0;
        for (k, &v) in u_verts.iter().enumerate() {
            if self.fine_vertex_interior[v] {
                node[k] = n_nodes;
                n_nodes += 1;
            }
        }
        let n_interior = n_nodes;
        n_nodes += components.count;
        for (k, &v) in u_verts.iter().enumerate() {
            if node[k] == usize::MAX {
                node[k] = n_interior + components.of_fine_vertex(self.pair, &u_cells, v);
            }
        }
        let mut node_rho = vec![0.0; n_nodes];
        for k in 0..nv {
            node_rho[node[k]] += rho[k];
        }
        for (z, sign) in [(z2, 1.0), (z1, -1.0)] {
            if !self.coarse_vertex_interior[z] {
                node_rho[n_interior + components.of_coarse_vertex(z)] += sign;
            }
        }
        // the quotient graph is connected and ρ sums to zero: pin node 0
        let mut y = vec![0.0; nv];
        if n_nodes > 1 {
            let n_unknown = n_nodes - 1;
            let mut trip = Vec::with_capacity(4 * n_e);
            for &e in &u_edges {
                let [a, b] = fine.edges[e];
                let (na, nb) = (node[local_index(&u_verts, a)], node[local_index(&u_verts, b)]);
                if na == nb {
                    continue;
                }
                for (i, j) in [(na, nb), (nb, na)] {
                    if i > 0 {
                        trip.push((i - 1, i - 1, 1.0));
                        if j > 0 {
                            trip.push((i - 1, j - 1, -1.0));
                        }
                    }
                }
            }
            let lap = SparseOperator::from_real_triplets(n_unknown, n_unknown, trip)?;
            let rhs: Vec<c64> = node_rho[1..].iter().map(|&v| re(v)).collect();
            let solver = DirectSolver::factor(&lap).map_err(|e| fail(e.reason))?;
            let sol = solver
                .solve_checked(&lap, &[rhs], 1e-11)
                .map_err(|e| fail(format!("gradient correction: {}", e.reason)))?;
            for k in 0..nv {
                if node[k] > 0 {
                    y[k] = sol[0][node[k] - 1].re;
                }
            }
        }
        for (k, &e) in u_edges.iter().enumerate() {
            let [a, b] = fine.edges[e];
            c[k] += y[local_index(&u_verts, b)] - y[local_index(&u_verts, a)];
        }

        // Curl means on the coarse cells of U.
        let mut z_funcs: Vec<Vec<(usize, f64)>> = Vec::with_capacity(3 * u_cells.len());
        for &k in &u_cells {
            let vol_k = coarse.volume(k);
            let mut cols = vec![Vec::new(); 3];
            for &t in &self.pair.coarse_children[k] {
                let pt = fine.cell_points(t);
                let curls = whitney_curls(&barycentric_gradients(&pt), &fine.cell_edge_signs[t]);
                let wt = fine.volume(t) / vol_k;
                for l in 0..6 {
                    let idx = local_index(&u_edges, fine.cell_edges[t][l]);
                    for j in 0..3 {
                        cols[j].push((idx, wt * curls[l][j]));
                    }
                }
            }
            for mut col in cols {
                col.sort_by_key(|a| a.0);
                let mut merged: Vec<(usize, f64)> = Vec::new();
                for (i, v) in col {
                    match merged.last_mut() {
                        Some(last) if last.0 == i => last.1 += v,
                        _ => merged.push((i, v)),
                    }
                }
                z_funcs.push(merged);
            }
        }

        // Coarse test functions: region-interior edges of the cells of U.
        let mut tests: Vec<usize> = u_cells
            .iter()
            .flat_map(|&k| coarse.cell_edges[k])
            .filter(|&e| self.coarse_edge_interior[e])
            .collect();
        tests.sort_unstable();
        tests.dedup();
        // R restricted to the edges of U, by test function
        let mut r_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); tests.len()];
        for (k, &e) in u_edges.iter().enumerate() {
            for (j, v) in self.r_full.row(e) {
                if let Ok(t) = tests.binary_search(&j) {
                    r_cols[t].push((k, v.re));
                }
            }
        }
        let apply = |f: &[f64], col: &[(usize, f64)]| col.iter().map(|&(k, v)| f[k] * v).sum::<f64>();
        let rhs: Vec<f64> = tests
            .iter()
            .enumerate()
            .map(|(t, &e)| if e == ce { 1.0 } else { 0.0 } - apply(&c, &r_cols[t]))
            .collect();
        let mut a = Mat::<f64>::zeros(tests.len(), z_funcs.len());
        for (t, col) in r_cols.iter().enumerate() {
            let mut dense_col = vec![0.0; n_e];
            for &(k, v) in col {
                dense_col[k] = v;
            }
            for (j, zf) in z_funcs.iter().enumerate() {
                a[(t, j)] = zf.iter().map(|&(k, v)| v * dense_col[k]).sum();
            }
        }
        let alpha = lstsq_min_norm(&a, &rhs, 1e-12)?;
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for t in 0..tests.len() {
            let got: f64 = (0..z_funcs.len()).map(|j| a[(t, j)] * alpha[j]).sum();
            if (got - rhs[t]).abs() > 1e-10 * scale {
                return Err(fail(format!(
                    "projection defect {:.3e} on coarse edge {} cannot be removed by curl moments",
                    (got - rhs[t]).abs(),
                    tests[t]
                )));
            }
        }
        for (j, zf) in z_funcs.iter().enumerate() {
            for &(k, v) in zf {
                c[k] += alpha[j] * v;
            }
        }

        Ok(u_edges
            .iter()
            .zip(&c)
            .filter(|(e, v)| self.fine_edge_free[**e] && **v != 0.0)
            .map(|(&e, &v)| (e, v))
            .collect())
    }
}
