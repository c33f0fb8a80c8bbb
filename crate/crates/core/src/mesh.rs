//! Structured tetrahedral meshes of axis-aligned boxes, nested mesh pairs and
//! element patches.
//!
//! Boxes are split into `n³` sub-cubes and every sub-cube into the six Kuhn
//! tetrahedra sharing its main diagonal. Each tetrahedron is the chain
//! `v0 → v0+e_p0 → v0+e_p0+e_p1 → v0+e_p0+e_p1+e_p2` for a permutation `p` of
//! the axes, so its vertices are listed in increasing global index. Edges are
//! oriented from the lower to the higher global vertex index and all incidence
//! signs derive from that convention.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use crate::error::{LodError, Result};

pub type Point = [f64; 3];

/// Local vertex pairs of the six edges of a tetrahedron.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local vertex triples of the four faces; face `i` is opposite vertex `i`.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

const KUHN_PERMUTATIONS: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Axis-aligned box `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxDomain {
    pub min: Point,
    pub max: Point,
}

impl BoxDomain {
    pub fn unit() -> Self {
        BoxDomain { min: [0.0; 3], max: [1.0; 3] }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|d| self.max[d] - self.min[d]).product()
    }

    fn validate(&self) -> Result<()> {
        for d in 0..3 {
            if !(self.max[d] > self.min[d]) || !self.min[d].is_finite() || !self.max[d].is_finite() {
                return Err(LodError::InvalidArgument(format!(
                    "box extent along axis {d} is empty or not finite"
                )));
            }
        }
        Ok(())
    }
}

/// Lattice description of a structured mesh; needed for point location and
/// nested refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Structure {
    pub n: usize,
    pub domain: BoxDomain,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Vertex indices of each cell, in increasing order.
    pub cells: Vec<[usize; 4]>,
    /// Oriented edges `[low, high]`.
    pub edges: Vec<[usize; 2]>,
    /// Faces as increasing vertex triples.
    pub faces: Vec<[usize; 3]>,
    pub cell_edges: Vec<[usize; 6]>,
    /// Orientation of the local edge (`LOCAL_EDGES`) relative to the global edge.
    pub cell_edge_signs: Vec<[f64; 6]>,
    pub cell_faces: Vec<[usize; 4]>,
    /// Edges `[ab, ac, bc]` of each face `[a, b, c]`.
    pub face_edges: Vec<[usize; 3]>,
    pub vertex_on_boundary: Vec<bool>,
    pub edge_on_boundary: Vec<bool>,
    pub face_on_boundary: Vec<bool>,
    pub vertex_cells: Vec<Vec<usize>>,
    pub edge_cells: Vec<Vec<usize>>,
    pub face_cells: Vec<Vec<usize>>,
    /// Maximum cell diameter.
    pub mesh_size: f64,
    pub structure: Option<Structure>,
}

impl Mesh {
    /// Builds a mesh from raw vertices and cells, deriving all entity tables.
    pub fn from_cells(vertices: Vec<Point>, cells: Vec<[usize; 4]>) -> Result<Mesh> {
        let nv = vertices.len();
        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut face_index: HashMap<[usize; 3], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut faces = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut cell_edge_signs = Vec::with_capacity(cells.len());
        let mut cell_faces = Vec::with_capacity(cells.len());
        let mut vertex_cells = vec![Vec::new(); nv];

        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                if v >= nv {
                    return Err(LodError::InvalidArgument(format!(
                        "cell {c} references vertex {v} but only {nv} vertices exist"
                    )));
                }
                vertex_cells[v].push(c);
            }
            let mut ce = [0usize; 6];
            let mut cs = [0f64; 6];
            for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let (va, vb) = (cell[*a], cell[*b]);
                let key = if va < vb { [va, vb] } else { [vb, va] };
                let next = edges.len();
                let idx = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    next
                });
                ce[k] = idx;
                cs[k] = if va < vb { 1.0 } else { -1.0 };
            }
            let mut cf = [0usize; 4];
            for (k, tri) in LOCAL_FACES.iter().enumerate() {
                let mut key = [cell[tri[0]], cell[tri[1]], cell[tri[2]]];
                key.sort_unstable();
                let next = faces.len();
                cf[k] = *face_index.entry(key).or_insert_with(|| {
                    faces.push(key);
                    next
                });
            }
            cell_edges.push(ce);
            cell_edge_signs.push(cs);
            cell_faces.push(cf);
        }

        let mut edge_cells = vec![Vec::new(); edges.len()];
        let mut face_cells = vec![Vec::new(); faces.len()];
        for c in 0..cells.len() {
            for &e in &cell_edges[c] {
                edge_cells[e].push(c);
            }
            for &f in &cell_faces[c] {
                face_cells[f].push(c);
            }
        }

        let face_edges: Vec<[usize; 3]> = faces
            .iter()
            .map(|&[a, b, c]| [edge_index[&[a, b]], edge_index[&[a, c]], edge_index[&[b, c]]])
            .collect();
        let mut vertex_on_boundary = vec![false; nv];
        let mut edge_on_boundary = vec![false; edges.len()];
        let face_on_boundary: Vec<bool> = face_cells.iter().map(|cs| cs.len() == 1).collect();
        for (f, face) in faces.iter().enumerate() {
            if face_on_boundary[f] {
                for &v in face {
                    vertex_on_boundary[v] = true;
                }
                for &e in &face_edges[f] {
                    edge_on_boundary[e] = true;
                }
            }
        }

        let mut mesh_size: f64 = 0.0;
        for cell in &cells {
            for [a, b] in LOCAL_EDGES {
                mesh_size = mesh_size.max(distance(&vertices[cell[a]], &vertices[cell[b]]));
            }
        }

        Ok(Mesh {
            vertices,
            cells,
            edges,
            faces,
            cell_edges,
            cell_edge_signs,
            cell_faces,
            face_edges,
            vertex_on_boundary,
            edge_on_boundary,
            face_on_boundary,
            vertex_cells,
            edge_cells,
            face_cells,
            mesh_size,
            structure: None,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn cell_points(&self, c: usize) -> [Point; 4] {
        let cell = &self.cells[c];
        [
            self.vertices[cell[0]],
            self.vertices[cell[1]],
            self.vertices[cell[2]],
            self.vertices[cell[3]],
        ]
    }

    /// Signed volume (sign follows the local vertex order).
    pub fn signed_volume(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        let a = sub(&p[1], &p[0]);
        let b = sub(&p[2], &p[0]);
        let d = sub(&p[3], &p[0]);
        dot(&a, &cross(&b, &d)) / 6.0
    }

    pub fn volume(&self, c: usize) -> f64 {
        self.signed_volume(c).abs()
    }

    pub fn centroid(&self, c: usize) -> Point {
        let p = self.cell_points(c);
        let mut out = [0.0; 3];
        for q in &p {
            for d in 0..3 {
                out[d] += 0.25 * q[d];
            }
        }
        out
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (pa, pb) = (&self.vertices[a], &self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]
    }

    pub fn edge_vector(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        sub(&self.vertices[b], &self.vertices[a])
    }

    /// Cells sharing at least one vertex with cell `c` (including `c`).
    pub fn vertex_neighbors(&self, c: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.cells[c].iter().flat_map(|&v| self.vertex_cells[v].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Index of the cell of a structured mesh that contains `x`. Points on
    /// shared faces are assigned deterministically.
    pub fn locate(&self, x: &Point) -> Result<usize> {
        let s = self.structure.ok_or_else(|| {
            LodError::Unsupported("point location requires a structured mesh".into())
        })?;
        let mut cube = [0usize; 3];
        let mut local = [0f64; 3];
        for d in 0..3 {
            let w = (s.domain.max[d] - s.domain.min[d]) / s.n as f64;
            let t = (x[d] - s.domain.min[d]) / w;
            if !(-1e-9..=s.n as f64 + 1e-9).contains(&t) {
                return Err(LodError::InvalidArgument(format!("point {x:?} lies outside the box")));
            }
            let i = (t.floor().max(0.0) as usize).min(s.n - 1);
            cube[d] = i;
            local[d] = t - i as f64;
        }
        let mut axes = [0usize, 1, 2];
        axes.sort_by(|&a, &b| local[b].partial_cmp(&local[a]).unwrap().then(a.cmp(&b)));
        let perm = KUHN_PERMUTATIONS.iter().position(|p| *p == axes).unwrap();
        let cube_index = cube[0] + s.n * (cube[1] + s.n * cube[2]);
        Ok(6 * cube_index + perm)
    }

    /// Plain-text dump: a count line, one line per vertex, one line per cell.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.num_vertices(), self.num_cells())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
        }
        for c in &self.cells {
            writeln!(out, "{} {} {} {}", c[0], c[1], c[2], c[3])?;
        }
        Ok(())
    }
}

/// Kuhn triangulation of `domain` with `n` sub-cubes per axis.
pub fn build_structured_mesh(n: usize, domain: BoxDomain) -> Result<Mesh> {
    if n == 0 {
        return Err(LodError::InvalidArgument("n must be at least 1".into()));
    }
    domain.validate()?;
    let np = n + 1;
    let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                let ijk = [i, j, k];
                let mut p = [0.0; 3];
                for d in 0..3 {
                    let t = ijk[d] as f64 / n as f64;
                    p[d] = domain.min[d] + t * (domain.max[d] - domain.min[d]);
                }
                vertices.push(p);
            }
        }
    }
    let mut cells = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in KUHN_PERMUTATIONS {
                    let mut c = [i, j, k];
                    let mut tet = [vid(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        tet[s + 1] = vid(c[0], c[1], c[2]);
                    }
                    cells.push(tet);
                }
            }
        }
    }
    let mut mesh = Mesh::from_cells(vertices, cells)?;
    mesh.structure = Some(Structure { n, domain });
    Ok(mesh)
}

/// Element patch `N^m(T)`: `m` rounds of expansion by vertex adjacency.
#[derive(Clone, Debug)]
pub struct Patch {
    pub seed_cell: usize,
    pub order: usize,
    pub region: Region,
}

impl Patch {
    pub fn cells(&self) -> &[usize] {
        &self.region.cells
    }
}

pub fn patch(mesh: &Mesh, seed: usize, m: usize) -> Result<Patch> {
    if seed >= mesh.num_cells() {
        return Err(LodError::InvalidArgument(format!(
            "seed cell {seed} out of range ({} cells)",
            mesh.num_cells()
        )));
    }
    let mut in_patch = vec![false; mesh.num_cells()];
    in_patch[seed] = true;
    let mut frontier = vec![seed];
    let mut cells = vec![seed];
    for _ in 0..m {
        let mut touched_vertices = BTreeSet::new();
        for &c in &frontier {
            touched_vertices.extend(mesh.cells[c].iter().copied());
        }
        let mut next = Vec::new();
        for v in touched_vertices {
            for &c in &mesh.vertex_cells[v] {
                if !in_patch[c] {
                    in_patch[c] = true;
                    next.push(c);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        cells.extend_from_slice(&next);
        frontier = next;
    }
    cells.sort_unstable();
    Ok(Patch { seed_cell: seed, order: m, region: Region::new(mesh, cells) })
}

/// `max_T card N^m(T)`.
pub fn overlap_constant(mesh: &Mesh, m: usize) -> usize {
    (0..mesh.num_cells())
        .map(|t| patch(mesh, t, m).map(|p| p.cells().len()).unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// Smallest `m` with `N^m(T) = T_H` for every cell `T`.
pub fn graph_diameter(mesh: &Mesh) -> usize {
    (0..mesh.num_cells()).map(|s| eccentricity(mesh, s)).max().unwrap_or(0)
}

/// Smallest `m` with `N^m(seed) = T_H`.
pub fn eccentricity(mesh: &Mesh, seed: usize) -> usize {
    let mut seen = vec![false; mesh.num_cells()];
    let mut vertex_seen = vec![false; mesh.num_vertices()];
    seen[seed] = true;
    let mut frontier = vec![seed];
    let mut count = 1;
    let mut rounds = 0;
    while count < mesh.num_cells() && !frontier.is_empty() {
        let mut next = Vec::new();
        for &c in &frontier {
            for &v in &mesh.cells[c] {
                if vertex_seen[v] {
                    continue;
                }
                vertex_seen[v] = true;
                for &k in &mesh.vertex_cells[v] {
                    if !seen[k] {
                        seen[k] = true;
                        next.push(k);
                    }
                }
            }
        }
        count += next.len();
        frontier = next;
        rounds += 1;
    }
    rounds
}

/// Union of closed cells with the entities interior to it. For the whole
/// mesh the boundary is `∂Ω`; for a patch it is `∂Ω_T`.
#[derive(Clone, Debug)]
pub struct Region {
    /// Sorted cell indices.
    pub cells: Vec<usize>,
    /// Sorted edges of the region's cells that do not lie on its boundary.
    pub interior_edges: Vec<usize>,
    pub interior_vertices: Vec<usize>,
    /// Sorted edges of the region's cells (interior and boundary).
    pub edges: Vec<usize>,
    pub vertices: Vec<usize>,
}

impl Region {
    pub fn whole(mesh: &Mesh) -> Region {
        Region::new(mesh, (0..mesh.num_cells()).collect())
    }

    /// `cells` must be sorted and duplicate-free.
    pub fn new(mesh: &Mesh, cells: Vec<usize>) -> Region {
        let mut face_count: HashMap<usize, u8> = HashMap::new();
        let mut edges = BTreeSet::new();
        let mut vertices = BTreeSet::new();
        for &c in &cells {
            for &f in &mesh.cell_faces[c] {
                *face_count.entry(f).or_insert(0) += 1;
            }
            edges.extend(mesh.cell_edges[c].iter().copied());
            vertices.extend(mesh.cells[c].iter().copied());
        }
        let mut boundary_edges = BTreeSet::new();
        let mut boundary_vertices = BTreeSet::new();
        for (&f, &count) in &face_count {
            if count == 1 {
                boundary_vertices.extend(mesh.faces[f]);
                boundary_edges.extend(mesh.face_edges[f]);
            }
        }
        Region {
            interior_edges: edges.difference(&boundary_edges).copied().collect(),
            interior_vertices: vertices.difference(&boundary_vertices).copied().collect(),
            edges: edges.into_iter().collect(),
            vertices: vertices.into_iter().collect(),
            cells,
        }
    }

    pub fn contains_cell(&self, c: usize) -> bool {
        self.cells.binary_search(&c).is_ok()
    }

    pub fn is_interior_edge(&self, e: usize) -> bool {
        self.interior_edges.binary_search(&e).is_ok()
    }

    pub fn is_interior_vertex(&self, v: usize) -> bool {
        self.interior_vertices.binary_search(&v).is_ok()
    }

    pub fn covers(&self, mesh: &Mesh) -> bool {
        self.cells.len() == mesh.num_cells()
    }
}

/// Coarse mesh, nested fine mesh and the containment maps between them.
#[derive(Clone, Debug)]
pub struct MeshPair {
    pub coarse: Mesh,
    pub fine: Mesh,
    pub fine_to_coarse: Vec<usize>,
    pub coarse_children: Vec<Vec<usize>>,
    pub factor: usize,
}

impl MeshPair {
    /// `H / h` measured on the cell diameters.
    pub fn ratio(&self) -> f64 {
        self.coarse.mesh_size / self.fine.mesh_size
    }

    /// A coarse cell whose closure contains fine edge `e`.
    pub fn coarse_cell_of_fine_edge(&self, e: usize) -> usize {
        self.fine_to_coarse[self.fine.edge_cells[e][0]]
    }

    /// A coarse cell whose closure contains fine vertex `v`.
    pub fn coarse_cell_of_fine_vertex(&self, v: usize) -> usize {
        self.fine_to_coarse[self.fine.vertex_cells[v][0]]
    }

    /// Fine cells inside the given coarse cells, in increasing order.
    pub fn fine_cells_of(&self, coarse_cells: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> =
            coarse_cells.iter().flat_map(|&c| self.coarse_children[c].iter().copied()).collect();
        out.sort_unstable();
        out
    }

    /// Fine-level region covered by a coarse region.
    pub fn fine_region(&self, coarse: &Region) -> Region {
        if coarse.covers(&self.coarse) {
            Region::whole(&self.fine)
        } else {
            Region::new(&self.fine, self.fine_cells_of(&coarse.cells))
        }
    }
}

/// Nested refinement of a structured mesh by an integer factor.
pub fn refine(mesh: &Mesh, factor: usize) -> Result<MeshPair> {
    if factor < 2 {
        return Err(LodError::InvalidArgument(format!(
            "refinement factor must be at least 2, got {factor}"
        )));
    }
    let s = mesh
        .structure
        .ok_or_else(|| LodError::Unsupported("refinement requires a structured mesh".into()))?;
    let fine = build_structured_mesh(s.n * factor, s.domain)?;
    let mut fine_to_coarse = Vec::with_capacity(fine.num_cells());
    let mut coarse_children = vec![Vec::new(); mesh.num_cells()];
    for c in 0..fine.num_cells() {
        let parent = mesh.locate(&fine.centroid(c))?;
        fine_to_coarse.push(parent);
        coarse_children[parent].push(c);
    }
    Ok(MeshPair { coarse: mesh.clone(), fine, fine_to_coarse, coarse_children, factor })
}

/// Mesh pair with identical coarse and fine meshes (refinement factor 1).
pub fn trivial_pair(mesh: &Mesh) -> MeshPair {
    MeshPair {
        coarse: mesh.clone(),
        fine: mesh.clone(),
        fine_to_coarse: (0..mesh.num_cells()).collect(),
        coarse_children: (0..mesh.num_cells()).map(|c| vec![c]).collect(),
        factor: 1,
    }
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn distance(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    dot(&d, &d).sqrt()
}
