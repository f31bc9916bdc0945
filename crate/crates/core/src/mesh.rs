//! Uniform triangulations of the unit square, their nested refinements and
//! coarse-element patches.
//!
//! The square `[0,1]²` is split into `n × n` cells. Cell `(i, j)` (column `i`,
//! row `j`) has index `j * n + i` and is cut along its lower-left to
//! upper-right diagonal into the triangles `2 * cell` (below the diagonal) and
//! `2 * cell + 1` (above it). Node `(i, j)` has index `j * (n + 1) + i`.
//! Because every level uses the same diagonal, a refinement by an integer
//! factor nests exactly inside the coarse triangles.

use std::collections::BTreeSet;

use crate::error::{LodError, Result};

/// Spatial dimension; also the number of displacement components per node.
pub const DIM: usize = 2;

/// Global index of displacement component `comp` at `node`.
#[inline]
pub fn dof_index(node: usize, comp: usize) -> usize {
    DIM * node + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// Assigns a boundary condition type to each side of the unit square.
///
/// Corner nodes belong to Γ_D as soon as one of the two sides meeting there is
/// Dirichlet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySpec {
    pub bottom: BoundaryKind,
    pub right: BoundaryKind,
    pub top: BoundaryKind,
    pub left: BoundaryKind,
}

impl BoundarySpec {
    pub fn all_dirichlet() -> Self {
        Self {
            bottom: BoundaryKind::Dirichlet,
            right: BoundaryKind::Dirichlet,
            top: BoundaryKind::Dirichlet,
            left: BoundaryKind::Dirichlet,
        }
    }

    /// Γ_D must have positive measure.
    pub fn new(bottom: BoundaryKind, right: BoundaryKind, top: BoundaryKind, left: BoundaryKind) -> Result<Self> {
        let spec = Self { bottom, right, top, left };
        if [bottom, right, top, left].contains(&BoundaryKind::Dirichlet) {
            Ok(spec)
        } else {
            Err(LodError::InvalidMesh("at least one side must carry Dirichlet conditions".into()))
        }
    }

    pub fn kind(&self, side: Side) -> BoundaryKind {
        match side {
            Side::Bottom => self.bottom,
            Side::Right => self.right,
            Side::Top => self.top,
            Side::Left => self.left,
        }
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::all_dirichlet()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub element: usize,
    pub side: Side,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone)]
struct Hierarchy {
    coarse_n: usize,
    parent_of: Vec<usize>,
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    n: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: BoundarySpec,
    dirichlet: Vec<bool>,
    boundary_edges: Vec<BoundaryEdge>,
    node_elements: Vec<Vec<usize>>,
    hierarchy: Option<Hierarchy>,
}

/// Builds the `n × n` uniform triangulation of the unit square.
pub fn build_uniform_mesh(n: usize, boundary: BoundarySpec) -> Result<Mesh> {
    Mesh::uniform(n, boundary)
}

/// Refines `coarse` to `n_fine` cells per side, recording the parent map.
pub fn refine_to(coarse: &Mesh, n_fine: usize) -> Result<Mesh> {
    coarse.refine_to(n_fine)
}

impl Mesh {
    pub fn uniform(n: usize, boundary: BoundarySpec) -> Result<Self> {
        if n == 0 {
            return Err(LodError::InvalidMesh("n must be positive".into()));
        }
        let np = n + 1;
        let inv = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                nodes.push([i as f64 * inv, j as f64 * inv]);
            }
        }
        let node = |i: usize, j: usize| j * np + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([node(i, j), node(i + 1, j), node(i + 1, j + 1)]);
                triangles.push([node(i, j), node(i + 1, j + 1), node(i, j + 1)]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            // bottom edge belongs to the lower triangle of cell (i, 0)
            boundary_edges.push(BoundaryEdge {
                nodes: [node(i, 0), node(i + 1, 0)],
                element: 2 * i,
                side: Side::Bottom,
                kind: boundary.bottom,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [node(i + 1, n), node(i, n)],
                element: 2 * ((n - 1) * n + i) + 1,
                side: Side::Top,
                kind: boundary.top,
            });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [node(n, j), node(n, j + 1)],
                element: 2 * (j * n + n - 1),
                side: Side::Right,
                kind: boundary.right,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [node(0, j + 1), node(0, j)],
                element: 2 * (j * n) + 1,
                side: Side::Left,
                kind: boundary.left,
            });
        }

        let mut dirichlet = vec![false; np * np];
        for e in &boundary_edges {
            if e.kind == BoundaryKind::Dirichlet {
                dirichlet[e.nodes[0]] = true;
                dirichlet[e.nodes[1]] = true;
            }
        }

        let mut node_elements = vec![Vec::new(); np * np];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                node_elements[v].push(t);
            }
        }

        Ok(Self { n, nodes, triangles, boundary, dirichlet, boundary_edges, node_elements, hierarchy: None })
    }

    pub fn refine_to(&self, n_fine: usize) -> Result<Mesh> {
        if n_fine == 0 || n_fine % self.n != 0 {
            return Err(LodError::NotNested { coarse: self.n, fine: n_fine });
        }
        let mut fine = Mesh::uniform(n_fine, self.boundary)?;
        let r = n_fine / self.n;
        let mut parent_of = Vec::with_capacity(fine.num_triangles());
        for j in 0..n_fine {
            for i in 0..n_fine {
                let coarse_cell = (j / r) * self.n + i / r;
                let (a, b) = (i % r, j % r);
                // position of the fine cell relative to the coarse diagonal
                let upper = match a.cmp(&b) {
                    std::cmp::Ordering::Greater => [false, false],
                    std::cmp::Ordering::Less => [true, true],
                    std::cmp::Ordering::Equal => [false, true],
                };
                for u in upper {
                    parent_of.push(2 * coarse_cell + usize::from(u));
                }
            }
        }
        let mut children = vec![Vec::with_capacity(r * r); self.num_triangles()];
        for (t, &p) in parent_of.iter().enumerate() {
            children[p].push(t);
        }
        fine.hierarchy = Some(Hierarchy { coarse_n: self.n, parent_of, children });
        Ok(fine)
    }

    /// Cells per side.
    pub fn level_size(&self) -> usize {
        self.n
    }

    /// Mesh width (triangle diameter), `√2 / n`.
    pub fn h(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        self.boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        DIM * self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|v| self.nodes[v])
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn barycenter(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.dirichlet[node]
    }

    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.dirichlet[i])
    }

    pub fn free_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.dirichlet[i])
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn neumann_edges(&self) -> impl Iterator<Item = &BoundaryEdge> + '_ {
        self.boundary_edges.iter().filter(|e| e.kind == BoundaryKind::Neumann)
    }

    pub fn dirichlet_edges(&self) -> impl Iterator<Item = &BoundaryEdge> + '_ {
        self.boundary_edges.iter().filter(|e| e.kind == BoundaryKind::Dirichlet)
    }

    /// Triangles containing `node`.
    pub fn node_elements(&self, node: usize) -> &[usize] {
        &self.node_elements[node]
    }

    pub fn has_parent_map(&self) -> bool {
        self.hierarchy.is_some()
    }

    /// `n` of the mesh this one was refined from.
    pub fn parent_level(&self) -> Option<usize> {
        self.hierarchy.as_ref().map(|h| h.coarse_n)
    }

    pub fn parent_of(&self, t: usize) -> Option<usize> {
        self.hierarchy.as_ref().map(|h| h.parent_of[t])
    }

    /// Fine triangles whose parent is the coarse triangle `coarse_t`.
    pub fn children(&self, coarse_t: usize) -> Option<&[usize]> {
        self.hierarchy.as_ref().map(|h| h.children[coarse_t].as_slice())
    }

    /// Checks that `self` is a refinement of `coarse` carrying its parent map.
    pub fn check_refines(&self, coarse: &Mesh) -> Result<()> {
        match self.parent_level() {
            Some(n) if n == coarse.n && self.boundary == coarse.boundary => Ok(()),
            _ => Err(LodError::NotNested { coarse: coarse.n, fine: self.n }),
        }
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Element patch ω_k(T) on a coarse mesh together with the fine-level index
/// sets needed for localized corrector problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center_element: usize,
    pub k: usize,
    /// Sorted coarse triangle indices.
    pub coarse_elements: Vec<usize>,
    /// Sorted fine triangle indices whose parent lies in the patch.
    pub fine_elements: Vec<usize>,
    /// Sorted fine dofs that are free inside the patch: not on Γ_D and not
    /// touching any fine triangle outside the patch.
    pub interior_fine_dofs: Vec<usize>,
    /// Sorted free coarse nodes that are vertices of patch elements.
    pub constraint_nodes: Vec<usize>,
}

impl Patch {
    pub fn is_saturated(&self, coarse: &Mesh) -> bool {
        self.coarse_elements.len() == coarse.num_triangles()
    }

    /// Position of a global fine dof among the patch unknowns.
    pub fn local_dof(&self, global: usize) -> Option<usize> {
        self.interior_fine_dofs.binary_search(&global).ok()
    }

    pub fn contains_coarse(&self, t: usize) -> bool {
        self.coarse_elements.binary_search(&t).is_ok()
    }
}

/// Coarse triangles of ω_k(T): `k` rounds of vertex-sharing expansion from `{T}`.
///
/// Expansion stops early once the whole mesh is covered, so `usize::MAX`
/// is a valid way to ask for the saturated patch.
pub fn coarse_patch(coarse: &Mesh, t: usize, k: usize) -> Result<Vec<usize>> {
    if t >= coarse.num_triangles() {
        return Err(LodError::OutOfRange { index: t, len: coarse.num_triangles() });
    }
    let mut elements: BTreeSet<usize> = BTreeSet::from([t]);
    let mut frontier_nodes: BTreeSet<usize> = coarse.triangle(t).into_iter().collect();
    let mut layer = 0;
    while layer < k && elements.len() < coarse.num_triangles() {
        let mut new_nodes = BTreeSet::new();
        for &v in &frontier_nodes {
            for &e in coarse.node_elements(v) {
                if elements.insert(e) {
                    new_nodes.extend(coarse.triangle(e));
                }
            }
        }
        frontier_nodes = new_nodes;
        layer += 1;
    }
    Ok(elements.into_iter().collect())
}

/// Builds ω_k(T) with its fine-level dof sets.
pub fn element_patch(coarse: &Mesh, fine: &Mesh, t: usize, k: usize) -> Result<Patch> {
    fine.check_refines(coarse)?;
    let coarse_elements = coarse_patch(coarse, t, k)?;
    let mut in_patch = vec![false; coarse.num_triangles()];
    for &e in &coarse_elements {
        in_patch[e] = true;
    }

    let mut fine_elements: Vec<usize> = coarse_elements
        .iter()
        .flat_map(|&e| fine.children(e).unwrap_or(&[]).iter().copied())
        .collect();
    fine_elements.sort_unstable();

    let mut candidate_nodes: Vec<usize> =
        fine_elements.iter().flat_map(|&e| fine.triangle(e)).collect();
    candidate_nodes.sort_unstable();
    candidate_nodes.dedup();
    let mut interior_fine_dofs = Vec::new();
    for v in candidate_nodes {
        if fine.is_dirichlet(v) {
            continue;
        }
        let inside = fine
            .node_elements(v)
            .iter()
            .all(|&e| in_patch[fine.parent_of(e).expect("checked by check_refines")]);
        if inside {
            interior_fine_dofs.extend((0..DIM).map(|c| dof_index(v, c)));
        }
    }

    let mut constraint_nodes: Vec<usize> = coarse_elements
        .iter()
        .flat_map(|&e| coarse.triangle(e))
        .filter(|&v| !coarse.is_dirichlet(v))
        .collect();
    constraint_nodes.sort_unstable();
    constraint_nodes.dedup();

    Ok(Patch { center_element: t, k, coarse_elements, fine_elements, interior_fine_dofs, constraint_nodes })
}
