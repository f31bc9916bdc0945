//! P1 finite elements for isotropic linear elasticity,
//! `B(u, v) = ∫ 2μ ε(u):ε(v) + λ (∇·u)(∇·v) dx`.

use std::fmt;
use std::sync::Arc;

use crate::error::{LodError, Result};
use crate::mesh::{dof_index, Mesh, DIM};
use crate::sparse::{norm, CsrMatrix, SpdSolver};

/// Relative residual accepted from the direct solves.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Piecewise constant isotropic Lamé field on a Cartesian `grid_n × grid_n`
/// cell grid over the unit square. Cells are stored row-major (`cy * grid_n + cx`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid_n: usize,
    mu: Vec<f64>,
    lambda: Vec<f64>,
}

impl CoefficientField {
    pub fn new(grid_n: usize, mu: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if grid_n == 0 {
            return Err(LodError::InvalidCoefficient("grid_n must be positive".into()));
        }
        let cells = grid_n * grid_n;
        if mu.len() != cells || lambda.len() != cells {
            return Err(LodError::InvalidCoefficient(format!(
                "expected {cells} cell values, got {} mu and {} lambda",
                mu.len(),
                lambda.len()
            )));
        }
        if let Some(bad) = mu.iter().chain(&lambda).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(LodError::InvalidCoefficient(format!("Lamé values must be positive and finite, got {bad}")));
        }
        Ok(Self { grid_n, mu, lambda })
    }

    pub fn constant(mu: f64, lambda: f64) -> Result<Self> {
        Self::new(1, vec![mu], vec![lambda])
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn cell_of(&self, p: [f64; 2]) -> usize {
        let g = self.grid_n;
        let idx = |x: f64| ((x * g as f64).floor().max(0.0) as usize).min(g - 1);
        idx(p[1]) * g + idx(p[0])
    }

    /// `(μ, λ)` at a point.
    pub fn lame_at(&self, p: [f64; 2]) -> (f64, f64) {
        let c = self.cell_of(p);
        (self.mu[c], self.lambda[c])
    }

    /// `(μ, λ)` on triangle `t`, sampled at its barycenter.
    pub fn element_lame(&self, mesh: &Mesh, t: usize) -> (f64, f64) {
        self.lame_at(mesh.barycenter(t))
    }

    pub fn check_resolved_by(&self, mesh: &Mesh) -> Result<()> {
        if mesh.level_size() % self.grid_n == 0 {
            Ok(())
        } else {
            Err(LodError::Resolution { mesh_n: mesh.level_size(), grid_n: self.grid_n })
        }
    }

    pub fn min_mu(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_mu(&self) -> f64 {
        self.mu.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies both Lamé fields by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid_n,
            self.mu.iter().map(|v| v * factor).collect(),
            self.lambda.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Numbering of the vector P1 dofs and their split into free and
/// Dirichlet-constrained sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    free_index: Vec<Option<usize>>,
    free: Vec<usize>,
    constrained: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_dofs();
        let mut free_index = vec![None; n];
        let mut free = Vec::new();
        let mut constrained = Vec::new();
        for node in 0..mesh.num_nodes() {
            for c in 0..DIM {
                let d = dof_index(node, c);
                if mesh.is_dirichlet(node) {
                    constrained.push(d);
                } else {
                    free_index[d] = Some(free.len());
                    free.push(d);
                }
            }
        }
        Self { free_index, free, constrained }
    }

    pub fn num_dofs(&self) -> usize {
        self.free_index.len()
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained_dofs(&self) -> &[usize] {
        &self.constrained
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        self.free_index[dof]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }

    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_dofs()];
        for (&d, &v) in self.free.iter().zip(free) {
            full[d] = v;
        }
        full
    }
}

/// Gradients of the three barycentric coordinates and the (signed) area.
pub fn shape_gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let inv = 1.0 / det;
    let grads = [
        [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
        [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
        [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
    ];
    (grads, 0.5 * det)
}

/// 6×6 element stiffness, local dof `2 * vertex + component`.
pub fn element_stiffness(p: &[[f64; 2]; 3], mu: f64, lambda: f64) -> [[f64; 6]; 6] {
    let (g, signed) = shape_gradients(p);
    let area = signed.abs();
    let mut k = [[0.0; 6]; 6];
    for a in 0..3 {
        for c in 0..2 {
            for b in 0..3 {
                for d in 0..2 {
                    let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                    let shear = if c == d { gg } else { 0.0 } + g[a][d] * g[b][c];
                    k[2 * a + c][2 * b + d] = area * (mu * shear + lambda * g[a][c] * g[b][d]);
                }
            }
        }
    }
    k
}

fn element_dofs(tri: [usize; 3]) -> [usize; 6] {
    [
        dof_index(tri[0], 0),
        dof_index(tri[0], 1),
        dof_index(tri[1], 0),
        dof_index(tri[1], 1),
        dof_index(tri[2], 0),
        dof_index(tri[2], 1),
    ]
}

pub(crate) fn mesh_element_stiffness(mesh: &Mesh, coeff: &CoefficientField, t: usize) -> [[f64; 6]; 6] {
    let (mu, lambda) = coeff.element_lame(mesh, t);
    element_stiffness(&mesh.vertices(t), mu, lambda)
}

/// Stiffness over all dofs, before any boundary condition is applied.
pub fn assemble_full_stiffness(mesh: &Mesh, coeff: &CoefficientField) -> Result<CsrMatrix> {
    coeff.check_resolved_by(mesh)?;
    let mut t = Vec::with_capacity(36 * mesh.num_triangles());
    for e in 0..mesh.num_triangles() {
        let ke = mesh_element_stiffness(mesh, coeff, e);
        let dofs = element_dofs(mesh.triangle(e));
        for (i, &gi) in dofs.iter().enumerate() {
            for (j, &gj) in dofs.iter().enumerate() {
                t.push((gi, gj, ke[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_dofs(), mesh.num_dofs(), &t))
}

/// Stiffness on the free dofs (Dirichlet rows and columns removed).
pub fn assemble_stiffness(mesh: &Mesh, coeff: &CoefficientField, dofs: &DofMap) -> Result<CsrMatrix> {
    let full = assemble_full_stiffness(mesh, coeff)?;
    Ok(full.principal_submatrix(dofs.free_dofs()))
}

/// `w ↦ B(v, w)_T` over the fine triangles whose parent is `coarse_t`, as a
/// full fine vector.
pub fn assemble_elementwise_rhs(fine: &Mesh, coeff: &CoefficientField, coarse_t: usize, v: &[f64]) -> Result<Vec<f64>> {
    let children = fine
        .children(coarse_t)
        .ok_or_else(|| LodError::InvalidMesh("fine mesh has no parent map".into()))?;
    let mut out = vec![0.0; fine.num_dofs()];
    for &e in children {
        elementwise_action(fine, coeff, e, v, &mut out);
    }
    Ok(out)
}

/// Adds `K_e v` for fine element `e` into `out`.
pub(crate) fn elementwise_action(fine: &Mesh, coeff: &CoefficientField, e: usize, v: &[f64], out: &mut [f64]) {
    let dofs = element_dofs(fine.triangle(e));
    let local: Vec<f64> = dofs.iter().map(|&d| v[d]).collect();
    if local.iter().all(|&x| x == 0.0) {
        return;
    }
    let ke = mesh_element_stiffness(fine, coeff, e);
    for (i, &gi) in dofs.iter().enumerate() {
        out[gi] += (0..6).map(|j| ke[i][j] * local[j]).sum::<f64>();
    }
}

pub type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Body force `f`.
#[derive(Clone)]
pub enum BodyForce {
    Constant([f64; 2]),
    Field(VectorField),
}

impl fmt::Debug for BodyForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyForce::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            BodyForce::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// Consistent P1 load vector `(f, φ_i)`.
///
/// Constant forces are integrated exactly; general fields use the symmetric
/// three-point rule of degree two.
pub fn assemble_load(mesh: &Mesh, force: &BodyForce) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_dofs()];
    for e in 0..mesh.num_triangles() {
        let tri = mesh.triangle(e);
        let area = mesh.signed_area(e);
        match force {
            BodyForce::Constant(f) => {
                for &v in &tri {
                    for c in 0..DIM {
                        out[dof_index(v, c)] += f[c] * area / 3.0;
                    }
                }
            }
            BodyForce::Field(func) => {
                let p = mesh.vertices(e);
                for q in 0..3 {
                    let mut bary = [1.0 / 6.0; 3];
                    bary[q] = 2.0 / 3.0;
                    let x = [
                        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
                    ];
                    let fx = func(x);
                    for (a, &v) in tri.iter().enumerate() {
                        for c in 0..DIM {
                            out[dof_index(v, c)] += area / 3.0 * fx[c] * bary[a];
                        }
                    }
                }
            }
        }
    }
    out
}

const GAUSS2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

fn neumann_edge_load(mesh: &Mesh, nodes: [usize; 2], traction: &VectorField, out: &mut [f64]) {
    let a = mesh.node(nodes[0]);
    let b = mesh.node(nodes[1]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    for &(s, w) in &GAUSS2 {
        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let t = traction(x);
        for c in 0..DIM {
            out[dof_index(nodes[0], c)] += w * len * t[c] * (1.0 - s);
            out[dof_index(nodes[1], c)] += w * len * t[c] * s;
        }
    }
}

/// `(b, φ_i)_{Γ_N}` with two-point Gauss quadrature per edge.
pub fn assemble_neumann_load(mesh: &Mesh, traction: &VectorField) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_dofs()];
    for e in mesh.neumann_edges() {
        neumann_edge_load(mesh, e.nodes, traction, &mut out);
    }
    out
}

/// `(b, φ_i)_{Γ_N ∩ T}` for a coarse triangle `coarse_t`.
pub fn assemble_neumann_load_on(fine: &Mesh, traction: &VectorField, coarse_t: usize) -> Vec<f64> {
    let mut out = vec![0.0; fine.num_dofs()];
    for e in fine.neumann_edges() {
        if fine.parent_of(e.element) == Some(coarse_t) {
            neumann_edge_load(fine, e.nodes, traction, &mut out);
        }
    }
    out
}

/// Data of a boundary value problem on the unit square.
#[derive(Clone)]
pub struct ProblemSpec {
    pub coefficient: CoefficientField,
    pub body_force: BodyForce,
    /// Traction `b` on Γ_N; `None` means zero.
    pub neumann: Option<VectorField>,
    /// Lift `g_h` as a full fine vector vanishing at free nodes; `None` means zero.
    pub dirichlet_lift: Option<Vec<f64>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("coefficient", &self.coefficient)
            .field("body_force", &self.body_force)
            .field("neumann", &self.neumann.as_ref().map(|_| ".."))
            .field("dirichlet_lift", &self.dirichlet_lift.as_ref().map(Vec::len))
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(coefficient: CoefficientField, body_force: BodyForce) -> Self {
        Self { coefficient, body_force, neumann: None, dirichlet_lift: None }
    }

    pub fn with_neumann(mut self, traction: VectorField) -> Self {
        self.neumann = Some(traction);
        self
    }

    pub fn with_dirichlet_lift(mut self, lift: Vec<f64>) -> Self {
        self.dirichlet_lift = Some(lift);
        self
    }

    /// Checks `g_h` against `mesh`: right length and zero at every free node.
    pub fn lift_on(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match &self.dirichlet_lift {
            None => Ok(vec![0.0; mesh.num_dofs()]),
            Some(g) => {
                if g.len() != mesh.num_dofs() {
                    return Err(LodError::InvalidProblem(format!(
                        "Dirichlet lift has {} entries, mesh has {} dofs",
                        g.len(),
                        mesh.num_dofs()
                    )));
                }
                for node in mesh.free_nodes() {
                    if (0..DIM).any(|c| g[dof_index(node, c)] != 0.0) {
                        return Err(LodError::InvalidProblem(format!("Dirichlet lift is nonzero at free node {node}")));
                    }
                }
                Ok(g.clone())
            }
        }
    }

    /// `(f, φ_i) + (b, φ_i)_{Γ_N}` over all dofs of `mesh`.
    pub fn load_vector(&self, mesh: &Mesh) -> Vec<f64> {
        let mut rhs = assemble_load(mesh, &self.body_force);
        if let Some(b) = &self.neumann {
            for (r, n) in rhs.iter_mut().zip(assemble_neumann_load(mesh, b)) {
                *r += n;
            }
        }
        rhs
    }
}

/// Refinement sweeps allowed before the residual check gives up.
const REFINEMENT_STEPS: usize = 3;

/// Solves `K x = b` with iterative refinement and verifies the relative residual.
pub(crate) fn solve_checked(k: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let solver = SpdSolver::new(k)?;
    refine(k, &solver, b)
}

pub(crate) fn refine(k: &CsrMatrix, solver: &SpdSolver, b: &[f64]) -> Result<Vec<f64>> {
    let mut x = solver.solve(b);
    for _ in 0..REFINEMENT_STEPS {
        if check_residual(k, &x, b).is_ok() {
            break;
        }
        let r: Vec<f64> = b.iter().zip(k.matvec(&x)).map(|(bi, kx)| bi - kx).collect();
        for (xi, d) in x.iter_mut().zip(solver.solve(&r)) {
            *xi += d;
        }
    }
    check_residual(k, &x, b)?;
    Ok(x)
}

pub(crate) fn check_residual(k: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<()> {
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(());
    }
    let r: Vec<f64> = k.matvec(x).iter().zip(b).map(|(a, b)| a - b).collect();
    let rel = norm(&r) / bn;
    if rel > SOLVER_TOLERANCE {
        return Err(LodError::Solver(format!("relative residual {rel:e} above {SOLVER_TOLERANCE:e}")));
    }
    Ok(())
}

/// Reference P1 solution `u_h = u_{h,0} + g_h` on `mesh`.
pub fn solve_fem(problem: &ProblemSpec, mesh: &Mesh) -> Result<Vec<f64>> {
    let full = assemble_full_stiffness(mesh, &problem.coefficient)?;
    let g = problem.lift_on(mesh)?;
    let dofs = DofMap::new(mesh);
    let mut rhs = problem.load_vector(mesh);
    for (r, kg) in rhs.iter_mut().zip(full.matvec(&g)) {
        *r -= kg;
    }
    let k = full.principal_submatrix(dofs.free_dofs());
    let u0 = solve_checked(&k, &dofs.restrict(&rhs))?;
    let mut u = dofs.extend(&u0);
    for (ui, gi) in u.iter_mut().zip(&g) {
        *ui += gi;
    }
    Ok(u)
}

/// Classical P1 solution on the coarse space `V_H ⊂ V_h`: Galerkin projection
/// of the fine problem through `prolongation` (fine dofs × coarse dofs).
///
/// Integrals are evaluated on the fine mesh, so coarse meshes need not
/// resolve the coefficient grid.
pub fn solve_coarse_fem(problem: &ProblemSpec, coarse: &Mesh, fine: &Mesh, prolongation: &CsrMatrix) -> Result<Vec<f64>> {
    fine.check_refines(coarse)?;
    let full = assemble_full_stiffness(fine, &problem.coefficient)?;
    let g = problem.lift_on(fine)?;
    let mut rhs = problem.load_vector(fine);
    for (r, kg) in rhs.iter_mut().zip(full.matvec(&g)) {
        *r -= kg;
    }
    let coarse_dofs = DofMap::new(coarse);
    let p_free = restrict_columns(prolongation, &coarse_dofs);
    let pt = p_free.transpose();
    let k_coarse = pt.matmul(&full).matmul(&p_free);
    let c = solve_checked(&k_coarse, &pt.matvec(&rhs))?;
    let mut u = p_free.matvec(&c);
    for (ui, gi) in u.iter_mut().zip(&g) {
        *ui += gi;
    }
    Ok(u)
}

/// Keeps the columns belonging to free coarse dofs, renumbered.
pub(crate) fn restrict_columns(m: &CsrMatrix, dofs: &DofMap) -> CsrMatrix {
    let t: Vec<_> = m
        .triplets()
        .filter_map(|(r, c, v)| dofs.free_index(c).map(|fc| (r, fc, v)))
        .collect();
    CsrMatrix::from_triplets(m.nrows(), dofs.num_free(), &t)
}

/// `‖∇v‖_{L2(Ω)}` of a full P1 vector.
pub fn h1_seminorm(mesh: &Mesh, v: &[f64]) -> f64 {
    h1_seminorm_on(mesh, v, |_| true)
}

/// `‖∇v‖_{L2}` restricted to the triangles selected by `keep`.
pub fn h1_seminorm_on(mesh: &Mesh, v: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    let mut acc = 0.0;
    for e in 0..mesh.num_triangles() {
        if !keep(e) {
            continue;
        }
        let (g, signed) = shape_gradients(&mesh.vertices(e));
        let area = signed.abs();
        let tri = mesh.triangle(e);
        for c in 0..DIM {
            let mut grad = [0.0; 2];
            for a in 0..3 {
                let val = v[dof_index(tri[a], c)];
                grad[0] += val * g[a][0];
                grad[1] += val * g[a][1];
            }
            acc += area * (grad[0] * grad[0] + grad[1] * grad[1]);
        }
    }
    acc.sqrt()
}

/// `sqrt(vᵀ K v)`
pub fn energy_norm(k: &CsrMatrix, v: &[f64]) -> f64 {
    k.bilinear(v, v).max(0.0).sqrt()
}

/// Nodal (Lagrange) interpolant of a vector field.
pub fn nodal_interpolant(mesh: &Mesh, field: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_dofs()];
    for (i, &p) in mesh.nodes().iter().enumerate() {
        let u = field(p);
        for c in 0..DIM {
            out[dof_index(i, c)] = u[c];
        }
    }
    out
}
