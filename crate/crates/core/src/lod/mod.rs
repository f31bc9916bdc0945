//! Localized orthogonal decomposition.
//!
//! For every coarse triangle `T` the element correctors `R^T_{f,k}` are
//! computed on the patch `ω_k(T)` as the `B`-orthogonal projection onto the
//! part of `ker I_H` supported in the patch. Summing them over `T` gives the
//! correctors `Q_k λ_{z,i}` of the coarse hat functions, and the multiscale
//! basis `λ_{z,i} - Q_k λ_{z,i}` spans the Galerkin space of the method.
//!
//! `k = usize::MAX` (see [`IDEAL`]) saturates every patch and yields the
//! global, non-localized method.

mod gfem;
mod saddle;

use std::sync::{Arc, OnceLock};

use faer::Mat;
use rayon::prelude::*;

pub use gfem::{solve_gfem, GfemSolution};
pub use saddle::{PatchSolver, SaddleSystem, KKT_TOLERANCE};

use crate::error::{LodError, Result};
use crate::fem::{assemble_full_stiffness, assemble_neumann_load_on, h1_seminorm_on, mesh_element_stiffness, CoefficientField, VectorField};
use crate::interpolation::{build_interpolation, InterpolationOperator};
use crate::mesh::{coarse_patch, dof_index, element_patch, BoundaryKind, Mesh, Patch, DIM};
use crate::sparse::{CsrMatrix, SparseVector};

/// Patch size that always saturates to the whole mesh.
pub const IDEAL: usize = usize::MAX;

/// `k = ⌈0.8 ln(1/H)⌉`, at least one layer.
pub fn localization_schedule(h: f64) -> usize {
    let k = (0.8 * (1.0 / h).ln()).ceil();
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

/// Everything a corrector computation needs on a coarse/fine mesh pair.
pub struct LodContext<'a> {
    coarse: &'a Mesh,
    fine: &'a Mesh,
    coeff: &'a CoefficientField,
    interp: InterpolationOperator,
    stiffness: CsrMatrix,
}

impl<'a> LodContext<'a> {
    pub fn new(coarse: &'a Mesh, fine: &'a Mesh, coeff: &'a CoefficientField) -> Result<Self> {
        fine.check_refines(coarse)?;
        let interp = build_interpolation(coarse, fine)?;
        let stiffness = assemble_full_stiffness(fine, coeff)?;
        Ok(Self { coarse, fine, coeff, interp, stiffness })
    }

    pub fn coarse(&self) -> &Mesh {
        self.coarse
    }

    pub fn fine(&self) -> &Mesh {
        self.fine
    }

    pub fn coefficient(&self) -> &CoefficientField {
        self.coeff
    }

    pub fn interpolation(&self) -> &InterpolationOperator {
        &self.interp
    }

    /// Fine stiffness over all dofs (no boundary conditions applied).
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn patch(&self, t: usize, k: usize) -> Result<Patch> {
        element_patch(self.coarse, self.fine, t, k)
    }

    pub fn saddle_system(&self, patch: &Patch) -> Result<SaddleSystem> {
        SaddleSystem::build(self.fine, self.coeff, &self.interp, patch)
    }
}

/// A factored patch problem with its unknowns.
struct PatchSystem {
    dofs: Vec<usize>,
    solver: PatchSolver,
}

impl PatchSystem {
    fn new(ctx: &LodContext<'_>, patch: &Patch) -> Result<Self> {
        let sys = ctx.saddle_system(patch)?;
        let solver = sys.factor()?;
        Ok(Self { dofs: sys.dofs, solver })
    }

    fn local(&self, global: usize) -> Option<usize> {
        self.dofs.binary_search(&global).ok()
    }

    fn scatter(&self, local: &[f64], out: &mut [f64]) {
        scatter(&self.dofs, local, out);
    }
}

fn scatter(dofs: &[usize], local: &[f64], out: &mut [f64]) {
    for (&g, &v) in dofs.iter().zip(local) {
        out[g] += v;
    }
}

/// Shares the factorization of the saturated patch, which is the same for
/// every coarse element.
#[derive(Default)]
struct PatchCache {
    saturated: OnceLock<std::result::Result<Arc<PatchSystem>, String>>,
}

impl PatchCache {
    fn system(&self, ctx: &LodContext<'_>, t: usize, k: usize) -> Result<Arc<PatchSystem>> {
        let patch = ctx.patch(t, k)?;
        if patch.is_saturated(ctx.coarse) {
            self.saturated
                .get_or_init(|| PatchSystem::new(ctx, &patch).map(Arc::new).map_err(|e| e.to_string()))
                .clone()
                .map_err(LodError::Solver)
        } else {
            PatchSystem::new(ctx, &patch).map(Arc::new)
        }
    }
}

/// Adds `B(v, φ_i)_T` for the patch unknowns into column `col` of `rhs`,
/// where `values(e)` gives the six local dof values of `v` on fine child `e`.
fn add_element_rhs(
    ctx: &LodContext<'_>,
    system: &PatchSystem,
    t: usize,
    rhs: &mut Mat<f64>,
    col: usize,
    values: impl Fn(usize) -> [f64; 6],
) {
    let fine = ctx.fine;
    for &e in fine.children(t).expect("nested meshes") {
        let vals = values(e);
        if vals.iter().all(|&x| x == 0.0) {
            continue;
        }
        let ke = mesh_element_stiffness(fine, ctx.coeff, e);
        let tri = fine.triangle(e);
        for i in 0..6 {
            if let Some(li) = system.local(dof_index(tri[i / 2], i % 2)) {
                rhs[(li, col)] += (0..6).map(|j| ke[i][j] * vals[j]).sum::<f64>();
            }
        }
    }
}

fn local_values(fine: &Mesh, e: usize, v: &[f64]) -> [f64; 6] {
    let tri = fine.triangle(e);
    std::array::from_fn(|i| v[dof_index(tri[i / 2], i % 2)])
}

/// Element corrector `R^T_{f,k} v` as a full fine vector (zero outside ω_k(T)).
pub fn solve_element_corrector(ctx: &LodContext<'_>, t: usize, v: &[f64], k: usize) -> Result<Vec<f64>> {
    let cache = PatchCache::default();
    element_corrector_with(ctx, &cache, t, v, k)
}

fn element_corrector_with(ctx: &LodContext<'_>, cache: &PatchCache, t: usize, v: &[f64], k: usize) -> Result<Vec<f64>> {
    if v.len() != ctx.fine.num_dofs() {
        return Err(LodError::InvalidProblem(format!("vector has {} entries, fine mesh {} dofs", v.len(), ctx.fine.num_dofs())));
    }
    let system = cache.system(ctx, t, k)?;
    let mut rhs = Mat::<f64>::zeros(system.dofs.len(), 1);
    add_element_rhs(ctx, &system, t, &mut rhs, 0, |e| local_values(ctx.fine, e, v));
    let w = system.solver.solve_mat(&rhs)?;
    let local: Vec<f64> = (0..system.dofs.len()).map(|i| w[(i, 0)]).collect();
    let mut out = vec![0.0; ctx.fine.num_dofs()];
    system.scatter(&local, &mut out);
    Ok(out)
}

/// Global Ritz projection `R_f v` onto `V_f`, solved in one shot on the whole
/// domain.
pub fn global_ritz_projection(ctx: &LodContext<'_>, v: &[f64]) -> Result<Vec<f64>> {
    let patch = ctx.patch(0, IDEAL)?;
    let system = PatchSystem::new(ctx, &patch)?;
    let kv = ctx.stiffness.matvec(v);
    let rhs: Vec<f64> = system.dofs.iter().map(|&d| kv[d]).collect();
    let w = system.solver.solve(&rhs)?;
    let mut out = vec![0.0; ctx.fine.num_dofs()];
    system.scatter(&w, &mut out);
    Ok(out)
}

/// Correctors `Q_k λ_{z,i}` for every free coarse dof.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub k: usize,
    pub coarse_n: usize,
    pub fine_n: usize,
    /// Indexed like the free coarse dofs of the interpolation operator.
    correctors: Vec<SparseVector>,
}

impl CorrectorSet {
    pub fn len(&self) -> usize {
        self.correctors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correctors.is_empty()
    }

    pub fn corrector(&self, a: usize) -> &SparseVector {
        &self.correctors[a]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SparseVector> {
        self.correctors.iter()
    }

    /// Basis functions `λ_a - Q_k λ_a` of the multiscale space.
    pub fn multiscale_basis(&self, interp: &InterpolationOperator) -> Vec<SparseVector> {
        let coarse_dofs = interp.coarse_dofs();
        let pt = interp.prolongation().transpose();
        self.correctors
            .par_iter()
            .enumerate()
            .map(|(a, q)| {
                let (cols, vals) = pt.row(coarse_dofs.free_dofs()[a]);
                let mut entries: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
                entries.extend(q.indices.iter().zip(&q.values).map(|(&i, &v)| (i, -v)));
                merge_entries(q.len, entries)
            })
            .collect()
    }
}

/// Sums duplicate indices in insertion order and drops exact zeros.
fn merge_entries(len: usize, mut entries: Vec<(usize, f64)>) -> SparseVector {
    entries.sort_by_key(|&(i, _)| i);
    let mut indices = Vec::with_capacity(entries.len());
    let mut values: Vec<f64> = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        if indices.last() == Some(&i) {
            *values.last_mut().expect("nonempty") += v;
        } else {
            indices.push(i);
            values.push(v);
        }
    }
    let (indices, values) = indices.into_iter().zip(values).filter(|(_, v)| *v != 0.0).unzip();
    SparseVector { len, indices, values }
}

/// Boundary data entering the localized boundary correctors.
#[derive(Clone, Copy, Default)]
pub(crate) struct BoundaryData<'a> {
    pub neumann: Option<&'a VectorField>,
    pub lift: Option<&'a [f64]>,
}

pub(crate) struct Correctors {
    pub set: CorrectorSet,
    /// `b̃_{f,k}`
    pub neumann: Vec<f64>,
    /// `R_{f,k} g_h`
    pub dirichlet: Vec<f64>,
}

struct ElementResult {
    /// Global fine dofs of the patch unknowns.
    dofs: Vec<usize>,
    /// `(free coarse dof, local solution)`
    basis: Vec<(usize, Vec<f64>)>,
    neumann: Option<Vec<f64>>,
    dirichlet: Option<Vec<f64>>,
}

fn has_neumann_edge(coarse: &Mesh, t: usize) -> bool {
    coarse.boundary_edges().iter().any(|e| e.element == t && e.kind == BoundaryKind::Neumann)
}

fn process_element(ctx: &LodContext<'_>, cache: &PatchCache, t: usize, k: usize, bc: BoundaryData<'_>) -> Result<ElementResult> {
    let system = cache.system(ctx, t, k)?;
    let n = system.dofs.len();
    let coarse_dofs = ctx.interp.coarse_dofs();
    let tri = ctx.coarse.triangle(t);

    let mut targets: Vec<(usize, usize, usize)> = Vec::new(); // (coarse dof, vertex, comp)
    for (a, &z) in tri.iter().enumerate() {
        for c in 0..DIM {
            if let Some(fd) = coarse_dofs.free_index(dof_index(z, c)) {
                targets.push((fd, a, c));
            }
        }
    }
    let neumann_col = bc.neumann.filter(|_| has_neumann_edge(ctx.coarse, t)).map(|_| targets.len());
    let lift = bc.lift.filter(|g| {
        ctx.fine.children(t).expect("nested").iter().any(|&e| local_values(ctx.fine, e, g).iter().any(|&x| x != 0.0))
    });
    let lift_col = lift.map(|_| targets.len() + usize::from(neumann_col.is_some()));
    let ncols = targets.len() + usize::from(neumann_col.is_some()) + usize::from(lift_col.is_some());

    let mut rhs = Mat::<f64>::zeros(n, ncols);
    for (col, &(_, a, c)) in targets.iter().enumerate() {
        add_element_rhs(ctx, &system, t, &mut rhs, col, |e| {
            let ftri = ctx.fine.triangle(e);
            let mut vals = [0.0; 6];
            for (j, &v) in ftri.iter().enumerate() {
                vals[2 * j + c] = ctx.coarse.barycentric(t, ctx.fine.node(v))[a];
            }
            vals
        });
    }
    if let (Some(col), Some(b)) = (neumann_col, bc.neumann) {
        let load = assemble_neumann_load_on(ctx.fine, b, t);
        for (i, &d) in system.dofs.iter().enumerate() {
            rhs[(i, col)] = load[d];
        }
    }
    if let (Some(col), Some(g)) = (lift_col, lift) {
        add_element_rhs(ctx, &system, t, &mut rhs, col, |e| local_values(ctx.fine, e, g));
    }

    let w = system.solver.solve_mat(&rhs)?;
    let column = |col: usize| -> Vec<f64> { (0..n).map(|i| w[(i, col)]).collect() };
    Ok(ElementResult {
        basis: targets.iter().enumerate().map(|(col, &(fd, _, _))| (fd, column(col))).collect(),
        neumann: neumann_col.map(column),
        dirichlet: lift_col.map(column),
        dofs: system.dofs.clone(),
    })
}

pub(crate) fn compute_correctors(ctx: &LodContext<'_>, k: usize, bc: BoundaryData<'_>) -> Result<Correctors> {
    let cache = PatchCache::default();
    let results: Vec<ElementResult> = (0..ctx.coarse.num_triangles())
        .into_par_iter()
        .map(|t| process_element(ctx, &cache, t, k, bc))
        .collect::<Result<_>>()?;

    let nfine = ctx.fine.num_dofs();
    let ncoarse = ctx.interp.num_coarse_free();
    // contributions per coarse dof, in element order
    let mut parts: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ncoarse];
    for (ri, r) in results.iter().enumerate() {
        for (bi, &(fd, _)) in r.basis.iter().enumerate() {
            parts[fd].push((ri, bi));
        }
    }
    let correctors: Vec<SparseVector> = parts
        .par_iter()
        .map(|list| {
            let mut entries = Vec::new();
            for &(ri, bi) in list {
                let r = &results[ri];
                entries.extend(r.dofs.iter().copied().zip(r.basis[bi].1.iter().copied()));
            }
            merge_entries(nfine, entries)
        })
        .collect();

    let mut neumann = vec![0.0; nfine];
    let mut dirichlet = vec![0.0; nfine];
    for r in &results {
        if let Some(b) = &r.neumann {
            scatter(&r.dofs, b, &mut neumann);
        }
        if let Some(g) = &r.dirichlet {
            scatter(&r.dofs, g, &mut dirichlet);
        }
    }

    Ok(Correctors {
        set: CorrectorSet { k, coarse_n: ctx.coarse.level_size(), fine_n: ctx.fine.level_size(), correctors },
        neumann,
        dirichlet,
    })
}

/// Correctors `Q_k λ_{z,i} = Σ_T R^T_{f,k} λ_{z,i}` for all free coarse dofs.
pub fn build_corrector_set(ctx: &LodContext<'_>, k: usize) -> Result<CorrectorSet> {
    Ok(compute_correctors(ctx, k, BoundaryData::default())?.set)
}

/// Localized Neumann corrector `b̃^T_{f,k}` of one coarse boundary element.
pub fn solve_neumann_corrector(ctx: &LodContext<'_>, t: usize, traction: &VectorField, k: usize) -> Result<Vec<f64>> {
    if t >= ctx.coarse.num_triangles() {
        return Err(LodError::OutOfRange { index: t, len: ctx.coarse.num_triangles() });
    }
    if !has_neumann_edge(ctx.coarse, t) {
        return Err(LodError::InvalidProblem(format!("coarse element {t} has no Neumann edge")));
    }
    let cache = PatchCache::default();
    let system = cache.system(ctx, t, k)?;
    let load = assemble_neumann_load_on(ctx.fine, traction, t);
    let rhs: Vec<f64> = system.dofs.iter().map(|&d| load[d]).collect();
    let w = system.solver.solve(&rhs)?;
    let mut out = vec![0.0; ctx.fine.num_dofs()];
    system.scatter(&w, &mut out);
    Ok(out)
}

/// `b̃_{f,k}`, summed over the coarse elements touching Γ_N.
pub fn neumann_corrector(ctx: &LodContext<'_>, traction: &VectorField, k: usize) -> Result<Vec<f64>> {
    let bc = BoundaryData { neumann: Some(traction), lift: None };
    Ok(compute_correctors(ctx, k, bc)?.neumann)
}

/// `R_{f,k} g_h` for a Dirichlet lift `g_h`.
pub fn build_dirichlet_corrector(ctx: &LodContext<'_>, lift: &[f64], k: usize) -> Result<Vec<f64>> {
    if lift.len() != ctx.fine.num_dofs() {
        return Err(LodError::InvalidProblem("lift length does not match the fine mesh".into()));
    }
    let bc = BoundaryData { neumann: None, lift: Some(lift) };
    Ok(compute_correctors(ctx, k, bc)?.dirichlet)
}

/// Tail energies `e_k = ‖∇R^T_f v‖_{L2(Ω \ ω_k(T))}` for `k = 0..=k_max`,
/// measured on the global element corrector.
pub fn measure_corrector_decay(ctx: &LodContext<'_>, t: usize, v: &[f64], k_max: usize) -> Result<Vec<f64>> {
    let corrector = solve_element_corrector(ctx, t, v, IDEAL)?;
    let fine = ctx.fine;
    (0..=k_max)
        .map(|k| {
            let mut inside = vec![false; ctx.coarse.num_triangles()];
            for e in coarse_patch(ctx.coarse, t, k)? {
                inside[e] = true;
            }
            Ok(h1_seminorm_on(fine, &corrector, |e| !inside[fine.parent_of(e).expect("nested")]))
        })
        .collect()
}
