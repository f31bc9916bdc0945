//! Galerkin solve in the localized multiscale space.

use super::{compute_correctors, BoundaryData, CorrectorSet, LodContext};
use crate::error::{LodError, Result};
use crate::fem::{refine, ProblemSpec};
use crate::sparse::{CsrMatrix, SparseVector, SpdSolver};

/// Relative asymmetry tolerated in the assembled multiscale stiffness.
const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GfemSolution {
    /// `u_{ms,k}` on the fine grid (all dofs).
    pub u: Vec<f64>,
    /// Coordinates in the multiscale basis.
    pub coefficients: Vec<f64>,
    /// Multiscale basis `λ_a - Q_k λ_a`, one per free coarse dof.
    pub basis: Vec<SparseVector>,
    pub correctors: CorrectorSet,
}

impl GfemSolution {
    /// Dimension of the coarse Galerkin system.
    pub fn dimension(&self) -> usize {
        self.coefficients.len()
    }
}

/// Basis vectors as the columns of a fine × coarse matrix.
fn basis_matrix(basis: &[SparseVector], nfine: usize) -> CsrMatrix {
    let t: Vec<(usize, usize, f64)> = basis
        .iter()
        .enumerate()
        .flat_map(|(a, psi)| psi.indices.iter().zip(&psi.values).map(move |(&i, &v)| (i, a, v)))
        .collect();
    CsrMatrix::from_triplets(nfine, basis.len(), &t)
}

/// Localized GFEM solution `u_{ms,k}`. `problem.coefficient` must be the
/// coefficient of `ctx`.
pub fn solve_gfem(ctx: &LodContext<'_>, problem: &ProblemSpec, k: usize) -> Result<GfemSolution> {
    if &problem.coefficient != ctx.coefficient() {
        return Err(LodError::InvalidProblem("problem coefficient differs from the corrector context".into()));
    }
    let fine = ctx.fine();
    let nfine = fine.num_dofs();
    let lift = problem.lift_on(fine)?;
    let has_lift = lift.iter().any(|&g| g != 0.0);
    let bc = BoundaryData {
        neumann: problem.neumann.as_ref().filter(|_| fine.neumann_edges().next().is_some()),
        lift: has_lift.then_some(lift.as_slice()),
    };
    let corr = compute_correctors(ctx, k, bc)?;
    let basis = corr.set.multiscale_basis(ctx.interpolation());

    // offset = b̃ + g - R g
    let offset: Vec<f64> = (0..nfine).map(|i| corr.neumann[i] + lift[i] - corr.dirichlet[i]).collect();
    let mut load = problem.load_vector(fine);
    for (l, ko) in load.iter_mut().zip(ctx.stiffness().matvec(&offset)) {
        *l -= ko;
    }

    let psi = basis_matrix(&basis, nfine);
    let psi_t = psi.transpose();
    let m = psi_t.matmul(ctx.stiffness()).matmul(&psi);
    let scale = (0..m.nrows()).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    if m.asymmetry() > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(LodError::Solver(format!("multiscale stiffness not symmetric ({:e})", m.asymmetry())));
    }
    let m = symmetrize(&m);
    let rhs = psi_t.matvec(&load);

    let coefficients = if m.nrows() == 0 {
        Vec::new()
    } else {
        let solver = SpdSolver::new(&m)
            .map_err(|e| LodError::Solver(format!("multiscale stiffness not SPD: {e}")))?;
        refine(&m, &solver, &rhs)?
    };
    let mut u = psi.matvec(&coefficients);
    for (ui, oi) in u.iter_mut().zip(&offset) {
        *ui += oi;
    }
    Ok(GfemSolution { u, coefficients, basis, correctors: corr.set })
}

fn symmetrize(m: &CsrMatrix) -> CsrMatrix {
    let t: Vec<(usize, usize, f64)> = m
        .triplets()
        .flat_map(|(r, c, v)| [(r, c, 0.5 * v), (c, r, 0.5 * v)])
        .collect();
    CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t)
}
