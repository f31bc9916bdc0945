//! Constrained patch problems
//!
//! ```text
//! [ K  Cᵀ ] [w]   [r]
//! [ C  0  ] [μ] = [0]
//! ```
//!
//! with `K` the stiffness on the patch unknowns and `C` the rows of `I_H`
//! belonging to the patch constraint nodes. The system is solved through the
//! Schur complement `S = C K⁻¹ Cᵀ`: `K` is factored once per patch, `S` is a
//! small dense SPD matrix.

use faer::Mat;

use crate::error::{LodError, Result};
use crate::fem::{mesh_element_stiffness, CoefficientField};
use crate::interpolation::InterpolationOperator;
use crate::mesh::{dof_index, Mesh, Patch, DIM};
use crate::sparse::{norm, CsrMatrix, DenseSpdSolver, SpdSolver};

/// Relative residual accepted for a patch solve.
pub const KKT_TOLERANCE: f64 = 1e-9;

/// Rows of `C` whose largest retained entry falls below this fraction of the
/// largest entry of the full `I_H` row are treated as identically zero.
const ZERO_ROW_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    /// Global fine dofs of the patch unknowns (sorted).
    pub dofs: Vec<usize>,
    /// Patch stiffness over `dofs`.
    pub stiffness: CsrMatrix,
    /// Constraint rows over `dofs`, zero rows removed.
    pub constraints: CsrMatrix,
}

impl SaddleSystem {
    pub fn build(fine: &Mesh, coeff: &CoefficientField, interp: &InterpolationOperator, patch: &Patch) -> Result<Self> {
        let dofs = patch.interior_fine_dofs.clone();
        let n = dofs.len();

        let mut t = Vec::new();
        for &e in &patch.fine_elements {
            let tri = fine.triangle(e);
            let local: Vec<Option<usize>> = (0..6).map(|i| patch.local_dof(dof_index(tri[i / 2], i % 2))).collect();
            if local.iter().all(Option::is_none) {
                continue;
            }
            let ke = mesh_element_stiffness(fine, coeff, e);
            for i in 0..6 {
                let Some(li) = local[i] else { continue };
                for j in 0..6 {
                    if let Some(lj) = local[j] {
                        t.push((li, lj, ke[i][j]));
                    }
                }
            }
        }
        let stiffness = CsrMatrix::from_triplets(n, n, &t);

        let coarse_dofs = interp.coarse_dofs();
        let mut rows = Vec::new();
        let mut nrows = 0;
        for &z in &patch.constraint_nodes {
            for c in 0..DIM {
                let row = coarse_dofs
                    .free_index(dof_index(z, c))
                    .ok_or_else(|| LodError::InvalidProblem(format!("constraint node {z} is not free")))?;
                let (cols, vals) = interp.matrix().row(row);
                let full_max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let kept: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .filter_map(|(&col, &v)| patch.local_dof(col).map(|l| (l, v)))
                    .collect();
                let kept_max = kept.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
                if kept_max <= ZERO_ROW_THRESHOLD * full_max {
                    continue;
                }
                rows.extend(kept.into_iter().map(|(l, v)| (nrows, l, v)));
                nrows += 1;
            }
        }
        let constraints = CsrMatrix::from_triplets(nrows, n, &rows);
        Ok(Self { dofs, stiffness, constraints })
    }

    pub fn num_unknowns(&self) -> usize {
        self.dofs.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    /// The full symmetric KKT matrix, dense.
    pub fn dense_kkt(&self) -> Vec<Vec<f64>> {
        let n = self.num_unknowns();
        let m = self.num_constraints();
        let mut a = vec![vec![0.0; n + m]; n + m];
        for (r, c, v) in self.stiffness.triplets() {
            a[r][c] += v;
        }
        for (r, c, v) in self.constraints.triplets() {
            a[n + r][c] += v;
            a[c][n + r] += v;
        }
        a
    }

    pub fn factor(&self) -> Result<PatchSolver> {
        PatchSolver::new(self)
    }
}

/// Factored patch system, reusable for any number of right-hand sides.
pub struct PatchSolver {
    n: usize,
    m: usize,
    stiffness: CsrMatrix,
    constraints: CsrMatrix,
    chol: Option<SpdSolver>,
    /// `K⁻¹ Cᵀ`
    k_inv_ct: Mat<f64>,
    schur: Option<DenseSpdSolver>,
}

impl std::fmt::Debug for PatchSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PatchSolver").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl PatchSolver {
    fn new(sys: &SaddleSystem) -> Result<Self> {
        let n = sys.num_unknowns();
        let m = sys.num_constraints();
        if n == 0 {
            return Ok(Self {
                n,
                m,
                stiffness: sys.stiffness.clone(),
                constraints: sys.constraints.clone(),
                chol: None,
                k_inv_ct: Mat::zeros(0, m),
                schur: None,
            });
        }
        let chol = SpdSolver::new(&sys.stiffness)?;
        let mut ct = Mat::<f64>::zeros(n, m);
        for (r, c, v) in sys.constraints.triplets() {
            ct[(c, r)] = v;
        }
        let k_inv_ct = if m > 0 { chol.solve_mat(&ct) } else { ct };
        let schur = if m > 0 {
            let mut s = Mat::<f64>::zeros(m, m);
            for r in 0..m {
                let (cols, vals) = sys.constraints.row(r);
                for j in 0..m {
                    s[(r, j)] = cols.iter().zip(vals).map(|(&c, &v)| v * k_inv_ct[(c, j)]).sum();
                }
            }
            // symmetrize rounding noise
            for r in 0..m {
                for j in 0..r {
                    let avg = 0.5 * (s[(r, j)] + s[(j, r)]);
                    s[(r, j)] = avg;
                    s[(j, r)] = avg;
                }
            }
            Some(DenseSpdSolver::new(&s).map_err(|_| {
                LodError::Solver(format!("singular KKT system: {m} constraints on {n} unknowns are dependent"))
            })?)
        } else {
            None
        };
        Ok(Self {
            n,
            m,
            stiffness: sys.stiffness.clone(),
            constraints: sys.constraints.clone(),
            chol: Some(chol),
            k_inv_ct,
            schur,
        })
    }

    pub fn num_unknowns(&self) -> usize {
        self.n
    }

    /// Solves for one right-hand side given on the patch unknowns.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.solve_mat(&b)?;
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }

    /// Solves for every column of `rhs`; returns the `w` parts.
    pub fn solve_mat(&self, rhs: &Mat<f64>) -> Result<Mat<f64>> {
        assert_eq!(rhs.nrows(), self.n);
        let Some(chol) = &self.chol else {
            return Ok(Mat::zeros(0, rhs.ncols()));
        };
        let mut w = chol.solve_mat(rhs);
        let unconstrained: Vec<f64> = (0..rhs.ncols())
            .map(|col| norm(&(0..self.n).map(|i| w[(i, col)]).collect::<Vec<_>>()))
            .collect();
        let mut multipliers = Mat::<f64>::zeros(self.m, rhs.ncols());
        if let Some(schur) = &self.schur {
            for col in 0..rhs.ncols() {
                let cw: Vec<f64> = (0..self.m)
                    .map(|r| {
                        let (cols, vals) = self.constraints.row(r);
                        cols.iter().zip(vals).map(|(&c, &v)| v * w[(c, col)]).sum()
                    })
                    .collect();
                let mu = schur.solve(&cw);
                for i in 0..self.n {
                    w[(i, col)] -= (0..self.m).map(|j| self.k_inv_ct[(i, j)] * mu[j]).sum::<f64>();
                }
                for (j, v) in mu.into_iter().enumerate() {
                    multipliers[(j, col)] = v;
                }
            }
        }
        self.check(rhs, &w, &multipliers, &unconstrained)?;
        Ok(w)
    }

    /// `unconstrained[col]` is `‖K⁻¹ r‖`, the scale of the constraint residual.
    fn check(&self, rhs: &Mat<f64>, w: &Mat<f64>, mu: &Mat<f64>, unconstrained: &[f64]) -> Result<()> {
        for col in 0..rhs.ncols() {
            let wc: Vec<f64> = (0..self.n).map(|i| w[(i, col)]).collect();
            let muc: Vec<f64> = (0..self.m).map(|j| mu[(j, col)]).collect();
            let b: Vec<f64> = (0..self.n).map(|i| rhs[(i, col)]).collect();
            let bn = norm(&b);
            if bn == 0.0 {
                continue;
            }
            let kw = self.stiffness.matvec(&wc);
            let ctmu = self.constraints.matvec_transpose(&muc);
            let r1: Vec<f64> = (0..self.n).map(|i| kw[i] + ctmu[i] - b[i]).collect();
            let scale = bn.max(norm(&kw));
            let rel = norm(&r1) / scale;
            let cw = norm(&self.constraints.matvec(&wc));
            let crel = cw / (unconstrained[col].max(f64::MIN_POSITIVE) * self.constraint_scale());
            if rel > KKT_TOLERANCE || (cw > 0.0 && crel > KKT_TOLERANCE) {
                return Err(LodError::Solver(format!(
                    "patch solve residual too large: equilibrium {rel:e}, constraint {crel:e}"
                )));
            }
        }
        Ok(())
    }

    fn constraint_scale(&self) -> f64 {
        (0..self.m)
            .map(|r| norm(self.constraints.row(r).1))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE)
    }
}
