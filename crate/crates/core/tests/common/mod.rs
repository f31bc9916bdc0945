#![allow(dead_code)]

use lod_elasticity::fem::{nodal_interpolant, solve_fem};
use lod_elasticity::lod::{global_ritz_projection, LodContext};
use lod_elasticity::sparse::CsrMatrix;
use lod_elasticity::{BoundarySpec, Mesh, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dirichlet_mesh(n: usize) -> Mesh {
    Mesh::uniform(n, BoundarySpec::all_dirichlet()).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-300, "singular matrix");
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn energy(k: &CsrMatrix, v: &[f64]) -> f64 {
    k.bilinear(v, v).max(0.0).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Random fine vector vanishing on Γ_D.
pub fn random_fine_vector(mesh: &Mesh, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..mesh.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for node in mesh.dirichlet_nodes().collect::<Vec<_>>() {
        v[2 * node] = 0.0;
        v[2 * node + 1] = 0.0;
    }
    v
}

/// Ideal multiscale basis `λ_a - R_f λ_a` from one global Ritz projection per
/// coarse dof.
pub fn ideal_basis(ctx: &LodContext<'_>) -> Vec<Vec<f64>> {
    let interp = ctx.interpolation();
    (0..interp.num_coarse_free())
        .map(|a| {
            let hat = interp.hat_function(a);
            sub(&hat, &global_ritz_projection(ctx, &hat).unwrap())
        })
        .collect()
}

/// Dense Galerkin solve of `problem` (zero boundary data) in span(`basis`).
pub fn galerkin_solution(k: &CsrMatrix, load: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let kb: Vec<Vec<f64>> = basis.iter().map(|b| k.matvec(b)).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let m: Vec<Vec<f64>> = basis.iter().map(|a| kb.iter().map(|kb| dot(a, kb)).collect()).collect();
    let rhs: Vec<f64> = basis.iter().map(|a| dot(a, load)).collect();
    let c = dense_solve(m, rhs);
    let mut u = vec![0.0; load.len()];
    for (ci, b) in c.iter().zip(basis) {
        for (ui, bi) in u.iter_mut().zip(b) {
            *ui += ci * bi;
        }
    }
    u
}

pub fn reference(problem: &ProblemSpec, mesh: &Mesh) -> Vec<f64> {
    solve_fem(problem, mesh).unwrap()
}

pub fn interpolate(mesh: &Mesh, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    nodal_interpolant(mesh, f)
}
