//! Quasi-interpolation `I_H = E_H ∘ Π_H` from the fine P1 space onto the
//! coarse one, applied to each displacement component separately.
//!
//! `Π_H` is the elementwise L2 projection onto affine functions on each coarse
//! triangle, `E_H` averages the one-sided vertex values over the coarse
//! triangles sharing a node and sets Dirichlet nodes to zero. Its kernel is
//! the fine-scale space `V_f`.

use crate::error::Result;
use crate::fem::DofMap;
use crate::mesh::{dof_index, Mesh, DIM};
use crate::sparse::CsrMatrix;

/// Elementwise L2 projection onto `P1(T_H)`.
///
/// For coarse triangle `T` and local vertex `a`, `weights[T][a]` lists
/// `(fine node, w)` such that `(Π_H v)|_T(z_a) = Σ w · v(node)` for each
/// displacement component.
#[derive(Debug, Clone)]
pub struct ElementProjector {
    weights: Vec<[Vec<(usize, f64)>; 3]>,
}

/// `[[2,1,1],[1,2,1],[1,1,2]]⁻¹ = ¼ [[3,-1,-1],[-1,3,-1],[-1,-1,3]]`; the local
/// P1 mass matrix is `|T|/12` times the former.
fn inverse_local_mass(area: f64) -> [[f64; 3]; 3] {
    let s = 3.0 / area;
    let mut m = [[-s; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 3.0 * s;
    }
    m
}

pub fn build_l2_projection(coarse: &Mesh, fine: &Mesh) -> Result<ElementProjector> {
    fine.check_refines(coarse)?;
    let mut weights = Vec::with_capacity(coarse.num_triangles());
    for t in 0..coarse.num_triangles() {
        // moments b_a = ∫_T v λ_a^T as linear functionals of fine nodal values
        let mut moments: [Vec<(usize, f64)>; 3] = Default::default();
        for &e in fine.children(t).expect("checked") {
            let tri = fine.triangle(e);
            let area = fine.signed_area(e);
            // coarse barycentrics at the fine vertices
            let lam: Vec<[f64; 3]> = tri.iter().map(|&v| coarse.barycentric(t, fine.node(v))).collect();
            for (i, &vi) in tri.iter().enumerate() {
                for a in 0..3 {
                    // Σ_j ∫ φ_i φ_j λ_a(x_j), with ∫ φ_i φ_j = |e| (1 + δ_ij) / 12
                    let w: f64 = (0..3)
                        .map(|j| area * if i == j { 2.0 } else { 1.0 } / 12.0 * lam[j][a])
                        .sum();
                    moments[a].push((vi, w));
                }
            }
        }
        let minv = inverse_local_mass(coarse.signed_area(t));
        let mut local: [Vec<(usize, f64)>; 3] = Default::default();
        for (a, out) in local.iter_mut().enumerate() {
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for (b, mb) in moments.iter().enumerate() {
                entries.extend(mb.iter().map(|&(node, w)| (node, minv[a][b] * w)));
            }
            *out = merge_sorted(entries);
        }
        weights.push(local);
    }
    Ok(ElementProjector { weights })
}

fn merge_sorted(mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|&(i, _)| i);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (i, w) in entries {
        match out.last_mut() {
            Some((j, acc)) if *j == i => *acc += w,
            _ => out.push((i, w)),
        }
    }
    out
}

impl ElementProjector {
    pub fn weights(&self, coarse_t: usize, local_vertex: usize) -> &[(usize, f64)] {
        &self.weights[coarse_t][local_vertex]
    }

    /// Per coarse triangle, per vertex, per component values of `Π_H v`.
    pub fn apply(&self, v: &[f64]) -> Vec<[[f64; 2]; 3]> {
        self.weights
            .iter()
            .map(|local| {
                local.clone().map(|w| {
                    let mut val = [0.0; 2];
                    for (node, wt) in w {
                        for (c, out) in val.iter_mut().enumerate() {
                            *out += wt * v[dof_index(node, c)];
                        }
                    }
                    val
                })
            })
            .collect()
    }
}

/// Nodal averaging `E_H : P1(T_H) → V_H`.
#[derive(Debug, Clone)]
pub struct Averaging {
    /// For each coarse node: `(triangle, local vertex)` pairs containing it.
    incidence: Vec<Vec<(usize, usize)>>,
    dirichlet: Vec<bool>,
}

pub fn build_averaging(coarse: &Mesh) -> Averaging {
    let incidence = (0..coarse.num_nodes())
        .map(|z| {
            coarse
                .node_elements(z)
                .iter()
                .map(|&t| (t, coarse.triangle(t).iter().position(|&v| v == z).expect("incident")))
                .collect()
        })
        .collect();
    let dirichlet = (0..coarse.num_nodes()).map(|z| coarse.is_dirichlet(z)).collect();
    Averaging { incidence, dirichlet }
}

impl Averaging {
    pub fn incident(&self, node: usize) -> &[(usize, usize)] {
        &self.incidence[node]
    }

    /// Full coarse vector from elementwise vertex values.
    pub fn apply(&self, elementwise: &[[[f64; 2]; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; DIM * self.incidence.len()];
        for (z, inc) in self.incidence.iter().enumerate() {
            if self.dirichlet[z] {
                continue;
            }
            let card = inc.len() as f64;
            for c in 0..DIM {
                out[dof_index(z, c)] = inc.iter().map(|&(t, a)| elementwise[t][a][c]).sum::<f64>() / card;
            }
        }
        out
    }
}

/// `I_H` as an explicit sparse matrix together with the coarse-to-fine
/// inclusion `V_H ⊂ V_h`.
#[derive(Debug, Clone)]
pub struct InterpolationOperator {
    /// Rows: free coarse dofs; columns: all fine dofs.
    matrix: CsrMatrix,
    /// Rows: all fine dofs; columns: all coarse dofs.
    prolongation: CsrMatrix,
    coarse_dofs: DofMap,
    coarse_num_dofs: usize,
}

pub fn build_interpolation(coarse: &Mesh, fine: &Mesh) -> Result<InterpolationOperator> {
    let projector = build_l2_projection(coarse, fine)?;
    let averaging = build_averaging(coarse);
    let coarse_dofs = DofMap::new(coarse);

    let mut t = Vec::new();
    for (row_base, z) in coarse.free_nodes().enumerate() {
        let inc = averaging.incident(z);
        let card = inc.len() as f64;
        let mut entries = Vec::new();
        for &(tri, a) in inc {
            entries.extend(projector.weights(tri, a).iter().map(|&(node, w)| (node, w / card)));
        }
        for (node, w) in merge_sorted(entries) {
            for c in 0..DIM {
                t.push((DIM * row_base + c, dof_index(node, c), w));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(coarse_dofs.num_free(), fine.num_dofs(), &t);
    debug_assert!(coarse
        .free_nodes()
        .enumerate()
        .all(|(i, z)| coarse_dofs.free_index(dof_index(z, 0)) == Some(DIM * i)));

    let prolongation = build_prolongation(coarse, fine);
    Ok(InterpolationOperator { matrix, prolongation, coarse_dofs, coarse_num_dofs: coarse.num_dofs() })
}

/// Evaluates the coarse hat functions at the fine nodes.
fn build_prolongation(coarse: &Mesh, fine: &Mesh) -> CsrMatrix {
    let mut value = vec![None; fine.num_nodes()];
    for e in 0..fine.num_triangles() {
        let parent = fine.parent_of(e).expect("checked");
        for v in fine.triangle(e) {
            if value[v].is_none() {
                let lam = coarse.barycentric(parent, fine.node(v));
                value[v] = Some((parent, lam));
            }
        }
    }
    let mut t = Vec::new();
    for (v, entry) in value.into_iter().enumerate() {
        let (parent, lam) = entry.expect("every node belongs to a triangle");
        for (a, &z) in coarse.triangle(parent).iter().enumerate() {
            // snap rounding noise so that the support is exact
            let l = lam[a];
            let l = if l.abs() < 1e-13 { 0.0 } else if (l - 1.0).abs() < 1e-13 { 1.0 } else { l };
            if l != 0.0 {
                for c in 0..DIM {
                    t.push((dof_index(v, c), dof_index(z, c), l));
                }
            }
        }
    }
    CsrMatrix::from_triplets(fine.num_dofs(), coarse.num_dofs(), &t)
}

impl InterpolationOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn prolongation(&self) -> &CsrMatrix {
        &self.prolongation
    }

    pub fn coarse_dofs(&self) -> &DofMap {
        &self.coarse_dofs
    }

    pub fn num_coarse_free(&self) -> usize {
        self.coarse_dofs.num_free()
    }

    /// `I_H v` on the free coarse dofs.
    pub fn apply(&self, v_fine: &[f64]) -> Vec<f64> {
        self.matrix.matvec(v_fine)
    }

    /// `I_H v` as a full coarse vector (zero on Γ_D).
    pub fn apply_full(&self, v_fine: &[f64]) -> Vec<f64> {
        self.coarse_dofs.extend(&self.apply(v_fine))
    }

    /// Coarse function (all coarse dofs) as a fine vector.
    pub fn prolong(&self, coarse_full: &[f64]) -> Vec<f64> {
        assert_eq!(coarse_full.len(), self.coarse_num_dofs);
        self.prolongation.matvec(coarse_full)
    }

    /// Coarse function given on free coarse dofs as a fine vector.
    pub fn prolong_free(&self, coarse_free: &[f64]) -> Vec<f64> {
        self.prolong(&self.coarse_dofs.extend(coarse_free))
    }

    /// Fine vector of the coarse hat function for free coarse dof `a`.
    pub fn hat_function(&self, a: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.num_coarse_free()];
        e[a] = 1.0;
        self.prolong_free(&e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::nodal_interpolant;
    use crate::mesh::BoundarySpec;

    fn pair(nc: usize, nf: usize) -> (Mesh, Mesh) {
        let c = Mesh::uniform(nc, BoundarySpec::all_dirichlet()).unwrap();
        let f = c.refine_to(nf).unwrap();
        (c, f)
    }

    #[test]
    fn projection_fixes_affine_functions() {
        let (c, f) = pair(2, 8);
        let proj = build_l2_projection(&c, &f).unwrap();
        let v = nodal_interpolant(&f, |p| [2.0 * p[0] - p[1] + 0.5, 3.0]);
        let pv = proj.apply(&v);
        for t in 0..c.num_triangles() {
            for (a, &z) in c.triangle(t).iter().enumerate() {
                let p = c.node(z);
                assert!((pv[t][a][0] - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-13);
                assert!((pv[t][a][1] - 3.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn projection_of_hat_matches_dense_mass_oracle() {
        // n_H = 1, n_h = 2: project the fine hat at the centre node onto P1 of
        // each coarse triangle by brute-force quadrature of the normal equations.
        let (c, f) = pair(1, 2);
        let proj = build_l2_projection(&c, &f).unwrap();
        let centre = f.node_index(1, 1);
        let mut v = vec![0.0; f.num_dofs()];
        v[dof_index(centre, 0)] = 1.0;
        let pv = proj.apply(&v);

        for t in 0..c.num_triangles() {
            let verts = c.vertices(t);
            let mut mass = [[0.0; 3]; 3];
            let mut rhs = [0.0; 3];
            // split the coarse triangle into m² similar pieces (the hat is affine
            // on each when m is even) and integrate the quadratic integrands with
            // the edge-midpoint rule, which is exact for degree two
            let m = 4usize;
            let area = c.signed_area(t) / (m * m) as f64;
            let point = |s: f64, r: f64| {
                let l = [1.0 - s - r, s, r];
                let x = [
                    l[0] * verts[0][0] + l[1] * verts[1][0] + l[2] * verts[2][0],
                    l[0] * verts[0][1] + l[1] * verts[1][1] + l[2] * verts[2][1],
                ];
                (l, x)
            };
            let mut pieces: Vec<[[f64; 2]; 3]> = Vec::new();
            let h = 1.0 / m as f64;
            for i in 0..m {
                for j in 0..(m - i) {
                    let (s, r) = (i as f64 * h, j as f64 * h);
                    pieces.push([[s, r], [s + h, r], [s, r + h]]);
                    if i + j + 1 < m {
                        pieces.push([[s + h, r], [s + h, r + h], [s, r + h]]);
                    }
                }
            }
            for q in pieces {
                for (u, w) in [(0, 1), (1, 2), (2, 0)] {
                    let (l, x) = point(0.5 * (q[u][0] + q[w][0]), 0.5 * (q[u][1] + q[w][1]));
                    let hat = (1.0 - 2.0 * (x[0] - 0.5).abs().max((x[1] - 0.5).abs()).max((x[0] - x[1]).abs())).max(0.0);
                    for a in 0..3 {
                        rhs[a] += area / 3.0 * hat * l[a];
                        for b in 0..3 {
                            mass[a][b] += area / 3.0 * l[a] * l[b];
                        }
                    }
                }
            }
            let sol = solve3(mass, rhs);
            for a in 0..3 {
                assert!((pv[t][a][0] - sol[a]).abs() < 1e-13, "{} vs {}", pv[t][a][0], sol[a]);
            }
        }
    }

    fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for k in 0..3 {
            for i in (k + 1)..3 {
                let f = a[i][k] / a[k][k];
                for j in k..3 {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            x[i] = (b[i] - ((i + 1)..3).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        x
    }

    #[test]
    fn averaging_keeps_continuous_data_and_zeroes_dirichlet() {
        let c = Mesh::uniform(4, BoundarySpec::all_dirichlet()).unwrap();
        let avg = build_averaging(&c);
        let field = |p: [f64; 2]| [p[0] + 1.0, p[1] * p[0]];
        let elementwise: Vec<[[f64; 2]; 3]> = (0..c.num_triangles())
            .map(|t| c.triangle(t).map(|z| field(c.node(z))))
            .collect();
        let out = avg.apply(&elementwise);
        for z in 0..c.num_nodes() {
            let expect = if c.is_dirichlet(z) { [0.0, 0.0] } else { field(c.node(z)) };
            assert_eq!(out[dof_index(z, 0)], expect[0]);
            assert_eq!(out[dof_index(z, 1)], expect[1]);
        }
    }

    #[test]
    fn averaging_interior_node_uses_six_triangles() {
        let c = Mesh::uniform(4, BoundarySpec::all_dirichlet()).unwrap();
        let avg = build_averaging(&c);
        let z = c.node_index(2, 2);
        let incident: Vec<usize> =
            (0..c.num_triangles()).filter(|&t| c.triangle(t).contains(&z)).collect();
        assert_eq!(incident.len(), 6);
        let mut elementwise = vec![[[0.0; 2]; 3]; c.num_triangles()];
        for (k, &t) in incident.iter().enumerate() {
            let a = c.triangle(t).iter().position(|&v| v == z).unwrap();
            elementwise[t][a] = [k as f64, 1.0];
        }
        let out = avg.apply(&elementwise);
        assert!((out[dof_index(z, 0)] - 15.0 / 6.0).abs() < 1e-15);
        assert!((out[dof_index(z, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_is_a_projection() {
        let (c, f) = pair(4, 12);
        let ih = build_interpolation(&c, &f).unwrap();
        let ip = ih.matrix().matmul(&crate::fem::restrict_columns(ih.prolongation(), ih.coarse_dofs()));
        let n = ih.num_coarse_free();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip.get(i, j) - expect).abs() < 1e-13);
            }
        }
        assert!(ih.apply(&vec![0.0; f.num_dofs()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn components_decouple() {
        let (c, f) = pair(2, 8);
        let ih = build_interpolation(&c, &f).unwrap();
        let v = nodal_interpolant(&f, |p| [(3.0 * p[0]).sin() * p[1], 0.0]);
        let out = ih.apply_full(&v);
        for z in 0..c.num_nodes() {
            assert_eq!(out[dof_index(z, 1)], 0.0);
        }
    }

    #[test]
    fn approximation_constant_is_moderate() {
        use std::f64::consts::PI;
        let mut constants = Vec::new();
        for nc in [4, 8] {
            let (c, f) = pair(nc, 64);
            let ih = build_interpolation(&c, &f).unwrap();
            let v = nodal_interpolant(&f, |p| [(PI * p[0]).sin() * (PI * p[1]).sin(), 0.0]);
            let diff: Vec<f64> = v.iter().zip(ih.prolong(&ih.apply_full(&v))).map(|(a, b)| a - b).collect();
            let l2 = l2_norm(&f, &diff);
            let grad = crate::fem::h1_seminorm(&f, &v);
            constants.push(l2 / (c.h() * grad));
        }
        assert!(constants.iter().all(|&k| k < 10.0), "{constants:?}");
    }

    fn l2_norm(mesh: &Mesh, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in 0..mesh.num_triangles() {
            let tri = mesh.triangle(e);
            let area = mesh.signed_area(e);
            for c in 0..DIM {
                let x: Vec<f64> = tri.iter().map(|&n| v[dof_index(n, c)]).collect();
                let s: f64 = x.iter().sum();
                let sq: f64 = x.iter().map(|a| a * a).sum();
                acc += area / 12.0 * (sq + s * s);
            }
        }
        acc.sqrt()
    }
}
