//! Inputs of the convergence experiments.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LodError, Result};
use crate::fem::{nodal_interpolant, BodyForce, CoefficientField, ProblemSpec};
use crate::mesh::Mesh;

/// Seed of the shipped multiscale coefficient.
pub const DEFAULT_SEED: u64 = 20_170_601;

/// Cells per side of the multiscale checkerboard.
pub const CHECKERBOARD_N: usize = 32;
pub const CHECKERBOARD_RANGE: (f64, f64) = (0.1, 10.0);

pub fn constant_coefficients(mu: f64, lambda: f64) -> Result<CoefficientField> {
    CoefficientField::constant(mu, lambda)
}

/// Piecewise constant μ and λ drawn independently and uniformly from
/// `[lo, hi]` on every cell of a `grid_n × grid_n` grid.
pub fn random_checkerboard(grid_n: usize, lo: f64, hi: f64, seed: u64) -> Result<CoefficientField> {
    if grid_n == 0 {
        return Err(LodError::InvalidCoefficient("grid_n must be positive".into()));
    }
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(LodError::InvalidCoefficient(format!("invalid range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = grid_n * grid_n;
    let mut mu = Vec::with_capacity(cells);
    let mut lambda = Vec::with_capacity(cells);
    for _ in 0..cells {
        mu.push(rng.random_range(lo..=hi));
        lambda.push(rng.random_range(lo..=hi));
    }
    CoefficientField::new(grid_n, mu, lambda)
}

/// The 32 × 32 checkerboard of the multiscale experiment.
pub fn multiscale_coefficients(seed: u64) -> Result<CoefficientField> {
    random_checkerboard(CHECKERBOARD_N, CHECKERBOARD_RANGE.0, CHECKERBOARD_RANGE.1, seed)
}

/// Constant body force `f = [1, 1]` with homogeneous Dirichlet data.
pub fn unit_load_problem(coefficient: CoefficientField) -> ProblemSpec {
    ProblemSpec::new(coefficient, BodyForce::Constant([1.0, 1.0]))
}

/// Locking benchmark with μ = 1 and a closed-form solution vanishing on ∂Ω.
///
/// ```text
/// u₁ = sin(2πy)(cos(2πx) - 1) + sin(πx) sin(πy) / (1 + λ)
/// u₂ = sin(2πx)(1 - cos(2πy)) + sin(πx) sin(πy) / (1 + λ)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrennerBenchmark {
    pub lambda: f64,
}

impl BrennerBenchmark {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LodError::InvalidCoefficient(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn exact(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        let bubble = (PI * x).sin() * (PI * y).sin() / (1.0 + self.lambda);
        [
            (2.0 * PI * y).sin() * ((2.0 * PI * x).cos() - 1.0) + bubble,
            (2.0 * PI * x).sin() * (1.0 - (2.0 * PI * y).cos()) + bubble,
        ]
    }

    /// `f = -∇·σ(u)`.
    pub fn body_force(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        let pi2 = PI * PI;
        let common = -(PI * (x + y)).cos() + 2.0 / (1.0 + self.lambda) * (PI * x).sin() * (PI * y).sin();
        [
            pi2 * (4.0 * (2.0 * PI * y).sin() * (2.0 * (2.0 * PI * x).cos() - 1.0) + common),
            pi2 * (4.0 * (2.0 * PI * x).sin() * (1.0 - 2.0 * (2.0 * PI * y).cos()) + common),
        ]
    }

    pub fn coefficients(&self) -> Result<CoefficientField> {
        CoefficientField::constant(1.0, self.lambda)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let this = *self;
        Ok(ProblemSpec::new(self.coefficients()?, BodyForce::Field(Arc::new(move |p| this.body_force(p)))))
    }

    /// Nodal interpolant `I_h u`.
    pub fn interpolant(&self, mesh: &Mesh) -> Vec<f64> {
        nodal_interpolant(mesh, |p| self.exact(p))
    }
}

/// Plain-text coefficient grid: `grid_n`, then `grid_n` rows of μ, then
/// `grid_n` rows of λ (row-major, bottom row first).
pub fn format_coefficients(field: &CoefficientField) -> String {
    let n = field.grid_n();
    let mut out = format!("{n}\n");
    for values in [field.mu(), field.lambda()] {
        for row in values.chunks(n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

pub fn parse_coefficients(text: &str) -> Result<CoefficientField> {
    let mut tokens = text.split_whitespace();
    let n: usize = tokens
        .next()
        .ok_or_else(|| LodError::Parse("empty coefficient file".into()))?
        .parse()
        .map_err(|e| LodError::Parse(format!("grid_n: {e}")))?;
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|e| LodError::Parse(format!("value {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    let cells = n * n;
    if values.len() != 2 * cells {
        return Err(LodError::Parse(format!("expected {} values, found {}", 2 * cells, values.len())));
    }
    CoefficientField::new(n, values[..cells].to_vec(), values[cells..].to_vec())
}

pub fn write_coefficients(field: &CoefficientField, path: &Path) -> Result<()> {
    std::fs::write(path, format_coefficients(field))?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientField> {
    parse_coefficients(&std::fs::read_to_string(path)?)
}
