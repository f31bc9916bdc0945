//! Convergence and decay studies with CSV and SVG output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;

use crate::error::{LodError, Result};
use crate::fem::{h1_seminorm, solve_coarse_fem, solve_fem, ProblemSpec};
use crate::lod::{localization_schedule, measure_corrector_decay, solve_gfem, LodContext};
use crate::mesh::{dof_index, BoundarySpec, Mesh};
use crate::problems::{constant_coefficients, multiscale_coefficients, unit_load_problem, BrennerBenchmark, CHECKERBOARD_N, DEFAULT_SEED};

/// λ of the locking benchmark.
pub const LOCKING_LAMBDA: f64 = 1e3;

/// Largest patch size of the decay study unless given explicitly.
pub const DEFAULT_DECAY_K_MAX: usize = 5;

pub const CSV_HEADER: &str = "H,k,err_gfem,err_fem,slope_gfem,slope_fem";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Constant,
    Multiscale,
    Locking,
    Decay,
}

impl FromStr for Case {
    type Err = LodError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(Case::Constant),
            "multiscale" => Ok(Case::Multiscale),
            "locking" => Ok(Case::Locking),
            "decay" => Ok(Case::Decay),
            other => Err(LodError::Config(format!("unknown case {other:?}"))),
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Case::Constant => "constant",
            Case::Multiscale => "multiscale",
            Case::Locking => "locking",
            Case::Decay => "decay",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: Case,
    pub fine: usize,
    pub coarse: Vec<usize>,
    /// Explicit patch sizes; `None` uses [`localization_schedule`]. For the
    /// decay case a single entry gives the largest `k`.
    pub k: Option<Vec<usize>>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub plots: bool,
}

impl ExperimentConfig {
    pub fn new(case: Case, fine: usize, coarse: Vec<usize>) -> Self {
        Self { case, fine, coarse, k: None, seed: DEFAULT_SEED, out: None, plots: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fine == 0 {
            return Err(LodError::Config("fine level must be positive".into()));
        }
        if self.coarse.is_empty() {
            return Err(LodError::Config("no coarse levels".into()));
        }
        for &n in &self.coarse {
            if n == 0 || self.fine % n != 0 {
                return Err(LodError::Config(format!("coarse level {n} does not divide fine level {}", self.fine)));
            }
        }
        if self.case == Case::Multiscale || self.case == Case::Decay {
            if self.fine % CHECKERBOARD_N != 0 {
                return Err(LodError::Config(format!(
                    "fine level {} does not resolve the {CHECKERBOARD_N}x{CHECKERBOARD_N} coefficient grid",
                    self.fine
                )));
            }
        }
        match (&self.k, self.case) {
            (Some(k), Case::Decay) if k.len() != 1 => {
                return Err(LodError::Config("decay case takes a single k (the largest patch size)".into()))
            }
            (Some(k), c) if c != Case::Decay && k.len() != self.coarse.len() => {
                return Err(LodError::Config(format!(
                    "{} k values for {} coarse levels",
                    k.len(),
                    self.coarse.len()
                )))
            }
            _ => {}
        }
        if self.case == Case::Decay && (self.coarse.len() != 1 || self.coarse[0] < 4) {
            return Err(LodError::Config("decay case needs exactly one coarse level n >= 4".into()));
        }
        Ok(())
    }

    /// Patch size per coarse level.
    pub fn k_schedule(&self) -> Vec<usize> {
        match &self.k {
            Some(k) => k.clone(),
            None => self.coarse.iter().map(|&n| localization_schedule(coarse_h(n))).collect(),
        }
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let config = Self::parse_unchecked(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Like [`parse`](Self::parse) but leaves validation to the caller, so
    /// that entries can still be overridden.
    pub fn parse_unchecked(text: &str) -> Result<Self> {
        let mut case = None;
        let mut fine = None;
        let mut coarse = None;
        let mut k = None;
        let mut seed = DEFAULT_SEED;
        let mut out = None;
        let mut plots = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LodError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| LodError::Parse(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "case" => case = Some(value.parse::<Case>()?),
                "fine" => fine = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "coarse" => coarse = Some(parse_list(value).map_err(|e| bad(&e))?),
                "k" => {
                    k = if value == "auto" { None } else { Some(parse_list(value).map_err(|e| bad(&e))?) };
                }
                "seed" => seed = value.parse::<u64>().map_err(|e| bad(&e))?,
                "out" => out = Some(PathBuf::from(value)),
                "plots" => plots = value.parse::<bool>().map_err(|e| bad(&e))?,
                other => return Err(LodError::Parse(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        let config = Self {
            case: case.ok_or_else(|| LodError::Config("missing key: case".into()))?,
            fine: fine.ok_or_else(|| LodError::Config("missing key: fine".into()))?,
            coarse: coarse.ok_or_else(|| LodError::Config("missing key: coarse".into()))?,
            k,
            seed,
            out,
            plots,
        };
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    s.split(',').map(|x| x.trim().parse()).collect()
}

/// `H = √2 / n`
pub fn coarse_h(n: usize) -> f64 {
    std::f64::consts::SQRT_2 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub n: usize,
    pub h: f64,
    pub k: usize,
    pub err_gfem: f64,
    pub err_fem: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub element: usize,
    /// `e_k` for `k = 0..=k_max`.
    pub tails: Vec<f64>,
    /// Least-squares slope of `ln e_k` over the positive tails.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelResult>,
    pub slope_gfem: f64,
    pub slope_fem: f64,
    /// `‖∇(I_h u - u_h)‖ / ‖∇ I_h u‖` (locking case).
    pub reference_error: Option<f64>,
    pub decay: Vec<DecayCurve>,
}

/// Least-squares slope of `y` against `x`; NaN for fewer than two points.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x[..n].iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `ln err` against `ln H`.
pub fn log_log_slope(h: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    least_squares_slope(&x, &y)
}

fn relative_error(fine: &Mesh, reference: &[f64], u: &[f64]) -> f64 {
    let diff: Vec<f64> = reference.iter().zip(u).map(|(a, b)| a - b).collect();
    h1_seminorm(fine, &diff) / h1_seminorm(fine, reference)
}

fn problem_for(config: &ExperimentConfig) -> Result<(ProblemSpec, Option<BrennerBenchmark>)> {
    match config.case {
        Case::Constant => Ok((unit_load_problem(constant_coefficients(1.0, 1.0)?), None)),
        Case::Multiscale | Case::Decay => Ok((unit_load_problem(multiscale_coefficients(config.seed)?), None)),
        Case::Locking => {
            let b = BrennerBenchmark::new(LOCKING_LAMBDA)?;
            Ok((b.problem_spec()?, Some(b)))
        }
    }
}

/// Interior coarse elements used by the decay study: lower triangles of the
/// three cells around the domain center.
pub fn decay_elements(n: usize) -> Vec<usize> {
    let c = n / 2 - 1;
    [(c, c), (c + 1, c), (c, c + 1)].iter().map(|&(i, j)| 2 * (j * n + i)).collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let (problem, benchmark) = problem_for(config)?;
    let boundary = BoundarySpec::all_dirichlet();

    if config.case == Case::Decay {
        let n = config.coarse[0];
        let k_max = config.k.as_ref().map_or(DEFAULT_DECAY_K_MAX, |k| k[0]);
        let coarse = Mesh::uniform(n, boundary)?;
        let fine = coarse.refine_to(config.fine)?;
        let ctx = LodContext::new(&coarse, &fine, &problem.coefficient)?;
        let mut decay = Vec::new();
        for t in decay_elements(n) {
            let z = coarse.triangle(t)[0];
            let a = ctx
                .interpolation()
                .coarse_dofs()
                .free_index(dof_index(z, 0))
                .ok_or_else(|| LodError::Config(format!("vertex {z} of element {t} is not free")))?;
            let v = ctx.interpolation().hat_function(a);
            let tails = measure_corrector_decay(&ctx, t, &v, k_max)?;
            let (ks, logs): (Vec<f64>, Vec<f64>) =
                tails.iter().enumerate().filter(|(_, &e)| e > 0.0).map(|(k, e)| (k as f64, e.ln())).unzip();
            info!("decay element {t}: {tails:?}");
            decay.push(DecayCurve { element: t, slope: least_squares_slope(&ks, &logs), tails });
        }
        return Ok(ConvergenceReport {
            slope_gfem: f64::NAN,
            slope_fem: f64::NAN,
            decay,
            ..Default::default()
        });
    }

    let fine_mesh = Mesh::uniform(config.fine, boundary)?;
    let started = Instant::now();
    let reference = solve_fem(&problem, &fine_mesh)?;
    info!("reference solve on n = {} took {:.2}s", config.fine, started.elapsed().as_secs_f64());

    let reference_error = benchmark.map(|b| {
        let iu = b.interpolant(&fine_mesh);
        relative_error(&fine_mesh, &iu, &reference)
    });

    let mut levels = Vec::new();
    for (&n, k) in config.coarse.iter().zip(config.k_schedule()) {
        let started = Instant::now();
        let coarse = Mesh::uniform(n, boundary)?;
        let fine = coarse.refine_to(config.fine)?;
        let level_err = |e: LodError| LodError::Solver(format!("coarse level n = {n}: {e}"));
        let ctx = LodContext::new(&coarse, &fine, &problem.coefficient).map_err(level_err)?;
        let gfem = solve_gfem(&ctx, &problem, k).map_err(level_err)?;
        let fem = solve_coarse_fem(&problem, &coarse, &fine, ctx.interpolation().prolongation()).map_err(level_err)?;
        let level = LevelResult {
            n,
            h: coarse_h(n),
            k,
            err_gfem: relative_error(&fine, &reference, &gfem.u),
            err_fem: relative_error(&fine, &reference, &fem),
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "n = {n}, k = {k}: gfem {:.3e}, fem {:.3e} ({:.2}s)",
            level.err_gfem, level.err_fem, level.seconds
        );
        levels.push(level);
    }
    let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let slope_gfem = log_log_slope(&hs, &levels.iter().map(|l| l.err_gfem).collect::<Vec<_>>());
    let slope_fem = log_log_slope(&hs, &levels.iter().map(|l| l.err_fem).collect::<Vec<_>>());
    Ok(ConvergenceReport { levels, slope_gfem, slope_fem, reference_error, decay: Vec::new() })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_csv(report: &ConvergenceReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for l in &report.levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_float(l.h),
            l.k,
            fmt_float(l.err_gfem),
            fmt_float(l.err_fem),
            fmt_float(report.slope_gfem),
            fmt_float(report.slope_fem)
        );
    }
    out
}

pub fn emit_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    std::fs::write(path, format_csv(report))?;
    Ok(())
}

pub fn format_decay_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("element,k,tail,slope\n");
    for curve in &report.decay {
        for (k, e) in curve.tails.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", curve.element, k, fmt_float(*e), fmt_float(curve.slope));
        }
    }
    out
}

pub fn emit_decay_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    std::fs::write(path, format_decay_csv(report))?;
    Ok(())
}

/// One parsed data row of the convergence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub h: f64,
    pub k: usize,
    pub err_gfem: f64,
    pub err_fem: f64,
    pub slope_gfem: f64,
    pub slope_fem: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(LodError::Parse("missing CSV header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(LodError::Parse(format!("expected 6 fields in {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| LodError::Parse(format!("{s:?}: {e}")));
            Ok(CsvRow {
                h: num(f[0])?,
                k: f[1].parse().map_err(|e| LodError::Parse(format!("{:?}: {e}", f[1])))?,
                err_gfem: num(f[2])?,
                err_fem: num(f[3])?,
                slope_gfem: num(f[4])?,
                slope_fem: num(f[5])?,
            })
        })
        .collect()
}

/// Log-log plot of both error series with a dashed reference line `H`.
pub fn format_svg(report: &ConvergenceReport, title: &str) -> String {
    const W: f64 = 480.0;
    const HGT: f64 = 360.0;
    const PAD: f64 = 60.0;
    let pts: Vec<(f64, f64)> = report
        .levels
        .iter()
        .flat_map(|l| [(l.h, l.err_gfem), (l.h, l.err_fem), (l.h, l.h)])
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 0.0, -1.0, 0.0);
    }
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let sx = |x: f64| PAD + (x.log10() - x0) / (x1 - x0) * (W - 1.5 * PAD);
    let sy = |y: f64| HGT - PAD - (y.log10() - y0) / (y1 - y0) * (HGT - 1.5 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{HGT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    let (left, right, top, bottom) = (sx(10f64.powf(x0)), sx(10f64.powf(x1)), sy(10f64.powf(y1)), sy(10f64.powf(y0)));
    let _ = writeln!(s, r#"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, right - left, bottom - top);
    for d in (x0 as i32)..=(x1 as i32) {
        let x = sx(10f64.powi(d));
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{bottom:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{d}</text>"#, bottom + 18.0);
    }
    for d in (y0 as i32)..=(y1 as i32) {
        let y = sy(10f64.powi(d));
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{left:.1}" y2="{y:.1}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#, left - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">H</text>"#, (left + right) / 2.0, HGT - 12.0);

    let polyline = |values: Vec<(f64, f64)>, style: &str| -> String {
        let p: Vec<String> = values
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        format!(r#"<polyline points="{}" fill="none" {style}/>"#, p.join(" "))
    };
    let _ = writeln!(s, "{}", polyline(report.levels.iter().map(|l| (l.h, l.h)).collect(), r#"stroke="gray" stroke-dasharray="6,4""#));
    let _ = writeln!(s, "{}", polyline(report.levels.iter().map(|l| (l.h, l.err_gfem)).collect(), r#"stroke="blue""#));
    let _ = writeln!(s, "{}", polyline(report.levels.iter().map(|l| (l.h, l.err_fem)).collect(), r#"stroke="red""#));
    for l in &report.levels {
        if l.err_gfem > 0.0 {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="none" stroke="blue"/>"#, sx(l.h), sy(l.err_gfem));
        }
        if l.err_fem > 0.0 {
            let (cx, cy) = (sx(l.h), sy(l.err_fem));
            let _ = writeln!(
                s,
                r#"<path d="M{:.1},{:.1}L{:.1},{:.1}M{:.1},{:.1}L{:.1},{:.1}" stroke="red"/>"#,
                cx - 4.0, cy - 4.0, cx + 4.0, cy + 4.0, cx - 4.0, cy + 4.0, cx + 4.0, cy - 4.0
            );
        }
    }
    let lx = right - 110.0;
    let _ = writeln!(s, r#"<text x="{lx:.1}" y="{:.1}" fill="blue">GFEM</text>"#, top + 18.0);
    let _ = writeln!(s, r#"<text x="{lx:.1}" y="{:.1}" fill="red">P1-FEM</text>"#, top + 34.0);
    let _ = writeln!(s, r#"<text x="{lx:.1}" y="{:.1}" fill="gray">slope 1</text>"#, top + 50.0);
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(report: &ConvergenceReport, path: &Path, title: &str) -> Result<()> {
    std::fs::write(path, format_svg(report, title))?;
    Ok(())
}

/// Runs `config` and writes its outputs; returns the report and the written files.
pub fn run_and_write(config: &ExperimentConfig) -> Result<(ConvergenceReport, Vec<PathBuf>)> {
    let report = run_experiment(config)?;
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    if config.case == Case::Decay {
        let path = dir.join("decay.csv");
        emit_decay_csv(&report, &path)?;
        written.push(path);
    } else {
        let path = dir.join(format!("{}.csv", config.case));
        emit_csv(&report, &path)?;
        written.push(path);
        if config.plots {
            let path = dir.join(format!("{}.svg", config.case));
            emit_plot(&report, &path, &format!("{} case, n_h = {}", config.case, config.fine))?;
            written.push(path);
        }
    }
    Ok((report, written))
}
