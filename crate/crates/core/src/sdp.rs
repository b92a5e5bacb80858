//! Small dense semidefinite programs
//!
//! ```text
//! maximize   Σ_b ⟨C_b, X_b⟩
//! subject to Σ_b ⟨A_{c,b}, X_b⟩ (≤ | = | ≥) b_c,   X_b ⪰ 0
//! ```
//!
//! with `⟨A, X⟩ = Re Tr(Aᴴ X)`, solved by ADMM on the splitting
//! `{(X, s) : 𝒜X = s}` ∩ `(PSD × box)`. The affine projection reuses one
//! Cholesky factor of `𝒜𝒜* + I` for the whole run.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_part, inner, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub dim: usize,
    /// `false` restricts the block to real symmetric matrices.
    pub hermitian: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse list of `(block, A_{c,b})`.
    pub coeffs: Vec<(usize, CMatrix)>,
    pub sense: Sense,
    pub bound: f64,
}

impl Constraint {
    pub fn new(sense: Sense, bound: f64) -> Self {
        Self {
            coeffs: Vec::new(),
            sense,
            bound,
        }
    }

    pub fn with(mut self, block: usize, a: CMatrix) -> Self {
        self.coeffs.push((block, a));
        self
    }

    fn value(&self, x: &[CMatrix]) -> f64 {
        self.coeffs.iter().map(|(b, a)| inner(a, &x[*b])).sum()
    }

    fn violation(&self, value: f64) -> f64 {
        match self.sense {
            Sense::Eq => (value - self.bound).abs(),
            Sense::Le => (value - self.bound).max(0.0),
            Sense::Ge => (self.bound - value).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    pub blocks: Vec<BlockSpec>,
    /// Sparse list of `(block, C_b)`; absent blocks have zero cost.
    pub objective: Vec<(usize, CMatrix)>,
    pub constraints: Vec<Constraint>,
}

const HERMITIAN_TOL: f64 = 1e-12;

impl SdpProblem {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        Self {
            blocks,
            ..Self::default()
        }
    }

    pub fn set_objective(&mut self, block: usize, c: CMatrix) {
        self.objective.retain(|(b, _)| *b != block);
        self.objective.push((block, c));
    }

    pub fn add_constraint(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    pub fn objective_value(&self, x: &[CMatrix]) -> f64 {
        self.objective.iter().map(|(b, c)| inner(c, &x[*b])).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.dim == 0) {
            return Err(Error::InvalidProblem("every block needs dimension ≥ 1".into()));
        }
        let check = |what: &str, b: usize, m: &CMatrix| -> Result<()> {
            let spec = self
                .blocks
                .get(b)
                .ok_or_else(|| Error::InvalidProblem(format!("{what} refers to missing block {b}")))?;
            if m.shape() != (spec.dim, spec.dim) {
                return Err(Error::dims(format!("{what} on block {b} is {:?}, block is {}", m.shape(), spec.dim)));
            }
            if (m - m.adjoint()).norm() > HERMITIAN_TOL * m.norm().max(1.0) {
                return Err(Error::InvalidProblem(format!("{what} on block {b} is not Hermitian")));
            }
            if m.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::InvalidProblem(format!("{what} on block {b} is not finite")));
            }
            Ok(())
        };
        for (b, c) in &self.objective {
            check("objective", *b, c)?;
        }
        for (i, con) in self.constraints.iter().enumerate() {
            if !con.bound.is_finite() {
                return Err(Error::InvalidProblem(format!("constraint {i} has a non-finite bound")));
            }
            for (b, a) in &con.coeffs {
                check(&format!("constraint {i}"), *b, a)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iters: usize,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub sigma: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iters: 50_000,
            alpha: 1.6,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vec<CMatrix>,
    pub objective_value: f64,
    /// Largest constraint violation relative to `1 + |b_c|`.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: SdpStatus,
    pub history: Vec<Checkpoint>,
}

/// Constraint violations and block eigenvalue floors of a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub violations: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
}

impl Residuals {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

pub fn residuals(problem: &SdpProblem, x: &[CMatrix]) -> Result<Residuals> {
    if x.len() != problem.blocks.len() {
        return Err(Error::dims(format!("{} blocks supplied, problem has {}", x.len(), problem.blocks.len())));
    }
    for (b, (m, spec)) in x.iter().zip(&problem.blocks).enumerate() {
        if m.shape() != (spec.dim, spec.dim) {
            return Err(Error::dims(format!("block {b} is {:?}, expected {}", m.shape(), spec.dim)));
        }
    }
    Ok(Residuals {
        violations: problem.constraints.iter().map(|c| c.violation(c.value(x))).collect(),
        min_eigenvalues: x.iter().map(|m| *hermitian_eigen(m).0.last().unwrap()).collect(),
    })
}

/// Principal component `√λ_max · v_max` and the ratio `λ_max / Tr X`.
///
/// Repeated top eigenvalues resolve to the lowest index. A zero matrix
/// yields the zero vector with ratio 1.
pub fn extract_rank_one(x: &CMatrix) -> (CVector, f64) {
    let n = x.nrows();
    let (values, vectors) = hermitian_eigen(x);
    let trace: f64 = values.iter().sum();
    if n == 0 || values[0] <= 0.0 || trace <= 0.0 {
        return (CVector::zeros(n), 1.0);
    }
    let v = vectors.column(0).into_owned() * Complex64::new(values[0].sqrt(), 0.0);
    (v, values[0] / trace)
}

/// Problem data after row, objective and variable scaling.
struct Scaled {
    dims: Vec<usize>,
    real: Vec<bool>,
    c: Vec<CMatrix>,
    rows: Vec<Vec<(usize, CMatrix)>>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    b: DVector<f64>,
    senses: Vec<Sense>,
    x_scale: f64,
    factor: Cholesky<f64, Dyn>,
}

fn realify(m: &CMatrix, real: bool) -> CMatrix {
    let h = hermitian_part(m);
    if real {
        h.map(|v| Complex64::new(v.re, 0.0))
    } else {
        h
    }
}

/// `None` when a zero row is violated outright.
fn scale_problem(p: &SdpProblem) -> Option<Scaled> {
    let dims: Vec<usize> = p.blocks.iter().map(|b| b.dim).collect();
    let real: Vec<bool> = p.blocks.iter().map(|b| !b.hermitian).collect();

    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    let mut senses = Vec::new();
    for con in &p.constraints {
        let coeffs: Vec<(usize, CMatrix)> = con.coeffs.iter().map(|(b, a)| (*b, realify(a, real[*b]))).collect();
        let norm = coeffs.iter().map(|(_, a)| a.norm_squared()).sum::<f64>().sqrt();
        if norm == 0.0 {
            if con.violation(0.0) > 0.0 {
                return None;
            }
            continue;
        }
        rows.push(coeffs.into_iter().map(|(b, a)| (b, a.unscale(norm))).collect::<Vec<_>>());
        bounds.push(con.bound / norm);
        senses.push(con.sense);
    }
    let x_scale = bounds.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let x_scale = if x_scale > 0.0 { x_scale } else { 1.0 };
    let b = DVector::from_iterator(bounds.len(), bounds.iter().map(|v| v / x_scale));
    let lo = DVector::from_fn(b.len(), |i, _| if senses[i] == Sense::Le { f64::NEG_INFINITY } else { b[i] });
    let hi = DVector::from_fn(b.len(), |i, _| if senses[i] == Sense::Ge { f64::INFINITY } else { b[i] });

    let mut c: Vec<CMatrix> = dims.iter().map(|&n| CMatrix::zeros(n, n)).collect();
    for (blk, m) in &p.objective {
        c[*blk] += realify(m, real[*blk]);
    }
    let c_norm = c.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    if c_norm > 0.0 {
        for m in &mut c {
            *m = m.unscale(c_norm);
        }
    }

    let m = rows.len();
    let mut g = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in i..m {
            let mut v = 0.0;
            for (bi, ai) in &rows[i] {
                for (bj, aj) in &rows[j] {
                    if bi == bj {
                        v += inner(ai, aj);
                    }
                }
            }
            g[(i, j)] += v;
            if i != j {
                g[(j, i)] += v;
            }
        }
    }
    let factor = g.cholesky().expect("AA* + I is positive definite");
    Some(Scaled {
        dims,
        real,
        c,
        rows,
        lo,
        hi,
        b,
        senses,
        x_scale,
        factor,
    })
}

impl Scaled {
    fn apply(&self, x: &[CMatrix]) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.iter().map(|(b, a)| inner(a, &x[*b])).sum()))
    }

    fn apply_adjoint(&self, y: &DVector<f64>) -> Vec<CMatrix> {
        let mut out: Vec<CMatrix> = self.dims.iter().map(|&n| CMatrix::zeros(n, n)).collect();
        for (row, &yc) in self.rows.iter().zip(y.iter()) {
            for (b, a) in row {
                out[*b] += a * Complex64::new(yc, 0.0);
            }
        }
        out
    }

    /// Euclidean projection onto `{(X, s) : 𝒜X = s}`.
    fn project_affine(&self, y_x: &mut [CMatrix], y_s: &mut DVector<f64>) {
        let rhs = &*y_s - self.apply(y_x);
        let lam = self.factor.solve(&rhs);
        for (m, d) in y_x.iter_mut().zip(self.apply_adjoint(&lam)) {
            *m += d;
        }
        *y_s -= lam;
    }

    fn project_cone(&self, x: &[CMatrix], s: &DVector<f64>) -> (Vec<CMatrix>, DVector<f64>) {
        let z = x.iter().zip(&self.real).map(|(m, &r)| project_psd_block(m, r)).collect();
        let t = DVector::from_fn(s.len(), |i, _| s[i].clamp(self.lo[i], self.hi[i]));
        (z, t)
    }

    /// Checks whether `y` certifies an empty feasible set: `𝒜*y ⪯ 0`
    /// while every admissible slack `s` has `yᵀs > 0`.
    fn is_infeasibility_certificate(&self, y: &DVector<f64>) -> bool {
        let norm = y.norm();
        if !(norm > 0.0) {
            return false;
        }
        let y = y / norm;
        let mut support = 0.0;
        for i in 0..y.len() {
            let v = y[i];
            let ok = match self.senses[i] {
                Sense::Eq => true,
                Sense::Ge => v >= -1e-9,
                Sense::Le => v <= 1e-9,
            };
            if !ok {
                return false;
            }
            support += v * self.b[i];
        }
        if support <= 1e-6 {
            return false;
        }
        self.apply_adjoint(&y)
            .iter()
            .all(|m| hermitian_eigen(m).0.first().map_or(true, |&l| l <= 1e-9))
    }
}

fn project_psd_block(m: &CMatrix, real: bool) -> CMatrix {
    let n = m.nrows();
    let (values, vectors) = hermitian_eigen(m);
    let mut out = CMatrix::zeros(n, n);
    for (i, &l) in values.iter().enumerate() {
        if l <= 0.0 {
            break;
        }
        let v = vectors.column(i);
        out += (v * v.adjoint()) * Complex64::new(l, 0.0);
    }
    realify(&out, real)
}

fn block_norm2(x: &[CMatrix]) -> f64 {
    x.iter().map(|m| m.norm_squared()).sum()
}

const ADAPT_EVERY: usize = 50;
const CERTIFY_EVERY: usize = 100;

pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    problem.validate()?;
    if !(settings.alpha > 0.0 && settings.alpha < 2.0) || !(settings.sigma > 0.0) {
        return Err(Error::InvalidProblem("ADMM needs 0 < α < 2 and σ > 0".into()));
    }
    let zeros: Vec<CMatrix> = problem.blocks.iter().map(|b| CMatrix::zeros(b.dim, b.dim)).collect();
    let Some(sc) = scale_problem(problem) else {
        return Ok(finish(problem, zeros, f64::INFINITY, 0, SdpStatus::Infeasible, Vec::new()));
    };

    let alpha = settings.alpha;
    let mut sigma = settings.sigma;
    let m = sc.rows.len();
    let mut z = zeros.clone();
    let mut t = DVector::<f64>::zeros(m);
    let mut u = zeros.clone();
    let mut u_s = DVector::<f64>::zeros(m);
    let mut history = Vec::new();
    let mut certified_once = false;
    let mut dual = f64::INFINITY;

    for it in 1..=settings.max_iters {
        let mut x: Vec<CMatrix> = z
            .iter()
            .zip(&u)
            .zip(&sc.c)
            .map(|((zb, ub), cb)| zb - ub + cb.unscale(sigma))
            .collect();
        let mut s = &t - &u_s;
        sc.project_affine(&mut x, &mut s);

        let x_hat: Vec<CMatrix> = x.iter().zip(&z).map(|(xb, zb)| xb * Complex64::new(alpha, 0.0) + zb * Complex64::new(1.0 - alpha, 0.0)).collect();
        let s_hat = &s * alpha + &t * (1.0 - alpha);
        let v: Vec<CMatrix> = x_hat.iter().zip(&u).map(|(a, b)| a + b).collect();
        let (z_new, t_new) = sc.project_cone(&v, &(&s_hat + &u_s));

        let du: Vec<CMatrix> = x_hat.iter().zip(&z_new).map(|(a, b)| a - b).collect();
        let du_s = &s_hat - &t_new;
        for (ub, d) in u.iter_mut().zip(&du) {
            *ub += d;
        }
        u_s += &du_s;

        let r_prim = (block_norm2(&x.iter().zip(&z_new).map(|(a, b)| a - b).collect::<Vec<_>>()) + (&s - &t_new).norm_squared()).sqrt();
        let r_dual = sigma * (block_norm2(&z_new.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>()) + (&t_new - &t).norm_squared()).sqrt();
        let x_norm = (block_norm2(&x) + s.norm_squared()).sqrt();
        let z_norm = (block_norm2(&z_new) + t_new.norm_squared()).sqrt();
        let u_norm = sigma * (block_norm2(&u) + u_s.norm_squared()).sqrt();
        let prim = r_prim / (1.0 + x_norm.max(z_norm));
        dual = r_dual / (1.0 + u_norm);
        z = z_new;
        t = t_new;

        // constraint feasibility of the PSD iterate, in scaled units
        let feas = {
            let ax = sc.apply(&z);
            (0..m).map(|i| (ax[i].clamp(sc.lo[i], sc.hi[i]) - ax[i]).abs()).fold(0.0, f64::max) / (1.0 + sc.b.amax())
        };
        // duality gap from the slack multipliers
        let gap = {
            let y = &u_s * sigma;
            let p_obj: f64 = z.iter().zip(&sc.c).map(|(a, b)| inner(b, a)).sum();
            let d_obj = y.dot(&sc.b);
            (p_obj - d_obj).abs() / (1.0 + p_obj.abs() + d_obj.abs())
        };

        if it % ADAPT_EVERY == 0 {
            history.push(Checkpoint {
                iteration: it,
                objective: problem.objective_value(&unscale(&z, sc.x_scale)),
                primal_residual: prim,
                dual_residual: dual,
            });
        }

        if prim <= settings.tol_primal && dual <= settings.tol_dual && feas <= settings.tol_primal && gap <= settings.tol_primal.max(settings.tol_dual) {
            let x = unscale(&z, sc.x_scale);
            if original_feasible(problem, &x, settings.tol_primal) {
                return Ok(finish(problem, x, dual, it, SdpStatus::Optimal, history));
            }
        }

        if it % CERTIFY_EVERY == 0 && m > 0 {
            let certified = prim > settings.tol_primal
                && (sc.is_infeasibility_certificate(&du_s) || sc.is_infeasibility_certificate(&-&du_s));
            if certified && certified_once {
                return Ok(finish(problem, unscale(&z, sc.x_scale), dual, it, SdpStatus::Infeasible, history));
            }
            certified_once = certified;
        }

        if it % ADAPT_EVERY == 0 && prim.is_finite() && dual.is_finite() && dual > 0.0 && prim > 0.0 {
            let ratio = prim / dual;
            if !(0.2..=5.0).contains(&ratio) {
                let new_sigma = (sigma * ratio.sqrt()).clamp(1e-6, 1e6);
                let f = sigma / new_sigma;
                for ub in &mut u {
                    *ub *= Complex64::new(f, 0.0);
                }
                u_s *= f;
                sigma = new_sigma;
            }
        }
    }
    Ok(finish(problem, unscale(&z, sc.x_scale), dual, settings.max_iters, SdpStatus::MaxIters, history))
}

/// Scaling can hide violations of constraints with small bounds, so the final
/// check is on the unscaled problem.
fn original_feasible(problem: &SdpProblem, x: &[CMatrix], tol: f64) -> bool {
    problem.constraints.iter().all(|c| c.violation(c.value(x)) <= tol * c.bound.abs().max(1.0))
}

fn unscale(z: &[CMatrix], s: f64) -> Vec<CMatrix> {
    z.iter().map(|m| m * Complex64::new(s, 0.0)).collect()
}

fn finish(problem: &SdpProblem, x: Vec<CMatrix>, dual: f64, iterations: usize, status: SdpStatus, history: Vec<Checkpoint>) -> SdpSolution {
    let primal = problem
        .constraints
        .iter()
        .map(|c| c.violation(c.value(&x)) / (1.0 + c.bound.abs()))
        .fold(0.0, f64::max);
    SdpSolution {
        objective_value: problem.objective_value(&x),
        x,
        primal_residual: primal,
        dual_residual: dual,
        iterations,
        status,
        history,
    }
}

fn sense_tag(s: Sense) -> &'static str {
    match s {
        Sense::Le => "le",
        Sense::Eq => "eq",
        Sense::Ge => "ge",
    }
}

fn write_matrix(out: &mut String, m: &CMatrix) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e} {:e}", m[(r, c)].re, m[(r, c)].im)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Writes the instance in the plain-text dump format described in the README.
pub fn write_dump<W: Write>(problem: &SdpProblem, mut w: W) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "sdp 1");
    let _ = writeln!(out, "blocks {}", problem.blocks.len());
    for (i, b) in problem.blocks.iter().enumerate() {
        let _ = writeln!(out, "block {i} {} {}", b.dim, if b.hermitian { "hermitian" } else { "real" });
    }
    let _ = writeln!(out, "objective {}", problem.objective.len());
    for (b, c) in &problem.objective {
        let _ = writeln!(out, "coeff {b}");
        write_matrix(&mut out, c);
    }
    let _ = writeln!(out, "constraints {}", problem.constraints.len());
    for (i, con) in problem.constraints.iter().enumerate() {
        let _ = writeln!(out, "constraint {i} {} {:e} {}", sense_tag(con.sense), con.bound, con.coeffs.len());
        for (b, a) in &con.coeffs {
            let _ = writeln!(out, "coeff {b}");
            write_matrix(&mut out, a);
        }
    }
    let _ = writeln!(out, "end");
    w.write_all(out.as_bytes())?;
    Ok(())
}

struct DumpReader<R: BufRead> {
    lines: std::io::Lines<R>,
}

impl<R: BufRead> DumpReader<R> {
    fn next(&mut self) -> Result<Vec<String>> {
        loop {
            let line = self.lines.next().ok_or_else(|| Error::Parse("unexpected end of dump".into()))??;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok(line.split_whitespace().map(str::to_string).collect());
        }
    }

    fn expect(&mut self, key: &str, len: usize) -> Result<Vec<String>> {
        let l = self.next()?;
        if l.len() != len || l[0] != key {
            return Err(Error::Parse(format!("malformed dump: expected `{key}` line, got `{}`", l.join(" "))));
        }
        Ok(l)
    }

    fn coeff(&mut self, blocks: &[BlockSpec]) -> Result<(usize, CMatrix)> {
        let l = self.expect("coeff", 2)?;
        let b = int(&l[1])?;
        let n = blocks.get(b).ok_or_else(|| Error::Parse(format!("coeff refers to missing block {b}")))?.dim;
        let mut m = CMatrix::zeros(n, n);
        for r in 0..n {
            let row = self.next()?;
            if row.len() != 2 * n {
                return Err(Error::Parse(format!("matrix row has {} numbers, expected {}", row.len(), 2 * n)));
            }
            for c in 0..n {
                m[(r, c)] = Complex64::new(num(&row[2 * c])?, num(&row[2 * c + 1])?);
            }
        }
        Ok((b, m))
    }
}

fn num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

fn int(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse(format!("bad integer `{s}`")))
}

/// Reads an instance written by [`write_dump`].
pub fn read_dump<R: BufRead>(r: R) -> Result<SdpProblem> {
    let mut rd = DumpReader { lines: r.lines() };
    let head = rd.expect("sdp", 2)?;
    if head[1] != "1" {
        return Err(Error::Parse(format!("unsupported dump version {}", head[1])));
    }
    let n_blocks = int(&rd.expect("blocks", 2)?[1])?;
    let mut problem = SdpProblem::default();
    for _ in 0..n_blocks {
        let l = rd.expect("block", 4)?;
        let hermitian = match l[3].as_str() {
            "hermitian" => true,
            "real" => false,
            other => return Err(Error::Parse(format!("unknown block kind `{other}`"))),
        };
        problem.blocks.push(BlockSpec { dim: int(&l[2])?, hermitian });
    }
    let n_obj = int(&rd.expect("objective", 2)?[1])?;
    for _ in 0..n_obj {
        let c = rd.coeff(&problem.blocks)?;
        problem.objective.push(c);
    }
    let n_con = int(&rd.expect("constraints", 2)?[1])?;
    for _ in 0..n_con {
        let l = rd.expect("constraint", 5)?;
        let sense = match l[2].as_str() {
            "le" => Sense::Le,
            "eq" => Sense::Eq,
            "ge" => Sense::Ge,
            other => return Err(Error::Parse(format!("unknown sense `{other}`"))),
        };
        let mut con = Constraint::new(sense, num(&l[3])?);
        for _ in 0..int(&l[4])? {
            con.coeffs.push(rd.coeff(&problem.blocks)?);
        }
        problem.constraints.push(con);
    }
    rd.expect("end", 1)?;
    Ok(problem)
}
