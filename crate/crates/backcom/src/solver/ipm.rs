//! A small dense barrier interior-point engine for the convex programs
//! produced by the subsolvers.
//!
//! Problems are stated over a packed real variable vector holding free
//! scalars and the parameters of Hermitian matrix blocks
//! (see [`super::hermitian`]), and may combine:
//!
//! * affine inequalities `expr <= 0`,
//! * affine equalities `expr = 0`,
//! * exponential-cone memberships `scale * ln(arg / scale) >= rate` with
//!   `scale, arg > 0` (all three affine), and
//! * positive-semidefiniteness of every Hermitian block.
//!
//! The engine follows the central path of the standard logarithmic barrier,
//! with `-log det` of the realified block for the semidefinite cones, and
//! terminates once the barrier duality bound `nu / t` is below the requested
//! gap. Dual variables are read off the barrier gradient at the final
//! center, giving a checkable certificate (complementary products plus a
//! stationarity residual). Feasible starts are the caller's job; a phase-I
//! slack relaxation ([`find_interior`]) turns any point that keeps the cone
//! and block arguments positive into a strictly feasible one, or names a
//! constraint that separates the feasible set.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use super::hermitian;

/// Affine expression over the packed variable vector.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(id: usize) -> Self {
        Self {
            terms: vec![(id, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, id: usize, coeff: f64) -> Self {
        self.add_term(id, coeff);
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, id: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((id, coeff));
        }
    }

    pub fn add(&mut self, other: &LinExpr, factor: f64) {
        for &(id, c) in &other.terms {
            self.add_term(id, factor * c);
        }
        self.constant += factor * other.constant;
    }

    /// Multiply every coefficient and the constant by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale(factor);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(id, c)| c * x[id])
            .sum::<f64>()
            + self.constant
    }

    /// Largest coefficient magnitude; zero for constant expressions.
    fn coeff_inf_norm(&self) -> f64 {
        self.terms.iter().fold(0.0f64, |m, &(_, c)| m.max(c.abs()))
    }

    fn scale(&mut self, factor: f64) {
        for term in &mut self.terms {
            term.1 *= factor;
        }
        self.constant *= factor;
    }

    fn add_to_dense(&self, factor: f64, out: &mut DVector<f64>) {
        for &(id, c) in &self.terms {
            out[id] += factor * c;
        }
    }
}

/// Membership constraint `scale * ln(arg / scale) >= rate`, `scale, arg > 0`.
#[derive(Debug, Clone)]
pub struct ExpCone {
    pub rate: LinExpr,
    pub scale: LinExpr,
    pub arg: LinExpr,
    pub label: String,
}

/// One Hermitian PSD block living at `offset..offset + dim^2` in the packed
/// variable vector.
#[derive(Debug, Clone, Copy)]
pub struct HermitianBlock {
    pub offset: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub blocks: Vec<HermitianBlock>,
    /// Maximized.
    pub objective: LinExpr,
    /// Rows `expr <= 0`.
    pub inequalities: Vec<(LinExpr, String)>,
    /// Rows `expr = 0`.
    pub equalities: Vec<(LinExpr, String)>,
    pub cones: Vec<ExpCone>,
}

impl ConicProblem {
    /// Plain-text dump of the full instance: variable counts, block layout,
    /// objective, and every row and cone as labeled coefficient lists.
    pub fn canonical_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(
            out,
            "vars {} blocks [{}]",
            self.num_vars,
            self.blocks
                .iter()
                .map(|b| format!("{}@{}", b.dim, b.offset))
                .collect::<Vec<_>>()
                .join(" ")
        )
        .unwrap();
        let expr_text = |e: &LinExpr| -> String {
            let mut parts: Vec<String> = e
                .terms
                .iter()
                .map(|(id, c)| format!("{c:.17e}*x{id}"))
                .collect();
            parts.push(format!("{:.17e}", e.constant));
            parts.join(" + ")
        };
        writeln!(out, "maximize {}", expr_text(&self.objective)).unwrap();
        for (expr, label) in &self.inequalities {
            writeln!(out, "le {label}: {} <= 0", expr_text(expr)).unwrap();
        }
        for (expr, label) in &self.equalities {
            writeln!(out, "eq {label}: {} = 0", expr_text(expr)).unwrap();
        }
        for cone in &self.cones {
            writeln!(
                out,
                "cone {}: rate {} scale {} arg {}",
                cone.label,
                expr_text(&cone.rate),
                expr_text(&cone.scale),
                expr_text(&cone.arg)
            )
            .unwrap();
        }
        out
    }
}

/// Incremental construction of a [`ConicProblem`].
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    problem: ConicProblem,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate one free scalar variable.
    pub fn scalar(&mut self) -> usize {
        let id = self.problem.num_vars;
        self.problem.num_vars += 1;
        id
    }

    /// Allocate a Hermitian block of the given dimension; returns its index.
    pub fn block(&mut self, dim: usize) -> usize {
        let offset = self.problem.num_vars;
        self.problem.num_vars += hermitian::param_count(dim);
        self.problem.blocks.push(HermitianBlock { offset, dim });
        self.problem.blocks.len() - 1
    }

    /// Affine expression `Tr(A W_b)` for Hermitian `A` and block `b`.
    pub fn trace(&self, block: usize, a: &DMatrix<Complex64>) -> LinExpr {
        let blk = self.problem.blocks[block];
        debug_assert_eq!(a.nrows(), blk.dim);
        let coeffs = hermitian::trace_coeffs(a);
        LinExpr {
            terms: coeffs
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c != 0.0)
                .map(|(i, c)| (blk.offset + i, c))
                .collect(),
            constant: 0.0,
        }
    }

    pub fn maximize(&mut self, expr: LinExpr) {
        self.problem.objective = expr;
    }

    pub fn le_zero(&mut self, expr: LinExpr, label: impl Into<String>) {
        self.problem.inequalities.push((expr, label.into()));
    }

    pub fn eq_zero(&mut self, expr: LinExpr, label: impl Into<String>) {
        self.problem.equalities.push((expr, label.into()));
    }

    pub fn cone(&mut self, rate: LinExpr, scale: LinExpr, arg: LinExpr, label: impl Into<String>) {
        self.problem.cones.push(ExpCone {
            rate,
            scale,
            arg,
            label: label.into(),
        });
    }

    pub fn num_vars(&self) -> usize {
        self.problem.num_vars
    }

    /// Finish construction. Constant inequality rows are checked and dropped;
    /// a violated one reports infeasibility immediately.
    pub fn build(mut self) -> Result<ConicProblem, SolveError> {
        let mut kept = Vec::with_capacity(self.problem.inequalities.len());
        for (expr, label) in self.problem.inequalities {
            if expr.terms.is_empty() {
                if expr.constant > 1e-12 {
                    return Err(SolveError::Infeasible {
                        constraint: label,
                        violation: expr.constant,
                    });
                }
            } else {
                kept.push((expr, label));
            }
        }
        self.problem.inequalities = kept;
        Ok(self.problem)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem infeasible; separating constraint: {constraint} (violation {violation:.3e})")]
    Infeasible { constraint: String, violation: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("bad starting point: {0}")]
    BadStart(String),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Target duality gap as a fraction of `1 + |objective|`.
    pub gap_tol: f64,
    /// Newton decrement squared at which a center counts as converged.
    pub newton_tol: f64,
    /// Barrier parameter growth factor between centers.
    pub mu: f64,
    pub max_newton_per_center: usize,
    pub max_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            newton_tol: 1e-13,
            mu: 20.0,
            max_newton_per_center: 120,
            max_rounds: 60,
        }
    }
}

/// Solution of a [`ConicProblem`] together with its dual certificate.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sum of complementary products of the returned dual certificate.
    pub gap: f64,
    /// Total barrier degree.
    pub nu: f64,
    /// Non-negative multipliers of the inequality rows, original scaling.
    pub ineq_duals: Vec<f64>,
    /// Multipliers of the equality rows, original scaling.
    pub eq_duals: Vec<f64>,
    /// PSD dual matrix per block (positive definite at the center).
    pub block_duals: Vec<DMatrix<Complex64>>,
    /// Infinity norm of the dual stationarity residual.
    pub stationarity: f64,
    /// Largest single complementary product.
    pub complementarity: f64,
    pub newton_iters: usize,
    /// False when centering stalled before reaching the target gap.
    pub converged: bool,
}

struct Internal {
    prob: ConicProblem,
    row_scales: Vec<f64>,
    eq_scales: Vec<f64>,
}

fn prepare(prob: &ConicProblem) -> Internal {
    let mut scaled = prob.clone();
    let mut row_scales = Vec::with_capacity(scaled.inequalities.len());
    for (expr, _) in &mut scaled.inequalities {
        let norm = expr.coeff_inf_norm().max(1e-12);
        expr.scale(1.0 / norm);
        row_scales.push(norm);
    }
    let mut eq_scales = Vec::with_capacity(scaled.equalities.len());
    for (expr, _) in &mut scaled.equalities {
        let norm = expr.coeff_inf_norm().max(1e-12);
        expr.scale(1.0 / norm);
        eq_scales.push(norm);
    }
    Internal {
        prob: scaled,
        row_scales,
        eq_scales,
    }
}

fn barrier_degree(prob: &ConicProblem) -> f64 {
    prob.inequalities.len() as f64
        + 3.0 * prob.cones.len() as f64
        + prob.blocks.iter().map(|b| 2.0 * b.dim as f64).sum::<f64>()
}

/// Barrier value, or `None` outside the strictly feasible region.
fn barrier_value(prob: &ConicProblem, x: &[f64]) -> Option<f64> {
    let mut value = 0.0;
    for (expr, _) in &prob.inequalities {
        let slack = -expr.eval(x);
        if slack <= 0.0 {
            return None;
        }
        value -= slack.ln();
    }
    for cone in &prob.cones {
        let b = cone.scale.eval(x);
        let c = cone.arg.eval(x);
        if b <= 0.0 || c <= 0.0 {
            return None;
        }
        let xi = b * (c / b).ln() - cone.rate.eval(x);
        if xi <= 0.0 {
            return None;
        }
        value -= xi.ln() + b.ln() + c.ln();
    }
    for blk in &prob.blocks {
        let w = hermitian::to_matrix(&x[blk.offset..blk.offset + blk.dim * blk.dim], blk.dim);
        match hermitian::realified_log_det(&w) {
            Some(ld) => value -= ld,
            None => return None,
        }
    }
    Some(value)
}

struct Derivatives {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    block_inverses: Vec<DMatrix<Complex64>>,
}

fn barrier_derivatives(prob: &ConicProblem, x: &[f64]) -> Option<Derivatives> {
    let d = prob.num_vars;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);

    for (expr, _) in &prob.inequalities {
        let slack = -expr.eval(x);
        if slack <= 0.0 {
            return None;
        }
        // phi = -ln(-expr): grad = a / slack, hess = a a^T / slack^2.
        expr.add_to_dense(1.0 / slack, &mut grad);
        let w = 1.0 / (slack * slack);
        for &(i, ci) in &expr.terms {
            for &(j, cj) in &expr.terms {
                hess[(i, j)] += w * ci * cj;
            }
        }
    }

    for cone in &prob.cones {
        let a = cone.rate.eval(x);
        let b = cone.scale.eval(x);
        let c = cone.arg.eval(x);
        let (g3, h3) = cone_derivatives(a, b, c)?;
        let rows = [&cone.rate, &cone.scale, &cone.arg];
        for k in 0..3 {
            rows[k].add_to_dense(g3[k], &mut grad);
        }
        for r in 0..3 {
            for s in 0..3 {
                let w = h3[r][s];
                if w == 0.0 {
                    continue;
                }
                for &(i, ci) in &rows[r].terms {
                    for &(j, cj) in &rows[s].terms {
                        hess[(i, j)] += w * ci * cj;
                    }
                }
            }
        }
    }

    let mut block_inverses = Vec::with_capacity(prob.blocks.len());
    for blk in &prob.blocks {
        let m = blk.dim;
        let w = hermitian::to_matrix(&x[blk.offset..blk.offset + m * m], m);
        let g = hermitian::hpd_inverse(&w)?;
        // phi = -ln det realify(W): gradient is -2 * trace form of W^{-1}.
        let coeffs = hermitian::trace_coeffs(&g);
        for (i, c) in coeffs.iter().enumerate() {
            grad[blk.offset + i] -= 2.0 * c;
        }
        // Basis elements as sparse column maps: F_a = G E_a has column `col`
        // equal to coeff * G[:, src] for each (col, src, coeff) triple.
        let basis = block_basis(m);
        let npar = m * m;
        for a in 0..npar {
            for b in a..npar {
                let mut tr = Complex64::new(0.0, 0.0);
                for &(c1, s1, a1) in &basis[a] {
                    for &(c2, s2, a2) in &basis[b] {
                        tr += a1 * a2 * g[(c2, s1)] * g[(c1, s2)];
                    }
                }
                let h = 2.0 * tr.re;
                hess[(blk.offset + a, blk.offset + b)] += h;
                if a != b {
                    hess[(blk.offset + b, blk.offset + a)] += h;
                }
            }
        }
        block_inverses.push(g);
    }

    Some(Derivatives {
        grad,
        hess,
        block_inverses,
    })
}

/// Gradient and Hessian of the exponential-cone barrier
/// `-ln(xi) - ln(b) - ln(c)`, `xi = b ln(c/b) - a`, with respect to
/// `(a, b, c)`. `None` outside the cone interior.
fn cone_derivatives(a: f64, b: f64, c: f64) -> Option<([f64; 3], [[f64; 3]; 3])> {
    if b <= 0.0 || c <= 0.0 {
        return None;
    }
    let xi = b * (c / b).ln() - a;
    if xi <= 0.0 {
        return None;
    }
    let dxi = [-1.0, (c / b).ln() - 1.0, b / c];
    let mut g3 = [0.0f64; 3];
    for k in 0..3 {
        g3[k] = -dxi[k] / xi;
    }
    g3[1] -= 1.0 / b;
    g3[2] -= 1.0 / c;
    let mut h3 = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            h3[r][s] = dxi[r] * dxi[s] / (xi * xi);
        }
    }
    // -(1/xi) * second derivatives of xi.
    h3[1][1] += (1.0 / b) / xi;
    h3[1][2] -= (1.0 / c) / xi;
    h3[2][1] -= (1.0 / c) / xi;
    h3[2][2] += (b / (c * c)) / xi;
    h3[1][1] += 1.0 / (b * b);
    h3[2][2] += 1.0 / (c * c);
    Some((g3, h3))
}

type BasisTriples = Vec<(usize, usize, Complex64)>;

/// Sparse description of the Hermitian parameter basis for dimension `m`,
/// ordered like the packed parameters.
fn block_basis(m: usize) -> Vec<BasisTriples> {
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let mut basis = Vec::with_capacity(m * m);
    for k in 0..m {
        basis.push(vec![(k, k, one)]);
    }
    for j in 0..m {
        for k in (j + 1)..m {
            basis.push(vec![(k, j, one), (j, k, one)]);
            basis.push(vec![(k, j, i), (j, k, -i)]);
        }
    }
    basis
}

fn objective_vector(prob: &ConicProblem) -> DVector<f64> {
    let mut c = DVector::zeros(prob.num_vars);
    prob.objective.add_to_dense(1.0, &mut c);
    c
}

struct CenterOutcome {
    decrement_sq: f64,
    eq_mults: DVector<f64>,
    /// The last computed (untaken) Newton step, used to linearize the dual
    /// certificate at the returned center.
    newton_step: DVector<f64>,
}

/// Newton-center `x` for barrier parameter `t`.
fn center(
    internal: &Internal,
    x: &mut DVector<f64>,
    t: f64,
    opts: &SolverOptions,
    newton_total: &mut usize,
    early_exit: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<CenterOutcome, SolveError> {
    let prob = &internal.prob;
    let d = prob.num_vars;
    let n_eq = prob.equalities.len();
    let c = objective_vector(prob);
    let mut outcome = CenterOutcome {
        decrement_sq: f64::INFINITY,
        eq_mults: DVector::zeros(n_eq),
        newton_step: DVector::zeros(d),
    };

    for _ in 0..opts.max_newton_per_center {
        if let Some(exit) = early_exit {
            if exit(x.as_slice()) {
                return Ok(outcome);
            }
        }
        let derivs = barrier_derivatives(prob, x.as_slice()).ok_or_else(|| {
            SolveError::NumericalFailure("iterate left the strictly feasible region".into())
        })?;
        let g_tot = &derivs.grad - &c * t;

        // KKT system with equality rows appended.
        let dim = d + n_eq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (d, d)).copy_from(&derivs.hess);
        for (row, (expr, _)) in prob.equalities.iter().enumerate() {
            for &(id, coeff) in &expr.terms {
                kkt[(d + row, id)] = coeff;
                kkt[(id, d + row)] = coeff;
            }
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, d).copy_from(&(-&g_tot));
        for (row, (expr, _)) in prob.equalities.iter().enumerate() {
            rhs[d + row] = -expr.eval(x.as_slice());
        }

        let mut step = solve_kkt(&kkt, &rhs, d)?;
        // One round of iterative refinement.
        let residual = &rhs - &kkt * &step;
        if let Ok(correction) = solve_kkt(&kkt, &residual, d) {
            step += correction;
        }

        let p = step.rows(0, d).into_owned();
        let decrement_sq = (p.transpose() * &derivs.hess * &p)[(0, 0)].max(0.0);
        outcome.decrement_sq = decrement_sq;
        outcome.eq_mults = step.rows(d, n_eq).into_owned();
        outcome.newton_step = p.clone();
        *newton_total += 1;
        if decrement_sq <= opts.newton_tol {
            return Ok(outcome);
        }

        // Damped step: stay strictly feasible, then require descent of the
        // barrier merit.
        let merit = |pt: &DVector<f64>| -> Option<f64> {
            barrier_value(prob, pt.as_slice()).map(|phi| phi - t * objective_value(prob, pt.as_slice()))
        };
        let m0 = merit(x).ok_or_else(|| {
            SolveError::NumericalFailure("current iterate infeasible".into())
        })?;
        let slope: f64 = g_tot.dot(&p);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..70 {
            let candidate = x.clone() + &p * s;
            if let Some(m) = merit(&candidate) {
                if m <= m0 + 0.25 * s * slope || m < m0 - 1e-13 * m0.abs().max(1.0) {
                    *x = candidate;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // Stalled: centering cannot make further progress in f64.
            return Ok(outcome);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NumericalFailure("iterate diverged".into()));
        }
    }
    Ok(outcome)
}

fn solve_kkt(kkt: &DMatrix<f64>, rhs: &DVector<f64>, d: usize) -> Result<DVector<f64>, SolveError> {
    let mut ridge = 0.0;
    let base = kkt.diagonal().rows(0, d).iter().map(|v| v.abs()).sum::<f64>() / d.max(1) as f64;
    for attempt in 0..6 {
        let mut m = kkt.clone();
        if ridge > 0.0 {
            for i in 0..d {
                m[(i, i)] += ridge;
            }
        }
        if let Some(solution) = m.full_piv_lu().solve(rhs) {
            if solution.iter().all(|v| v.is_finite()) {
                return Ok(solution);
            }
        }
        ridge = base.max(1.0) * 1e-14 * 10f64.powi(attempt);
    }
    Err(SolveError::NumericalFailure(
        "KKT system could not be solved".into(),
    ))
}

fn objective_value(prob: &ConicProblem, x: &[f64]) -> f64 {
    prob.objective.eval(x)
}

/// Solve a conic problem from a strictly feasible start.
pub fn solve(prob: &ConicProblem, x0: &[f64], opts: &SolverOptions) -> Result<Solution, SolveError> {
    path_follow(prob, x0, opts, None)
}

fn path_follow(
    prob: &ConicProblem,
    x0: &[f64],
    opts: &SolverOptions,
    early_exit: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<Solution, SolveError> {
    if x0.len() != prob.num_vars {
        return Err(SolveError::BadStart(format!(
            "start has {} entries, problem has {} variables",
            x0.len(),
            prob.num_vars
        )));
    }
    let internal = prepare(prob);
    if barrier_value(&internal.prob, x0).is_none() {
        return Err(SolveError::BadStart(
            "starting point is not strictly feasible".into(),
        ));
    }
    for (expr, label) in &internal.prob.equalities {
        if expr.eval(x0).abs() > 1e-7 {
            return Err(SolveError::BadStart(format!(
                "starting point violates equality {label}"
            )));
        }
    }

    let nu = barrier_degree(&internal.prob);
    let mut x = DVector::from_column_slice(x0);
    let mut t = (nu / (1.0 + objective_value(&internal.prob, x.as_slice()).abs())).max(1.0);
    let mut newton_total = 0;
    let mut best: Option<(f64, Solution)> = None;

    for _ in 0..opts.max_rounds {
        let outcome = center(&internal, &mut x, t, opts, &mut newton_total, early_exit)?;
        if let Some(exit) = early_exit {
            if exit(x.as_slice()) {
                return Ok(extract_solution(
                    &internal,
                    x.as_slice(),
                    t,
                    &outcome,
                    newton_total,
                    false,
                ));
            }
        }
        let mut solution =
            extract_solution(&internal, x.as_slice(), t, &outcome, newton_total, false);
        let scale = 1.0 + solution.objective.abs();
        let target = opts.gap_tol * scale;
        if solution.gap <= target
            && solution.stationarity <= target
            && outcome.decrement_sq <= 1e-8
        {
            solution.converged = true;
            return Ok(solution);
        }
        let score = (solution.gap / scale).max(solution.stationarity / scale);
        if best.as_ref().map(|(s, _)| score < *s).unwrap_or(true) {
            best = Some((score, solution));
        }
        if outcome.decrement_sq > 0.25 || t >= 1e15 {
            // Centering stalled or the barrier parameter is exhausted;
            // report the best center reached.
            break;
        }
        let t_needed = nu / target;
        t = (t * opts.mu).min(t_needed.max(t * 2.0));
    }
    Ok(best
        .map(|(_, s)| s)
        .expect("path following produced no center"))
}

fn extract_solution(
    internal: &Internal,
    x: &[f64],
    t: f64,
    outcome: &CenterOutcome,
    newton_iters: usize,
    converged: bool,
) -> Solution {
    let prob = &internal.prob;
    let nu = barrier_degree(prob);
    let objective = objective_value(prob, x);
    // The first-order dual correction is only meaningful near a center;
    // after a stalled round the raw barrier duals are the better estimate.
    let zero_step;
    let p = if outcome.decrement_sq <= 1e-4 {
        &outcome.newton_step
    } else {
        zero_step = DVector::zeros(prob.num_vars);
        &zero_step
    };

    // Dual certificate linearized along the untaken Newton step: the
    // first-order update of each barrier gradient cancels the centering
    // residual exactly (H p = t c - grad Phi), leaving only round-off in the
    // stationarity check below. `residual` accumulates grad Phi + H p - t c
    // piece by piece so that clipped duals stay accounted for.
    let c_vec = objective_vector(prob);
    let mut residual = -&c_vec * t;
    let mut gap = 0.0;
    let mut complementarity: f64 = 0.0;

    let mut ineq_duals = Vec::with_capacity(prob.inequalities.len());
    for (i, (expr, _)) in prob.inequalities.iter().enumerate() {
        let slack = -expr.eval(x);
        let dp: f64 = expr.terms.iter().map(|&(id, c)| c * p[id]).sum();
        // 1 / (t * slack(x + p)) to first order; kept non-negative.
        let dual_scaled = ((1.0 + dp / slack) / (t * slack)).max(0.0);
        let product = dual_scaled * slack;
        gap += product;
        complementarity = complementarity.max(product);
        expr.add_to_dense(dual_scaled * t, &mut residual);
        // Row was divided by its scale, so the original-row dual shrinks.
        ineq_duals.push(dual_scaled / internal.row_scales[i]);
    }

    for cone in &prob.cones {
        let a = cone.rate.eval(x);
        let b = cone.scale.eval(x);
        let c = cone.arg.eval(x);
        let (g3, h3) = cone_derivatives(a, b, c).unwrap_or(([0.0; 3], [[0.0; 3]; 3]));
        let step3 = [
            cone.rate.terms.iter().map(|&(id, cf)| cf * p[id]).sum::<f64>(),
            cone.scale.terms.iter().map(|&(id, cf)| cf * p[id]).sum::<f64>(),
            cone.arg.terms.iter().map(|&(id, cf)| cf * p[id]).sum::<f64>(),
        ];
        // Barrier gradient advanced to first order along the step; the dual
        // triple is its negation over t, and the product with (a, b, c) sits
        // at 3/t for this degree-3 logarithmically homogeneous barrier.
        let mut q = g3;
        for r in 0..3 {
            for s in 0..3 {
                q[r] += h3[r][s] * step3[s];
            }
        }
        let product = -(q[0] * a + q[1] * b + q[2] * c) / t;
        gap += product;
        complementarity = complementarity.max(product / 3.0);
        cone.rate.add_to_dense(q[0], &mut residual);
        cone.scale.add_to_dense(q[1], &mut residual);
        cone.arg.add_to_dense(q[2], &mut residual);
    }

    let mut block_duals = Vec::new();
    for blk in &prob.blocks {
        let m = blk.dim;
        let w = hermitian::to_matrix(&x[blk.offset..blk.offset + m * m], m);
        let dw = hermitian::to_matrix(&p.as_slice()[blk.offset..blk.offset + m * m], m);
        if let Some(g) = hermitian::hpd_inverse(&w) {
            // 2 (W + dW)^{-1} / t to first order.
            let corr = &g * &dw * &g;
            let s = (&g - &corr) * Complex64::new(2.0 / t, 0.0);
            let product = ((&s * &w).diagonal().iter().map(|z| z.re).sum::<f64>()).abs();
            gap += product;
            complementarity = complementarity.max(product / (2.0 * m as f64));
            let coeffs = hermitian::trace_coeffs(&s);
            for (i, cf) in coeffs.iter().enumerate() {
                residual[blk.offset + i] -= cf * t;
            }
            block_duals.push(s);
        } else {
            block_duals.push(DMatrix::zeros(m, m));
        }
    }

    for (row, (expr, _)) in prob.equalities.iter().enumerate() {
        expr.add_to_dense(outcome.eq_mults[row], &mut residual);
    }

    let stationarity = residual.iter().map(|v| v.abs() / t).fold(0.0f64, f64::max);
    let eq_duals = prob
        .equalities
        .iter()
        .enumerate()
        .map(|(i, _)| outcome.eq_mults[i] / (t * internal.eq_scales[i]))
        .collect();

    Solution {
        x: x.to_vec(),
        objective,
        gap,
        nu,
        ineq_duals,
        eq_duals,
        block_duals,
        stationarity,
        complementarity,
        newton_iters,
        converged,
    }
}

/// Outcome of the phase-I relaxation.
#[derive(Debug)]
pub struct InteriorPoint {
    pub x: Vec<f64>,
    /// Worst slack margin achieved (positive).
    pub margin: f64,
}

/// Find a strictly feasible point by relaxing every inequality and cone rate
/// by a shared slack variable and minimizing it.
///
/// `base` must keep all cone `scale`/`arg` expressions strictly positive and
/// all Hermitian blocks positive definite; inequality rows may be violated
/// arbitrarily. Returns the separating constraint when the problem admits no
/// interior point.
pub fn find_interior(
    prob: &ConicProblem,
    base: &[f64],
    opts: &SolverOptions,
) -> Result<InteriorPoint, SolveError> {
    let d = prob.num_vars;
    if base.len() != d {
        return Err(SolveError::BadStart("base point has wrong length".into()));
    }
    // Required slack for the relaxed start.
    let mut tau0 = 1.0f64;
    for (expr, label) in &prob.inequalities {
        let norm = expr.coeff_inf_norm().max(1e-12);
        let v = expr.eval(base) / norm;
        if !v.is_finite() {
            return Err(SolveError::BadStart(format!("row {label} non-finite at base")));
        }
        tau0 = tau0.max(v * 1.5 + 1.0);
    }
    for cone in &prob.cones {
        let b = cone.scale.eval(base);
        let c = cone.arg.eval(base);
        if b <= 0.0 || c <= 0.0 {
            return Err(SolveError::BadStart(format!(
                "cone {} has non-positive scale or argument at base",
                cone.label
            )));
        }
        let xi = b * (c / b).ln() - cone.rate.eval(base);
        tau0 = tau0.max(-xi * 1.5 + 1.0);
    }
    for blk in &prob.blocks {
        let w = hermitian::to_matrix(&base[blk.offset..blk.offset + blk.dim * blk.dim], blk.dim);
        if !hermitian::is_positive_definite(&w) {
            return Err(SolveError::BadStart(
                "a Hermitian block is not positive definite at base".into(),
            ));
        }
    }

    let mut relaxed = prob.clone();
    let tau = d;
    relaxed.num_vars += 1;
    for (i, (expr, _)) in relaxed.inequalities.iter_mut().enumerate() {
        let norm = prob.inequalities[i].0.coeff_inf_norm().max(1e-12);
        expr.add_term(tau, -norm);
    }
    for cone in &mut relaxed.cones {
        cone.rate.add_term(tau, -1.0);
    }
    // Keep the relaxation bounded.
    relaxed
        .inequalities
        .push((LinExpr::var(tau).scaled(-1.0).offset(-1e4), "phase-one floor".into()));
    relaxed.objective = LinExpr::var(tau).scaled(-1.0);

    let mut x0 = base.to_vec();
    x0.push(tau0);

    let margin = 1e-9;
    let exit = move |x: &[f64]| x[tau] < -margin;
    let mut opts = opts.clone();
    opts.gap_tol = 1e-10;
    let solution = path_follow(&relaxed, &x0, &opts, Some(&exit))?;
    let tau_star = solution.x[tau];
    if tau_star < -margin {
        return Ok(InteriorPoint {
            x: solution.x[..d].to_vec(),
            margin: -tau_star,
        });
    }

    // No margin-interior point: name the most active inequality.
    let worst = solution
        .ineq_duals
        .iter()
        .take(prob.inequalities.len())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| prob.inequalities[i].1.clone())
        .unwrap_or_else(|| "unknown".into());
    Err(SolveError::Infeasible {
        constraint: worst,
        violation: tau_star.max(0.0),
    })
}

/// Strict feasibility check with a uniform absolute margin on normalized
/// slacks.
pub fn is_strictly_feasible(prob: &ConicProblem, x: &[f64], margin: f64) -> bool {
    if x.len() != prob.num_vars {
        return false;
    }
    for (expr, _) in &prob.inequalities {
        let norm = expr.coeff_inf_norm().max(1e-12);
        if -expr.eval(x) / norm <= margin {
            return false;
        }
    }
    for cone in &prob.cones {
        let b = cone.scale.eval(x);
        let c = cone.arg.eval(x);
        if b <= 0.0 || c <= 0.0 {
            return false;
        }
        if b * (c / b).ln() - cone.rate.eval(x) <= margin * b.max(1.0) {
            return false;
        }
    }
    for (expr, _) in &prob.equalities {
        if expr.eval(x).abs() > 1e-9 {
            return false;
        }
    }
    for blk in &prob.blocks {
        let w = hermitian::to_matrix(&x[blk.offset..blk.offset + blk.dim * blk.dim], blk.dim);
        if !hermitian::is_positive_definite(&w) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_scalar_lp() {
        // max x s.t. x <= 1, -x <= 1.
        let mut b = ProblemBuilder::new();
        let x = b.scalar();
        b.maximize(LinExpr::var(x));
        b.le_zero(LinExpr::var(x).offset(-1.0), "upper");
        b.le_zero(LinExpr::var(x).scaled(-1.0).offset(-1.0), "lower");
        let prob = b.build().unwrap();
        let sol = solve(&prob, &[0.0], &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        assert!(sol.gap < 1e-7);
        // The binding row's multiplier tends to the objective coefficient.
        assert!((sol.ineq_duals[0] - 1.0).abs() < 1e-5);
        assert!(sol.ineq_duals[1] < 1e-8);
        assert!(sol.stationarity < 1e-8);
    }

    #[test]
    fn test_simple_exp_cone() {
        // max a s.t. (a, 1, e) in Kexp: optimum a = 1.
        let mut b = ProblemBuilder::new();
        let a = b.scalar();
        b.maximize(LinExpr::var(a));
        b.cone(
            LinExpr::var(a),
            LinExpr::constant(1.0),
            LinExpr::constant(std::f64::consts::E),
            "log bound",
        );
        let prob = b.build().unwrap();
        let sol = solve(&prob, &[0.0], &SolverOptions::default()).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-7, "obj {}", sol.objective);
    }

    #[test]
    fn test_perspective_entropy_optimum() {
        // max b ln(c/b) over b + c <= 2. Oracle: a fine one-dimensional scan
        // of f(b) = b ln((2 - b)/b) on (0, 2), since the budget binds.
        let mut builder = ProblemBuilder::new();
        let r = builder.scalar();
        let bv = builder.scalar();
        let cv = builder.scalar();
        builder.maximize(LinExpr::var(r));
        builder.cone(LinExpr::var(r), LinExpr::var(bv), LinExpr::var(cv), "hypograph");
        builder.le_zero(
            LinExpr::var(bv).term(cv, 1.0).offset(-2.0),
            "budget",
        );
        let prob = builder.build().unwrap();
        let sol = solve(&prob, &[0.0, 0.5, 1.0], &SolverOptions::default()).unwrap();
        let scan_best = (1..2_000_000)
            .map(|k| {
                let b = 2.0 * k as f64 / 2_000_000.0;
                b * ((2.0 - b) / b).ln()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (sol.objective - scan_best).abs() < 1e-6,
            "obj {} vs scan {scan_best}",
            sol.objective
        );
    }

    #[test]
    fn test_psd_block_trace_bound() {
        // max Tr(W) s.t. Tr(W) <= 1, W PSD (2x2): optimum 1.
        let mut b = ProblemBuilder::new();
        let blk = b.block(2);
        let eye = DMatrix::identity(2, 2);
        let tr = b.trace(blk, &eye.map(|v| Complex64::new(v, 0.0)));
        b.maximize(tr.clone());
        b.le_zero(tr.clone().offset(-1.0), "trace budget");
        let prob = b.build().unwrap();
        let x0 = hermitian::from_matrix(
            &(DMatrix::identity(2, 2) * Complex64::new(0.1, 0.0)),
        );
        let sol = solve(&prob, &x0, &SolverOptions::default()).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-7);
        assert!(sol.gap < 1e-7);
    }

    #[test]
    fn test_equality_row_is_respected() {
        // max x + y s.t. x = 0.25, x + 2y <= 1.
        let mut b = ProblemBuilder::new();
        let x = b.scalar();
        let y = b.scalar();
        b.maximize(LinExpr::var(x).term(y, 1.0));
        b.eq_zero(LinExpr::var(x).offset(-0.25), "pin x");
        b.le_zero(LinExpr::var(x).term(y, 2.0).offset(-1.0), "cap");
        let prob = b.build().unwrap();
        let sol = solve(&prob, &[0.25, 0.1], &SolverOptions::default()).unwrap();
        assert!((sol.x[x] - 0.25).abs() < 1e-9);
        assert!((sol.objective - (0.25 + 0.375)).abs() < 1e-6);
    }

    #[test]
    fn test_phase_one_finds_interior_and_detects_infeasible() {
        let mut b = ProblemBuilder::new();
        let x = b.scalar();
        b.maximize(LinExpr::var(x));
        b.le_zero(LinExpr::var(x).offset(-1.0), "upper");
        b.le_zero(LinExpr::var(x).scaled(-1.0).offset(0.5), "lower");
        let prob = b.build().unwrap();
        // Base far outside: x = 40 violates "upper".
        let interior = find_interior(&prob, &[40.0], &SolverOptions::default()).unwrap();
        assert!(is_strictly_feasible(&prob, &interior.x, 1e-12));

        // x <= -1 and x >= 2: empty.
        let mut b = ProblemBuilder::new();
        let x = b.scalar();
        b.maximize(LinExpr::var(x));
        b.le_zero(LinExpr::var(x).offset(1.0), "x below -1");
        b.le_zero(LinExpr::var(x).scaled(-1.0).offset(2.0), "x above 2");
        let prob = b.build().unwrap();
        match find_interior(&prob, &[0.0], &SolverOptions::default()) {
            Err(SolveError::Infeasible { violation, .. }) => {
                assert!(violation > 1.0);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn test_constant_violated_row_reports_at_build() {
        let mut b = ProblemBuilder::new();
        let x = b.scalar();
        b.maximize(LinExpr::var(x));
        b.le_zero(LinExpr::constant(2.0), "impossible");
        match b.build() {
            Err(SolveError::Infeasible { constraint, .. }) => {
                assert_eq!(constraint, "impossible");
            }
            other => panic!("expected build-time infeasibility, got {other:?}"),
        }
    }
}
