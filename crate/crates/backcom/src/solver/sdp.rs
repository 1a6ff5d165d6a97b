//! Linear complex semidefinite programs over Hermitian blocks and free
//! scalars, solved through the real embedding by the barrier engine.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::hermitian;
use super::ipm::{self, LinExpr, ProblemBuilder, SolveError, SolverOptions};

/// Inequality or equality sense of one affine constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    LessEq,
    Eq,
}

/// One affine constraint `sum Tr(A_j W_j) + q . s (+ constant) <= / = rhs`.
#[derive(Debug, Clone)]
pub struct SdpConstraint {
    /// One Hermitian coefficient per block; zero matrices allowed.
    pub mats: Vec<DMatrix<Complex64>>,
    /// Coefficients of the scalar variables.
    pub scalar_coeffs: Vec<f64>,
    pub rhs: f64,
    pub sense: Sense,
    pub label: String,
}

/// A complex SDP: maximize an affine functional of Hermitian PSD blocks and
/// free scalars under affine constraints.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    /// Block dimensions.
    pub block_dims: Vec<usize>,
    pub num_scalars: usize,
    /// Objective: `sum Tr(C_j W_j) + c . s + constant`, maximized.
    pub objective_mats: Vec<DMatrix<Complex64>>,
    pub objective_scalars: Vec<f64>,
    pub objective_constant: f64,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    /// Canonical plain-text dump: dimensions, then the objective and every
    /// constraint with matrices in row-major `re im` pairs. Intended for
    /// cross-checking single instances against external solvers.
    pub fn canonical_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(
            out,
            "blocks {} scalars {}",
            self.block_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.num_scalars
        )
        .unwrap();
        let write_mats = |out: &mut String, mats: &[DMatrix<Complex64>]| {
            for m in mats {
                let entries: Vec<String> = (0..m.nrows())
                    .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| format!("{:.17e} {:.17e}", m[(i, j)].re, m[(i, j)].im))
                    .collect();
                writeln!(out, "  mat {}", entries.join(" ")).unwrap();
            }
        };
        writeln!(
            out,
            "objective constant {:.17e} scalars [{}]",
            self.objective_constant,
            self.objective_scalars
                .iter()
                .map(|v| format!("{v:.17e}"))
                .collect::<Vec<_>>()
                .join(" ")
        )
        .unwrap();
        write_mats(&mut out, &self.objective_mats);
        for c in &self.constraints {
            writeln!(
                out,
                "constraint {:?} rhs {:.17e} label {} scalars [{}]",
                c.sense,
                c.rhs,
                c.label,
                c.scalar_coeffs
                    .iter()
                    .map(|v| format!("{v:.17e}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            )
            .unwrap();
            write_mats(&mut out, &c.mats);
        }
        out
    }
}

/// Primal solution with its dual certificate.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub blocks: Vec<DMatrix<Complex64>>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    /// Complementary-product sum of the certificate.
    pub duality_gap: f64,
    /// Infinity norm of the dual stationarity residual.
    pub stationarity: f64,
    /// One multiplier per constraint (non-negative for inequalities).
    pub constraint_duals: Vec<f64>,
    /// PSD dual per block.
    pub block_duals: Vec<DMatrix<Complex64>>,
    pub converged: bool,
}

/// Strictly feasible starting point.
#[derive(Debug, Clone)]
pub struct SdpPoint {
    pub blocks: Vec<DMatrix<Complex64>>,
    pub scalars: Vec<f64>,
}

fn assemble(prob: &SdpProblem) -> Result<(ipm::ConicProblem, Vec<usize>), SolveError> {
    let mut builder = ProblemBuilder::new();
    let scalar_ids: Vec<usize> = (0..prob.num_scalars).map(|_| builder.scalar()).collect();
    let block_ids: Vec<usize> = prob.block_dims.iter().map(|&d| builder.block(d)).collect();

    let affine = |builder: &ProblemBuilder,
                  mats: &[DMatrix<Complex64>],
                  scalars: &[f64],
                  constant: f64|
     -> LinExpr {
        let mut expr = LinExpr::constant(constant);
        for (j, m) in mats.iter().enumerate() {
            expr.add(&builder.trace(block_ids[j], m), 1.0);
        }
        for (k, &c) in scalars.iter().enumerate() {
            expr.add_term(scalar_ids[k], c);
        }
        expr
    };

    let objective = affine(
        &builder,
        &prob.objective_mats,
        &prob.objective_scalars,
        prob.objective_constant,
    );
    builder.maximize(objective);
    for c in &prob.constraints {
        let expr = affine(&builder, &c.mats, &c.scalar_coeffs, -c.rhs);
        match c.sense {
            Sense::LessEq => builder.le_zero(expr, c.label.clone()),
            Sense::Eq => builder.eq_zero(expr, c.label.clone()),
        }
    }
    Ok((builder.build()?, scalar_ids))
}

fn pack_point(_prob: &SdpProblem, point: &SdpPoint) -> Vec<f64> {
    let mut x: Vec<f64> = point.scalars.clone();
    for w in &point.blocks {
        x.extend(hermitian::from_matrix(w));
    }
    x
}

/// Solve a linear complex SDP. When `start` is `None` a phase-I pass runs
/// from ridge-regularized identity blocks.
pub fn solve_complex_sdp(
    prob: &SdpProblem,
    start: Option<&SdpPoint>,
    opts: &SolverOptions,
) -> Result<SdpSolution, SolveError> {
    let (conic, _) = assemble(prob)?;
    let x0 = match start {
        Some(p) => {
            let x = pack_point(prob, p);
            if ipm::is_strictly_feasible(&conic, &x, 0.0) {
                x
            } else {
                ipm::find_interior(&conic, &x, opts)?.x
            }
        }
        None => {
            let base = pack_point(
                prob,
                &SdpPoint {
                    blocks: prob
                        .block_dims
                        .iter()
                        .map(|&d| DMatrix::identity(d, d) * Complex64::new(1e-3, 0.0))
                        .collect(),
                    scalars: vec![0.0; prob.num_scalars],
                },
            );
            ipm::find_interior(&conic, &base, opts)?.x
        }
    };
    let solution = ipm::solve(&conic, &x0, opts)?;

    let mut offset = prob.num_scalars;
    let mut blocks = Vec::with_capacity(prob.block_dims.len());
    for &d in &prob.block_dims {
        blocks.push(hermitian::to_matrix(
            &solution.x[offset..offset + d * d],
            d,
        ));
        offset += d * d;
    }
    // Equality duals follow the inequality duals in constraint order.
    let mut constraint_duals = Vec::with_capacity(prob.constraints.len());
    let mut ineq_iter = solution.ineq_duals.iter();
    let mut eq_iter = solution.eq_duals.iter();
    for c in &prob.constraints {
        let dual = match c.sense {
            Sense::LessEq => *ineq_iter.next().unwrap_or(&0.0),
            Sense::Eq => *eq_iter.next().unwrap_or(&0.0),
        };
        constraint_duals.push(dual);
    }

    Ok(SdpSolution {
        blocks,
        scalars: solution.x[..prob.num_scalars].to_vec(),
        objective: solution.objective,
        duality_gap: solution.gap,
        stationarity: solution.stationarity,
        constraint_duals,
        block_duals: solution.block_duals,
        converged: solution.converged,
    })
}
