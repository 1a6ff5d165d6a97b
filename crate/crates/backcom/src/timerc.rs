//! Time and reflection-coefficient subproblem: for fixed transmit
//! covariances and a fixed efficiency parameter, maximize the parametric
//! objective over slot durations `t_n` and the products `y_n = alpha_n t_n`.
//!
//! With the harvester pieces resolved the program is concave: each rate is
//! the perspective `t ln(1 + c y / t)` captured by an exponential cone, and
//! everything else is affine. Saturation is modeled exactly through
//! hypograph variables `u <= eta * input`, `u <= p_sat * slot`; the
//! sensitivity cutoff is the genuinely combinatorial piece, handled by
//! counting a harvest term only together with a validity row that keeps its
//! input above the threshold, or dropping it entirely (which never
//! over-credits energy). [`eh_region_refine`] settles the counted set.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::model::{
    classify_eh_input, forward_outer, rate_matrix, trace_product, EhRegion, EhTermRegions,
};
use crate::solver::ipm::{self, LinExpr, ProblemBuilder, SolveError, SolverOptions};

const LN2: f64 = std::f64::consts::LN_2;
/// Smallest slot duration enforced when the rate floor is positive.
pub const T_MIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TimeRcError {
    #[error("time/rc subproblem infeasible; separating constraint: {constraint}")]
    Infeasible { constraint: String },
    #[error("solver failure: {0}")]
    Solver(String),
}

/// Constants of one time/RC program, derived from fixed covariances.
#[derive(Debug, Clone)]
pub struct TimeRcProblem {
    /// `c_n = Tr(H_n W_n) / (kappa Tr(W_n) + sigma^2)`.
    pub rate_gain: Vec<f64>,
    /// `Tr(W_n)`, the slot transmit power.
    pub tx_power: Vec<f64>,
    /// `fwd_power[n][i] = Tr(H_n^f W_i)`.
    pub fwd_power: Vec<Vec<f64>>,
    /// `recycle_power[i][n] = |f_in|^2 Tr(H_i^f W_i)` at full reflection.
    pub recycle_power: Vec<Vec<f64>>,
    pub eta_ee: f64,
    pub cfg: SystemConfig,
    /// Include the recycled-energy harvest terms.
    pub recycling: bool,
    /// Pin the slot durations instead of optimizing them.
    pub fixed_time: Option<Vec<f64>>,
    /// Include the total transmit-energy budget row.
    pub energy_budget: bool,
}

impl TimeRcProblem {
    /// Derive the constants from a channel realization and fixed covariances.
    pub fn from_covariances(
        ch: &ChannelSet,
        cfg: &SystemConfig,
        w: &[DMatrix<Complex64>],
        eta_ee: f64,
    ) -> Self {
        let n = cfg.n_bds;
        let fwd_outer: Vec<_> = (0..n).map(|k| forward_outer(ch, k)).collect();
        let tx_power: Vec<f64> = w
            .iter()
            .map(|wk| wk.diagonal().iter().map(|z| z.re).sum())
            .collect();
        let rate_gain = (0..n)
            .map(|k| {
                let num = trace_product(&rate_matrix(ch, k), &w[k]);
                num / (cfg.si_coeff * tx_power[k] + cfg.noise_power)
            })
            .collect();
        let fwd_power = (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| trace_product(&fwd_outer[k], &w[i]).max(0.0))
                    .collect()
            })
            .collect();
        let recycle_power = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        if i < k {
                            ch.inter_bd[(i, k)].norm_sqr()
                                * trace_product(&fwd_outer[i], &w[i]).max(0.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            rate_gain,
            tx_power,
            fwd_power,
            recycle_power,
            eta_ee,
            cfg: cfg.clone(),
            recycling: true,
            fixed_time: None,
            energy_budget: true,
        }
    }

    pub fn n_bds(&self) -> usize {
        self.rate_gain.len()
    }

    /// Classification of every harvest input at a `(t, y)` point.
    pub fn regions_at(&self, t: &[f64], y: &[f64]) -> EhTermRegions {
        let alpha = recover_alpha(t, y, &self.cfg);
        EhTermRegions::classify(&alpha, &self.fwd_power, &self.recycle_power, &self.cfg)
    }

    /// Harvested energy of device `n` under the true piecewise harvester.
    pub fn true_harvest(&self, n: usize, t: &[f64], y: &[f64]) -> f64 {
        let cfg = &self.cfg;
        let alpha = recover_alpha(t, y, cfg);
        let psi = |p: f64| match classify_eh_input(p, cfg) {
            EhRegion::Zero => 0.0,
            EhRegion::Linear => cfg.eh_efficiency * p,
            EhRegion::Saturated => cfg.p_sat,
        };
        let mut total = t[n] * psi((1.0 - alpha[n]) * self.fwd_power[n][n]);
        for i in 0..n {
            total += t[i] * psi(self.fwd_power[n][i]);
            if self.recycling {
                total += t[i] * psi(alpha[i] * self.recycle_power[i][n]);
            }
        }
        total
    }

    /// Circuit consumption device `n` must cover: backscattering during its
    /// slot plus standby during earlier slots.
    pub fn standby_needs(&self, n: usize, t: &[f64]) -> f64 {
        t[n] * self.cfg.p_bc + t[..n].iter().sum::<f64>() * self.cfg.p_sc
    }

    /// Parametric objective at a `(t, y)` point.
    pub fn objective_at(&self, t: &[f64], y: &[f64]) -> f64 {
        let mut value = 0.0;
        for n in 0..self.n_bds() {
            value += rate_bits(t[n], y[n], self.rate_gain[n]);
            value -= self.eta_ee * (t[n] * (self.tx_power[n] + self.cfg.p_bc));
        }
        let standby: f64 = (0..self.n_bds())
            .map(|n| t[..n].iter().sum::<f64>() * self.cfg.p_sc)
            .sum();
        value - self.eta_ee * standby
    }

    /// Sensitivity threshold on harvester input power.
    fn sen_input(&self) -> f64 {
        self.cfg.p_sen / self.cfg.eh_efficiency
    }

    /// Whether the own-slot term of device `k` can reach the sensitivity
    /// window at all.
    fn own_capable(&self, k: usize) -> bool {
        (1.0 - self.cfg.alpha_floor) * self.fwd_power[k][k] > self.sen_input() * (1.0 + 1e-9)
    }

    /// Whether the recycled term from slot `i` to device `k` can reach the
    /// window (at full reflection).
    fn recycled_capable(&self, i: usize, k: usize) -> bool {
        self.recycling && self.recycle_power[i][k] > self.sen_input() * (1.0 + 1e-9)
    }
}

/// Throughput in bits of one slot: `t log2(1 + c y / t)`, extended by
/// continuity at `t = 0`.
pub fn rate_bits(t: f64, y: f64, c: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * (1.0 + c * y / t).log2()
    }
}

fn recover_alpha(t: &[f64], y: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    t.iter()
        .zip(y)
        .map(|(&tn, &yn)| {
            if tn <= 1e-12 {
                cfg.alpha_floor
            } else {
                (yn / tn).clamp(cfg.alpha_floor, 1.0)
            }
        })
        .collect()
}

/// Which variable-input harvest terms are counted. A counted term carries a
/// validity row keeping its input above the sensitivity threshold, so its
/// credited value equals the true harvester output; a dropped term credits
/// nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestActivation {
    pub own: Vec<bool>,
    /// `recycled[k][i]`: term feeding device `k` from slot `i < k`.
    pub recycled: Vec<Vec<bool>>,
}

impl HarvestActivation {
    fn none(n: usize) -> Self {
        Self {
            own: vec![false; n],
            recycled: (0..n).map(|k| vec![false; k]).collect(),
        }
    }

    fn all_capable(prob: &TimeRcProblem) -> Self {
        let n = prob.n_bds();
        Self {
            own: (0..n).map(|k| prob.own_capable(k)).collect(),
            recycled: (0..n)
                .map(|k| (0..k).map(|i| prob.recycled_capable(i, k)).collect())
                .collect(),
        }
    }

    fn from_point(prob: &TimeRcProblem, t: &[f64], y: &[f64]) -> Self {
        let regions = prob.regions_at(t, y);
        let n = prob.n_bds();
        Self {
            own: (0..n)
                .map(|k| prob.own_capable(k) && regions.own[k] != EhRegion::Zero)
                .collect(),
            recycled: (0..n)
                .map(|k| {
                    (0..k)
                        .map(|i| {
                            prob.recycled_capable(i, k) && regions.recycled[k][i] != EhRegion::Zero
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRcStatus {
    Optimal,
    /// Counted-term refinement hit its cap; the conservative set is in use.
    ConservativeRegions,
}

#[derive(Debug, Clone)]
pub struct TimeRcSolution {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub objective: f64,
    /// Largest of the dual stationarity residual and the complementary
    /// products of the inner convex solve.
    pub kkt_residual: f64,
    /// Harvester classification at the solution.
    pub regions: EhTermRegions,
    pub activation: HarvestActivation,
    pub region_iterations: usize,
    pub status: TimeRcStatus,
    /// Harvest causality holds under the true piecewise harvester.
    pub true_harvest_ok: bool,
}

/// Solve the subproblem from an optional `(t, alpha)` warm start.
pub fn solve_time_rc(
    prob: &TimeRcProblem,
    warm: Option<(&[f64], &[f64])>,
) -> Result<TimeRcSolution, TimeRcError> {
    let n = prob.n_bds();
    let (t0, a0): (Vec<f64>, Vec<f64>) = match warm {
        Some((t, a)) => (t.to_vec(), a.to_vec()),
        None => (vec![1.0 / (n as f64 + 1.0); n], vec![0.5; n]),
    };
    let t0 = prob.fixed_time.clone().unwrap_or(t0);
    let y0: Vec<f64> = t0.iter().zip(&a0).map(|(t, a)| t * a).collect();

    // Counted-set ladder: warm-informed, then everything the window admits,
    // then nothing. The first branch that solves wins; refinement then
    // prunes counted terms that only constrain.
    let ladder = [
        HarvestActivation::from_point(prob, &t0, &y0),
        HarvestActivation::all_capable(prob),
        HarvestActivation::none(n),
    ];
    let mut last_err = None;
    for activation in &ladder {
        if Some(activation) == ladder.first().filter(|_| last_err.is_some()) {
            continue;
        }
        match solve_branch(prob, activation, &t0, &a0) {
            Ok(solution) => return eh_region_refine(prob, solution),
            Err(err @ TimeRcError::Infeasible { .. }) => last_err = Some(err),
            Err(other) => return Err(other),
        }
    }
    Err(last_err.unwrap_or(TimeRcError::Solver("no branch attempted".into())))
}

/// Refine the counted harvest terms at a solved candidate: any counted term
/// whose sensitivity-validity row binds is tentatively dropped, and the drop
/// is kept when the re-solve improves the objective. Dropping never
/// over-credits harvested energy, so the refined point stays feasible under
/// the true piecewise harvester.
pub fn eh_region_refine(
    prob: &TimeRcProblem,
    candidate: TimeRcSolution,
) -> Result<TimeRcSolution, TimeRcError> {
    let mut current = candidate;
    let max_rounds = 4;
    for round in 0..max_rounds {
        let binding = binding_validity_terms(prob, &current);
        if binding.is_empty() {
            break;
        }
        let mut activation = current.activation.clone();
        for (k, i) in &binding {
            match i {
                Some(src) => activation.recycled[*k][*src] = false,
                None => activation.own[*k] = false,
            }
        }
        match solve_branch(prob, &activation, &current.t, &current.alpha) {
            Ok(mut improved) if improved.objective > current.objective + 1e-12 => {
                improved.region_iterations = current.region_iterations + round + 1;
                current = improved;
            }
            _ => break,
        }
    }
    current.true_harvest_ok = verify_true_harvest(prob, &current);
    if !current.true_harvest_ok {
        current.status = TimeRcStatus::ConservativeRegions;
    }
    Ok(current)
}

fn verify_true_harvest(prob: &TimeRcProblem, sol: &TimeRcSolution) -> bool {
    (0..prob.n_bds())
        .all(|n| prob.true_harvest(n, &sol.t, &sol.y) + 1e-7 >= prob.standby_needs(n, &sol.t))
}

/// Counted terms whose input sits essentially on the sensitivity threshold.
fn binding_validity_terms(prob: &TimeRcProblem, sol: &TimeRcSolution) -> Vec<(usize, Option<usize>)> {
    let sen = prob.sen_input();
    let mut binding = Vec::new();
    for k in 0..prob.n_bds() {
        if sol.activation.own[k] && sol.t[k] > 1e-9 {
            let input = (1.0 - sol.alpha[k]) * prob.fwd_power[k][k];
            if input <= sen * (1.0 + 1e-4) {
                binding.push((k, None));
            }
        }
        for i in 0..k {
            if sol.activation.recycled[k][i] && sol.t[i] > 1e-9 {
                let input = sol.alpha[i] * prob.recycle_power[i][k];
                if input <= sen * (1.0 + 1e-4) {
                    binding.push((k, Some(i)));
                }
            }
        }
    }
    binding
}

fn solve_branch(
    prob: &TimeRcProblem,
    activation: &HarvestActivation,
    warm_t: &[f64],
    warm_alpha: &[f64],
) -> Result<TimeRcSolution, TimeRcError> {
    let n = prob.n_bds();
    let cfg = &prob.cfg;
    let sen = prob.sen_input();
    let mut builder = ProblemBuilder::new();

    // Variable layout: slot durations (unless pinned), reflection products,
    // rate hypograph values in nats, then harvest hypograph values.
    let t_expr: Vec<LinExpr> = match &prob.fixed_time {
        Some(t) => t.iter().map(|&v| LinExpr::constant(v)).collect(),
        None => (0..n).map(|_| LinExpr::var(builder.scalar())).collect(),
    };
    let y_ids: Vec<usize> = (0..n).map(|_| builder.scalar()).collect();
    let rho_ids: Vec<usize> = (0..n).map(|_| builder.scalar()).collect();

    let mut objective = LinExpr::default();
    for k in 0..n {
        objective.add_term(rho_ids[k], 1.0 / LN2);
        // Standby consumption of slot k is paid once by every later device.
        let trailing = (n - 1 - k) as f64;
        objective.add(
            &t_expr[k],
            -prob.eta_ee * (prob.tx_power[k] + cfg.p_bc + trailing * cfg.p_sc),
        );
    }
    builder.maximize(objective);

    for k in 0..n {
        let mut floor_row = LinExpr::var(y_ids[k]).scaled(-1.0);
        floor_row.add(&t_expr[k], cfg.alpha_floor);
        builder.le_zero(floor_row, format!("reflection floor device {k}"));
        let mut cap_row = LinExpr::var(y_ids[k]);
        cap_row.add(&t_expr[k], -1.0);
        builder.le_zero(cap_row, format!("reflection cap device {k}"));
        if cfg.r_min > 0.0 && prob.fixed_time.is_none() {
            builder.le_zero(
                t_expr[k].clone().scaled(-1.0).offset(T_MIN),
                format!("slot floor device {k}"),
            );
        }
        builder.le_zero(
            LinExpr::var(rho_ids[k])
                .scaled(-1.0)
                .offset(cfg.r_min * LN2),
            format!("rate floor device {k}"),
        );
        let mut arg = t_expr[k].clone();
        arg.add_term(y_ids[k], prob.rate_gain[k]);
        builder.cone(
            LinExpr::var(rho_ids[k]),
            t_expr[k].clone(),
            arg,
            format!("rate hypograph device {k}"),
        );
    }

    let mut time_row = LinExpr::constant(-1.0);
    for k in 0..n {
        time_row.add(&t_expr[k], 1.0);
    }
    builder.le_zero(time_row, "frame duration");

    if prob.energy_budget {
        let mut energy_row = LinExpr::constant(-cfg.e_source);
        for k in 0..n {
            energy_row.add(&t_expr[k], prob.tx_power[k]);
        }
        builder.le_zero(energy_row, "transmit energy budget");
    }

    // Harvest causality. Counted variable-input terms get a hypograph
    // variable u with u <= eta * input-energy and u <= p_sat * slot, plus a
    // validity row keeping the input above the sensitivity threshold.
    // Constant-input (ambient) terms are credited by their exact piece.
    let mut u_own: Vec<Option<usize>> = vec![None; n];
    let mut u_rec: Vec<Vec<Option<usize>>> = (0..n).map(|k| vec![None; k]).collect();
    for k in 0..n {
        if activation.own[k] {
            u_own[k] = Some(builder.scalar());
        }
        for i in 0..k {
            if activation.recycled[k][i] {
                u_rec[k][i] = Some(builder.scalar());
            }
        }
    }
    for k in 0..n {
        let mut row = LinExpr::default();
        row.add(&t_expr[k], cfg.p_bc);
        for i in 0..k {
            row.add(&t_expr[i], cfg.p_sc);
        }
        if let Some(u) = u_own[k] {
            row.add_term(u, -1.0);
            let q = prob.fwd_power[k][k];
            // u <= eta q (t - y)
            let mut lin_cap = LinExpr::var(u);
            lin_cap.add(&t_expr[k], -cfg.eh_efficiency * q);
            lin_cap.add_term(y_ids[k], cfg.eh_efficiency * q);
            builder.le_zero(lin_cap, format!("own harvest linear cap device {k}"));
            // u <= p_sat t
            let mut sat_cap = LinExpr::var(u);
            sat_cap.add(&t_expr[k], -cfg.p_sat);
            builder.le_zero(sat_cap, format!("own harvest saturation cap device {k}"));
            // (t - y) q >= sen t
            let mut validity = LinExpr::default();
            validity.add(&t_expr[k], sen - q);
            validity.add_term(y_ids[k], q);
            builder.le_zero(validity, format!("own harvest sensitivity device {k}"));
        }
        for i in 0..k {
            match classify_eh_input(prob.fwd_power[k][i], cfg) {
                EhRegion::Linear => {
                    row.add(&t_expr[i], -cfg.eh_efficiency * prob.fwd_power[k][i]);
                }
                EhRegion::Saturated => row.add(&t_expr[i], -cfg.p_sat),
                EhRegion::Zero => {}
            }
            if let Some(u) = u_rec[k][i] {
                row.add_term(u, -1.0);
                let r = prob.recycle_power[i][k];
                let mut lin_cap = LinExpr::var(u);
                lin_cap.add_term(y_ids[i], -cfg.eh_efficiency * r);
                builder.le_zero(
                    lin_cap,
                    format!("recycled harvest linear cap {i} to {k}"),
                );
                let mut sat_cap = LinExpr::var(u);
                sat_cap.add(&t_expr[i], -cfg.p_sat);
                builder.le_zero(
                    sat_cap,
                    format!("recycled harvest saturation cap {i} to {k}"),
                );
                // alpha_i r >= sen: sen t_i - r y_i <= 0.
                let mut validity = LinExpr::default();
                validity.add(&t_expr[i], sen);
                validity.add_term(y_ids[i], -r);
                builder.le_zero(validity, format!("recycled harvest sensitivity {i} to {k}"));
            }
        }
        builder.le_zero(row, format!("harvest causality device {k}"));
    }

    let conic = builder.build().map_err(map_solver_error)?;
    let x0 = starting_point(prob, activation, &conic, warm_t, warm_alpha)?;
    let opts = SolverOptions::default();
    let solution = ipm::solve(&conic, &x0, &opts).map_err(map_solver_error)?;

    let t: Vec<f64> = match &prob.fixed_time {
        Some(t) => t.clone(),
        None => (0..n).map(|k| solution.x[k]).collect(),
    };
    let y: Vec<f64> = y_ids.iter().map(|&id| solution.x[id]).collect();
    let alpha = recover_alpha(&t, &y, cfg);
    let regions = prob.regions_at(&t, &y);
    Ok(TimeRcSolution {
        objective: prob.objective_at(&t, &y),
        kkt_residual: solution.stationarity.max(solution.complementarity),
        t,
        y,
        alpha,
        regions,
        activation: activation.clone(),
        region_iterations: 0,
        status: TimeRcStatus::Optimal,
        true_harvest_ok: true,
    })
}

fn starting_point(
    prob: &TimeRcProblem,
    activation: &HarvestActivation,
    conic: &ipm::ConicProblem,
    warm_t: &[f64],
    warm_alpha: &[f64],
) -> Result<Vec<f64>, TimeRcError> {
    let n = prob.n_bds();
    let cfg = &prob.cfg;
    let sen = prob.sen_input();
    let variable_time = prob.fixed_time.is_none();

    let mut t: Vec<f64> = match &prob.fixed_time {
        Some(t) => t.clone(),
        None => warm_t.to_vec(),
    };
    if variable_time {
        let total: f64 = t.iter().sum();
        let scale = if total > 0.999 { 0.999 / total } else { 1.0 };
        for v in &mut t {
            *v = (*v * scale).max(T_MIN * 1.5);
        }
    }
    // Keep counted terms interior to their validity rows.
    let alpha: Vec<f64> = (0..n)
        .map(|k| {
            let mut a = warm_alpha[k].clamp(cfg.alpha_floor * 2.0, 1.0 - 1e-9);
            if activation.own[k] {
                let cap = 1.0 - (sen * 1.01) / prob.fwd_power[k][k].max(1e-300);
                a = a.min(cap.max(cfg.alpha_floor * 2.0));
            }
            let needs_recycle = (k + 1..n).any(|m| activation.recycled[m][k]);
            if needs_recycle {
                let floor = (sen * 1.01) / prob.recycle_power[k][k + 1..n.max(k + 1)]
                    .iter()
                    .zip(k + 1..n)
                    .filter(|(_, m)| activation.recycled[*m][k])
                    .map(|(r, _)| *r)
                    .fold(f64::INFINITY, f64::min)
                    .max(1e-300);
                a = a.max(floor.min(1.0 - 1e-9));
            }
            a
        })
        .collect();
    let y: Vec<f64> = t.iter().zip(&alpha).map(|(&tk, &ak)| tk * ak).collect();
    let rho: Vec<f64> = (0..n)
        .map(|k| t[k] * (1.0 + prob.rate_gain[k] * y[k] / t[k]).ln() - 1e-6 * (1.0 + t[k]))
        .collect();
    let u_values = |t: &[f64], y: &[f64]| -> Vec<f64> {
        let mut u = Vec::new();
        for k in 0..n {
            if activation.own[k] {
                let lin = cfg.eh_efficiency * (t[k] - y[k]) * prob.fwd_power[k][k];
                u.push(0.999 * lin.min(cfg.p_sat * t[k]));
            }
            for i in 0..k {
                if activation.recycled[k][i] {
                    let lin = cfg.eh_efficiency * y[i] * prob.recycle_power[i][k];
                    u.push(0.999 * lin.min(cfg.p_sat * t[i]));
                }
            }
        }
        u
    };

    let pack = |t: &[f64], y: &[f64], rho: &[f64]| -> Vec<f64> {
        let mut x = Vec::with_capacity(conic.num_vars);
        if variable_time {
            x.extend_from_slice(t);
        }
        x.extend_from_slice(y);
        x.extend_from_slice(rho);
        x.extend(u_values(t, y));
        x
    };

    let x = pack(&t, &y, &rho);
    if ipm::is_strictly_feasible(conic, &x, 1e-12) {
        return Ok(x);
    }
    // Relaxed base for phase one: pull the hypograph values well inside the
    // cone so only affine rows need lifting.
    let rho_low: Vec<f64> = (0..n)
        .map(|k| t[k] * (1.0 + prob.rate_gain[k] * y[k] / t[k]).ln() - 1.0)
        .collect();
    let base = pack(&t, &y, &rho_low);
    let interior =
        ipm::find_interior(conic, &base, &SolverOptions::default()).map_err(map_solver_error)?;
    Ok(interior.x)
}

fn map_solver_error(err: SolveError) -> TimeRcError {
    match err {
        SolveError::Infeasible { constraint, .. } => TimeRcError::Infeasible { constraint },
        other => TimeRcError::Solver(other.to_string()),
    }
}
