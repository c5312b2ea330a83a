//! The acceptance suite, as plain functions returning [`CriterionOutcome`]s.
//!
//! Every criterion is deterministic: reported numbers depend only on the
//! [`ValidationConfig`], never on timing or thread count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{exact_cost, gamma_sweep, StrategySet};
use crate::hjbgrid::{
    diagonal_residual, extract_gain, solve_extended_hjb_picard, solve_extended_hjb_sweep_with, GridSolution, GridSpec2,
    JStorage, SolverOptions,
};
use crate::model::{
    augment_time_dependent, cosine_target_lqr_model, inconsistency_adjustment, lqr_model, LqrParams,
    TimeDependentModel,
};
use crate::montecarlo::{counter_uniform, estimate_cost, simulate_many, SimConfig};
use crate::riccati::{
    closed_form_p, equilibrium_gain, equilibrium_value, naive_gain, solve_equilibrium_riccati,
    solve_equilibrium_riccati_with_terminal, solve_naive, solve_naive_with, EquilibriumTerminal, GainSchedule,
    NaiveTerminal, QMethod, TimeGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub params: LqrParams,
    pub ode_steps: usize,
    pub sim_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub pde_n: usize,
    pub pde_lo: f64,
    pub pde_hi: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_count: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            params: LqrParams::reference(),
            ode_steps: 1000,
            sim_steps: 1000,
            n_paths: 100_000,
            seed: 42,
            pde_n: 160,
            pde_lo: -3.0,
            pde_hi: 5.0,
            picard_tol: 1e-10,
            picard_max_iter: 200,
            gamma_min: 0.0,
            gamma_max: 10.0,
            gamma_count: 20,
        }
    }
}

impl ValidationConfig {
    fn ode_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.ode_steps, self.params.horizon)
    }

    fn pde_grid(&self, n: usize) -> Result<GridSpec2> {
        GridSpec2::square(0, self.pde_lo, self.pde_hi, n, self.params.horizon)
    }
}

/// Result of one criterion. `metrics` holds the measured quantities in a
/// fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: Vec<(String, f64)>,
}

impl CriterionOutcome {
    pub fn summary_line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

struct Check {
    metrics: Vec<(String, f64)>,
    failures: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self {
            metrics: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    /// Records `value` and requires `value <= bound` (NaN fails).
    fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.metric(name, value);
        if !(value <= bound) {
            self.failures.push(format!("{name} = {value:e} exceeds {bound:e}"));
        }
    }

    fn at_least(&mut self, name: &str, value: f64, bound: f64) {
        self.metric(name, value);
        if !(value >= bound) {
            self.failures.push(format!("{name} = {value} below {bound}"));
        }
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn finish(self, id: u8, name: &str) -> CriterionOutcome {
        let measured: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        let detail = if self.failures.is_empty() {
            measured.join(", ")
        } else {
            format!("{}; {}", self.failures.join("; "), measured.join(", "))
        };
        CriterionOutcome {
            id,
            name: name.to_string(),
            passed: self.failures.is_empty(),
            detail,
            metrics: self.metrics,
        }
    }
}

fn run(id: u8, name: &str, body: impl FnOnce(&mut Check) -> Result<()>) -> CriterionOutcome {
    let mut check = Check::new();
    match body(&mut check) {
        Ok(()) => check.finish(id, name),
        Err(e) => CriterionOutcome {
            id,
            name: name.to_string(),
            passed: false,
            detail: format!("error: {e}"),
            metrics: check.metrics,
        },
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn p_error(params: &LqrParams, n: usize) -> Result<f64> {
    let grid = TimeGrid::new(n, params.horizon)?;
    let sol = solve_naive(params, &grid)?;
    let mut worst: f64 = 0.0;
    for (i, p) in sol.p.iter().enumerate() {
        worst = worst.max((p - closed_form_p(params, grid.node(i))?).abs());
    }
    Ok(worst)
}

/// RK4 against the closed-form `P`, plus its empirical order on 40, 80 and
/// 160 steps; coarser grids are not yet asymptotic near `T`.
pub fn riccati_accuracy(cfg: &ValidationConfig) -> CriterionOutcome {
    run(1, "Riccati accuracy", |c| {
        c.at_most("max |P_rk4 - P_exact|", p_error(&cfg.params, cfg.ode_steps)?, 1e-8);
        let errs = [p_error(&cfg.params, 40)?, p_error(&cfg.params, 80)?, p_error(&cfg.params, 160)?];
        let order = (errs[0] / errs[1]).log2().min((errs[1] / errs[2]).log2());
        c.at_least("rk4 order", order, 3.7);
        Ok(())
    })
}

pub fn terminal_identities(cfg: &ValidationConfig) -> CriterionOutcome {
    run(2, "terminal identities", |c| {
        let p = &cfg.params;
        let grid = cfg.ode_grid()?;
        let n = grid.n_steps();
        let eq = solve_equilibrium_riccati(p, &grid)?;
        let nv = solve_naive(p, &grid)?;
        c.require(eq.a[n] == p.gamma / 2.0, format!("A(T) = {} != gamma/2", eq.a[n]));
        c.require(eq.c[n] == -p.gamma, format!("C(T) = {} != -gamma", eq.c[n]));
        c.require(eq.h[n] == 0.0, format!("H(T) = {} != 0", eq.h[n]));
        c.require(nv.p[n] == p.gamma / 2.0, format!("P(T) = {} != gamma/2", nv.p[n]));
        c.require(nv.q[n] == -p.gamma, format!("Q(T) = {} != -gamma", nv.q[n]));
        c.at_most("|K_eq(T)|", equilibrium_gain(&eq, p).k_state[n].abs(), 1e-12);
        c.at_most("|K_naive(T)|", naive_gain(&nv, p).k_state[n].abs(), 1e-12);
        Ok(())
    })
}

/// With the fixed target `Γ/2·x²` both agents must use the same gain.
pub fn time_consistency_reduction(cfg: &ValidationConfig) -> CriterionOutcome {
    run(3, "time-consistent reduction", |c| {
        let p = &cfg.params;
        let grid = cfg.ode_grid()?;
        let eq = solve_equilibrium_riccati_with_terminal(
            p,
            &grid,
            EquilibriumTerminal {
                a: p.gamma / 2.0,
                c: 0.0,
                h: 0.0,
            },
        )?;
        let nv = solve_naive_with(
            p,
            &grid,
            QMethod::Ode,
            NaiveTerminal {
                p: p.gamma / 2.0,
                q: 0.0,
            },
        )?;
        let d = sup_diff(&equilibrium_gain(&eq, p).k_state, &naive_gain(&nv, p).k_state);
        c.at_most("max |K_eq - K_naive|", d, 1e-8);
        Ok(())
    })
}

/// Cost of the uncontrolled state from its Gaussian moments:
/// `Γ/2 (Var X_T + (E X_T − x₀)²)`.
pub fn zero_control_cost_closed_form(p: &LqrParams) -> f64 {
    let t = p.horizon;
    let m = p.x0 * (p.a_bar * t).exp();
    let var = if p.a_bar == 0.0 {
        p.sigma * p.sigma * t
    } else {
        p.sigma * p.sigma * ((2.0 * p.a_bar * t).exp() - 1.0) / (2.0 * p.a_bar)
    };
    0.5 * p.gamma * (var + (m - p.x0) * (m - p.x0))
}

pub fn zero_control_cost(cfg: &ValidationConfig) -> CriterionOutcome {
    run(4, "zero-control cost", |c| {
        let grid = cfg.ode_grid()?;
        let numeric = exact_cost(&GainSchedule::zero(grid), &cfg.params)?.total;
        let exact = zero_control_cost_closed_form(&cfg.params);
        c.metric("moment cost", numeric);
        c.metric("closed form", exact);
        c.at_most("|difference|", (numeric - exact).abs(), 1e-6);
        Ok(())
    })
}

pub fn ansatz_consistency(cfg: &ValidationConfig) -> CriterionOutcome {
    run(5, "value vs moment cost", |c| {
        let p = &cfg.params;
        let grid = cfg.ode_grid()?;
        let eq = solve_equilibrium_riccati(p, &grid)?;
        let cost = exact_cost(&equilibrium_gain(&eq, p), p)?.total;
        let value = equilibrium_value(&eq, p, 0, p.x0)?;
        c.metric("exact cost", cost);
        c.metric("V(0, x0)", value);
        c.at_most("|difference|", (cost - value).abs(), 1e-6);
        Ok(())
    })
}

pub fn monte_carlo_agreement(cfg: &ValidationConfig) -> CriterionOutcome {
    run(6, "Monte Carlo agreement", |c| {
        let p = &cfg.params;
        let set = StrategySet::build(p, &cfg.ode_grid()?)?;
        let sim = SimConfig::new(cfg.n_paths, cfg.sim_steps, cfg.seed);
        let batches = simulate_many(&set.all(), p, &sim)?;
        for (gain, batch) in set.all().iter().zip(&batches) {
            let exact = exact_cost(gain, p)?.total;
            let est = estimate_cost(batch, p)?;
            let z = (est.mean - exact).abs() / est.stderr;
            c.metric(&format!("{} mc mean", gain.label), est.mean);
            c.metric(&format!("{} exact", gain.label), exact);
            c.at_most(&format!("{} |error|/stderr", gain.label), z, 3.0);
        }
        Ok(())
    })
}

pub fn sweep_dominance(cfg: &ValidationConfig) -> CriterionOutcome {
    run(7, "equilibrium dominates naive", |c| {
        let gammas = linspace(cfg.gamma_min, cfg.gamma_max, cfg.gamma_count)?;
        let table = gamma_sweep(&cfg.params, &gammas, &cfg.ode_grid()?)?;
        c.require(table.all_ok(), "some sweep rows failed");
        let worst = table
            .j_equilibrium
            .iter()
            .zip(&table.j_naive)
            .map(|(e, n)| e - n)
            .fold(f64::NEG_INFINITY, f64::max);
        c.at_most("max (J_eq - J_naive)", worst, 1e-9);
        if let Some(i) = table.gammas.iter().position(|g| *g == 0.0) {
            let at_zero = [table.j_equilibrium[i], table.j_naive[i], table.j_precommitted[i]]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            c.at_most("max |J| at gamma = 0", at_zero, 1e-12);
        }
        Ok(())
    })
}

/// `count` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(lo <= hi) {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}] with {count} points")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (count - 1) as f64
            }
        })
        .collect())
}

pub fn initial_control_ordering(cfg: &ValidationConfig) -> CriterionOutcome {
    run(8, "naive controls harder at t = 0", |c| {
        let set = StrategySet::build(&cfg.params, &cfg.ode_grid()?)?;
        let k_eq = set.equilibrium.k_state[0].abs();
        let k_naive = set.naive.k_state[0].abs();
        c.metric("|K_eq(0)|", k_eq);
        c.metric("|K_naive(0)|", k_naive);
        c.require(k_naive > k_eq, "|K_naive(0)| is not larger than |K_eq(0)|");
        Ok(())
    })
}

fn gain_error(sol: &GridSolution, p: &LqrParams) -> Result<f64> {
    let extracted = extract_gain(sol, p)?;
    let tg = TimeGrid::new(sol.grid.n_t, p.horizon)?;
    let reference = equilibrium_gain(&solve_equilibrium_riccati(p, &tg)?, p);
    Ok(sup_diff(&extracted.gain.k_state, &reference.k_state))
}

fn refinement_levels(n: usize) -> Result<[usize; 3]> {
    if n % 4 != 0 || n < 16 {
        return Err(Error::Config(format!("PDE refinement needs n divisible by 4 and >= 16, got {n}")));
    }
    Ok([n / 4, n / 2, n])
}

fn observed_order(errs: &[f64]) -> f64 {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min)
}

pub fn pde_vs_riccati(cfg: &ValidationConfig) -> CriterionOutcome {
    run(9, "grid solver vs Riccati", |c| {
        let p = &cfg.params;
        let model = lqr_model(p)?;
        let light = SolverOptions {
            storage: JStorage::Ends,
            ..Default::default()
        };
        let mut errs = Vec::new();
        let mut finest = None;
        for n in refinement_levels(cfg.pde_n)? {
            let sol = solve_extended_hjb_sweep_with(&model, &cfg.pde_grid(n)?, &light)?;
            errs.push(gain_error(&sol, p)?);
            finest = Some(sol);
        }
        let sweep = finest.expect("three levels");
        c.at_most("gain sup error", errs[2], 2e-2);
        c.at_least("gain error order", observed_order(&errs), 1.0);

        let picard = solve_extended_hjb_picard(&model, &cfg.pde_grid(cfg.pde_n)?, cfg.picard_tol, cfg.picard_max_iter)?;
        let mut gap: f64 = 0.0;
        for k in 0..sweep.v.len() {
            gap = gap
                .max(sup_diff(&sweep.v[k], &picard.v[k]))
                .max(sup_diff(&sweep.alpha[k], &picard.alpha[k]));
        }
        c.at_most("sweep vs Picard", gap, 1e-8);
        let trace = &picard.report.trace;
        c.metric("Picard iterations", trace.len() as f64);
        let monotone = trace.len() < 2 || trace[1..].windows(2).all(|w| w[1] < w[0]);
        c.require(monotone, format!("Picard trace not decreasing after iteration 1: {trace:?}"));
        Ok(())
    })
}

pub fn diagonal_identity(cfg: &ValidationConfig) -> CriterionOutcome {
    run(10, "diagonal identity", |c| {
        let p = &cfg.params;
        let light = SolverOptions {
            storage: JStorage::Ends,
            ..Default::default()
        };
        let lqr = solve_extended_hjb_sweep_with(&lqr_model(p)?, &cfg.pde_grid(cfg.pde_n)?, &light)?;
        let vmax = lqr.v.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        c.at_most("regulator residual", diagonal_residual(&lqr)?, 5e-2 * (1.0 + vmax));

        let model = cosine_target_lqr_model(p)?;
        let mut res = Vec::new();
        let mut terminal_gap: f64 = terminal_residual(&lqr);
        for n in refinement_levels(cfg.pde_n)? {
            let sol = solve_extended_hjb_sweep_with(&model, &cfg.pde_grid(n)?, &light)?;
            res.push(diagonal_residual(&sol)?);
            terminal_gap = terminal_gap.max(terminal_residual(&sol));
        }
        c.metric("cosine-target residual", res[2]);
        c.at_least("residual order", observed_order(&res), 1.0);
        c.require(terminal_gap == 0.0, format!("terminal-slice residual {terminal_gap:e} is not zero"));
        Ok(())
    })
}

fn terminal_residual(sol: &GridSolution) -> f64 {
    let n = sol.v.len() - 1;
    sup_diff(&sol.v[n], &sol.j_diag[n])
}

/// A random time-dependent model with hyperbolic discounting of both costs.
fn random_discounting_model(seed: u64, instance: u64) -> (TimeDependentModel, [f64; 8]) {
    let u = |k: u64| counter_uniform(seed, instance, k);
    let kappa = 0.1 + 2.0 * u(0);
    let gamma = 0.5 + 5.0 * u(1);
    let a_bar = -1.0 + 2.0 * u(2);
    let b_bar = 0.2 + 1.5 * u(3);
    let sigma = 0.1 + u(4);
    let horizon = 0.5 + 1.5 * u(5);
    let disc = move |s: f64, t: f64| 1.0 / (1.0 + kappa * (s - t));
    let d_t = move |s: f64, t: f64| kappa / (1.0 + kappa * (s - t)).powi(2);
    let d_tt = move |s: f64, t: f64| 2.0 * kappa * kappa / (1.0 + kappa * (s - t)).powi(3);
    let model = TimeDependentModel {
        drift: Arc::new(move |_s, x, a| a_bar * x + b_bar * a),
        vol: Arc::new(move |_s, _x| sigma),
        running_cost: Arc::new(move |s, t, _x, a| disc(s, t) * 0.5 * a * a),
        terminal_cost: Arc::new(move |t, x| disc(horizon, t) * 0.5 * gamma * x * x),
        dt_running: Arc::new(move |s, t, _x, a| d_t(s, t) * 0.5 * a * a),
        dtt_running: Arc::new(move |s, t, _x, a| d_tt(s, t) * 0.5 * a * a),
        dt_terminal: Arc::new(move |t, x| d_t(horizon, t) * 0.5 * gamma * x * x),
        dtt_terminal: Arc::new(move |t, x| d_tt(horizon, t) * 0.5 * gamma * x * x),
        horizon,
    };
    let draws = [u(6), u(7), u(8), u(9), u(10), u(11), u(12), u(13)];
    (model, draws)
}

/// On clock-augmented models the adjustment collapses to `∂ₜ𝒥`, and the
/// costs carry no dependence on the spatial parameter.
pub fn augmentation_reduction(cfg: &ValidationConfig) -> CriterionOutcome {
    run(11, "augmentation reduction", |c| {
        let mut worst: f64 = 0.0;
        let mut spatial: f64 = 0.0;
        for inst in 0..100u64 {
            let (td, r) = random_discounting_model(cfg.seed, inst);
            let horizon = td.horizon;
            let aug = augment_time_dependent(td)?;
            let clock = r[0] * horizon;
            let state = [clock, -3.0 + 6.0 * r[1]];
            let param = [clock * r[2], -3.0 + 6.0 * r[3]];
            let a = -2.0 + 4.0 * r[4];
            let jt = -5.0 + 10.0 * r[5];
            let jtt = -5.0 + 10.0 * r[6];
            let jxt = -5.0 + 10.0 * r[7];
            let jst = jtt * r[0];
            // 𝒥 depends on the parameter only through its clock component
            let inputs = aug.adjustment_inputs(state, a, [jt, 0.0], [[jtt, 0.0], [0.0, 0.0]], [[jst, 0.0], [jxt, 0.0]]);
            let adj = inconsistency_adjustment(&inputs)?;
            worst = worst.max((adj - jt).abs());

            let shifted = [param[0], param[1] + 1.0 + r[1]];
            spatial = spatial
                .max(aug.grad_param_running(param, state, a)[1].abs())
                .max(aug.grad_param_terminal(param, state)[1].abs())
                .max((aug.running_cost(shifted, state, a) - aug.running_cost(param, state, a)).abs())
                .max((aug.terminal_cost(shifted, state) - aug.terminal_cost(param, state)).abs());
        }
        c.at_most("max |adjustment - time term|", worst, 1e-12);
        c.metric("max spatial parameter sensitivity", spatial);
        c.require(spatial == 0.0, "costs depend on the spatial parameter");
        Ok(())
    })
}

/// Monte Carlo and grid results under one and four worker threads.
pub fn thread_independence(cfg: &ValidationConfig) -> CriterionOutcome {
    run(12, "thread-count independence", |c| {
        let p = &cfg.params;
        let set = StrategySet::build(p, &cfg.ode_grid()?)?;
        let sim = SimConfig::new(4_000, cfg.sim_steps, cfg.seed);
        let pde_grid = cfg.pde_grid(refinement_levels(cfg.pde_n)?[1])?;
        let model = lqr_model(p)?;
        let job = || -> Result<_> {
            let mc = simulate_many(&set.all(), p, &sim)?;
            let pde = solve_extended_hjb_sweep_with(&model, &pde_grid, &SolverOptions::default())?;
            Ok((mc, pde.v, pde.alpha, pde.j_field))
        };
        let mut results = Vec::new();
        for threads in [1, 4, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            results.push(pool.install(job)?);
        }
        let same = results.windows(2).all(|w| w[0] == w[1]);
        c.metric("runs compared", results.len() as f64);
        c.require(same, "results differ between runs or thread counts");
        Ok(())
    })
}

/// Runs every criterion in order.
pub fn run_all(cfg: &ValidationConfig) -> Vec<CriterionOutcome> {
    vec![
        riccati_accuracy(cfg),
        terminal_identities(cfg),
        time_consistency_reduction(cfg),
        zero_control_cost(cfg),
        ansatz_consistency(cfg),
        monte_carlo_agreement(cfg),
        sweep_dominance(cfg),
        initial_control_ordering(cfg),
        pde_vs_riccati(cfg),
        diagonal_identity(cfg),
        augmentation_reduction(cfg),
        thread_independence(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.0, 10.0, 20).unwrap();
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[19], 10.0);
        assert!(linspace(1.0, 0.0, 3).is_err());
        assert_eq!(linspace(2.0, 2.0, 1).unwrap(), vec![2.0]);
    }

    #[test]
    fn outcome_reports_errors_as_failures() {
        let cfg = ValidationConfig {
            ode_steps: 0,
            ..Default::default()
        };
        let out = terminal_identities(&cfg);
        assert!(!out.passed);
        assert!(out.detail.starts_with("error:"));
        assert!(out.summary_line().starts_with("[FAIL] criterion  2"));
    }

    #[test]
    fn zero_control_closed_form_matches_hand_value() {
        let e = std::f64::consts::E;
        let hand = 2.5 * (0.25 * (e - 1.0) + (e.sqrt() - 1.0).powi(2));
        assert!((zero_control_cost_closed_form(&LqrParams::reference()) - hand).abs() < 1e-15);
    }
}
