use clap::ValueEnum;
use tic_core::evaluation::{exact_cost, gamma_sweep, StrategySet};
use tic_core::hjbgrid::{
    diagonal_residual, extract_gain, solve_extended_hjb_picard, solve_extended_hjb_sweep, GridSolution, GridSpec2,
};
use tic_core::model::lqr_model;
use tic_core::montecarlo::{compare_strategies, estimate_cost, simulate_paths, SimConfig};
use tic_core::riccati::{equilibrium_gain, solve_equilibrium_riccati, GainSchedule, TimeGrid};
use tic_core::validation::{linspace, run_all, CriterionOutcome, ValidationConfig};

use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};
use crate::output::{Cell, OutputDir, Table};
use crate::svg::{render_svg, LinePlot, Panel, Series};

/// Sample paths kept in `simulate` output.
pub const STORED_PATHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Equilibrium,
    Naive,
    Precommitted,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equilibrium => "equilibrium",
            Strategy::Naive => "naive",
            Strategy::Precommitted => "precommitted",
        }
    }

    fn pick(self, set: &StrategySet) -> &GainSchedule {
        match self {
            Strategy::Equilibrium => &set.equilibrium,
            Strategy::Naive => &set.naive,
            Strategy::Precommitted => &set.precommitted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PdeMode {
    Sweep,
    Picard,
}

fn strategies(cfg: &RunConfig) -> Result<StrategySet> {
    let grid = TimeGrid::new(cfg.numerics.ode_steps, cfg.model.horizon).context("time grid")?;
    StrategySet::build(&cfg.model, &grid).context("riccati")
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    let n = &cfg.numerics;
    SimConfig::new(n.n_paths, n.sim_steps, n.seed).with_antithetic(n.antithetic)
}

pub fn gains(cfg: &RunConfig) -> Result<Vec<String>> {
    let set = strategies(cfg)?;
    let t = set.equilibrium.grid.nodes();
    let table = Table::from_columns(
        &["t", "k_equilibrium", "k_naive", "k_pre_state", "c_pre_offset"],
        &[
            &t,
            &set.equilibrium.k_state,
            &set.naive.k_state,
            &set.precommitted.k_state,
            &set.precommitted.c_offset,
        ],
    );
    OutputDir::create(cfg)?.table("gains", &table)?;
    Ok(vec![format!(
        "K_eq(0) = {:?}, K_naive(0) = {:?}, k_pre(0) = {:?}, c_pre(0) = {:?}",
        set.equilibrium.k_state[0], set.naive.k_state[0], set.precommitted.k_state[0], set.precommitted.c_offset[0]
    )])
}

pub fn cost(cfg: &RunConfig, strategy: Strategy) -> Result<Vec<String>> {
    let set = strategies(cfg)?;
    let report = exact_cost(strategy.pick(&set), &cfg.model).context("exact cost")?;
    let mut table = Table::new(&["strategy", "running", "terminal", "total"]);
    table.push(vec![
        strategy.name().into(),
        report.running.into(),
        report.terminal.into(),
        report.total.into(),
    ]);
    OutputDir::create(cfg)?.table(&format!("cost_{}", strategy.name()), &table)?;
    Ok(vec![format!("J_{} = {:?}", strategy.name(), report.total)])
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<String>> {
    let s = &cfg.sweep;
    let gammas = linspace(s.gamma_min, s.gamma_max, s.gamma_steps).context("sweep range")?;
    let grid = TimeGrid::new(cfg.numerics.ode_steps, cfg.model.horizon).context("time grid")?;
    let table = gamma_sweep(&cfg.model, &gammas, &grid).context("gamma sweep")?;
    let out_table = Table::from_columns(
        &["gamma", "j_equilibrium", "j_naive", "j_precommitted"],
        &[&table.gammas, &table.j_equilibrium, &table.j_naive, &table.j_precommitted],
    );
    let mut out = OutputDir::create(cfg)?;
    out.table("sweep", &out_table)?;
    if let Some((i, msg)) = table.errors.iter().enumerate().find_map(|(i, e)| e.as_ref().map(|m| (i, m))) {
        return Err(CliError::Core {
            context: format!("gamma sweep row {i} (gamma = {:?})", table.gammas[i]),
            source: tic_core::Error::Numeric(msg.clone()),
        });
    }
    let plot = LinePlot {
        title: "Expected cost against terminal weight".into(),
        x_label: "gamma".into(),
        x: table.gammas.clone(),
        panels: vec![Panel {
            y_label: "expected cost".into(),
            series: vec![
                Series::new("equilibrium", table.j_equilibrium.clone()),
                Series::new("naive", table.j_naive.clone()),
                Series::new("precommitted", table.j_precommitted.clone()),
            ],
        }],
    };
    out.svg("sweep", &render_svg(&plot)?)?;
    let dominated = (0..table.len()).all(|i| table.j_equilibrium[i] <= table.j_naive[i] + 1e-9);
    Ok(vec![format!(
        "{} gamma values; equilibrium cost <= naive cost on every row: {dominated}",
        table.len()
    )])
}

pub fn simulate(cfg: &RunConfig, strategy: Strategy) -> Result<Vec<String>> {
    let set = strategies(cfg)?;
    let gain = strategy.pick(&set);
    let sim = sim_config(cfg).with_stored_paths(STORED_PATHS.min(cfg.numerics.n_paths));
    let batch = simulate_paths(gain, &cfg.model, &sim).context("simulation")?;
    let est = estimate_cost(&batch, &cfg.model).context("cost estimate")?;
    let exact = exact_cost(gain, &cfg.model).context("exact cost")?.total;
    let z = if est.stderr > 0.0 { (est.mean - exact) / est.stderr } else { 0.0 };

    let name = strategy.name();
    let times = batch.times();
    let mut out = OutputDir::create(cfg)?;
    out.table(
        &format!("simulate_{name}"),
        &Table::from_columns(&["t", "mean_state", "mean_abs_control"], &[&times, &batch.mean_state, &batch.mean_abs_control]),
    )?;

    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((0..batch.stored.states.len()).map(|p| format!("path_{p}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut data: Vec<&[f64]> = vec![&times];
    data.extend(batch.stored.states.iter().map(Vec::as_slice));
    out.table(&format!("simulate_{name}_paths"), &Table::from_columns(&col_refs, &data))?;

    let mut summary = Table::new(&[
        "strategy", "n_paths", "n_steps", "seed", "antithetic", "mc_mean", "mc_stderr", "exact", "z", "n_flagged",
    ]);
    summary.push(vec![
        name.into(),
        sim.n_paths.into(),
        sim.n_steps.into(),
        Cell::Int(sim.seed),
        sim.antithetic.into(),
        est.mean.into(),
        est.stderr.into(),
        exact.into(),
        z.into(),
        batch.n_flagged().into(),
    ]);
    out.table(&format!("simulate_{name}_summary"), &summary)?;
    Ok(vec![format!(
        "{name}: Monte Carlo {:?} +/- {:?}, exact {:?} (z = {:.3})",
        est.mean, est.stderr, exact, z
    )])
}

pub fn compare(cfg: &RunConfig) -> Result<Vec<String>> {
    let set = strategies(cfg)?;
    let laws = [set.equilibrium.clone(), set.naive.clone(), set.precommitted.clone()];
    let cmp = compare_strategies(&cfg.model, &sim_config(cfg), &laws).context("comparison")?;
    let names = ["equilibrium", "naive", "precommitted"];

    let mut cols = vec!["t".to_string()];
    cols.extend(names.iter().map(|n| format!("mean_state_{n}")));
    cols.extend(names.iter().map(|n| format!("mean_abs_control_{n}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut data: Vec<&[f64]> = vec![&cmp.times];
    data.extend((0..3).map(|s| cmp.mean_state(s)));
    data.extend((0..3).map(|s| cmp.mean_abs_control(s)));
    let mut out = OutputDir::create(cfg)?;
    out.table("compare", &Table::from_columns(&col_refs, &data))?;

    let panel = |label: &str, pick: &dyn Fn(usize) -> Vec<f64>| Panel {
        y_label: label.into(),
        series: (0..3).map(|s| Series::new(names[s], pick(s))).collect(),
    };
    let plot = LinePlot {
        title: "Mean state and mean absolute control".into(),
        x_label: "t".into(),
        x: cmp.times.clone(),
        panels: vec![
            panel("E[X_t]", &|s| cmp.mean_state(s).to_vec()),
            panel("E|alpha_t|", &|s| cmp.mean_abs_control(s).to_vec()),
        ],
    };
    out.svg("compare", &render_svg(&plot)?)?;
    Ok(vec![format!(
        "initial mean |control|: equilibrium {:?}, naive {:?}, precommitted {:?}",
        cmp.mean_abs_control(0)[0],
        cmp.mean_abs_control(1)[0],
        cmp.mean_abs_control(2)[0]
    )])
}

fn pde_grid(cfg: &RunConfig) -> GridSpec2 {
    let p = &cfg.pde;
    GridSpec2 {
        n_t: p.n_t,
        x_lo: p.x_lo,
        x_hi: p.x_hi,
        n_x: p.n_x,
        y_lo: p.x_lo,
        y_hi: p.x_hi,
        n_y: p.n_y,
        horizon: cfg.model.horizon,
    }
}

pub fn pde(cfg: &RunConfig, mode: PdeMode) -> Result<Vec<String>> {
    let model = lqr_model(&cfg.model).context("model")?;
    let grid = pde_grid(cfg);
    let (sol, name): (GridSolution, &str) = match mode {
        PdeMode::Sweep => (solve_extended_hjb_sweep(&model, &grid).context("grid sweep")?, "sweep"),
        PdeMode::Picard => (
            solve_extended_hjb_picard(&model, &grid, cfg.pde.tol, cfg.pde.max_iter).context("grid picard")?,
            "picard",
        ),
    };
    let extracted = extract_gain(&sol, &cfg.model).context("gain extraction")?;
    let residual = diagonal_residual(&sol).context("diagonal residual")?;
    let tg = TimeGrid::new(sol.grid.n_t, cfg.model.horizon).context("time grid")?;
    let k_eq = equilibrium_gain(&solve_equilibrium_riccati(&cfg.model, &tg).context("riccati")?, &cfg.model);
    let err: Vec<f64> = extracted.gain.k_state.iter().zip(&k_eq.k_state).map(|(a, b)| (a - b).abs()).collect();
    let sup_err = err.iter().copied().fold(0.0, f64::max);

    let mut out = OutputDir::create(cfg)?;
    let times = sol.times();
    out.table(
        &format!("pde_{name}_gain"),
        &Table::from_columns(
            &["t", "k_grid", "k_equilibrium", "abs_error"],
            &[&times, &extracted.gain.k_state, &k_eq.k_state, &err],
        ),
    )?;
    let xs = sol.grid.xs();
    let last = sol.grid.n_t;
    out.table(
        &format!("pde_{name}_slices"),
        &Table::from_columns(
            &["x", "v_initial", "j_diag_initial", "alpha_initial", "v_terminal"],
            &[&xs, &sol.v[0], &sol.j_diag[0], &sol.alpha[0], &sol.v[last]],
        ),
    )?;
    let r = &sol.report;
    let mut summary = Table::new(&["quantity", "value"]);
    for (k, v) in [
        ("n_t", Cell::from(r.n_t)),
        ("dt", r.dt.into()),
        ("dx", r.dx.into()),
        ("cfl_ratio", r.cfl_ratio.into()),
        ("iterations", r.iterations.into()),
        ("gain_sup_error", sup_err.into()),
        ("diagonal_residual", residual.into()),
        ("fit_residual", extracted.residual.into()),
    ] {
        summary.push(vec![k.into(), v]);
    }
    out.table(&format!("pde_{name}_summary"), &summary)?;
    if mode == PdeMode::Picard {
        let iters: Vec<f64> = (1..=r.trace.len()).map(|i| i as f64).collect();
        out.table("pde_picard_trace", &Table::from_columns(&["iteration", "distance"], &[&iters, &r.trace]))?;
    }
    Ok(vec![format!(
        "{name}: n_t = {}, {} iteration(s), sup |K_grid - K_eq| = {sup_err:.3e}, diagonal residual = {residual:.3e}",
        r.n_t, r.iterations
    )])
}

pub fn validation_config(cfg: &RunConfig) -> Result<ValidationConfig> {
    if cfg.pde.n_x != cfg.pde.n_y {
        return Err(CliError::config(format!(
            "validate needs n_x = n_y, got {} and {}",
            cfg.pde.n_x, cfg.pde.n_y
        )));
    }
    let n = &cfg.numerics;
    Ok(ValidationConfig {
        params: cfg.model,
        ode_steps: n.ode_steps,
        sim_steps: n.sim_steps,
        n_paths: n.n_paths,
        seed: n.seed,
        pde_n: cfg.pde.n_x,
        pde_lo: cfg.pde.x_lo,
        pde_hi: cfg.pde.x_hi,
        picard_tol: cfg.pde.tol,
        picard_max_iter: cfg.pde.max_iter,
        gamma_min: cfg.sweep.gamma_min,
        gamma_max: cfg.sweep.gamma_max,
        gamma_count: cfg.sweep.gamma_steps,
    })
}

pub fn validation_table(outcomes: &[CriterionOutcome]) -> Table {
    let mut table = Table::new(&["criterion", "name", "passed", "metric", "value"]);
    for o in outcomes {
        if o.metrics.is_empty() {
            table.push(vec![Cell::Int(o.id.into()), o.name.as_str().into(), o.passed.into(), "".into(), f64::NAN.into()]);
        }
        for (metric, value) in &o.metrics {
            table.push(vec![
                Cell::Int(o.id.into()),
                o.name.as_str().into(),
                o.passed.into(),
                metric.as_str().into(),
                (*value).into(),
            ]);
        }
    }
    table
}

/// Runs the acceptance suite; the lines are returned even when criteria fail.
pub fn validate(cfg: &RunConfig) -> Result<(Vec<String>, Option<CliError>)> {
    let vcfg = validation_config(cfg)?;
    let outcomes = run_all(&vcfg);
    OutputDir::create(cfg)?.table("validation", &validation_table(&outcomes))?;
    let lines = outcomes.iter().map(CriterionOutcome::summary_line).collect();
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let verdict = (failed > 0).then_some(CliError::Acceptance {
        failed,
        total: outcomes.len(),
    });
    Ok((lines, verdict))
}
