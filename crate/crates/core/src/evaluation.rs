//! Exact expected cost of affine feedback laws through the first two moments
//! of the controlled state.
//!
//! Under `α = −kX − c` the mean `m = E[X]` and second moment `S = E[X²]` obey
//!
//! ```text
//! m' = (ā − b̄k)m − b̄c,                 m(0) = x₀
//! S' = 2(ā − b̄k)S − 2b̄c·m + σ²,        S(0) = x₀²
//! ```
//!
//! and the time-0 cost is `∫ ½E[α²] dt + Γ/2 (S(T) − 2x₀m(T) + x₀²)` with
//! `E[α²] = k²S + 2kc·m + c²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LqrParams;
use crate::riccati::{
    equilibrium_gain, naive_gain, precommitted_policy, rk4_step, solve_equilibrium_riccati, solve_naive,
    GainLabel, GainSchedule, TimeGrid,
};

/// Mean and second moment of the state on the gain's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPath {
    pub grid: TimeGrid,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl MomentPath {
    pub fn variance(&self, i: usize) -> f64 {
        self.s[i] - self.m[i] * self.m[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub running: f64,
    pub terminal: f64,
    pub total: f64,
    pub gain_label: GainLabel,
}

fn check_compatible(gain: &GainSchedule, params: &LqrParams) -> Result<()> {
    params.validate()?;
    if gain.grid.horizon() != params.horizon {
        return Err(Error::Config(format!(
            "gain horizon {} differs from model horizon {}",
            gain.grid.horizon(),
            params.horizon
        )));
    }
    if gain.k_state.len() != gain.grid.len() || gain.c_offset.len() != gain.grid.len() {
        return Err(Error::Shape("gain sequences do not match their grid".into()));
    }
    Ok(())
}

/// Value at the midpoint of `[i, i + 1]` from the cubic through four
/// neighbouring nodes (one-sided at the ends), linear if there are fewer than
/// four nodes.
fn midpoint(v: &[f64], i: usize) -> f64 {
    let n = v.len() - 1;
    if n < 3 {
        0.5 * (v[i] + v[i + 1])
    } else if i == 0 {
        (5.0 * v[0] + 15.0 * v[1] - 5.0 * v[2] + v[3]) / 16.0
    } else if i == n - 1 {
        (v[n - 3] - 5.0 * v[n - 2] + 15.0 * v[n - 1] + 5.0 * v[n]) / 16.0
    } else {
        (-v[i - 1] + 9.0 * v[i] + 9.0 * v[i + 1] - v[i + 2]) / 16.0
    }
}

/// Forward RK4 on the moment equations. The half-step stages use cubic
/// midpoint interpolation of the gains, which keeps the scheme fourth order.
pub fn solve_moments(gain: &GainSchedule, params: &LqrParams) -> Result<MomentPath> {
    check_compatible(gain, params)?;
    let grid = gain.grid;
    let n = grid.n_steps();
    let (a_bar, b_bar, s2) = (params.a_bar, params.b_bar, params.sigma * params.sigma);
    let mut m = vec![0.0; n + 1];
    let mut s = vec![0.0; n + 1];
    m[0] = params.x0;
    s[0] = params.x0 * params.x0;
    for i in 0..n {
        let (t0, t1) = (grid.node(i), grid.node(i + 1));
        let h = t1 - t0;
        let ks = [gain.k_state[i], midpoint(&gain.k_state, i), gain.k_state[i + 1]];
        let cs = [gain.c_offset[i], midpoint(&gain.c_offset, i), gain.c_offset[i + 1]];
        let field = |t: f64, y: &[f64; 2]| {
            // RK4 only samples the step at its start, middle and end
            let stage = ((t - t0) / h * 2.0).round() as usize;
            let (k, c) = (ks[stage], cs[stage]);
            let drift = a_bar - b_bar * k;
            [drift * y[0] - b_bar * c, 2.0 * drift * y[1] - 2.0 * b_bar * c * y[0] + s2]
        };
        let next = rk4_step(&field, t0, &[m[i], s[i]], h);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                context: "moment equations".into(),
                index: i + 1,
                time: t1,
            });
        }
        m[i + 1] = next[0];
        s[i + 1] = next[1];
    }
    Ok(MomentPath { grid, m, s })
}

/// Composite Simpson rule on equispaced samples; `values.len() − 1` must be even.
pub(crate) fn simpson(values: &[f64], h: f64) -> Result<f64> {
    let n = values.len().saturating_sub(1);
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "Simpson quadrature needs an even number of steps, got {n}"
        )));
    }
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(acc * h / 3.0)
}

/// Time-0 expected cost of `gain` from the moment equations.
pub fn exact_cost(gain: &GainSchedule, params: &LqrParams) -> Result<CostReport> {
    check_compatible(gain, params)?;
    if gain.grid.n_steps() % 2 != 0 {
        return Err(Error::Config(format!(
            "exact cost needs an even number of ODE steps, got {}",
            gain.grid.n_steps()
        )));
    }
    let moments = solve_moments(gain, params)?;
    let integrand: Vec<f64> = (0..gain.grid.len())
        .map(|i| {
            let (k, c) = (gain.k_state[i], gain.c_offset[i]);
            let (m, s) = (moments.m[i], moments.s[i]);
            0.5 * (k * k * s + 2.0 * k * c * m + c * c)
        })
        .collect();
    let running = simpson(&integrand, gain.grid.dt())?;
    let n = gain.grid.n_steps();
    let x0 = params.x0;
    let terminal = 0.5 * params.gamma * (moments.s[n] - 2.0 * x0 * moments.m[n] + x0 * x0);
    Ok(CostReport {
        running,
        terminal,
        total: running + terminal,
        gain_label: gain.label,
    })
}

/// The three feedback laws for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySet {
    pub equilibrium: GainSchedule,
    pub naive: GainSchedule,
    pub precommitted: GainSchedule,
}

impl StrategySet {
    pub fn build(params: &LqrParams, grid: &TimeGrid) -> Result<Self> {
        let eq = solve_equilibrium_riccati(params, grid)?;
        let nv = solve_naive(params, grid)?;
        Ok(Self {
            equilibrium: equilibrium_gain(&eq, params),
            naive: naive_gain(&nv, params),
            precommitted: precommitted_policy(&nv, params),
        })
    }

    pub fn get(&self, label: GainLabel) -> Option<&GainSchedule> {
        match label {
            GainLabel::Equilibrium => Some(&self.equilibrium),
            GainLabel::Naive => Some(&self.naive),
            GainLabel::Precommitted => Some(&self.precommitted),
            GainLabel::Custom => None,
        }
    }

    pub fn all(&self) -> [&GainSchedule; 3] {
        [&self.equilibrium, &self.naive, &self.precommitted]
    }
}

/// Exact costs of the three strategies for each terminal weight `Γ`.
///
/// A failed row keeps NaN costs and its error message; it does not abort
/// the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub gammas: Vec<f64>,
    pub j_equilibrium: Vec<f64>,
    pub j_naive: Vec<f64>,
    pub j_precommitted: Vec<f64>,
    pub errors: Vec<Option<String>>,
}

impl SweepTable {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn all_ok(&self) -> bool {
        self.errors.iter().all(Option::is_none)
    }
}

fn sweep_row(params: &LqrParams, grid: &TimeGrid) -> Result<[f64; 3]> {
    let set = StrategySet::build(params, grid)?;
    Ok([
        exact_cost(&set.equilibrium, params)?.total,
        exact_cost(&set.naive, params)?.total,
        exact_cost(&set.precommitted, params)?.total,
    ])
}

pub fn gamma_sweep(params_base: &LqrParams, gammas: &[f64], grid: &TimeGrid) -> Result<SweepTable> {
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Domain(format!("sweep gammas must be finite and >= 0, got {g}")));
    }
    if grid.horizon() != params_base.horizon {
        return Err(Error::Config("sweep grid horizon differs from model horizon".into()));
    }
    let rows: Vec<Result<[f64; 3]>> = gammas
        .par_iter()
        .map(|&g| sweep_row(&params_base.with_gamma(g), grid))
        .collect();
    let mut table = SweepTable {
        gammas: gammas.to_vec(),
        j_equilibrium: Vec::with_capacity(rows.len()),
        j_naive: Vec::with_capacity(rows.len()),
        j_precommitted: Vec::with_capacity(rows.len()),
        errors: Vec::with_capacity(rows.len()),
    };
    for row in rows {
        let (vals, err) = match row {
            Ok(v) => (v, None),
            Err(e) => ([f64::NAN; 3], Some(e.to_string())),
        };
        table.j_equilibrium.push(vals[0]);
        table.j_naive.push(vals[1]);
        table.j_precommitted.push(vals[2]);
        table.errors.push(err);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::equilibrium_value;

    fn reference() -> LqrParams {
        LqrParams::reference()
    }

    #[test]
    fn simpson_rejects_odd_and_integrates_cubics() {
        assert!(simpson(&[1.0, 2.0], 1.0).is_err());
        let h = 0.25;
        let v: Vec<f64> = (0..=4).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&v, h).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uncontrolled_moments_match_closed_form() {
        let p = reference();
        let g = TimeGrid::new(1000, 1.0).unwrap();
        let mp = solve_moments(&GainSchedule::zero(g), &p).unwrap();
        let e = std::f64::consts::E;
        assert!((mp.m[1000] - 0.5f64.exp()).abs() < 1e-12);
        assert!((mp.s[1000] - (e + 0.25 * (e - 1.0))).abs() < 1e-12);
        assert_eq!(mp.m[0], 1.0);
        assert_eq!(mp.s[0], 1.0);
    }

    #[test]
    fn deterministic_and_centered_cases() {
        let g = TimeGrid::new(1000, 1.0).unwrap();
        let mut p = reference();
        p.sigma = 1e-300; // validate() needs σ > 0; σ² underflows to 0
        let mp = solve_moments(&GainSchedule::zero(g), &p).unwrap();
        for i in 0..=1000 {
            assert!((mp.s[i] - mp.m[i] * mp.m[i]).abs() < 1e-10);
        }
        let mut p = reference();
        p.x0 = 0.0;
        let set = StrategySet::build(&p, &g).unwrap();
        let mp = solve_moments(&set.equilibrium, &p).unwrap();
        assert!(mp.m.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn zero_control_cost() {
        let p = reference();
        let g = TimeGrid::new(1000, 1.0).unwrap();
        let r = exact_cost(&GainSchedule::zero(g), &p).unwrap();
        let e = std::f64::consts::E;
        let s = e + 0.25 * (e - 1.0);
        let expected = 2.5 * (s - 2.0 * 0.5f64.exp() + 1.0);
        assert!((r.total - expected).abs() < 1e-10);
        assert_eq!(r.running, 0.0);
        let r0 = exact_cost(&GainSchedule::zero(g), &p.with_gamma(0.0)).unwrap();
        assert_eq!(r0.total, 0.0);
    }

    #[test]
    fn odd_steps_and_horizon_mismatch_rejected() {
        let p = reference();
        let g = TimeGrid::new(999, 1.0).unwrap();
        assert!(matches!(exact_cost(&GainSchedule::zero(g), &p), Err(Error::Config(_))));
        let g = TimeGrid::new(1000, 2.0).unwrap();
        assert!(matches!(solve_moments(&GainSchedule::zero(g), &p), Err(Error::Config(_))));
    }

    #[test]
    fn equilibrium_cost_matches_value_function() {
        let p = reference();
        let g = TimeGrid::new(1000, 1.0).unwrap();
        let eq = solve_equilibrium_riccati(&p, &g).unwrap();
        let cost = exact_cost(&equilibrium_gain(&eq, &p), &p).unwrap();
        let v = equilibrium_value(&eq, &p, 0, p.x0).unwrap();
        assert!((cost.total - v).abs() < 1e-6, "{} vs {}", cost.total, v);
        assert!(cost.running >= 0.0 && cost.terminal >= 0.0);
        assert_eq!(cost.total, cost.running + cost.terminal);
    }

    #[test]
    fn sweep_orders_strategies() {
        let p = reference();
        let g = TimeGrid::new(400, 1.0).unwrap();
        let gammas: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
        let t = gamma_sweep(&p, &gammas, &g).unwrap();
        assert!(t.all_ok());
        for i in 0..t.len() {
            assert!(t.j_equilibrium[i] <= t.j_naive[i] + 1e-9);
            assert!(t.j_precommitted[i] <= t.j_equilibrium[i] + 1e-9);
        }
        let z = gamma_sweep(&p, &[0.0], &g).unwrap();
        assert_eq!((z.j_equilibrium[0], z.j_naive[0], z.j_precommitted[0]), (0.0, 0.0, 0.0));
        assert!(gamma_sweep(&p, &[-1.0], &g).is_err());
    }

    #[test]
    fn sweep_records_failures_per_row() {
        let p = reference();
        let g = TimeGrid::new(7, 1.0).unwrap(); // odd: Simpson fails on every row
        let t = gamma_sweep(&p, &[1.0, 2.0], &g).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.errors.iter().all(Option::is_some));
        assert!(t.j_naive.iter().all(|v| v.is_nan()));
    }
}
