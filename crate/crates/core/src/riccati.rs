//! Backward Riccati systems for the regulator and the feedback laws built
//! from them.
//!
//! The equilibrium agent's auxiliary value is the quadratic
//! `𝒥(t, x, y) = A(t)x² + B y² + C(t)xy + H(t)` with `B = Γ/2` and no linear
//! terms. Its coefficients solve
//!
//! ```text
//! A' = −2āA + 2b̄²A(2A + C) − ½b̄²(2A + C)²,   A(T) = Γ/2
//! C' = −āC + b̄²C(2A + C),                     C(T) = −Γ
//! H' = −σ²A,                                   H(T) = 0
//! ```
//!
//! and the equilibrium law is `α(t, x) = −b̄(2A + C)x`. The naive agent
//! re-solves a fixed-target problem at every instant,
//!
//! ```text
//! P' = −2āP + 2b̄²P²,           P(T) = Γ/2
//! Q' = −(ā − 2b̄²P)Q,           Q(T) = −Γ
//! ```
//!
//! giving `α(t, x) = −b̄(2P + Q)x` on the diagonal, while the precommitted
//! agent keeps the time-0 target: `α(t, x) = −b̄(2P x + Q x₀)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LqrParams;

/// Uniform grid `t_i = i·T/n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be finite and > 0, got {horizon}")));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i`; the last node is exactly `T`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }
}

/// One classical Runge–Kutta step of size `h` (negative for backward steps).
pub(crate) fn rk4_step<const N: usize, F>(field: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let axpy = |base: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *base;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = field(t, y);
    let k2 = field(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = field(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = field(t + h, &axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates `dY/dt = field(t, Y)` from `Y(T) = terminal` back to `t = 0`
/// with fixed-step RK4. Entry `i` approximates `Y(t_i)`; the last entry is
/// `terminal` unchanged.
pub fn rk4_backward<const N: usize, F>(field: F, terminal: [f64; N], grid: &TimeGrid) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let n = grid.n_steps();
    let mut out = vec![[0.0; N]; n + 1];
    out[n] = terminal;
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            context: "backward RK4 terminal data".into(),
            index: n,
            time: grid.node(n),
        });
    }
    for i in (0..n).rev() {
        let t = grid.node(i + 1);
        let h = grid.node(i) - t;
        let y = rk4_step(&field, t, &out[i + 1], h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                context: "backward RK4".into(),
                index: i,
                time: grid.node(i),
            });
        }
        out[i] = y;
    }
    Ok(out)
}

fn rename_blowup(err: Error, context: &str) -> Error {
    match err {
        Error::BlowUp { index, time, .. } => Error::BlowUp {
            context: context.to_string(),
            index,
            time,
        },
        other => other,
    }
}

/// Coefficient schedules of the equilibrium ansatz on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// Coefficient of `x²`.
    pub a: Vec<f64>,
    /// Coefficient of `xy`.
    pub c: Vec<f64>,
    /// Constant term.
    pub h: Vec<f64>,
    /// Coefficient of `y²`; constant `Γ/2`.
    pub b_const: f64,
    /// Linear coefficients; identically zero for this problem.
    pub d_const: f64,
    pub f_const: f64,
}

/// Terminal values `(A(T), C(T), H(T))` of the equilibrium system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumTerminal {
    pub a: f64,
    pub c: f64,
    pub h: f64,
}

impl EquilibriumTerminal {
    /// `A(T) = Γ/2`, `C(T) = −Γ`, `H(T) = 0`.
    pub fn from_params(params: &LqrParams) -> Self {
        Self {
            a: params.gamma / 2.0,
            c: -params.gamma,
            h: 0.0,
        }
    }
}

pub fn solve_equilibrium_riccati(params: &LqrParams, grid: &TimeGrid) -> Result<RiccatiSolution> {
    solve_equilibrium_riccati_with_terminal(params, grid, EquilibriumTerminal::from_params(params))
}

/// Same ODEs as [`solve_equilibrium_riccati`] with caller-chosen terminal data.
/// `C(T) = 0` describes the time-consistent target `Γ/2·x²`.
pub fn solve_equilibrium_riccati_with_terminal(
    params: &LqrParams,
    grid: &TimeGrid,
    terminal: EquilibriumTerminal,
) -> Result<RiccatiSolution> {
    params.validate()?;
    let (a_bar, b2, s2) = (params.a_bar, params.b_bar * params.b_bar, params.sigma * params.sigma);
    let field = move |_t: f64, y: &[f64; 3]| {
        let (a, c) = (y[0], y[1]);
        let k = 2.0 * a + c;
        [
            -2.0 * a_bar * a + 2.0 * b2 * a * k - 0.5 * b2 * k * k,
            -a_bar * c + b2 * c * k,
            -s2 * a,
        ]
    };
    let path = rk4_backward(field, [terminal.a, terminal.c, terminal.h], grid)
        .map_err(|e| rename_blowup(e, "equilibrium Riccati system"))?;
    Ok(RiccatiSolution {
        grid: *grid,
        a: path.iter().map(|y| y[0]).collect(),
        c: path.iter().map(|y| y[1]).collect(),
        h: path.iter().map(|y| y[2]).collect(),
        b_const: params.gamma / 2.0,
        d_const: 0.0,
        f_const: 0.0,
    })
}

/// Coefficient schedules of the naive agent's fixed-target value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveSolution {
    pub grid: TimeGrid,
    /// Coefficient of `x²`.
    pub p: Vec<f64>,
    /// Coefficient of `xy`.
    pub q: Vec<f64>,
}

/// How `Q` is obtained once `P` is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QMethod {
    /// Integrate the linear `Q` ODE jointly with `P`.
    #[default]
    Ode,
    /// `Q(t) = −Γ exp(∫ₜᵀ (ā − 2b̄²P(u)) du)` by composite Simpson, with `P`
    /// sampled on a grid of half the step.
    Quadrature,
}

/// Terminal values `(P(T), Q(T))` of the naive system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveTerminal {
    pub p: f64,
    pub q: f64,
}

impl NaiveTerminal {
    pub fn from_params(params: &LqrParams) -> Self {
        Self {
            p: params.gamma / 2.0,
            q: -params.gamma,
        }
    }
}

pub fn solve_naive(params: &LqrParams, grid: &TimeGrid) -> Result<NaiveSolution> {
    solve_naive_with(params, grid, QMethod::Ode, NaiveTerminal::from_params(params))
}

pub fn solve_naive_with(
    params: &LqrParams,
    grid: &TimeGrid,
    method: QMethod,
    terminal: NaiveTerminal,
) -> Result<NaiveSolution> {
    params.validate()?;
    let (a_bar, b2) = (params.a_bar, params.b_bar * params.b_bar);
    let rename = |e| rename_blowup(e, "naive Riccati system");
    match method {
        QMethod::Ode => {
            let field = move |_t: f64, y: &[f64; 2]| {
                let (p, q) = (y[0], y[1]);
                [-2.0 * a_bar * p + 2.0 * b2 * p * p, -(a_bar - 2.0 * b2 * p) * q]
            };
            let path = rk4_backward(field, [terminal.p, terminal.q], grid).map_err(rename)?;
            Ok(NaiveSolution {
                grid: *grid,
                p: path.iter().map(|y| y[0]).collect(),
                q: path.iter().map(|y| y[1]).collect(),
            })
        }
        QMethod::Quadrature => {
            let p_field = move |_t: f64, y: &[f64; 1]| [-2.0 * a_bar * y[0] + 2.0 * b2 * y[0] * y[0]];
            let p = rk4_backward(p_field, [terminal.p], grid).map_err(rename)?;
            let fine = TimeGrid::new(2 * grid.n_steps(), grid.horizon())?;
            let p_fine = rk4_backward(p_field, [terminal.p], &fine).map_err(rename)?;
            let rate = |pv: f64| a_bar - 2.0 * b2 * pv;
            let n = grid.n_steps();
            let mut q = vec![0.0; n + 1];
            q[n] = terminal.q;
            let mut integral = 0.0;
            for j in (0..n).rev() {
                let h = grid.node(j + 1) - grid.node(j);
                integral += h / 6.0
                    * (rate(p_fine[2 * j][0]) + 4.0 * rate(p_fine[2 * j + 1][0]) + rate(p_fine[2 * j + 2][0]));
                q[j] = terminal.q * integral.exp();
                if !q[j].is_finite() {
                    return Err(Error::BlowUp {
                        context: "naive Q quadrature".into(),
                        index: j,
                        time: grid.node(j),
                    });
                }
            }
            Ok(NaiveSolution {
                grid: *grid,
                p: p.iter().map(|y| y[0]).collect(),
                q,
            })
        }
    }
}

/// Exact solution of the `P` equation,
/// `ā / (b̄² + (2ā/Γ − b̄²) e^{2ā(t−T)})`, or `1 / (2/Γ + 2b̄²(T − t))` when `ā = 0`.
pub fn closed_form_p(params: &LqrParams, t: f64) -> Result<f64> {
    params.validate()?;
    let LqrParams {
        a_bar,
        b_bar,
        gamma,
        horizon,
        ..
    } = *params;
    if gamma == 0.0 {
        return Err(Error::Domain("closed form requires gamma > 0 (P is identically 0)".into()));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    if t == horizon {
        return Ok(gamma / 2.0);
    }
    let b2 = b_bar * b_bar;
    let (num, den) = if a_bar == 0.0 {
        (1.0, 2.0 / gamma + 2.0 * b2 * (horizon - t))
    } else {
        (a_bar, b2 + (2.0 * a_bar / gamma - b2) * (2.0 * a_bar * (t - horizon)).exp())
    };
    let p = num / den;
    // P must stay positive; a sign change means the denominator crossed zero
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::BlowUp {
            context: "closed-form P".into(),
            index: 0,
            time: t,
        });
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GainLabel {
    Equilibrium,
    Naive,
    Precommitted,
    Custom,
}

impl GainLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GainLabel::Equilibrium => "equilibrium",
            GainLabel::Naive => "naive",
            GainLabel::Precommitted => "precommitted",
            GainLabel::Custom => "custom",
        }
    }
}

impl std::fmt::Display for GainLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Affine feedback law `α(t_i, x) = −k_state[i]·x − c_offset[i]` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub grid: TimeGrid,
    pub k_state: Vec<f64>,
    pub c_offset: Vec<f64>,
    pub label: GainLabel,
}

impl GainSchedule {
    pub fn new(grid: TimeGrid, k_state: Vec<f64>, c_offset: Vec<f64>, label: GainLabel) -> Result<Self> {
        if k_state.len() != grid.len() || c_offset.len() != grid.len() {
            return Err(Error::Shape(format!(
                "gain sequences have lengths {} and {}, grid has {} nodes",
                k_state.len(),
                c_offset.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            k_state,
            c_offset,
            label,
        })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            k_state: vec![0.0; grid.len()],
            c_offset: vec![0.0; grid.len()],
            label: GainLabel::Custom,
        }
    }

    pub fn with_label(mut self, label: GainLabel) -> Self {
        self.label = label;
        self
    }

    /// Control applied at node `i` in state `x`.
    #[inline]
    pub fn control(&self, i: usize, x: f64) -> f64 {
        -self.k_state[i] * x - self.c_offset[i]
    }
}

/// `k = b̄(2A + C)`, no offset.
pub fn equilibrium_gain(sol: &RiccatiSolution, params: &LqrParams) -> GainSchedule {
    let b = params.b_bar;
    GainSchedule {
        grid: sol.grid,
        k_state: sol.a.iter().zip(&sol.c).map(|(a, c)| b * (2.0 * a + c)).collect(),
        c_offset: vec![0.0; sol.grid.len()],
        label: GainLabel::Equilibrium,
    }
}

/// `k = b̄(2P + Q)`, no offset.
pub fn naive_gain(sol: &NaiveSolution, params: &LqrParams) -> GainSchedule {
    let b = params.b_bar;
    GainSchedule {
        grid: sol.grid,
        k_state: sol.p.iter().zip(&sol.q).map(|(p, q)| b * (2.0 * p + q)).collect(),
        c_offset: vec![0.0; sol.grid.len()],
        label: GainLabel::Naive,
    }
}

/// `k = 2b̄P`, `c = b̄Q·x₀`: the time-0 optimal law that keeps the initial target.
pub fn precommitted_policy(sol: &NaiveSolution, params: &LqrParams) -> GainSchedule {
    let b = params.b_bar;
    GainSchedule {
        grid: sol.grid,
        k_state: sol.p.iter().map(|p| 2.0 * b * p).collect(),
        c_offset: sol.q.iter().map(|q| b * q * params.x0).collect(),
        label: GainLabel::Precommitted,
    }
}

/// `V(t_i, x) = (A + Γ/2 + C)x² + H`.
pub fn equilibrium_value(sol: &RiccatiSolution, params: &LqrParams, t_index: usize, x: f64) -> Result<f64> {
    if t_index >= sol.grid.len() {
        return Err(Error::Config(format!(
            "node index {t_index} out of range (grid has {} nodes)",
            sol.grid.len()
        )));
    }
    let i = t_index;
    Ok((sol.a[i] + params.gamma / 2.0 + sol.c[i]) * x * x + sol.h[i])
}
