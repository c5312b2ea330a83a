//! Controlled diffusion, cost structure and the extended Hamiltonian.
//!
//! A [`ModelSpec`] describes a one-dimensional controlled diffusion
//! `dX = μ(t, X, a) dt + σ(t, X) dW` together with a preference-dependent
//! criterion `∫ f(s, y, X_s, a_s) ds + ξ(y, X_T)`, where `y` is the preference
//! parameter that the agent resets to the current state. The drift is stored
//! as the product `μ = σ·b`, so the co-state and the parameter gradient enter
//! the Hamiltonian only through the effective gradient `g = z/σ − γ`
//! (equivalently `∂ₓV − ∂ᵧ𝒥` on the grid).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the scalar linear-quadratic regulator with a
/// state-dependent terminal target.
///
/// Dynamics `dX = (ā X + b̄ α) dt + σ dW`, criterion
/// `E[∫ ½α² ds + Γ/2 (X_T − x)²]` where `x` is the state at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrParams {
    pub a_bar: f64,
    pub b_bar: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub x0: f64,
}

impl LqrParams {
    pub fn new(a_bar: f64, b_bar: f64, sigma: f64, gamma: f64, horizon: f64, x0: f64) -> Result<Self> {
        let p = Self {
            a_bar,
            b_bar,
            sigma,
            gamma,
            horizon,
            x0,
        };
        p.validate()?;
        Ok(p)
    }

    /// T = 1, ā = 0.5, b̄ = 1, σ = 0.5, x₀ = 1, Γ = 5.
    pub fn reference() -> Self {
        Self {
            a_bar: 0.5,
            b_bar: 1.0,
            sigma: 0.5,
            gamma: 5.0,
            horizon: 1.0,
            x0: 1.0,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a_bar", self.a_bar),
            ("b_bar", self.b_bar),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("horizon", self.horizon),
            ("x0", self.x0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {v}")));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Domain(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Whether the agent maximizes a reward or minimizes a cost. The Hamiltonian
/// takes `sup` for [`Sense::Maximize`] and `inf` for [`Sense::Minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// True when `candidate` strictly improves on `incumbent`.
    fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Sense::Maximize => candidate > incumbent,
            Sense::Minimize => candidate < incumbent,
        }
    }
}

pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ControlledFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, y, x, a)`: time, preference parameter, state, action.
pub type RunningFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `(y, x)`: preference parameter, terminal state.
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// How the pointwise optimization over actions is carried out.
#[derive(Clone)]
pub enum Maximizer {
    /// `(t, x, g) -> a*` for the effective gradient `g`.
    ClosedForm(ControlledFn),
    /// Exhaustive search over `count` equispaced actions in `[lower, upper]`;
    /// ties go to the lowest index.
    Grid { lower: f64, upper: f64, count: usize },
}

impl fmt::Debug for Maximizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Maximizer::ClosedForm(_) => f.write_str("ClosedForm(..)"),
            Maximizer::Grid { lower, upper, count } => f
                .debug_struct("Grid")
                .field("lower", lower)
                .field("upper", upper)
                .field("count", count)
                .finish(),
        }
    }
}

/// Evaluators describing a one-dimensional state-dependent control problem.
///
/// All closures must be pure; the struct is cheap to clone and safe to share
/// between threads.
#[derive(Clone)]
pub struct ModelSpec {
    /// `μ(t, x, a)`, the full drift.
    pub drift: ControlledFn,
    /// `σ(t, x)`, strictly positive.
    pub vol: StateFn,
    pub running_cost: RunningFn,
    pub terminal_cost: TerminalFn,
    pub dy_running: RunningFn,
    pub dyy_running: RunningFn,
    pub dy_terminal: TerminalFn,
    pub dyy_terminal: TerminalFn,
    pub maximizer: Maximizer,
    pub sense: Sense,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("maximizer", &self.maximizer)
            .field("sense", &self.sense)
            .finish_non_exhaustive()
    }
}

/// Arguments of the extended Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianInputs {
    pub t: f64,
    pub x: f64,
    /// Co-state `z = σ ∂ₓV`.
    pub z: f64,
    /// Parameter gradient `γ = ∂ᵧ𝒥` on the diagonal.
    pub grad_param: f64,
    /// Parameter Hessian `η = ∂²ᵧᵧ𝒥` on the diagonal.
    pub hess_param: f64,
    /// Mixed term `ρ = σ ∂²ₓᵧ𝒥` on the diagonal.
    pub mixed: f64,
}

impl HamiltonianInputs {
    fn check_finite(&self) -> Result<()> {
        let all = [self.t, self.x, self.z, self.grad_param, self.hess_param, self.mixed];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite Hamiltonian input {self:?}")))
        }
    }
}

/// Optimal value and an action attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    pub argopt: f64,
}

impl ModelSpec {
    /// Optimizes `a ↦ f(t, x, x, a) + μ(t, x, a)·g` in the model's sense.
    pub fn optimize_action(&self, t: f64, x: f64, g: f64) -> Result<HamiltonianValue> {
        let objective = |a: f64| (self.running_cost)(t, x, x, a) + (self.drift)(t, x, a) * g;
        match &self.maximizer {
            Maximizer::ClosedForm(argopt) => {
                let a = argopt(t, x, g);
                Ok(HamiltonianValue {
                    value: objective(a),
                    argopt: a,
                })
            }
            Maximizer::Grid { lower, upper, count } => {
                if *count == 0 {
                    return Err(Error::Config("action grid has zero points".into()));
                }
                let pitch = if *count > 1 {
                    (upper - lower) / (*count - 1) as f64
                } else {
                    0.0
                };
                let mut best = HamiltonianValue {
                    value: objective(*lower),
                    argopt: *lower,
                };
                for j in 1..*count {
                    let a = lower + j as f64 * pitch;
                    let v = objective(a);
                    if self.sense.improves(v, best.value) {
                        best = HamiltonianValue { value: v, argopt: a };
                    }
                }
                Ok(best)
            }
        }
    }

    /// Extended Hamiltonian
    /// `opt_a {f(t,x,x,a) + μ(t,x,a)(z/σ − γ)} − ½σ²η − σρ`.
    pub fn extended_hamiltonian(&self, inputs: &HamiltonianInputs) -> Result<HamiltonianValue> {
        inputs.check_finite()?;
        let sigma = (self.vol)(inputs.t, inputs.x);
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!(
                "volatility must be > 0, got {sigma} at (t, x) = ({}, {})",
                inputs.t, inputs.x
            )));
        }
        let g = inputs.z / sigma - inputs.grad_param;
        let opt = self.optimize_action(inputs.t, inputs.x, g)?;
        Ok(HamiltonianValue {
            value: opt.value - 0.5 * sigma * sigma * inputs.hess_param - sigma * inputs.mixed,
            argopt: opt.argopt,
        })
    }
}

/// Free-function form of [`ModelSpec::extended_hamiltonian`].
pub fn extended_hamiltonian(model: &ModelSpec, inputs: &HamiltonianInputs) -> Result<HamiltonianValue> {
    model.extended_hamiltonian(inputs)
}

/// The regulator as a [`ModelSpec`]: `f = ½a²`, `ξ(y, x) = Γ/2 (x − y)²`,
/// `μ = āx + b̄a`, minimized, with the closed-form minimizer `a* = −b̄ g`.
pub fn lqr_model(params: &LqrParams) -> Result<ModelSpec> {
    params.validate()?;
    let LqrParams {
        a_bar,
        b_bar,
        sigma,
        gamma,
        ..
    } = *params;
    Ok(ModelSpec {
        drift: Arc::new(move |_t, x, a| a_bar * x + b_bar * a),
        vol: Arc::new(move |_t, _x| sigma),
        running_cost: Arc::new(|_t, _y, _x, a| 0.5 * a * a),
        terminal_cost: Arc::new(move |y, x| 0.5 * gamma * (x - y) * (x - y)),
        dy_running: Arc::new(|_t, _y, _x, _a| 0.0),
        dyy_running: Arc::new(|_t, _y, _x, _a| 0.0),
        dy_terminal: Arc::new(move |y, x| gamma * (y - x)),
        dyy_terminal: Arc::new(move |_y, _x| gamma),
        maximizer: Maximizer::ClosedForm(Arc::new(move |_t, _x, g| -b_bar * g)),
        sense: Sense::Minimize,
    })
}

/// Same dynamics as [`lqr_model`] but with the fixed target `ξ(y, x) = Γ/2 x²`;
/// nothing depends on `y`, so the problem is time-consistent.
pub fn time_consistent_lqr_model(params: &LqrParams) -> Result<ModelSpec> {
    let gamma = params.gamma;
    let mut model = lqr_model(params)?;
    model.terminal_cost = Arc::new(move |_y, x| 0.5 * gamma * x * x);
    model.dy_terminal = Arc::new(|_y, _x| 0.0);
    model.dyy_terminal = Arc::new(|_y, _x| 0.0);
    Ok(model)
}

/// Regulator dynamics with the bounded, non-quadratic target
/// `ξ(y, x) = Γ(1 − cos(x − y))`. Its value fields are not polynomial, so
/// finite differences carry a genuine truncation error.
pub fn cosine_target_lqr_model(params: &LqrParams) -> Result<ModelSpec> {
    let gamma = params.gamma;
    let mut model = lqr_model(params)?;
    model.terminal_cost = Arc::new(move |y, x| gamma * (1.0 - (x - y).cos()));
    model.dy_terminal = Arc::new(move |y, x| -gamma * (x - y).sin());
    model.dyy_terminal = Arc::new(move |y, x| gamma * (x - y).cos());
    Ok(model)
}

/// Worst disagreement found by [`check_derivatives`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub max_rel_error: f64,
    pub worst: String,
}

impl DerivativeCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares the user-supplied parameter derivatives with central finite
/// differences of step `h` at the sample points `(t, y, x, a)`.
///
/// First derivatives are differenced from the cost evaluators, second
/// derivatives from the first-derivative evaluators. The error is measured
/// relative to `max(1, |analytic|)`.
pub fn check_derivatives(model: &ModelSpec, samples: &[(f64, f64, f64, f64)], h: f64) -> DerivativeCheck {
    let mut report = DerivativeCheck {
        max_rel_error: 0.0,
        worst: String::new(),
    };
    let mut record = |name: &str, analytic: f64, numeric: f64, at: &(f64, f64, f64, f64)| {
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = format!("{name} at {at:?}: analytic {analytic}, finite difference {numeric}");
        }
    };
    for s @ &(t, y, x, a) in samples {
        let f = &model.running_cost;
        let fd = (f(t, y + h, x, a) - f(t, y - h, x, a)) / (2.0 * h);
        record("dy_running", (model.dy_running)(t, y, x, a), fd, s);
        let d = &model.dy_running;
        let fd = (d(t, y + h, x, a) - d(t, y - h, x, a)) / (2.0 * h);
        record("dyy_running", (model.dyy_running)(t, y, x, a), fd, s);
        let xi = &model.terminal_cost;
        let fd = (xi(y + h, x) - xi(y - h, x)) / (2.0 * h);
        record("dy_terminal", (model.dy_terminal)(y, x), fd, s);
        let d = &model.dy_terminal;
        let fd = (d(y + h, x) - d(y - h, x)) / (2.0 * h);
        record("dyy_terminal", (model.dyy_terminal)(y, x), fd, s);
    }
    report
}

/// Constituents of the inconsistency adjustment for an `n`-dimensional state
/// driven by `d` Brownian motions. Matrices are row-major `Vec` of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentInputs {
    /// State drift (length `n`, product convention `μ = σ b`).
    pub drift_vec: Vec<f64>,
    /// Diffusion matrix, `n × d`.
    pub sigma_mat: Vec<Vec<f64>>,
    /// `∇ᵧ𝒥`, length `n`.
    pub grad_y: Vec<f64>,
    /// `∇²ᵧᵧ𝒥`, `n × n`.
    pub hess_yy: Vec<Vec<f64>>,
    /// `∇²ₓᵧ𝒥`, `n × n`.
    pub hess_xy: Vec<Vec<f64>>,
}

fn check_square(name: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!("{name} must be {n}x{n}")));
    }
    Ok(())
}

/// `μ·∇ᵧ𝒥 + Tr[(½∇²ᵧᵧ𝒥 + ∇²ₓᵧ𝒥) σσᵀ]`.
///
/// With `μ = σ b` the first term equals `b·σᵀ∇ᵧ𝒥`.
pub fn inconsistency_adjustment(inputs: &AdjustmentInputs) -> Result<f64> {
    let n = inputs.drift_vec.len();
    if n == 0 {
        return Err(Error::Shape("state dimension must be >= 1".into()));
    }
    if inputs.grad_y.len() != n {
        return Err(Error::Shape(format!(
            "grad_y has length {}, drift has length {n}",
            inputs.grad_y.len()
        )));
    }
    if inputs.sigma_mat.len() != n {
        return Err(Error::Shape(format!("sigma_mat has {} rows, expected {n}", inputs.sigma_mat.len())));
    }
    let d = inputs.sigma_mat[0].len();
    if d == 0 || inputs.sigma_mat.iter().any(|row| row.len() != d) {
        return Err(Error::Shape("sigma_mat rows must share a nonzero length".into()));
    }
    check_square("hess_yy", &inputs.hess_yy, n)?;
    check_square("hess_xy", &inputs.hess_xy, n)?;

    let drift_term: f64 = inputs.drift_vec.iter().zip(&inputs.grad_y).map(|(b, g)| b * g).sum();

    // covariance σσᵀ
    let mut cov = vec![vec![0.0; n]; n];
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = (0..d).map(|k| inputs.sigma_mat[i][k] * inputs.sigma_mat[j][k]).sum();
        }
    }
    let mut trace = 0.0;
    for i in 0..n {
        for k in 0..n {
            let m = 0.5 * inputs.hess_yy[i][k] + inputs.hess_xy[i][k];
            trace += m * cov[k][i];
        }
    }
    Ok(drift_term + trace)
}

/// A model whose preferences depend on the evaluation time instead of the
/// evaluation state: criterion `∫ₜᵀ f(s, t, X_s, a_s) ds + ξ(t, X_T)`.
#[derive(Clone)]
pub struct TimeDependentModel {
    /// `μ(s, x, a)`.
    pub drift: ControlledFn,
    /// `σ(s, x)`.
    pub vol: StateFn,
    /// `f(s, t, x, a)`: running time, preference time, state, action.
    pub running_cost: RunningFn,
    /// `ξ(t, x)`.
    pub terminal_cost: TerminalFn,
    /// `∂ₜ f(s, t, x, a)`.
    pub dt_running: RunningFn,
    pub dtt_running: RunningFn,
    /// `∂ₜ ξ(t, x)`.
    pub dt_terminal: TerminalFn,
    pub dtt_terminal: TerminalFn,
    pub horizon: f64,
}

/// Time-dependent preferences recast as state-dependent preferences over the
/// augmented state `(clock, x)` with parameter `(t, x)`.
///
/// The clock has unit drift and no noise; the costs read only the clock
/// component of the parameter, so every spatial parameter derivative is zero.
#[derive(Clone)]
pub struct AugmentedModel {
    inner: TimeDependentModel,
}

impl fmt::Debug for AugmentedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AugmentedModel")
            .field("horizon", &self.inner.horizon)
            .finish_non_exhaustive()
    }
}

pub fn augment_time_dependent(td: TimeDependentModel) -> Result<AugmentedModel> {
    if !(td.horizon > 0.0 && td.horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be finite and > 0, got {}", td.horizon)));
    }
    Ok(AugmentedModel { inner: td })
}

impl AugmentedModel {
    pub const STATE_DIM: usize = 2;

    pub fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// `(1, μ(clock, x, a))`.
    pub fn drift_vec(&self, state: [f64; 2], a: f64) -> [f64; 2] {
        [1.0, (self.inner.drift)(state[0], state[1], a)]
    }

    /// `(0, σ(clock, x))ᵀ`, one Brownian motion.
    pub fn sigma_mat(&self, state: [f64; 2]) -> [[f64; 1]; 2] {
        [[0.0], [(self.inner.vol)(state[0], state[1])]]
    }

    /// `f̃_s(p, z, a) = f(s, p₁, z₂, a)` with `s` the clock of `state`.
    pub fn running_cost(&self, param: [f64; 2], state: [f64; 2], a: f64) -> f64 {
        (self.inner.running_cost)(state[0], param[0], state[1], a)
    }

    /// `ξ̃(p, z) = ξ(p₁, z₂)`.
    pub fn terminal_cost(&self, param: [f64; 2], state: [f64; 2]) -> f64 {
        (self.inner.terminal_cost)(param[0], state[1])
    }

    pub fn grad_param_running(&self, param: [f64; 2], state: [f64; 2], a: f64) -> [f64; 2] {
        [(self.inner.dt_running)(state[0], param[0], state[1], a), 0.0]
    }

    pub fn hess_param_running(&self, param: [f64; 2], state: [f64; 2], a: f64) -> [[f64; 2]; 2] {
        [[(self.inner.dtt_running)(state[0], param[0], state[1], a), 0.0], [0.0, 0.0]]
    }

    pub fn grad_param_terminal(&self, param: [f64; 2], state: [f64; 2]) -> [f64; 2] {
        [(self.inner.dt_terminal)(param[0], state[1]), 0.0]
    }

    pub fn hess_param_terminal(&self, param: [f64; 2], state: [f64; 2]) -> [[f64; 2]; 2] {
        [[(self.inner.dtt_terminal)(param[0], state[1]), 0.0], [0.0, 0.0]]
    }

    /// Packs the augmented coefficients at `state` with the given parameter
    /// derivatives of `𝒥` into [`AdjustmentInputs`].
    pub fn adjustment_inputs(
        &self,
        state: [f64; 2],
        a: f64,
        grad_y: [f64; 2],
        hess_yy: [[f64; 2]; 2],
        hess_xy: [[f64; 2]; 2],
    ) -> AdjustmentInputs {
        let sig = self.sigma_mat(state);
        AdjustmentInputs {
            drift_vec: self.drift_vec(state, a).to_vec(),
            sigma_mat: sig.iter().map(|r| r.to_vec()).collect(),
            grad_y: grad_y.to_vec(),
            hess_yy: hess_yy.iter().map(|r| r.to_vec()).collect(),
            hess_xy: hess_xy.iter().map(|r| r.to_vec()).collect(),
        }
    }
}
