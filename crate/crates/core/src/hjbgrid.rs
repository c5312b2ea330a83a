//! Explicit finite-difference solver for the coupled extended HJB system
//!
//! ```text
//! ∂ₜV + H(t, x, σ∂ₓV, ∂ᵧ𝒥, ∂²ᵧᵧ𝒥, σ∂²ₓᵧ𝒥)|_{y=x} + ½σ²∂²ₓₓV = 0,   V(T, x) = ξ(x, x)
//! ∂ₜ𝒥 + μ(t, x, α*)∂ₓ𝒥 + ½σ²∂²ₓₓ𝒥 + f(t, y, x, α*) = 0,           𝒥(T, x, y) = ξ(y, x)
//! ```
//!
//! on a rectangle in `(x, y)` whose axes coincide, so that `y = x` is a grid
//! diagonal. `y` enters the second equation only as a parameter: every `y`
//! line is an independent one-dimensional problem, updated in parallel.
//!
//! Interior nodes use second-order centered differences; boundary nodes are
//! filled by quadratic extrapolation (constant second difference), which is
//! exact for quadratic fields and only approximate otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HamiltonianInputs, LqrParams, ModelSpec};
use crate::riccati::{GainLabel, GainSchedule, TimeGrid};

/// Space-time grid. `n_x`/`n_y` count intervals, so there are `n_x + 1`
/// state nodes. `n_t = 0` asks the solver to size the time step from the
/// stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec2 {
    pub n_t: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub y_lo: f64,
    pub y_hi: f64,
    pub n_y: usize,
    pub horizon: f64,
}

impl GridSpec2 {
    /// Identical `x` and `y` axes on `[lo, hi]` with `n` intervals.
    pub fn square(n_t: usize, lo: f64, hi: f64, n: usize, horizon: f64) -> Result<Self> {
        let g = Self {
            n_t,
            x_lo: lo,
            x_hi: hi,
            n_x: n,
            y_lo: lo,
            y_hi: hi,
            n_y: n,
            horizon,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_lo, self.x_hi, self.y_lo, self.y_hi, self.horizon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!("non-finite grid bound in {self:?}")));
        }
        if !(self.x_lo < self.x_hi) || !(self.y_lo < self.y_hi) {
            return Err(Error::Config(format!(
                "grid bounds must be increasing: x [{}, {}], y [{}, {}]",
                self.x_lo, self.x_hi, self.y_lo, self.y_hi
            )));
        }
        if self.n_x < 4 || self.n_y < 4 {
            return Err(Error::Config(format!(
                "need at least 4 intervals per axis, got n_x = {}, n_y = {}",
                self.n_x, self.n_y
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be > 0, got {}", self.horizon)));
        }
        Ok(())
    }

    /// True when `y = x` is a grid line.
    pub fn aligned(&self) -> bool {
        self.n_x == self.n_y && self.x_lo == self.y_lo && self.x_hi == self.y_hi
    }

    fn require_aligned(&self) -> Result<()> {
        if self.aligned() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "x and y axes must coincide for diagonal evaluation: x [{}, {}]/{}, y [{}, {}]/{}",
                self.x_lo, self.x_hi, self.n_x, self.y_lo, self.y_hi, self.n_y
            )))
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_x as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_x {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.dx()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.n_x).map(|i| self.x(i)).collect()
    }

    /// State-node indices inside the middle half of `[x_lo, x_hi]`.
    pub fn central_half(&self) -> std::ops::RangeInclusive<usize> {
        let quarter = 0.25 * (self.x_hi - self.x_lo);
        let lo = self.x_lo + quarter;
        let hi = self.x_hi - quarter;
        let eps = 1e-9 * self.dx();
        let first = (0..=self.n_x).find(|i| self.x(*i) >= lo - eps).unwrap_or(0);
        let last = (0..=self.n_x).rev().find(|i| self.x(*i) <= hi + eps).unwrap_or(self.n_x);
        first..=last
    }
}

/// Which adjustment terms enter the value equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Adjustment {
    #[default]
    Full,
    /// Drops the `∂²ᵧᵧ𝒥` and `∂²ₓᵧ𝒥` terms, keeps the gradient shift.
    NoTrace,
    /// Classical HJB on the diagonal: every `𝒥`-derivative is zeroed.
    None,
}

/// Stencil used for the parameter derivatives on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiagonalStencil {
    #[default]
    Centered,
    /// Second-order one-sided differences looking towards larger `y` (and `x`).
    Forward,
}

/// How much of the parameter field is kept in the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JStorage {
    #[default]
    Full,
    /// Only the initial and terminal slices; the diagonal is always kept.
    Ends,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub adjustment: Adjustment,
    pub stencil: DiagonalStencil,
    pub storage: JStorage,
    /// Relative safety margin in `Δt ≤ Δx² / (σ_max² (1 + margin))`.
    pub cfl_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            adjustment: Adjustment::Full,
            stencil: DiagonalStencil::Centered,
            storage: JStorage::Full,
            cfl_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub n_t: usize,
    pub dt: f64,
    pub dx: f64,
    pub sigma_max: f64,
    /// `σ_max² Δt / Δx²`; at most `1 / (1 + margin)`.
    pub cfl_ratio: f64,
    /// Backward passes performed (1 for the sweep).
    pub iterations: usize,
    /// Sup-norm distance between successive Picard iterates.
    pub trace: Vec<f64>,
}

/// Discrete `V`, `𝒥` and `α*`. Slice `k` is time `t_k`; `j_field` slices are
/// laid out `y`-line-major, entry `j·(n_x+1) + i` holding `𝒥(t_k, x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub grid: GridSpec2,
    pub v: Vec<Vec<f64>>,
    pub j_field: Vec<Option<Vec<f64>>>,
    /// `𝒥(t_k, x_i, x_i)`.
    pub j_diag: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub report: SchemeReport,
}

impl GridSolution {
    pub fn times(&self) -> Vec<f64> {
        let tg = TimeGrid::new(self.grid.n_t, self.grid.horizon).expect("validated grid");
        tg.nodes()
    }

    /// `𝒥(t_k, x_i, y_j)` if slice `k` was stored.
    pub fn j(&self, k: usize, i: usize, j: usize) -> Option<f64> {
        self.j_field
            .get(k)?
            .as_ref()
            .map(|s| s[j * (self.grid.n_x + 1) + i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DiagDerivs {
    jy: f64,
    jyy: f64,
    jxy: f64,
}

const ZERO_DERIVS: DiagDerivs = DiagDerivs {
    jy: 0.0,
    jyy: 0.0,
    jxy: 0.0,
};

fn d1(f: impl Fn(usize) -> f64, i: usize, last: usize, h: f64, forward: bool) -> f64 {
    if i > 0 && i < last && !forward {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    } else if i + 2 <= last {
        (-3.0 * f(i) + 4.0 * f(i + 1) - f(i + 2)) / (2.0 * h)
    } else {
        (3.0 * f(i) - 4.0 * f(i - 1) + f(i - 2)) / (2.0 * h)
    }
}

fn d2(f: impl Fn(usize) -> f64, i: usize, last: usize, h: f64, forward: bool) -> f64 {
    if i > 0 && i < last && !forward {
        (f(i + 1) - 2.0 * f(i) + f(i - 1)) / (h * h)
    } else if i + 3 <= last {
        (2.0 * f(i) - 5.0 * f(i + 1) + 4.0 * f(i + 2) - f(i + 3)) / (h * h)
    } else {
        (2.0 * f(i) - 5.0 * f(i - 1) + 4.0 * f(i - 2) - f(i - 3)) / (h * h)
    }
}

fn extrapolate_ends(v: &mut [f64]) {
    let n = v.len() - 1;
    v[0] = 3.0 * v[1] - 3.0 * v[2] + v[3];
    v[n] = 3.0 * v[n - 1] - 3.0 * v[n - 2] + v[n - 3];
}

struct Solver<'a> {
    model: &'a ModelSpec,
    grid: GridSpec2,
    opts: SolverOptions,
    tg: TimeGrid,
    xs: Vec<f64>,
    dx: f64,
}

impl<'a> Solver<'a> {
    fn new(model: &'a ModelSpec, grid: &GridSpec2, opts: &SolverOptions) -> Result<(Self, SchemeReport)> {
        grid.validate()?;
        grid.require_aligned()?;
        if !(opts.cfl_margin >= 0.0 && opts.cfl_margin.is_finite()) {
            return Err(Error::Config(format!("cfl_margin must be >= 0, got {}", opts.cfl_margin)));
        }
        let xs = grid.xs();
        let dx = grid.dx();
        let sigma_at = |t: f64| -> Result<f64> {
            let mut m: f64 = 0.0;
            for &x in &xs {
                let s = (model.vol)(t, x);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Domain(format!("volatility must be finite and > 0, got {s} at (t, x) = ({t}, {x})")));
                }
                m = m.max(s);
            }
            Ok(m)
        };
        let bound_steps = |sigma_max: f64| {
            (grid.horizon * sigma_max * sigma_max * (1.0 + opts.cfl_margin) / (dx * dx)).ceil().max(1.0) as usize
        };
        let mut n_t = if grid.n_t == 0 { bound_steps(sigma_at(0.0)?) } else { grid.n_t };
        let mut sigma_max;
        loop {
            let tg = TimeGrid::new(n_t, grid.horizon)?;
            sigma_max = 0.0f64;
            for k in 0..=n_t {
                sigma_max = sigma_max.max(sigma_at(tg.node(k))?);
            }
            let needed = bound_steps(sigma_max);
            if n_t >= needed {
                break;
            }
            if grid.n_t != 0 {
                let admissible = dx * dx / (sigma_max * sigma_max * (1.0 + opts.cfl_margin));
                return Err(Error::Config(format!(
                    "time step {} violates the stability bound; need dt <= {admissible} (n_t >= {needed})",
                    tg.dt()
                )));
            }
            n_t = needed;
        }
        let tg = TimeGrid::new(n_t, grid.horizon)?;
        let resolved = GridSpec2 { n_t, ..*grid };
        let report = SchemeReport {
            n_t,
            dt: tg.dt(),
            dx,
            sigma_max,
            cfl_ratio: sigma_max * sigma_max * tg.dt() / (dx * dx),
            iterations: 0,
            trace: Vec::new(),
        };
        Ok((
            Self {
                model,
                grid: resolved,
                opts: *opts,
                tg,
                xs,
                dx,
            },
            report,
        ))
    }

    fn nx1(&self) -> usize {
        self.grid.n_x + 1
    }

    fn terminal(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.nx1();
        let v = self.xs.iter().map(|&x| (self.model.terminal_cost)(x, x)).collect();
        let mut j = vec![0.0; n * n];
        for (jy, line) in j.chunks_mut(n).enumerate() {
            let y = self.xs[jy];
            for (i, out) in line.iter_mut().enumerate() {
                *out = (self.model.terminal_cost)(y, self.xs[i]);
            }
        }
        (v, j)
    }

    fn diag_derivs(&self, j: &[f64]) -> Vec<DiagDerivs> {
        let n = self.nx1();
        let last = n - 1;
        let h = self.dx;
        let fwd = self.opts.stencil == DiagonalStencil::Forward;
        let at = |ix: usize, iy: usize| j[iy * n + ix];
        (0..n)
            .map(|i| {
                let jy = d1(|iy| at(i, iy), i, last, h, fwd);
                let jyy = d2(|iy| at(i, iy), i, last, h, fwd);
                let jxy = d1(|ix| d1(|iy| at(ix, iy), i, last, h, fwd), i, last, h, fwd);
                DiagDerivs { jy, jyy, jxy }
            })
            .collect()
    }

    fn diag(&self, j: &[f64]) -> Vec<f64> {
        let n = self.nx1();
        (0..n).map(|i| j[i * n + i]).collect()
    }

    /// `α*` and the Hamiltonian value at every node of slice `k`.
    fn hamiltonian(&self, k: usize, v: &[f64], derivs: &[DiagDerivs]) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.tg.node(k);
        let last = self.grid.n_x;
        let mut alpha = Vec::with_capacity(last + 1);
        let mut value = Vec::with_capacity(last + 1);
        for (i, &x) in self.xs.iter().enumerate() {
            let sigma = (self.model.vol)(t, x);
            let vx = d1(|m| v[m], i, last, self.dx, false);
            let d = match self.opts.adjustment {
                Adjustment::Full => derivs[i],
                Adjustment::NoTrace => DiagDerivs {
                    jy: derivs[i].jy,
                    ..ZERO_DERIVS
                },
                Adjustment::None => ZERO_DERIVS,
            };
            let h = self
                .model
                .extended_hamiltonian(&HamiltonianInputs {
                    t,
                    x,
                    z: sigma * vx,
                    grad_param: d.jy,
                    hess_param: d.jyy,
                    mixed: sigma * d.jxy,
                })
                .map_err(|e| match e {
                    Error::Numeric(_) => Error::GridBlowUp {
                        context: "Hamiltonian inputs".into(),
                        step: k,
                        node: i,
                    },
                    other => other,
                })?;
            alpha.push(h.argopt);
            value.push(h.value);
        }
        Ok((alpha, value))
    }

    /// `V` at slice `k` from slice `k + 1`.
    fn step_v(&self, k: usize, v_next: &[f64], h_next: &[f64]) -> Result<Vec<f64>> {
        let t = self.tg.node(k + 1);
        let dt = self.tg.dt();
        let n = self.nx1();
        let mut v = vec![0.0; n];
        for i in 1..n - 1 {
            let sigma = (self.model.vol)(t, self.xs[i]);
            let vxx = (v_next[i + 1] - 2.0 * v_next[i] + v_next[i - 1]) / (self.dx * self.dx);
            v[i] = v_next[i] + dt * (h_next[i] + 0.5 * sigma * sigma * vxx);
        }
        extrapolate_ends(&mut v);
        check_finite(&v, "value field", k)?;
        Ok(v)
    }

    /// `𝒥` at slice `k` from slice `k + 1` under the control field `alpha_next`.
    fn step_j(&self, k: usize, j_next: &[f64], alpha_next: &[f64]) -> Result<Vec<f64>> {
        let t = self.tg.node(k + 1);
        let dt = self.tg.dt();
        let dx = self.dx;
        let n = self.nx1();
        let model = self.model;
        let xs = &self.xs;
        // coefficients shared by every y line
        let coeffs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let s = (model.vol)(t, xs[i]);
                ((model.drift)(t, xs[i], alpha_next[i]), 0.5 * s * s)
            })
            .collect();
        let mut j = vec![0.0; n * n];
        j.par_chunks_mut(n)
            .zip(j_next.par_chunks(n))
            .enumerate()
            .for_each(|(iy, (line, prev))| {
                let y = xs[iy];
                for i in 1..n - 1 {
                    let (mu, half_s2) = coeffs[i];
                    let jx = (prev[i + 1] - prev[i - 1]) / (2.0 * dx);
                    let jxx = (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) / (dx * dx);
                    let f = (model.running_cost)(t, y, xs[i], alpha_next[i]);
                    line[i] = prev[i] + dt * (mu * jx + half_s2 * jxx + f);
                }
                extrapolate_ends(line);
            });
        if let Some(pos) = j.iter().position(|v| !v.is_finite()) {
            return Err(Error::GridBlowUp {
                context: format!("parameter field, y line {}", pos / n),
                step: k,
                node: pos % n,
            });
        }
        Ok(j)
    }

    fn keep(&self, k: usize) -> bool {
        self.opts.storage == JStorage::Full || k == 0 || k == self.grid.n_t
    }
}

fn check_finite(v: &[f64], context: &str, step: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(node) => Err(Error::GridBlowUp {
            context: context.into(),
            step,
            node,
        }),
        None => Ok(()),
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One backward pass: at each step the control and the diagonal derivatives
/// are taken from slice `k + 1`, then `V` and every `y` line of `𝒥` advance
/// explicitly to slice `k`.
pub fn solve_extended_hjb_sweep(model: &ModelSpec, grid: &GridSpec2) -> Result<GridSolution> {
    solve_extended_hjb_sweep_with(model, grid, &SolverOptions::default())
}

pub fn solve_extended_hjb_sweep_with(model: &ModelSpec, grid: &GridSpec2, opts: &SolverOptions) -> Result<GridSolution> {
    let (s, mut report) = Solver::new(model, grid, opts)?;
    let nt = s.grid.n_t;
    let (v_t, j_t) = s.terminal();
    let mut v = vec![Vec::new(); nt + 1];
    let mut alpha = vec![Vec::new(); nt + 1];
    let mut j_diag = vec![Vec::new(); nt + 1];
    let mut j_field: Vec<Option<Vec<f64>>> = vec![None; nt + 1];
    j_diag[nt] = s.diag(&j_t);
    v[nt] = v_t;
    let mut j_next = j_t;
    for k in (0..nt).rev() {
        let derivs = s.diag_derivs(&j_next);
        let (a_next, h_next) = s.hamiltonian(k + 1, &v[k + 1], &derivs)?;
        v[k] = s.step_v(k, &v[k + 1], &h_next)?;
        let j_k = s.step_j(k, &j_next, &a_next)?;
        alpha[k + 1] = a_next;
        j_diag[k] = s.diag(&j_k);
        let prev = std::mem::replace(&mut j_next, j_k);
        if s.keep(k + 1) {
            j_field[k + 1] = Some(prev);
        }
    }
    let (a0, _) = s.hamiltonian(0, &v[0], &s.diag_derivs(&j_next))?;
    alpha[0] = a0;
    j_field[0] = Some(j_next);
    report.iterations = 1;
    Ok(GridSolution {
        grid: s.grid,
        v,
        j_field,
        j_diag,
        alpha,
        report,
    })
}

/// Settings of the fixed-point mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    /// Stop once successive iterates differ by at most `tol` in sup-norm.
    pub tol: f64,
    /// Iteration cap per window.
    pub max_iter: usize,
    /// Length of the time windows iterated one after another, backwards from
    /// `T`; a value `>= T` iterates over the whole horizon at once.
    pub window: f64,
}

impl PicardSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            window: DEFAULT_PICARD_WINDOW,
        }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }
}

/// Window length used by [`solve_extended_hjb_picard`].
pub const DEFAULT_PICARD_WINDOW: f64 = 0.1;

/// Fixed-point form of the same discretization.
///
/// Time is cut into windows of length [`DEFAULT_PICARD_WINDOW`], processed
/// backwards from `T`. On each window the initial iterate extends the
/// window's terminal slice constantly in time; each iteration freezes the
/// diagonal derivative fields of the previous `𝒥`, solves the value
/// equation with them (which fixes `α*`), then solves every `y` line of the
/// parameter equation under that `α*`. The fixed point is the sweep
/// solution. Over long windows the early iterates can carry controls far
/// outside the explicit scheme's stable range.
pub fn solve_extended_hjb_picard(model: &ModelSpec, grid: &GridSpec2, tol: f64, max_iter: usize) -> Result<GridSolution> {
    solve_extended_hjb_picard_with(model, grid, &PicardSettings::new(tol, max_iter), &SolverOptions::default())
}

/// [`solve_extended_hjb_picard`] with explicit settings. The reported trace
/// holds, for each iteration index, the largest distance over all windows
/// still iterating.
pub fn solve_extended_hjb_picard_with(
    model: &ModelSpec,
    grid: &GridSpec2,
    settings: &PicardSettings,
    opts: &SolverOptions,
) -> Result<GridSolution> {
    let PicardSettings { tol, max_iter, window } = *settings;
    if !(tol >= 0.0) || max_iter == 0 || !(window > 0.0) {
        return Err(Error::Config(format!(
            "Picard iteration needs tol >= 0, max_iter >= 1 and window > 0, got {tol}, {max_iter} and {window}"
        )));
    }
    let (s, mut report) = Solver::new(model, grid, opts)?;
    let nt = s.grid.n_t;
    let per_window = ((window / s.tg.dt()) * (1.0 + 1e-12)).floor().max(1.0) as usize;

    let (v_t, j_t) = s.terminal();
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); nt + 1];
    let mut j: Vec<Vec<f64>> = vec![Vec::new(); nt + 1];
    let mut alpha: Vec<Vec<f64>> = vec![Vec::new(); nt + 1];
    v[nt] = v_t;
    j[nt] = j_t;

    let mut trace: Vec<f64> = Vec::new();
    let mut end = nt;
    while end > 0 {
        let start = end.saturating_sub(per_window);
        let window_trace = picard_window(&s, start, end, tol, max_iter, &mut v, &mut j, &mut alpha)?;
        for (n, d) in window_trace.into_iter().enumerate() {
            match trace.get_mut(n) {
                Some(t) => *t = t.max(d),
                None => trace.push(d),
            }
        }
        end = start;
    }
    alpha[0] = s.hamiltonian(0, &v[0], &s.diag_derivs(&j[0]))?.0;

    report.iterations = trace.len();
    report.trace = trace;
    let j_diag = j.iter().map(|slice| s.diag(slice)).collect();
    let j_field = j
        .into_iter()
        .enumerate()
        .map(|(k, slice)| s.keep(k).then_some(slice))
        .collect();
    Ok(GridSolution {
        grid: s.grid,
        v,
        j_field,
        j_diag,
        alpha,
        report,
    })
}

/// Iterates on slices `start..=end` given final data at `end`. Fills `v`,
/// `j` on `start..end` and `alpha` on `start+1..=end`.
#[allow(clippy::too_many_arguments)]
fn picard_window(
    s: &Solver<'_>,
    start: usize,
    end: usize,
    tol: f64,
    max_iter: usize,
    v: &mut [Vec<f64>],
    j: &mut [Vec<f64>],
    alpha: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    let end_derivs = s.diag_derivs(&j[end]);
    let mut derivs = vec![end_derivs.clone(); end - start + 1];
    let end_alpha = s.hamiltonian(end, &v[end], &end_derivs)?.0;
    for k in start..end {
        v[k] = v[end].clone();
        j[k] = j[end].clone();
        alpha[k + 1] = end_alpha.clone();
    }
    let mut trace = Vec::new();
    loop {
        let mut dist: f64 = 0.0;
        for k in (start..end).rev() {
            let (a_next, h_next) = s.hamiltonian(k + 1, &v[k + 1], &derivs[k + 1 - start])?;
            let v_k = s.step_v(k, &v[k + 1], &h_next)?;
            dist = dist.max(sup_dist(&v_k, &v[k])).max(sup_dist(&a_next, &alpha[k + 1]));
            v[k] = v_k;
            alpha[k + 1] = a_next;
        }
        for k in (start..end).rev() {
            let j_k = s.step_j(k, &j[k + 1], &alpha[k + 1])?;
            dist = dist.max(sup_dist(&j_k, &j[k]));
            derivs[k - start] = s.diag_derivs(&j_k);
            j[k] = j_k;
        }
        trace.push(dist);
        if dist <= tol {
            return Ok(trace);
        }
        if trace.len() >= max_iter {
            return Err(Error::NoConvergence {
                iterations: trace.len(),
                last: dist,
                trace,
            });
        }
    }
}

/// Linear feedback read off a grid control field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedGain {
    pub gain: GainSchedule,
    /// Largest root-mean-square residual of the per-slice linear fits.
    pub residual: f64,
    /// Set when the residual exceeds `1e-6·(1 + max|α|)`: the field is not linear.
    pub nonlinear: bool,
}

/// Least-squares line `α ≈ −k x − c` through each time slice over the
/// central half of the state grid.
pub fn extract_gain(sol: &GridSolution, params: &LqrParams) -> Result<ExtractedGain> {
    if (sol.grid.horizon - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(Error::Config(format!(
            "solution horizon {} differs from model horizon {}",
            sol.grid.horizon, params.horizon
        )));
    }
    let idx: Vec<usize> = sol.grid.central_half().collect();
    let xs: Vec<f64> = idx.iter().map(|i| sol.grid.x(*i)).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let mut k_state = Vec::with_capacity(sol.alpha.len());
    let mut c_offset = Vec::with_capacity(sol.alpha.len());
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for slice in &sol.alpha {
        let a: Vec<f64> = idx.iter().map(|i| slice[*i]).collect();
        let a_mean = a.iter().sum::<f64>() / n;
        let sxa: f64 = xs.iter().zip(&a).map(|(x, v)| (x - x_mean) * (v - a_mean)).sum();
        let slope = sxa / sxx;
        let intercept = a_mean - slope * x_mean;
        let ss: f64 = xs.iter().zip(&a).map(|(x, v)| (v - intercept - slope * x).powi(2)).sum();
        residual = residual.max((ss / n).sqrt());
        scale = scale.max(a.iter().fold(0.0, |m, v| m.max(v.abs())));
        k_state.push(-slope);
        c_offset.push(-intercept);
    }
    let tg = TimeGrid::new(sol.grid.n_t, sol.grid.horizon)?;
    Ok(ExtractedGain {
        gain: GainSchedule::new(tg, k_state, c_offset, GainLabel::Custom)?,
        residual,
        nonlinear: residual > 1e-6 * (1.0 + scale),
    })
}

/// `max |V(t_k, x_i) − 𝒥(t_k, x_i, x_i)|` over all slices and the central
/// half of the state grid.
pub fn diagonal_residual(sol: &GridSolution) -> Result<f64> {
    sol.grid.require_aligned()?;
    let mut worst: f64 = 0.0;
    for (v, d) in sol.v.iter().zip(&sol.j_diag) {
        for i in sol.grid.central_half() {
            worst = worst.max((v[i] - d[i]).abs());
        }
    }
    Ok(worst)
}
