//! Seeded Euler–Maruyama simulation of the regulator under affine feedback.
//!
//! Every Gaussian increment is a pure function of `(seed, stream, step)`:
//! a SplitMix64-style hash yields a uniform in `(0, 1)` that is mapped
//! through the normal quantile. Paths therefore do not depend on evaluation
//! order or thread count, and strategies simulated with the same seed share
//! their noise exactly (common random numbers).
//!
//! Paths are processed in fixed-size chunks; per-node sums are accumulated
//! inside a chunk in path order and chunks are combined in index order, so
//! aggregates are reproducible under any rayon schedule.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::model::LqrParams;
use crate::riccati::{GainLabel, GainSchedule};

const CHUNK_PATHS: usize = 256;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Pair path `2j + 1` with the mirrored noise of path `2j`.
    pub antithetic: bool,
    /// Number of leading paths whose full state/control history is kept.
    pub store_paths: usize,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            antithetic: false,
            store_paths: 0,
        }
    }

    pub fn with_antithetic(mut self, antithetic: bool) -> Self {
        self.antithetic = antithetic;
        self
    }

    pub fn with_stored_paths(mut self, count: usize) -> Self {
        self.store_paths = count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::Config(format!(
                "simulation needs n_paths >= 1 and n_steps >= 1, got {} and {}",
                self.n_paths, self.n_steps
            )));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even path count, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the noise stream `stream` under `seed`.
#[inline]
fn stream_key(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_mul(GOLDEN).wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Uniform variate in the open interval `(0, 1)` for `(seed, stream, step)`.
pub fn counter_uniform(seed: u64, stream: u64, step: u64) -> f64 {
    uniform_from_key(stream_key(seed, stream), step)
}

#[inline]
fn uniform_from_key(key: u64, step: u64) -> f64 {
    let bits = mix64(key.wrapping_add(step.wrapping_add(1).wrapping_mul(GOLDEN)));
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal quantile.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

/// Standard normal variate for `(seed, stream, step)`.
pub fn counter_normal(seed: u64, stream: u64, step: u64) -> f64 {
    normal_quantile(counter_uniform(seed, stream, step))
}

/// Full histories of the first `store_paths` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPaths {
    /// `states[p]` has `n_steps + 1` entries.
    pub states: Vec<Vec<f64>>,
    /// `controls[p]` has `n_steps` entries: the control applied on each step.
    pub controls: Vec<Vec<f64>>,
}

/// Result of simulating one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub params: LqrParams,
    pub config: SimConfig,
    pub strategy_label: GainLabel,
    pub terminal_states: Vec<f64>,
    /// Left-endpoint sums `Σ ½α_i² Δt` per path.
    pub running_costs: Vec<f64>,
    /// Paths whose state became non-finite.
    pub flagged: Vec<bool>,
    /// Cross-path mean of `X_{t_i}`, `n_steps + 1` entries.
    pub mean_state: Vec<f64>,
    /// Cross-path mean of `|α(t_i, X_{t_i})|`, `n_steps + 1` entries; the last
    /// one is the feedback evaluated at `T`, which is never applied.
    pub mean_abs_control: Vec<f64>,
    pub stored: StoredPaths,
}

impl TrajectoryBatch {
    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.config.n_steps;
        (0..=n)
            .map(|i| if i == n { self.params.horizon } else { self.params.horizon * i as f64 / n as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Number of independent samples: paths, or pairs in antithetic mode.
    pub n_paths: usize,
}

/// Sum by recursive halving; the association order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(samples) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|c| (c - mean) * (c - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn step_ratio(gain: &GainSchedule, params: &LqrParams, config: &SimConfig) -> Result<usize> {
    if gain.grid.horizon() != params.horizon {
        return Err(Error::Config(format!(
            "gain horizon {} differs from model horizon {}",
            gain.grid.horizon(),
            params.horizon
        )));
    }
    let ode = gain.grid.n_steps();
    if ode % config.n_steps != 0 {
        return Err(Error::Config(format!(
            "gain grid ({ode} steps) must be a multiple of the simulation grid ({} steps)",
            config.n_steps
        )));
    }
    Ok(ode / config.n_steps)
}

struct ChunkOut {
    terminal: Vec<f64>,
    running: Vec<f64>,
    flagged: Vec<bool>,
    state_sum: Vec<f64>,
    control_sum: Vec<f64>,
    alive: Vec<usize>,
    stored_states: Vec<Vec<f64>>,
    stored_controls: Vec<Vec<f64>>,
}

fn simulate_chunk(
    gains: &[(&GainSchedule, usize)],
    params: &LqrParams,
    config: &SimConfig,
    paths: std::ops::Range<usize>,
) -> Vec<ChunkOut> {
    let n = config.n_steps;
    let dt = params.horizon / n as f64;
    let sdt = params.sigma * dt.sqrt();
    let (a_bar, b_bar) = (params.a_bar, params.b_bar);
    let mut outs: Vec<ChunkOut> = gains
        .iter()
        .map(|_| ChunkOut {
            terminal: Vec::with_capacity(paths.len()),
            running: Vec::with_capacity(paths.len()),
            flagged: Vec::with_capacity(paths.len()),
            state_sum: vec![0.0; n + 1],
            control_sum: vec![0.0; n + 1],
            alive: vec![0; n + 1],
            stored_states: Vec::new(),
            stored_controls: Vec::new(),
        })
        .collect();
    let mut noise = vec![0.0; n];
    for p in paths {
        let (stream, sign) = if config.antithetic {
            ((p / 2) as u64, if p % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (p as u64, 1.0)
        };
        let key = stream_key(config.seed, stream);
        for (i, z) in noise.iter_mut().enumerate() {
            *z = sign * normal_quantile(uniform_from_key(key, i as u64));
        }
        let store = p < config.store_paths;
        for ((gain, ratio), out) in gains.iter().zip(outs.iter_mut()) {
            let mut x = params.x0;
            let mut running = 0.0;
            let mut ok = true;
            let mut states = Vec::new();
            let mut controls = Vec::new();
            if store {
                states.reserve(n + 1);
                controls.reserve(n);
                states.push(x);
            }
            for (i, z) in noise.iter().enumerate() {
                let a = gain.control(i * ratio, x);
                out.state_sum[i] += x;
                out.control_sum[i] += a.abs();
                out.alive[i] += 1;
                running += 0.5 * a * a * dt;
                x += (a_bar * x + b_bar * a) * dt + sdt * z;
                if store {
                    controls.push(a);
                    states.push(x);
                }
                if !x.is_finite() {
                    ok = false;
                    break;
                }
            }
            if ok {
                out.state_sum[n] += x;
                out.control_sum[n] += gain.control(n * ratio, x).abs();
                out.alive[n] += 1;
            }
            out.terminal.push(x);
            out.running.push(running);
            out.flagged.push(!ok);
            if store {
                out.stored_states.push(states);
                out.stored_controls.push(controls);
            }
        }
    }
    outs
}

/// Simulates several strategies on identical noise. Batches are returned in
/// the order of `gains`.
pub fn simulate_many(gains: &[&GainSchedule], params: &LqrParams, config: &SimConfig) -> Result<Vec<TrajectoryBatch>> {
    params.validate()?;
    config.validate()?;
    if gains.is_empty() {
        return Err(Error::Config("no strategy to simulate".into()));
    }
    let with_ratio: Vec<(&GainSchedule, usize)> = gains
        .iter()
        .map(|g| step_ratio(g, params, config).map(|r| (*g, r)))
        .collect::<Result<_>>()?;

    let n_chunks = config.n_paths.div_ceil(CHUNK_PATHS);
    let chunks: Vec<Vec<ChunkOut>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK_PATHS;
            let hi = (lo + CHUNK_PATHS).min(config.n_paths);
            simulate_chunk(&with_ratio, params, config, lo..hi)
        })
        .collect();

    let n = config.n_steps;
    let mut batches = Vec::with_capacity(gains.len());
    for (s, gain) in gains.iter().enumerate() {
        let mut batch = TrajectoryBatch {
            params: *params,
            config: *config,
            strategy_label: gain.label,
            terminal_states: Vec::with_capacity(config.n_paths),
            running_costs: Vec::with_capacity(config.n_paths),
            flagged: Vec::with_capacity(config.n_paths),
            mean_state: vec![0.0; n + 1],
            mean_abs_control: vec![0.0; n + 1],
            stored: StoredPaths {
                states: Vec::new(),
                controls: Vec::new(),
            },
        };
        let mut alive = vec![0usize; n + 1];
        for chunk in &chunks {
            let out = &chunk[s];
            batch.terminal_states.extend_from_slice(&out.terminal);
            batch.running_costs.extend_from_slice(&out.running);
            batch.flagged.extend_from_slice(&out.flagged);
            for i in 0..=n {
                batch.mean_state[i] += out.state_sum[i];
                batch.mean_abs_control[i] += out.control_sum[i];
                alive[i] += out.alive[i];
            }
            batch.stored.states.extend(out.stored_states.iter().cloned());
            batch.stored.controls.extend(out.stored_controls.iter().cloned());
        }
        for i in 0..=n {
            let count = alive[i].max(1) as f64;
            batch.mean_state[i] /= count;
            batch.mean_abs_control[i] /= count;
        }
        let flagged = batch.n_flagged();
        if flagged * 1000 > config.n_paths {
            return Err(Error::Numeric(format!(
                "{flagged} of {} {} paths became non-finite",
                config.n_paths, gain.label
            )));
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Euler–Maruyama paths of `dX = (āX + b̄α)dt + σdW` under `gain`.
pub fn simulate_paths(gain: &GainSchedule, params: &LqrParams, config: &SimConfig) -> Result<TrajectoryBatch> {
    Ok(simulate_many(&[gain], params, config)?.remove(0))
}

/// Monte Carlo estimate of `E[Σ ½α_i²Δt + Γ/2 (X_T − x₀)²]`.
///
/// Flagged paths are skipped. In antithetic mode each mirrored pair is
/// averaged into one sample.
pub fn estimate_cost(batch: &TrajectoryBatch, params: &LqrParams) -> Result<CostEstimate> {
    let per_path = |p: usize| {
        let d = batch.terminal_states[p] - params.x0;
        batch.running_costs[p] + 0.5 * params.gamma * d * d
    };
    let n = batch.terminal_states.len();
    let samples: Vec<f64> = if batch.config.antithetic {
        (0..n / 2)
            .filter(|j| !batch.flagged[2 * j] && !batch.flagged[2 * j + 1])
            .map(|j| 0.5 * (per_path(2 * j) + per_path(2 * j + 1)))
            .collect()
    } else {
        (0..n).filter(|p| !batch.flagged[*p]).map(per_path).collect()
    };
    if samples.is_empty() {
        return Err(Error::Config("cannot estimate a cost from an empty batch".into()));
    }
    let (mean, stderr) = mean_and_stderr(&samples);
    Ok(CostEstimate {
        mean,
        stderr,
        n_paths: samples.len(),
    })
}

/// Strategies simulated on common noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub batches: Vec<TrajectoryBatch>,
}

impl Comparison {
    pub fn mean_state(&self, strategy: usize) -> &[f64] {
        &self.batches[strategy].mean_state
    }

    pub fn mean_abs_control(&self, strategy: usize) -> &[f64] {
        &self.batches[strategy].mean_abs_control
    }
}

pub fn compare_strategies(params: &LqrParams, config: &SimConfig, strategies: &[GainSchedule]) -> Result<Comparison> {
    if strategies.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least two strategies, got {}",
            strategies.len()
        )));
    }
    let refs: Vec<&GainSchedule> = strategies.iter().collect();
    let batches = simulate_many(&refs, params, config)?;
    Ok(Comparison {
        times: batches[0].times(),
        batches,
    })
}

/// Exact expectation of the Euler–Maruyama cost estimator with `n_steps`
/// steps, from the discrete moment recursion of the scheme.
///
/// Differs from the continuous-time cost only by the scheme's weak error.
pub fn euler_expected_cost(gain: &GainSchedule, params: &LqrParams, n_steps: usize) -> Result<f64> {
    params.validate()?;
    let config = SimConfig::new(1, n_steps, 0);
    config.validate()?;
    let ratio = step_ratio(gain, params, &config)?;
    let dt = params.horizon / n_steps as f64;
    let (a_bar, b_bar, s2) = (params.a_bar, params.b_bar, params.sigma * params.sigma);
    let (mut m, mut s) = (params.x0, params.x0 * params.x0);
    let mut running = 0.0;
    for i in 0..n_steps {
        let (k, c) = (gain.k_state[i * ratio], gain.c_offset[i * ratio]);
        running += 0.5 * (k * k * s + 2.0 * k * c * m + c * c) * dt;
        let beta = 1.0 + (a_bar - b_bar * k) * dt;
        let shift = b_bar * c * dt;
        let m_next = beta * m - shift;
        s = beta * beta * s - 2.0 * beta * shift * m + shift * shift + s2 * dt;
        m = m_next;
    }
    let x0 = params.x0;
    Ok(running + 0.5 * params.gamma * (s - 2.0 * x0 * m + x0 * x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::TimeGrid;

    fn reference() -> LqrParams {
        LqrParams::reference()
    }

    #[test]
    fn uniforms_are_open_interval_and_stable() {
        for step in 0..10_000u64 {
            let u = counter_uniform(42, 7, step);
            assert!(u > 0.0 && u < 1.0);
        }
        assert_eq!(counter_normal(1, 2, 3), counter_normal(1, 2, 3));
        assert_ne!(counter_normal(1, 2, 3), counter_normal(1, 3, 3));
        assert_ne!(counter_normal(1, 2, 3), counter_normal(2, 2, 3));
    }

    #[test]
    fn quantile_matches_known_points() {
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-10);
    }

    #[test]
    fn noise_moments() {
        let n = 200_000;
        let z: Vec<f64> = (0..n).map(|i| counter_normal(9, i as u64 / 100, i as u64 % 100)).collect();
        let (mean, _) = mean_and_stderr(&z);
        let var = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn deterministic_single_step() {
        let p = LqrParams {
            gamma: 0.0,
            sigma: 1e-300,
            ..reference()
        };
        let g = TimeGrid::new(1, 1.0).unwrap();
        let b = simulate_paths(&GainSchedule::zero(g), &p, &SimConfig::new(3, 1, 5)).unwrap();
        assert!(b.terminal_states.iter().all(|x| *x == 1.5));
        let est = estimate_cost(&b, &p).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn config_and_grid_validation() {
        let p = reference();
        let g = TimeGrid::new(10, 1.0).unwrap();
        let zero = GainSchedule::zero(g);
        assert!(simulate_paths(&zero, &p, &SimConfig::new(0, 10, 1)).is_err());
        assert!(simulate_paths(&zero, &p, &SimConfig::new(3, 10, 1).with_antithetic(true)).is_err());
        assert!(matches!(
            simulate_paths(&zero, &p, &SimConfig::new(4, 3, 1)),
            Err(Error::Config(_))
        ));
        assert!(compare_strategies(&p, &SimConfig::new(4, 10, 1), &[zero]).is_err());
    }

    #[test]
    fn stored_paths_follow_feedback_law() {
        let p = reference();
        let g = TimeGrid::new(40, 1.0).unwrap();
        let gain = GainSchedule::new(
            g,
            (0..=40).map(|i| 0.1 * i as f64).collect(),
            (0..=40).map(|i| 0.05 - 0.01 * i as f64).collect(),
            GainLabel::Custom,
        )
        .unwrap();
        let cfg = SimConfig::new(300, 20, 11).with_stored_paths(5);
        let b = simulate_paths(&gain, &p, &cfg).unwrap();
        assert_eq!(b.stored.states.len(), 5);
        for (states, controls) in b.stored.states.iter().zip(&b.stored.controls) {
            assert_eq!(states[0], p.x0);
            assert_eq!(states.len(), 21);
            for i in 0..20 {
                assert_eq!(controls[i], -gain.k_state[2 * i] * states[i] - gain.c_offset[2 * i]);
            }
        }
        for (p_idx, states) in b.stored.states.iter().enumerate() {
            assert_eq!(*states.last().unwrap(), b.terminal_states[p_idx]);
        }
    }

    #[test]
    fn common_noise_and_determinism() {
        let p = reference();
        let g = TimeGrid::new(100, 1.0).unwrap();
        let zero = GainSchedule::zero(g);
        let cfg = SimConfig::new(600, 100, 42);
        let cmp = compare_strategies(&p, &cfg, &[zero.clone(), zero.clone()]).unwrap();
        assert_eq!(cmp.mean_state(0), cmp.mean_state(1));
        assert_eq!(cmp.batches[0].terminal_states, cmp.batches[1].terminal_states);
        let again = simulate_paths(&zero, &p, &cfg).unwrap();
        assert_eq!(again, cmp.batches[0]);
    }

    #[test]
    fn euler_expectation_converges_to_exact_moments() {
        let p = reference();
        let g = TimeGrid::new(4000, 1.0).unwrap();
        let zero = GainSchedule::zero(g);
        let e = std::f64::consts::E;
        let exact = 2.5 * (e + 0.25 * (e - 1.0) - 2.0 * 0.5f64.exp() + 1.0);
        let errs: Vec<f64> = [500, 1000, 2000, 4000]
            .iter()
            .map(|n| (euler_expected_cost(&zero, &p, *n).unwrap() - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 1.0).abs() < 0.05, "{errs:?}");
        }
    }

    #[test]
    fn antithetic_pairs_mirror_noise() {
        let p = reference();
        let g = TimeGrid::new(1, 1.0).unwrap();
        let cfg = SimConfig::new(4, 1, 3).with_antithetic(true);
        let b = simulate_paths(&GainSchedule::zero(g), &p, &cfg).unwrap();
        // X_T = 1.5 + 0.5 z for a single uncontrolled step
        assert!((b.terminal_states[0] + b.terminal_states[1] - 3.0).abs() < 1e-15);
        assert_eq!(estimate_cost(&b, &p).unwrap().n_paths, 2);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let v: Vec<f64> = (0..10_000).map(|i| 0.1 + i as f64 * 1e-3).collect();
        let exact = 0.1 * 10_000.0 + 1e-3 * (9_999.0 * 10_000.0 / 2.0);
        assert!((pairwise_sum(&v) - exact).abs() < 1e-9);
    }
}
