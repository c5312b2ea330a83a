use tic_core::evaluation::{exact_cost, solve_moments, StrategySet};
use tic_core::model::LqrParams;
use tic_core::montecarlo::*;
use tic_core::riccati::{GainSchedule, TimeGrid};

fn strategies(p: &LqrParams) -> StrategySet {
    StrategySet::build(p, &TimeGrid::new(1000, p.horizon).unwrap()).unwrap()
}

#[test]
fn terminal_moments_match_moment_equations() {
    let p = LqrParams::reference();
    let set = strategies(&p);
    let batch = simulate_paths(&set.equilibrium, &p, &SimConfig::new(100_000, 1000, 42)).unwrap();
    let moments = solve_moments(&set.equilibrium, &p).unwrap();
    let n = moments.m.len() - 1;

    let xs = &batch.terminal_states;
    let (mean, se) = mean_and_stderr(xs);
    assert!((mean - moments.m[n]).abs() <= 3.0 * se, "mean {mean} vs {} (se {se})", moments.m[n]);

    let centered: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let (var, _) = mean_and_stderr(&centered);
    let fourth: Vec<f64> = centered.iter().map(|c| c * c).collect();
    let (m4, _) = mean_and_stderr(&fourth);
    let var_se = ((m4 - var * var) / xs.len() as f64).sqrt();
    let exact_var = moments.variance(n);
    assert!((var - exact_var).abs() <= 4.0 * var_se, "variance {var} vs {exact_var} (se {var_se})");
}

#[test]
fn euler_bias_is_first_order_and_resolved_by_the_simulator() {
    let p = LqrParams::reference();
    let set = strategies(&p);
    let exact = exact_cost(&set.equilibrium, &p).unwrap().total;
    let mut bias = Vec::new();
    for n in [250, 500, 1000] {
        let euler = euler_expected_cost(&set.equilibrium, &p, n).unwrap();
        bias.push((euler - exact).abs());
        let est = estimate_cost(&simulate_paths(&set.equilibrium, &p, &SimConfig::new(50_000, n, 7)).unwrap(), &p).unwrap();
        assert!((est.mean - euler).abs() <= 3.0 * est.stderr, "n={n}: {} vs {euler}", est.mean);
    }
    for w in bias.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 1.0).abs() < 0.1, "bias {bias:?}");
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let (m, _) = mean_and_stderr(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Mirroring the noise cancels the part of the cost that is odd in the noise
/// and doubles the weight of the even part. Antithetic sampling therefore
/// helps exactly when the odd part carries more variance, which holds for the
/// uncontrolled state but not for laws that keep `X_T` near the target.
#[test]
fn antithetic_gain_follows_the_odd_even_split() {
    let p = LqrParams::reference();
    let set = strategies(&p);
    let zero = GainSchedule::zero(TimeGrid::new(1000, 1.0).unwrap());
    let cost = |b: &TrajectoryBatch, i: usize| {
        b.running_costs[i] + 0.5 * p.gamma * (b.terminal_states[i] - p.x0).powi(2)
    };
    for gain in [&set.equilibrium, &set.naive, &set.precommitted, &zero] {
        let plain = simulate_paths(gain, &p, &SimConfig::new(20_000, 200, 3)).unwrap();
        let anti = simulate_paths(gain, &p, &SimConfig::new(20_000, 200, 3).with_antithetic(true)).unwrap();
        let even: Vec<f64> = (0..10_000).map(|j| 0.5 * (cost(&anti, 2 * j) + cost(&anti, 2 * j + 1))).collect();
        let odd: Vec<f64> = (0..10_000).map(|j| 0.5 * (cost(&anti, 2 * j) - cost(&anti, 2 * j + 1))).collect();
        let helps = sample_variance(&odd) > sample_variance(&even);
        if gain.k_state.iter().all(|k| *k == 0.0) {
            assert!(helps, "the uncontrolled cost should be dominated by its odd part");
        }
        let (e_plain, e_anti) = (estimate_cost(&plain, &p).unwrap(), estimate_cost(&anti, &p).unwrap());
        assert_eq!(e_anti.stderr < e_plain.stderr, helps, "{}: {} vs {}", gain.label, e_anti.stderr, e_plain.stderr);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = LqrParams::reference();
    let set = strategies(&p);
    let cfg = SimConfig::new(3_000, 250, 99).with_stored_paths(3);
    let mut runs = Vec::new();
    for threads in [1, 2, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        runs.push(pool.install(|| simulate_many(&set.all(), &p, &cfg).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn comparison_shares_noise_and_orders_initial_effort() {
    let p = LqrParams::reference();
    let set = strategies(&p);
    let cmp = compare_strategies(&p, &SimConfig::new(2_000, 100, 42), &[set.equilibrium.clone(), set.naive.clone()]).unwrap();
    assert_eq!(cmp.times.len(), 101);
    assert!(cmp.mean_abs_control(1)[0] > cmp.mean_abs_control(0)[0]);
    assert_eq!(cmp.mean_state(0)[0], p.x0);

    let flat = p.with_gamma(0.0);
    let flat_set = strategies(&flat);
    let zero = GainSchedule::zero(TimeGrid::new(1000, 1.0).unwrap());
    let cmp = compare_strategies(&flat, &SimConfig::new(500, 100, 1), &[flat_set.equilibrium, flat_set.naive, flat_set.precommitted, zero]).unwrap();
    for s in 1..4 {
        assert_eq!(cmp.mean_state(s), cmp.mean_state(0));
        assert_eq!(cmp.batches[s].terminal_states, cmp.batches[0].terminal_states);
    }
}

#[test]
fn zero_cost_when_nothing_is_penalized() {
    let p = LqrParams::reference().with_gamma(0.0);
    let batch = simulate_paths(&strategies(&p).equilibrium, &p, &SimConfig::new(1_000, 50, 5)).unwrap();
    let est = estimate_cost(&batch, &p).unwrap();
    assert_eq!(est.mean, 0.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn explosive_gain_is_reported() {
    let p = LqrParams::reference();
    let grid = TimeGrid::new(10, 1.0).unwrap();
    let wild = GainSchedule::new(grid, vec![-1e200; 11], vec![0.0; 11], tic_core::riccati::GainLabel::Custom).unwrap();
    let err = simulate_paths(&wild, &p, &SimConfig::new(100, 10, 1)).unwrap_err();
    assert!(matches!(err, tic_core::Error::Numeric(_)), "{err}");
}
