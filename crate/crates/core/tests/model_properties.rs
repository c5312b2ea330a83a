use std::sync::Arc;

use proptest::prelude::*;
use tic_core::model::*;

fn reference_model() -> ModelSpec {
    lqr_model(&LqrParams::reference()).unwrap()
}

/// `μ·∇ᵧ𝒥 + Σᵢₖ (½Hᵧᵧ + Hₓᵧ)ᵢₖ (σσᵀ)ₖᵢ`, written out entry by entry.
fn adjustment_oracle(drift: &[f64], sigma: &[Vec<f64>], grad: &[f64], hyy: &[Vec<f64>], hxy: &[Vec<f64>]) -> f64 {
    let n = drift.len();
    let d = sigma[0].len();
    let mut total = 0.0;
    for i in 0..n {
        total += drift[i] * grad[i];
    }
    for i in 0..n {
        for k in 0..n {
            let mut cov_ki = 0.0;
            for l in 0..d {
                cov_ki += sigma[k][l] * sigma[i][l];
            }
            total += (0.5 * hyy[i][k] + hxy[i][k]) * cov_ki;
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn only_the_effective_gradient_matters(
        t in 0.0..1.0f64, x in -3.0..3.0f64, z in -5.0..5.0f64, gamma in -5.0..5.0f64,
        eta in -5.0..5.0f64, rho in -5.0..5.0f64, s in -5.0..5.0f64,
    ) {
        let m = reference_model();
        let sigma = LqrParams::reference().sigma;
        let base = HamiltonianInputs { t, x, z, grad_param: gamma, hess_param: eta, mixed: rho };
        let shifted = HamiltonianInputs { z: z + s, grad_param: gamma + s / sigma, ..base };
        let a = m.extended_hamiltonian(&base).unwrap();
        let b = m.extended_hamiltonian(&shifted).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12 * (1.0 + a.value.abs()));
        prop_assert!((a.argopt - b.argopt).abs() <= 1e-12 * (1.0 + a.argopt.abs()));
    }

    #[test]
    fn lqr_argopt_is_closed_form_and_matches_grid_search(
        x in -3.0..3.0f64, z in -2.0..2.0f64, gamma in -2.0..2.0f64,
    ) {
        let p = LqrParams::reference();
        let closed = lqr_model(&p).unwrap();
        let inputs = HamiltonianInputs { t: 0.2, x, z, grad_param: gamma, hess_param: 0.3, mixed: -0.1 };
        let h = closed.extended_hamiltonian(&inputs).unwrap();
        let g = z / p.sigma - gamma;
        prop_assert_eq!(h.argopt, -p.b_bar * g);

        let (lower, upper, count) = (-10.0, 10.0, 20_001);
        let pitch = (upper - lower) / (count - 1) as f64;
        let mut searched = closed.clone();
        searched.maximizer = Maximizer::Grid { lower, upper, count };
        let hs = searched.extended_hamiltonian(&inputs).unwrap();
        prop_assert!((hs.argopt - h.argopt).abs() <= pitch);
        prop_assert!(hs.value >= h.value - 1e-12);
    }

    #[test]
    fn dense_adjustment_matches_entrywise_oracle(
        n in 1usize..4, d in 1usize..4, seed in prop::collection::vec(-3.0..3.0f64, 64),
    ) {
        let mut it = seed.into_iter().cycle();
        let mut take = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..c).map(|_| it.next().unwrap()).collect()).collect()
        };
        let sigma = take(n, d);
        let hyy = take(n, n);
        let hxy = take(n, n);
        let drift = take(1, n).remove(0);
        let grad = take(1, n).remove(0);
        let got = inconsistency_adjustment(&AdjustmentInputs {
            drift_vec: drift.clone(),
            sigma_mat: sigma.clone(),
            grad_y: grad.clone(),
            hess_yy: hyy.clone(),
            hess_xy: hxy.clone(),
        }).unwrap();
        let want = adjustment_oracle(&drift, &sigma, &grad, &hyy, &hxy);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn clock_only_preferences_reduce_to_time_term(
        clock in 0.0..1.0f64, x in -3.0..3.0f64, a in -2.0..2.0f64,
        jt in -5.0..5.0f64, h_tt in -5.0..5.0f64, h_ct in -5.0..5.0f64, h_xt in -5.0..5.0f64,
        sigma in 0.05..2.0f64, slope in -2.0..2.0f64,
    ) {
        let td = TimeDependentModel {
            drift: Arc::new(move |_s, x, a| slope * x + a),
            vol: Arc::new(move |_s, _x| sigma),
            running_cost: Arc::new(|s, t, _x, a| 0.5 * a * a / (1.0 + s - t)),
            terminal_cost: Arc::new(|t, x| 0.5 * x * x / (2.0 - t)),
            dt_running: Arc::new(|s, t, _x, a| 0.5 * a * a / (1.0 + s - t).powi(2)),
            dtt_running: Arc::new(|s, t, _x, a| a * a / (1.0 + s - t).powi(3)),
            dt_terminal: Arc::new(|t, x| 0.5 * x * x / (2.0 - t).powi(2)),
            dtt_terminal: Arc::new(|t, x| x * x / (2.0 - t).powi(3)),
            horizon: 1.0,
        };
        let aug = augment_time_dependent(td).unwrap();
        // Hessians with the zero blocks imposed by clock-only dependence
        let inputs = aug.adjustment_inputs([clock, x], a, [jt, 0.0], [[h_tt, 0.0], [0.0, 0.0]], [[h_ct, 0.0], [h_xt, 0.0]]);
        let adj = inconsistency_adjustment(&inputs).unwrap();
        // clock drift is 1, so drift·∇ restricted to the clock is ∂ₜ𝒥
        prop_assert!((adj - jt).abs() <= 1e-12);
        prop_assert_eq!(aug.grad_param_running([clock, x], [clock, x], a)[1], 0.0);
        prop_assert_eq!(aug.grad_param_terminal([clock, x], [clock, x])[1], 0.0);
    }
}

#[test]
fn shipped_models_have_consistent_derivatives() {
    let p = LqrParams::reference();
    let samples: Vec<(f64, f64, f64, f64)> = (0..50)
        .map(|i| {
            let s = i as f64;
            (0.02 * s, -2.0 + 0.09 * s, 2.5 - 0.11 * s, (0.3 * s).sin())
        })
        .collect();
    for (name, model) in [
        ("regulator", lqr_model(&p).unwrap()),
        ("time-consistent regulator", time_consistent_lqr_model(&p).unwrap()),
        ("cosine target", cosine_target_lqr_model(&p).unwrap()),
    ] {
        let check = check_derivatives(&model, &samples, 1e-5);
        assert!(check.passes(1e-6), "{name}: {}", check.worst);
    }
}

#[test]
fn adjustment_rejects_mismatched_shapes() {
    let ok = AdjustmentInputs {
        drift_vec: vec![1.0, 2.0],
        sigma_mat: vec![vec![0.0], vec![1.0]],
        grad_y: vec![0.5, 0.0],
        hess_yy: vec![vec![0.0; 2]; 2],
        hess_xy: vec![vec![0.0; 2]; 2],
    };
    assert!(inconsistency_adjustment(&ok).is_ok());
    let bad = AdjustmentInputs {
        hess_xy: vec![vec![0.0; 3]; 2],
        ..ok.clone()
    };
    assert!(matches!(inconsistency_adjustment(&bad), Err(tic_core::Error::Shape(_))));
    let bad = AdjustmentInputs {
        grad_y: vec![0.5],
        ..ok
    };
    assert!(inconsistency_adjustment(&bad).unwrap_err().is_config());
}
