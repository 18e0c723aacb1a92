mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

use rocvb::asymptotics::{estimating_stack, h, h_gradient, jacobian_stack, AlphaHat};
use rocvb::data::CutPair;
use rocvb::glm::{score_and_jacobian, GlmFit, Link};
use rocvb::model::{Fits, Method, WorkingModels};
use rocvb::tcf::estimate_tcf;
use rocvb::vus::{
    kernel_total, kernel_total_gradient, projections_fast, projections_naive, triple_sums_fast,
    triple_sums_naive, vus_point, Engine,
};

const FD_TOL: f64 = 1e-6;

fn fitted(seed: u64, n: usize, link: Link) -> Option<(rocvb::data::Dataset, Fits)> {
    let ds = s1_sample(seed, n);
    let fits = Fits::fit_for(&ds, &WorkingModels::full(1, link), &Method::CORRECTED).ok()?;
    Some((ds, fits))
}

fn glm_score_check(fit: &GlmFit, ds: &rocvb::data::Dataset) -> f64 {
    let analytic = score_and_jacobian(fit, ds).unwrap().jacobian_sum();
    let fd = fd_jacobian(
        |tau| {
            let f = GlmFit::from_coefficients(fit.family, fit.design.clone(), tau.to_vec()).unwrap();
            score_and_jacobian(&f, ds).unwrap().score_sum().as_slice().to_vec()
        },
        &fit.tau,
    );
    rel_err(&analytic, &fd)
}

#[test]
fn glm_score_jacobians_match_finite_differences() {
    for seed in 0..6 {
        let link = if seed % 2 == 0 { Link::Logit } else { Link::Probit };
        let (ds, fits) = fitted(seed, 150, link).unwrap();
        let d = glm_score_check(fits.disease.as_ref().unwrap(), &ds);
        let v = glm_score_check(fits.verification.as_ref().unwrap(), &ds);
        assert!(d < FD_TOL, "disease seed {seed}: {d}");
        assert!(v < FD_TOL, "verification seed {seed}: {v}");
        // away from the fitted coefficients too
        let fit = fits.verification.as_ref().unwrap();
        let moved: Vec<f64> = fit.tau.iter().map(|x| x + 0.3).collect();
        let f = GlmFit::from_coefficients(fit.family, fit.design.clone(), moved).unwrap();
        assert!(glm_score_check(&f, &ds) < FD_TOL);
    }
}

fn stack_check(method: Method, ds: &rocvb::data::Dataset, fits: &Fits, cut: &CutPair) -> f64 {
    let est = estimate_tcf(method, ds, cut, fits).unwrap();
    let alpha = AlphaHat::new(&est, fits);
    let analytic = jacobian_stack(&alpha, ds, fits).unwrap();
    let fd = fd_jacobian(
        |x| {
            let a = alpha.with_values(x).unwrap();
            let stack = estimating_stack(&a, ds, fits).unwrap();
            let n = ds.n() as f64;
            (stack.column_means() * n).as_slice().to_vec()
        },
        &alpha.to_vec(),
    );
    rel_err(&analytic, &fd)
}

#[test]
fn estimating_stack_jacobians_match_finite_differences() {
    let cut = CutPair::new(2.5, 4.5).unwrap();
    for seed in 0..4 {
        for link in [Link::Logit, Link::Probit] {
            let (ds, fits) = fitted(100 + seed, 150, link).unwrap();
            for method in Method::CORRECTED {
                let e = stack_check(method, &ds, &fits, &cut);
                assert!(e < FD_TOL, "{method} {link:?} seed {seed}: {e}");
            }
        }
    }
}

#[test]
fn stack_jacobian_handles_clipped_disease_probabilities() {
    // wide class separation pushes some rho rows onto the floor
    let (ds, fits) = fitted(7, 300, Link::Logit).unwrap();
    assert!(fits.rho.as_ref().unwrap().clipped > 0);
    for method in [Method::Fi, Method::Msi, Method::Spe] {
        let e = stack_check(method, &ds, &fits, &CutPair::new(1.0, 6.5).unwrap());
        assert!(e < FD_TOL, "{method}: {e}");
    }
}

fn vus_gradient_check(method: Method, ds: &rocvb::data::Dataset, fits: &Fits) -> (f64, f64) {
    let mu = vus_point(method, ds, fits, Engine::Fast).unwrap().mu_hat;
    let (gr, gp) = kernel_total_gradient(method, ds, fits, mu).unwrap();
    let check = |grad: Option<nalgebra::DVector<f64>>, rho_block: bool| {
        let Some(grad) = grad else { return 0.0 };
        let base = if rho_block {
            fits.disease.as_ref().unwrap().tau.clone()
        } else {
            fits.verification.as_ref().unwrap().tau.clone()
        };
        let fd = fd_jacobian(
            |tau| {
                let f = if rho_block {
                    refit(ds, fits, Some(tau), None)
                } else {
                    refit(ds, fits, None, Some(tau))
                };
                vec![kernel_total(method, ds, &f, mu).unwrap()]
            },
            &base,
        );
        let analytic = DMatrix::from_row_slice(1, grad.len(), grad.as_slice());
        rel_err(&analytic, &fd)
    };
    (check(gr, true), check(gp, false))
}

#[test]
fn vus_kernel_gradients_match_finite_differences() {
    for seed in 0..4 {
        let link = if seed % 2 == 0 { Link::Logit } else { Link::Probit };
        let (ds, fits) = fitted(200 + seed, 60, link).unwrap();
        for method in Method::CORRECTED {
            let (r, p) = vus_gradient_check(method, &ds, &fits);
            assert!(r < FD_TOL && p < FD_TOL, "{method} seed {seed}: {r} {p}");
        }
    }
}

#[test]
fn h_gradient_matches_finite_differences() {
    let alpha = [0.4, 0.35, 0.2, 0.3, 0.1, 0.2, 0.7];
    let analytic = h_gradient(&alpha, 7).unwrap();
    let fd = fd_jacobian(|a| h(a).to_vec(), &alpha);
    assert!(rel_err(&analytic, &fd) < FD_TOL);
    assert_eq!(analytic.column(6).amax(), 0.0);
}

#[test]
fn fast_engine_matches_naive_with_ties_and_signed_weights() {
    for seed in 0..40 {
        let n = 5 + (seed as usize * 7) % 90;
        let (t, w) = random_instance(seed, n, seed % 2 == 0, seed % 3 == 0);
        let (nn, dn) = triple_sums_naive(&t, &w);
        let (nf, df) = triple_sums_fast(&t, &w);
        let scale = dn.abs().max(1.0);
        assert!((nn - nf).abs() <= 1e-12 * scale, "seed {seed}: {nn} {nf}");
        assert!((dn - df).abs() <= 1e-12 * scale, "seed {seed}: {dn} {df}");
        let pn = projections_naive(&t, &w);
        let pf = projections_fast(&t, &w);
        for c in 0..3 {
            for i in 0..n {
                assert!((pn.k[c][i] - pf.k[c][i]).abs() <= 1e-12 * scale);
                assert!((pn.d[c][i] - pf.d[c][i]).abs() <= 1e-12 * scale);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_engine_matches_naive_on_arbitrary_markers(
        t in prop::collection::vec(-3i32..3, 3..40),
        seed in 0u64..1000,
    ) {
        let t: Vec<f64> = t.into_iter().map(|x| x as f64 * 0.5).collect();
        let (_, w) = random_instance(seed, t.len(), false, false);
        let (nn, dn) = triple_sums_naive(&t, &w);
        let (nf, df) = triple_sums_fast(&t, &w);
        prop_assert!((nn - nf).abs() <= 1e-12 * dn.max(1.0));
        prop_assert!((dn - df).abs() <= 1e-12 * dn.max(1.0));
    }
}


fn multinomial_loglik(rows: &[([f64; 3], usize)], tau: &[f64]) -> (f64, Vec<f64>) {
    let mut ll = 0.0;
    let mut grad = vec![0.0; 6];
    for (u, k) in rows {
        let e: Vec<f64> = (0..2).map(|b| (0..3).map(|j| u[j] * tau[b * 3 + j]).sum()).collect();
        let z = 1.0 + e[0].exp() + e[1].exp();
        ll += if *k < 2 { e[*k] } else { 0.0 } - z.ln();
        for b in 0..2 {
            let r = (*k == b) as u8 as f64 - e[b].exp() / z;
            for j in 0..3 {
                grad[b * 3 + j] += r * u[j];
            }
        }
    }
    (ll, grad)
}

#[test]
fn disease_fit_matches_gradient_ascent_oracle() {
    let ds = s1_sample(20240601, 250);
    let fit = rocvb::glm::fit_disease(&ds).unwrap();
    // plain gradient ascent on standardized covariates, mapped back at the end
    let verified: Vec<_> = ds.subjects().iter().filter(|s| s.verified).collect();
    let mean_sd = |x: Vec<f64>| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / x.len() as f64;
        (m, v.sqrt())
    };
    let (mt, st) = mean_sd(verified.iter().map(|s| s.t).collect());
    let (ma, sa) = mean_sd(verified.iter().map(|s| s.a[0]).collect());
    let rows: Vec<([f64; 3], usize)> = verified
        .iter()
        .map(|s| ([1.0, (s.t - mt) / st, (s.a[0] - ma) / sa], s.class.unwrap().index()))
        .collect();
    // Nesterov-accelerated gradient ascent, step 1/L from the bound
    // Hessian <= sum u u^T, restarted whenever momentum points downhill
    let gram = rows.iter().fold(nalgebra::Matrix3::zeros(), |acc, (u, _)| {
        let u = nalgebra::Vector3::from_column_slice(u);
        acc + u * u.transpose()
    });
    let step = 1.0 / gram.symmetric_eigenvalues().max();
    let mut tau = vec![0.0; 6];
    let mut prev = tau.clone();
    let mut k = 0.0;
    for _ in 0..500_000 {
        let mom = k / (k + 3.0);
        let y: Vec<f64> = tau.iter().zip(&prev).map(|(t, p)| t + mom * (t - p)).collect();
        let g = multinomial_loglik(&rows, &y).1;
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-10 {
            tau = y;
            break;
        }
        let next: Vec<f64> = y.iter().zip(&g).map(|(t, x)| t + step * x).collect();
        let uphill: f64 = g.iter().zip(next.iter().zip(&tau)).map(|(x, (n, t))| x * (n - t)).sum();
        prev = std::mem::replace(&mut tau, next);
        k = if uphill < 0.0 { 0.0 } else { k + 1.0 };
    }
    let mut oracle = vec![0.0; 6];
    for b in 0..2 {
        let (c, bt, ba) = (tau[3 * b], tau[3 * b + 1], tau[3 * b + 2]);
        oracle[3 * b] = c - bt * mt / st - ba * ma / sa;
        oracle[3 * b + 1] = bt / st;
        oracle[3 * b + 2] = ba / sa;
    }
    for (a, b) in fit.tau.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", fit.tau, oracle);
    }
}
