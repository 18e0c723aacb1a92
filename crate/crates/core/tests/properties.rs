mod common;

use common::*;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rocvb::asymptotics::{confidence_region, estimate_with_variance, estimating_stack, sandwich, AlphaHat};
use rocvb::data::{Class, CutPair, Dataset, Subject};
use rocvb::glm::{fit_disease, DiseaseProbs, Link, VerificationProbs};
use rocvb::model::{Fits, Method, WorkingModels};
use rocvb::par::Exec;
use rocvb::resampling::{bootstrap, BootstrapPlan, Statistic};
use rocvb::tcf::{estimate_tcf, roc_surface, GridSpec};
use rocvb::vus::{vus_estimate, vus_point, Engine};

fn models() -> WorkingModels {
    WorkingModels::full(1, Link::Logit)
}

fn all_verified(ds: &Dataset) -> Dataset {
    // reveal the class of every subject by drawing it from the fitted model
    let fit = fit_disease(ds).unwrap();
    let rho = rocvb::glm::predict_disease(&fit, ds).unwrap();
    let subjects = ds
        .subjects()
        .iter()
        .zip(&rho.rho)
        .map(|(s, r)| {
            let class = s.class.unwrap_or_else(|| {
                let k = (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
                Class::from_index(k)
            });
            Subject::new(s.t, s.a.clone(), true, Some(class))
        })
        .collect();
    Dataset::new(subjects).unwrap()
}

#[test]
fn complete_verification_reduces_every_correction_to_full() {
    let ds = all_verified(&s1_sample(3, 200));
    let rho = Fits::fit(&ds, &models(), Method::Fi).unwrap().rho;
    let fits = Fits::known(rho, Some(VerificationProbs::ones(ds.n())));
    let none = Fits::default();
    for cut in [CutPair::new(2.0, 4.0).unwrap(), CutPair::new(3.1, 5.7).unwrap()] {
        let full = estimate_tcf(Method::Full, &ds, &cut, &none).unwrap().tcf;
        for m in [Method::Msi, Method::Ipw, Method::Spe] {
            let est = estimate_tcf(m, &ds, &cut, &fits).unwrap().tcf;
            for k in 0..3 {
                assert!((est[k] - full[k]).abs() <= 1e-12, "{m} {cut}");
            }
        }
    }
    let full = vus_point(Method::Full, &ds, &none, Engine::Fast).unwrap().mu_hat;
    for m in [Method::Msi, Method::Ipw, Method::Spe] {
        let mu = vus_point(m, &ds, &fits, Engine::Fast).unwrap().mu_hat;
        assert!((mu - full).abs() <= 1e-12, "{m}");
    }
}

#[test]
fn stack_column_means_vanish_at_the_estimate() {
    let ds = s1_sample(11, 250);
    let fits = Fits::fit_for(&ds, &models(), &Method::CORRECTED).unwrap();
    let cut = CutPair::new(2.0, 5.0).unwrap();
    for m in Method::CORRECTED {
        let est = estimate_tcf(m, &ds, &cut, &fits).unwrap();
        let stack = estimating_stack(&AlphaHat::new(&est, &fits), &ds, &fits).unwrap();
        assert!(stack.column_means().amax() <= 1e-6, "{m}");
    }
}

#[test]
fn imputation_rows_follow_the_flag() {
    let ds = s1_sample(12, 120);
    let fits = Fits::fit_for(&ds, &models(), &Method::CORRECTED).unwrap();
    let cut = CutPair::new(2.0, 5.0).unwrap();
    let rho = &fits.rho.as_ref().unwrap().rho;
    for m in [Method::Fi, Method::Msi] {
        let est = estimate_tcf(m, &ds, &cut, &fits).unwrap();
        let theta1 = est.theta_beta.theta[0];
        let stack = estimating_stack(&AlphaHat::new(&est, &fits), &ds, &fits).unwrap();
        for (i, s) in ds.subjects().iter().enumerate().filter(|(_, s)| s.verified) {
            let expected = match m {
                Method::Fi => rho[i][0] - theta1,
                _ => s.indicator(0) - theta1,
            };
            assert!((stack.rows[i][0] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn sandwich_is_symmetric_and_positive_semidefinite() {
    for seed in 0..10 {
        let ds = s1_sample(40 + seed, 200);
        let Ok(fits) = Fits::fit_for(&ds, &models(), &Method::CORRECTED) else {
            continue;
        };
        for m in Method::CORRECTED {
            let est = estimate_tcf(m, &ds, &CutPair::new(2.0, 4.0).unwrap(), &fits).unwrap();
            let sw = sandwich(&AlphaHat::new(&est, &fits), &ds, &fits).unwrap();
            let s = &sw.sigma;
            assert!((s - s.transpose()).amax() <= 1e-12 * s.amax());
            let eig = s.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() >= -1e-9 * eig.amax(), "{m}: {}", eig.min());
        }
    }
}

#[test]
fn sandwich_sd_tracks_the_bootstrap() {
    let ds = s1_sample(2024, 250);
    let cut = CutPair::new(2.0, 5.0).unwrap();
    let plan = BootstrapPlan::new(400, 9).unwrap();
    for m in [Method::Fi, Method::Msi, Method::Ipw] {
        let fits = Fits::fit(&ds, &models(), m).unwrap();
        let est = estimate_with_variance(m, &ds, &cut, &fits).unwrap();
        let boot = bootstrap(&plan, &ds, &Statistic::Tcf { method: m, cut }, &models(), Exec::Parallel)
            .unwrap();
        for k in 0..3 {
            let ratio = est.asy_sd.unwrap()[k] / boot.sd[k];
            assert!((ratio - 1.0).abs() <= 0.15, "{m} TCF{}: {ratio}", k + 1);
        }
    }
}

#[test]
fn known_disease_probabilities_drop_the_rho_block() {
    let ds = s1_sample(5, 200);
    let fitted = Fits::fit(&ds, &models(), Method::Spe).unwrap();
    let frozen = Fits {
        disease: None,
        ..fitted.clone()
    };
    let cut = CutPair::new(2.0, 4.0).unwrap();
    let est = estimate_tcf(Method::Spe, &ds, &cut, &frozen).unwrap();
    let alpha = AlphaHat::new(&est, &frozen);
    assert!(alpha.tau_rho.is_none());
    assert_eq!(alpha.dim(), 6 + fitted.verification.as_ref().unwrap().dim());
    let same = estimate_tcf(Method::Spe, &ds, &cut, &fitted).unwrap();
    assert_eq!(est.tcf, same.tcf);
    let sw = sandwich(&alpha, &ds, &frozen).unwrap();
    assert_eq!(sw.sigma.nrows(), alpha.dim());
}

#[test]
fn observed_pair_grid_matches_single_calls() {
    let (ds, fits) = (0..)
        .find_map(|seed| {
            let ds = s1_sample(seed, 20);
            let fits = Fits::fit_for(&ds, &models(), &Method::CORRECTED).ok()?;
            Some((ds, fits))
        })
        .unwrap();
    let grid = GridSpec::ObservedPairs.resolve(&ds).unwrap();
    assert_eq!(grid.len(), 190);
    for m in Method::CORRECTED {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let surface = roc_surface(m, &ds, &grid, &fits, exec).unwrap();
            for (cut, point) in grid.iter().zip(&surface) {
                let single = estimate_tcf(m, &ds, cut, &fits).unwrap();
                assert_eq!(point.tcf.map(f64::to_bits), single.tcf.map(f64::to_bits));
            }
        }
    }
}

#[test]
fn vus_is_invariant_to_increasing_transforms_of_the_marker() {
    let ds = s1_sample(21, 150);
    let fits = Fits::fit_for(&ds, &models(), &Method::CORRECTED).unwrap();
    let moved = ds.map_t(|t| (0.7 * t).exp() + 3.0).unwrap();
    for m in Method::CORRECTED {
        let a = vus_point(m, &ds, &fits, Engine::Fast).unwrap().mu_hat;
        let b = vus_point(m, &moved, &fits, Engine::Fast).unwrap().mu_hat;
        assert!((a - b).abs() <= 1e-12, "{m}");
    }
}

#[test]
fn tcf_shifts_with_the_marker() {
    let ds = s1_sample(22, 150);
    let fits = Fits::fit_for(&ds, &models(), &Method::CORRECTED).unwrap();
    let shifted = ds.map_t(|t| t + 10.0).unwrap();
    for m in Method::CORRECTED {
        let a = estimate_tcf(m, &ds, &CutPair::new(2.0, 4.5).unwrap(), &fits).unwrap();
        let b = estimate_tcf(m, &shifted, &CutPair::new(12.0, 14.5).unwrap(), &fits).unwrap();
        assert_eq!(a.tcf, b.tcf);
    }
}

#[test]
fn estimates_do_not_depend_on_subject_order() {
    let ds = s1_sample(31, 150);
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let perm = ds.resample(&idx);
    let cut = CutPair::new(2.0, 5.0).unwrap();
    for m in Method::CORRECTED {
        let fa = Fits::fit(&ds, &models(), m).unwrap();
        let fb = Fits::fit(&perm, &models(), m).unwrap();
        let a = estimate_with_variance(m, &ds, &cut, &fa).unwrap();
        let b = estimate_with_variance(m, &perm, &cut, &fb).unwrap();
        for k in 0..3 {
            assert!((a.tcf[k] - b.tcf[k]).abs() <= 1e-12);
            assert!((a.asy_sd.unwrap()[k] - b.asy_sd.unwrap()[k]).abs() <= 1e-10);
        }
        let va = vus_estimate(m, &ds, &fa).unwrap();
        let vb = vus_estimate(m, &perm, &fb).unwrap();
        assert!((va.mu_hat - vb.mu_hat).abs() <= 1e-12);
        assert!((va.asy_var.unwrap() - vb.asy_var.unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn vus_variance_is_nonnegative_and_bootstrap_sized() {
    let ds = s1_sample(77, 200);
    let plan = BootstrapPlan::new(300, 4).unwrap();
    for m in Method::CORRECTED {
        let fits = Fits::fit(&ds, &models(), m).unwrap();
        let est = vus_estimate(m, &ds, &fits).unwrap();
        let var = est.asy_var.unwrap();
        assert!(var >= 0.0);
        let boot = bootstrap(&plan, &ds, &Statistic::Vus { method: m }, &models(), Exec::Parallel)
            .unwrap();
        let ratio = var.sqrt() / boot.sd[0];
        assert!((0.7..1.3).contains(&ratio), "{m}: {ratio}");
    }
}

#[test]
fn degenerate_and_extreme_vus_cases() {
    let tied = verified(&[(1.0, 0), (1.0, 1), (1.0, 2), (1.0, 0), (1.0, 2)]);
    for engine in [Engine::Fast, Engine::Naive] {
        let mu = vus_point(Method::Full, &tied, &Fits::default(), engine).unwrap().mu_hat;
        assert!((mu - 1.0 / 6.0).abs() <= 1e-15);
    }
    let sep = verified(&[(1.0, 0), (2.0, 0), (3.0, 1), (4.0, 1), (5.0, 2), (6.0, 2)]);
    let mu = vus_point(Method::Full, &sep, &Fits::default(), Engine::Naive).unwrap().mu_hat;
    assert_eq!(mu, 1.0);
}

#[test]
fn known_rho_fi_vus_matches_hand_weights() {
    // FI with known rho: weights are the rho rows themselves
    let ds = Dataset::new(
        (0..6)
            .map(|i| Subject::new(i as f64, vec![], false, None))
            .collect(),
    )
    .unwrap();
    let rows: Vec<[f64; 3]> = (0..6)
        .map(|i| {
            let x = i as f64 / 5.0;
            let r = [(1.0 - x) * 0.8 + 0.1, 0.2, x * 0.6 + 0.1];
            let s: f64 = r.iter().sum();
            [r[0] / s, r[1] / s, r[2] / s]
        })
        .collect();
    let fits = Fits::known(Some(DiseaseProbs::from_rows(rows.clone())), None);
    let mu = vus_point(Method::Fi, &ds, &fits, Engine::Fast).unwrap().mu_hat;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..6 {
        for l in 0..6 {
            for r in 0..6 {
                if i == l || l == r || i == r {
                    continue;
                }
                let w = rows[i][0] * rows[l][1] * rows[r][2];
                let ind = if i < l && l < r { 1.0 } else { 0.0 };
                num += ind * w;
                den += w;
            }
        }
    }
    assert!((mu - num / den).abs() < 1e-14);
}

#[test]
fn bootstrap_is_reproducible_across_executors() {
    let ds = s1_sample(6, 120);
    let plan = BootstrapPlan::new(40, 17).unwrap();
    let stat = Statistic::Tcf {
        method: Method::Spe,
        cut: CutPair::new(2.0, 4.0).unwrap(),
    };
    let a = bootstrap(&plan, &ds, &stat, &models(), Exec::Sequential).unwrap();
    let b = rocvb::par::with_threads(Some(3), || {
        bootstrap(&plan, &ds, &stat, &models(), Exec::Parallel).unwrap()
    });
    assert_eq!(a, b);
}

#[test]
fn ellipse_covers_its_center_for_random_covariances() {
    let ds = s1_sample(9, 250);
    for m in Method::CORRECTED {
        let fits = Fits::fit(&ds, &models(), m).unwrap();
        let est = estimate_with_variance(m, &ds, &CutPair::new(2.0, 5.0).unwrap(), &fits).unwrap();
        let cov = est.cov.unwrap();
        let m2 = DMatrix::from_row_slice(2, 2, &[cov[0][0], cov[0][1], cov[1][0], cov[1][1]]);
        assert!(m2.determinant() > 0.0);
        let center = [est.tcf[0], est.tcf[1]];
        let e = confidence_region([cov[0], cov[1]].map(|r| [r[0], r[1]]), center, 0.95).unwrap();
        assert!(e.contains(center));
        let report = rocvb::asymptotics::TcfReport::new(&est, 0.95);
        assert_eq!(report.ellipse.unwrap().len(), rocvb::asymptotics::ELLIPSE_POINTS);
    }
}
