#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rocvb::data::{Class, Dataset, Subject};
use rocvb::glm::{predict_disease, predict_verification, GlmFit};
use rocvb::model::Fits;
use rocvb::simlab::{generate, Study, StudyConfig};

pub fn s1_sample(seed: u64, n: usize) -> Dataset {
    let cfg = StudyConfig::new(Study::S1).with_n(n).with_seed(seed);
    generate(&cfg, 0).unwrap()
}

/// Same models as `fits`, re-predicted at new coefficients.
pub fn refit(ds: &Dataset, fits: &Fits, tau_rho: Option<&[f64]>, tau_pi: Option<&[f64]>) -> Fits {
    let mut out = fits.clone();
    if let (Some(fit), Some(tau)) = (&fits.disease, tau_rho) {
        let f = GlmFit::from_coefficients(fit.family, fit.design.clone(), tau.to_vec()).unwrap();
        out.rho = Some(predict_disease(&f, ds).unwrap());
        out.disease = Some(f);
    }
    if let (Some(fit), Some(tau)) = (&fits.verification, tau_pi) {
        let f = GlmFit::from_coefficients(fit.family, fit.design.clone(), tau.to_vec()).unwrap();
        out.pi = Some(predict_verification(&f, ds).unwrap());
        out.verification = Some(f);
    }
    out
}

/// Five-point central differences; column `j` is `df/dx_j`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let h = 1e-5 * x[j].abs().max(1.0);
        let at = |s: f64| {
            let mut y = x.to_vec();
            y[j] += s * h;
            f(&y)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for i in 0..m {
            jac[(i, j)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac
}

/// `max |a - b| / max |a|`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

/// Random marker values and class weights for engine comparisons. With
/// `ties`, markers are drawn from a handful of levels; with `signed`, some
/// weights are negative.
pub fn random_instance(seed: u64, n: usize, ties: bool, signed: bool) -> (Vec<f64>, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = rng.random_range(2..6);
    let t = (0..n)
        .map(|_| {
            if ties {
                rng.random_range(0..levels) as f64
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        })
        .collect();
    let w = (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                let x: f64 = rng.random();
                if signed {
                    2.0 * x - 0.5
                } else {
                    x
                }
            })
        })
        .collect();
    (t, w)
}

/// Fully verified data with the given `(t, class index)` pairs.
pub fn verified(points: &[(f64, usize)]) -> Dataset {
    Dataset::new(
        points
            .iter()
            .map(|&(t, k)| Subject::new(t, vec![], true, Some(Class::from_index(k))))
            .collect(),
    )
    .unwrap()
}
