//! Working models for the disease process (three-class multinomial logit on
//! verified subjects, class 3 as reference) and the verification process
//! (logit or probit on all subjects), fitted by Newton–Raphson on the score
//! equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DesignSpec};
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_sf};

/// Lower clip for fitted probabilities.
pub const PROB_FLOOR: f64 = 1e-3;
/// Convergence tolerance on the sup-norm of the score.
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
/// Linear-predictor magnitude beyond which a non-converging fit is reported
/// as separation.
pub const SEPARATION_ETA: f64 = 30.0;
// Hard stop: no finite MLE puts a linear predictor this far out.
const RUNAWAY_ETA: f64 = 200.0;
// A converged Newton iterate must also have stopped moving.
const STEP_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Multinomial3,
    BinaryLogit,
    BinaryProbit,
}

impl Family {
    fn label(self) -> &'static str {
        match self {
            Family::Multinomial3 => "disease",
            Family::BinaryLogit | Family::BinaryProbit => "verification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl std::str::FromStr for Link {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            other => Err(format!("unknown link `{other}` (expected logit or probit)")),
        }
    }
}

/// A fitted working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub design: DesignSpec,
    /// For the multinomial family: `(tau_1, tau_2)` stacked, each of length
    /// `design.dim()`.
    pub tau: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
}

impl GlmFit {
    /// Builds a fit from known coefficients (no estimation performed).
    pub fn from_coefficients(family: Family, design: DesignSpec, tau: Vec<f64>) -> Result<Self> {
        let expected = match family {
            Family::Multinomial3 => 2 * design.dim(),
            _ => design.dim(),
        };
        if tau.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} coefficients, got {}",
                tau.len()
            )));
        }
        Ok(GlmFit {
            family,
            design,
            tau,
            converged: true,
            iterations: 0,
            score_norm: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.tau.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Fitted disease probabilities, one row `(rho_1, rho_2, rho_3)` per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseProbs {
    /// Clipped into `[PROB_FLOOR, 1 - PROB_FLOOR]` and renormalized.
    pub rho: Vec<[f64; 3]>,
    /// Model probabilities before clipping.
    pub raw: Vec<[f64; 3]>,
    /// Number of entries that needed clipping.
    pub clipped: usize,
}

impl DiseaseProbs {
    /// Probabilities supplied directly (e.g. known truth); no clipping.
    pub fn from_rows(rho: Vec<[f64; 3]>) -> Self {
        DiseaseProbs {
            raw: rho.clone(),
            rho,
            clipped: 0,
        }
    }
}

/// Fitted verification probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationProbs {
    /// Clipped into `[PROB_FLOOR, 1]`.
    pub pi: Vec<f64>,
    pub raw: Vec<f64>,
    pub clipped: usize,
}

impl VerificationProbs {
    pub fn from_values(pi: Vec<f64>) -> Self {
        VerificationProbs {
            raw: pi.clone(),
            pi,
            clipped: 0,
        }
    }

    pub fn ones(n: usize) -> Self {
        Self::from_values(vec![1.0; n])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn multinomial_probs(u: &[f64], tau: &[f64]) -> [f64; 3] {
    let q = u.len();
    let e1 = dot(u, &tau[..q]);
    let e2 = dot(u, &tau[q..2 * q]);
    let m = e1.max(e2).max(0.0);
    let x1 = (e1 - m).exp();
    let x2 = (e2 - m).exp();
    let x3 = (-m).exp();
    let s = x1 + x2 + x3;
    [x1 / s, x2 / s, x3 / s]
}

fn binary_prob(link: Link, eta: f64) -> f64 {
    match link {
        Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        Link::Probit => norm_cdf(eta),
    }
}

fn link_of(family: Family) -> Link {
    match family {
        Family::BinaryProbit => Link::Probit,
        _ => Link::Logit,
    }
}

/// Clip a probability row into `[floor, 1 - floor]` keeping the sum at one.
fn clip_row(row: [f64; 3], floor: f64) -> ([f64; 3], [bool; 3]) {
    let mut out = row;
    let mut fixed = [false; 3];
    for _ in 0..3 {
        let mut changed = false;
        for k in 0..3 {
            if !fixed[k] && out[k] < floor {
                fixed[k] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let fixed_mass = floor * fixed.iter().filter(|&&f| f).count() as f64;
        let free_mass: f64 = (0..3).filter(|&k| !fixed[k]).map(|k| out[k]).sum();
        for k in 0..3 {
            out[k] = if fixed[k] {
                floor
            } else {
                out[k] * (1.0 - fixed_mass) / free_mass
            };
        }
    }
    (out, fixed)
}

/// Per-subject log-likelihood pieces for the Newton iteration.
struct Objective {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn multinomial_objective(design: &[Vec<f64>], ds: &Dataset, tau: &[f64]) -> Objective {
    let q = design.first().map_or(0, Vec::len);
    let mut grad = DVector::zeros(2 * q);
    let mut hess = DMatrix::zeros(2 * q, 2 * q);
    let mut loglik = 0.0;
    for (u, s) in design.iter().zip(ds.subjects()) {
        let Some(class) = s.class else { continue };
        let rho = multinomial_probs(u, tau);
        loglik += rho[class.index()].max(f64::MIN_POSITIVE).ln();
        for sblk in 0..2 {
            let resid = s.indicator(sblk) - rho[sblk];
            for a in 0..q {
                grad[sblk * q + a] += u[a] * resid;
            }
            for lblk in 0..2 {
                let w = if sblk == lblk {
                    -rho[sblk] * (1.0 - rho[sblk])
                } else {
                    rho[sblk] * rho[lblk]
                };
                for a in 0..q {
                    for b in 0..q {
                        hess[(sblk * q + a, lblk * q + b)] += w * u[a] * u[b];
                    }
                }
            }
        }
    }
    Objective {
        loglik,
        grad,
        hess,
    }
}

/// Score contribution and its derivative weight for a binary model at
/// linear predictor `eta`: `g = u * score_w`, `dg/dtau = u u^T * hess_w`.
fn binary_weights(link: Link, v: f64, eta: f64) -> (f64, f64) {
    match link {
        Link::Logit => {
            let p = binary_prob(Link::Logit, eta);
            (v - p, -p * (1.0 - p))
        }
        Link::Probit => {
            let phi = norm_pdf(eta);
            let big = norm_cdf(eta);
            let upper = norm_sf(eta);
            let score = v * phi / big - (1.0 - v) * phi / upper;
            let hess = v * phi * (-eta * big - phi) / (big * big)
                - (1.0 - v) * phi * (eta * (big - 1.0) + phi) / (upper * upper);
            (score, hess)
        }
    }
}

fn binary_objective(link: Link, design: &[Vec<f64>], ds: &Dataset, tau: &[f64]) -> Objective {
    let q = tau.len();
    let mut grad = DVector::zeros(q);
    let mut hess = DMatrix::zeros(q, q);
    let mut loglik = 0.0;
    for (u, s) in design.iter().zip(ds.subjects()) {
        let eta = dot(u, tau);
        let v = s.v();
        loglik += match link {
            Link::Logit => v * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p()),
            Link::Probit => {
                let p = if s.verified { norm_cdf(eta) } else { norm_sf(eta) };
                p.max(f64::MIN_POSITIVE).ln()
            }
        };
        let (sw, hw) = binary_weights(link, v, eta);
        for a in 0..q {
            grad[a] += u[a] * sw;
            for b in 0..q {
                hess[(a, b)] += hw * u[a] * u[b];
            }
        }
    }
    Objective {
        loglik,
        grad,
        hess,
    }
}

fn max_abs_eta(family: Family, design: &[Vec<f64>], ds: &Dataset, tau: &[f64]) -> f64 {
    let q = design.first().map_or(0, Vec::len);
    design
        .iter()
        .zip(ds.subjects())
        .filter(|(_, s)| family != Family::Multinomial3 || s.verified)
        .map(|(u, _)| match family {
            Family::Multinomial3 => dot(u, &tau[..q]).abs().max(dot(u, &tau[q..]).abs()),
            _ => dot(u, tau).abs(),
        })
        .fold(0.0, f64::max)
}

fn newton(family: Family, design_spec: &DesignSpec, ds: &Dataset) -> Result<GlmFit> {
    let design = design_spec.matrix(ds);
    let dim = match family {
        Family::Multinomial3 => 2 * design_spec.dim(),
        _ => design_spec.dim(),
    };
    let eval = |tau: &[f64]| match family {
        Family::Multinomial3 => multinomial_objective(&design, ds, tau),
        _ => binary_objective(link_of(family), &design, ds, tau),
    };
    let separation = |tau: &[f64]| Error::Separation {
        model: family.label(),
        max_eta: max_abs_eta(family, &design, ds, tau),
    };

    let mut tau = vec![0.0; dim];
    let mut obj = eval(&tau);
    let mut score_norm = obj.grad.amax();
    for iter in 1..=MAX_ITER {
        let neg_h = -obj.hess.clone();
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&obj.grad),
            None => match neg_h.lu().solve(&obj.grad) {
                Some(s) => s,
                None => {
                    return Err(if max_abs_eta(family, &design, ds, &tau) > SEPARATION_ETA {
                        separation(&tau)
                    } else {
                        Error::NonConvergence {
                            model: family.label(),
                            iterations: iter,
                            score_norm,
                            last: tau,
                        }
                    })
                }
            },
        };
        if score_norm <= SCORE_TOL && step.amax() <= STEP_TOL {
            return Ok(GlmFit {
                family,
                design: design_spec.clone(),
                tau,
                converged: true,
                iterations: iter - 1,
                score_norm,
            });
        }
        // step-halving until the log-likelihood does not decrease
        let mut t = 1.0;
        let (next_tau, next_obj) = loop {
            let cand: Vec<f64> = tau.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let cand_obj = eval(&cand);
            if cand_obj.loglik.is_finite()
                && cand_obj.loglik >= obj.loglik - 1e-12 * (1.0 + obj.loglik.abs())
            {
                break (cand, cand_obj);
            }
            t *= 0.5;
            if t < 1e-12 {
                break (cand, cand_obj);
            }
        };
        tau = next_tau;
        obj = next_obj;
        score_norm = obj.grad.amax();
        if !score_norm.is_finite() || max_abs_eta(family, &design, ds, &tau) > RUNAWAY_ETA {
            return Err(separation(&tau));
        }
    }
    if max_abs_eta(family, &design, ds, &tau) > SEPARATION_ETA {
        Err(separation(&tau))
    } else {
        Err(Error::NonConvergence {
            model: family.label(),
            iterations: MAX_ITER,
            score_norm,
            last: tau,
        })
    }
}

/// Multinomial logit disease model on `(1, t, a)` using verified subjects.
pub fn fit_disease(ds: &Dataset) -> Result<GlmFit> {
    fit_disease_with(ds, &DesignSpec::full(ds.p()))
}

pub fn fit_disease_with(ds: &Dataset, design: &DesignSpec) -> Result<GlmFit> {
    design.check(ds.p())?;
    let counts = ds.verified_class_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!(
            "disease model needs every class among verified subjects; class {} is absent",
            k + 1
        )));
    }
    newton(Family::Multinomial3, design, ds)
}

/// Binary verification model on `(1, t, a)` using all subjects.
pub fn fit_verification(ds: &Dataset, link: Link) -> Result<GlmFit> {
    fit_verification_with(ds, link, &DesignSpec::full(ds.p()))
}

pub fn fit_verification_with(ds: &Dataset, link: Link, design: &DesignSpec) -> Result<GlmFit> {
    design.check(ds.p())?;
    let nv = ds.n_verified();
    if nv == 0 || nv == ds.n() {
        return Err(Error::Contract(
            "verification model needs both verified and unverified subjects".into(),
        ));
    }
    let family = match link {
        Link::Logit => Family::BinaryLogit,
        Link::Probit => Family::BinaryProbit,
    };
    newton(family, design, ds)
}

fn check_fit_dims(fit: &GlmFit, ds: &Dataset) -> Result<()> {
    fit.design.check(ds.p())?;
    let expected = match fit.family {
        Family::Multinomial3 => 2 * fit.design.dim(),
        _ => fit.design.dim(),
    };
    if fit.tau.len() != expected {
        return Err(Error::Contract("coefficient dimension does not match design".into()));
    }
    Ok(())
}

/// Disease probabilities for every subject (verified or not).
pub fn predict_disease(fit: &GlmFit, ds: &Dataset) -> Result<DiseaseProbs> {
    if fit.family != Family::Multinomial3 {
        return Err(Error::Contract("not a disease model".into()));
    }
    check_fit_dims(fit, ds)?;
    let mut clipped = 0;
    let mut rho = Vec::with_capacity(ds.n());
    let mut raw = Vec::with_capacity(ds.n());
    for s in ds.subjects() {
        let r = multinomial_probs(&fit.design.row(s), &fit.tau);
        let (c, fixed) = clip_row(r, PROB_FLOOR);
        clipped += fixed.iter().filter(|&&f| f).count();
        raw.push(r);
        rho.push(c);
    }
    Ok(DiseaseProbs { rho, raw, clipped })
}

/// Verification probabilities for every subject.
pub fn predict_verification(fit: &GlmFit, ds: &Dataset) -> Result<VerificationProbs> {
    if fit.family == Family::Multinomial3 {
        return Err(Error::Contract("not a verification model".into()));
    }
    check_fit_dims(fit, ds)?;
    let link = link_of(fit.family);
    let raw: Vec<f64> = ds
        .subjects()
        .iter()
        .map(|s| binary_prob(link, dot(&fit.design.row(s), &fit.tau)))
        .collect();
    let clipped = raw.iter().filter(|&&p| p < PROB_FLOOR).count();
    let pi = raw.iter().map(|&p| p.max(PROB_FLOOR)).collect();
    Ok(VerificationProbs { pi, raw, clipped })
}

/// Per-subject score vectors and their derivative blocks for a working model.
#[derive(Debug, Clone)]
pub struct ScoreJacobian {
    /// `scores[i]` is `g_i^tau`.
    pub scores: Vec<DVector<f64>>,
    /// `jacobians[i]` is `d g_i^tau / d tau`.
    pub jacobians: Vec<DMatrix<f64>>,
}

impl ScoreJacobian {
    pub fn score_sum(&self) -> DVector<f64> {
        let dim = self.scores.first().map_or(0, |s| s.len());
        self.scores
            .iter()
            .fold(DVector::zeros(dim), |acc, s| acc + s)
    }

    pub fn jacobian_sum(&self) -> DMatrix<f64> {
        let dim = self.scores.first().map_or(0, |s| s.len());
        self.jacobians
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, j| acc + j)
    }
}

/// Analytic per-subject scores and Jacobians at the fitted coefficients.
pub fn score_and_jacobian(fit: &GlmFit, ds: &Dataset) -> Result<ScoreJacobian> {
    check_fit_dims(fit, ds)?;
    let q = fit.design.dim();
    let mut scores = Vec::with_capacity(ds.n());
    let mut jacobians = Vec::with_capacity(ds.n());
    for s in ds.subjects() {
        let u = DVector::from_vec(fit.design.row(s));
        let uut = &u * u.transpose();
        match fit.family {
            Family::Multinomial3 => {
                let mut g = DVector::zeros(2 * q);
                let mut jac = DMatrix::zeros(2 * q, 2 * q);
                if s.verified {
                    let rho = multinomial_probs(u.as_slice(), &fit.tau);
                    for sb in 0..2 {
                        g.rows_mut(sb * q, q)
                            .copy_from(&(&u * (s.indicator(sb) - rho[sb])));
                        for lb in 0..2 {
                            let w = if sb == lb {
                                -rho[sb] * (1.0 - rho[sb])
                            } else {
                                rho[sb] * rho[lb]
                            };
                            jac.view_mut((sb * q, lb * q), (q, q)).copy_from(&(&uut * w));
                        }
                    }
                }
                scores.push(g);
                jacobians.push(jac);
            }
            family => {
                let eta = u.dot(&DVector::from_column_slice(&fit.tau));
                let (sw, hw) = binary_weights(link_of(family), s.v(), eta);
                scores.push(&u * sw);
                jacobians.push(uut * hw);
            }
        }
    }
    Ok(ScoreJacobian { scores, jacobians })
}

/// Gradient of `rho_k` (k = 0, 1, 2) with respect to `(tau_1, tau_2)` for one
/// subject with design row `u` and unclipped probabilities `rho`.
pub fn rho_gradient(u: &[f64], rho: &[f64; 3], k: usize) -> Vec<f64> {
    let q = u.len();
    let mut out = vec![0.0; 2 * q];
    for l in 0..2 {
        let w = match k {
            0 | 1 => {
                if k == l {
                    rho[k] * (1.0 - rho[k])
                } else {
                    -rho[k] * rho[l]
                }
            }
            _ => -rho[l] * rho[2],
        };
        for a in 0..q {
            out[l * q + a] = w * u[a];
        }
    }
    out
}

/// Gradient of the clipped, renormalized `rho_k` used by the estimators.
/// Entries pinned at the floor are flat; free entries are rescaled raw
/// probabilities, `(1 - m * floor) * r_k / sum_free r`.
pub fn clipped_rho_gradient(u: &[f64], raw: &[f64; 3], k: usize) -> Vec<f64> {
    let (_, fixed) = clip_row(*raw, PROB_FLOOR);
    if !fixed.contains(&true) {
        return rho_gradient(u, raw, k);
    }
    if fixed[k] {
        return vec![0.0; 2 * u.len()];
    }
    let mass = 1.0 - PROB_FLOOR * fixed.iter().filter(|&&f| f).count() as f64;
    let free: f64 = (0..3).filter(|&c| !fixed[c]).map(|c| raw[c]).sum();
    let grads: Vec<Vec<f64>> = (0..3).map(|c| rho_gradient(u, raw, c)).collect();
    (0..2 * u.len())
        .map(|a| {
            let dfree: f64 = (0..3).filter(|&c| !fixed[c]).map(|c| grads[c][a]).sum();
            mass * (grads[k][a] * free - raw[k] * dfree) / (free * free)
        })
        .collect()
}

/// Gradient of `1 / pi` with respect to the verification coefficients.
/// Zero where the probability was clipped (the clipped map is flat there).
pub fn inv_pi_gradient(fit: &GlmFit, u: &[f64]) -> Vec<f64> {
    let eta = dot(u, &fit.tau);
    let link = link_of(fit.family);
    if binary_prob(link, eta) < PROB_FLOOR {
        return vec![0.0; u.len()];
    }
    let w = match link {
        Link::Logit => -(-eta).exp(),
        Link::Probit => {
            let big = norm_cdf(eta);
            -norm_pdf(eta) / (big * big)
        }
    };
    u.iter().map(|x| w * x).collect()
}
