//! Stacked estimating functions for `alpha = (theta1, theta2, beta11, beta12,
//! beta22, beta23, tau_rho, tau_pi)`, their analytic Jacobian, the sandwich
//! covariance and its delta-method image on the TCF scale.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::data::{CutPair, Dataset};
use crate::error::{Error, Result};
use crate::glm::{
    clipped_rho_gradient, inv_pi_gradient, predict_disease, predict_verification, score_and_jacobian,
    DiseaseProbs, GlmFit, VerificationProbs,
};
use crate::model::{Fits, Method};
use crate::special::{chi2_2df_quantile, norm_quantile};
use crate::tcf::{estimate_tcf, pseudo_disease, TcfEstimate};

/// Condition-number guard for inverting the bread.
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest admissible class prevalence in the delta method.
pub const THETA_TOL: f64 = 1e-8;

// (class, cut) for each of the six leading components; cut None means theta.
const COMPONENTS: [(usize, Option<usize>); 6] = [
    (0, None),
    (1, None),
    (0, Some(0)),
    (1, Some(0)),
    (1, Some(1)),
    (2, Some(1)),
];

/// Stacked parameter estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaHat {
    pub method: Method,
    pub cut: CutPair,
    pub theta: [f64; 2],
    pub beta: [f64; 4],
    pub tau_rho: Option<Vec<f64>>,
    pub tau_pi: Option<Vec<f64>>,
}

impl AlphaHat {
    /// Assemble from a point estimate and the fits it used. A nuisance block
    /// is present only when the method uses it and the model was fitted.
    pub fn new(est: &TcfEstimate, fits: &Fits) -> AlphaHat {
        let a = est.theta_beta.alpha();
        AlphaHat {
            method: est.method,
            cut: est.cut,
            theta: [a[0], a[1]],
            beta: [a[2], a[3], a[4], a[5]],
            tau_rho: fits
                .disease
                .as_ref()
                .filter(|_| est.method.uses_disease())
                .map(|f| f.tau.clone()),
            tau_pi: fits
                .verification
                .as_ref()
                .filter(|_| est.method.uses_verification())
                .map(|f| f.tau.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        6 + self.tau_rho.as_ref().map_or(0, Vec::len) + self.tau_pi.as_ref().map_or(0, Vec::len)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.beta);
        if let Some(t) = &self.tau_rho {
            v.extend_from_slice(t);
        }
        if let Some(t) = &self.tau_pi {
            v.extend_from_slice(t);
        }
        v
    }

    /// Same block layout, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<AlphaHat> {
        if values.len() != self.dim() {
            return Err(Error::Contract(format!(
                "alpha has dimension {}, got {} values",
                self.dim(),
                values.len()
            )));
        }
        let qr = self.tau_rho.as_ref().map_or(0, Vec::len);
        let mut out = self.clone();
        out.theta.copy_from_slice(&values[..2]);
        out.beta.copy_from_slice(&values[2..6]);
        if let Some(t) = out.tau_rho.as_mut() {
            t.copy_from_slice(&values[6..6 + qr]);
        }
        if let Some(t) = out.tau_pi.as_mut() {
            t.copy_from_slice(&values[6 + qr..]);
        }
        Ok(out)
    }

    fn leading(&self) -> [f64; 6] {
        [
            self.theta[0],
            self.theta[1],
            self.beta[0],
            self.beta[1],
            self.beta[2],
            self.beta[3],
        ]
    }
}

/// Nuisance probabilities and models evaluated at the tau values of an alpha.
struct Nuisance {
    rho: Option<DiseaseProbs>,
    pi: Option<VerificationProbs>,
    disease: Option<GlmFit>,
    verification: Option<GlmFit>,
}

fn refit_at(fit: &GlmFit, tau: &[f64]) -> GlmFit {
    GlmFit {
        tau: tau.to_vec(),
        ..fit.clone()
    }
}

fn nuisance_at(alpha: &AlphaHat, ds: &Dataset, fits: &Fits) -> Result<Nuisance> {
    let method = alpha.method;
    let mut out = Nuisance {
        rho: None,
        pi: None,
        disease: None,
        verification: None,
    };
    if method.uses_disease() {
        match (&alpha.tau_rho, &fits.disease) {
            (Some(tau), Some(fit)) => {
                let f = refit_at(fit, tau);
                out.rho = Some(predict_disease(&f, ds)?);
                out.disease = Some(f);
            }
            (Some(_), None) => {
                return Err(Error::Contract("tau_rho given without a disease model".into()))
            }
            (None, _) => out.rho = Some(fits.require_rho(ds.n())?.clone()),
        }
    }
    if method.uses_verification() {
        match (&alpha.tau_pi, &fits.verification) {
            (Some(tau), Some(fit)) => {
                let f = refit_at(fit, tau);
                out.pi = Some(predict_verification(&f, ds)?);
                out.verification = Some(f);
            }
            (Some(_), None) => {
                return Err(Error::Contract(
                    "tau_pi given without a verification model".into(),
                ))
            }
            (None, _) => out.pi = Some(fits.require_pi(ds.n())?.clone()),
        }
    }
    Ok(out)
}

/// Per-subject estimating-function rows `g_i(alpha)`.
#[derive(Debug, Clone)]
pub struct EstFnStack {
    pub rows: Vec<DVector<f64>>,
}

impl EstFnStack {
    pub fn column_means(&self) -> DVector<f64> {
        let dim = self.rows.first().map_or(0, |r| r.len());
        let n = self.rows.len().max(1) as f64;
        self.rows.iter().fold(DVector::zeros(dim), |acc, r| acc + r) / n
    }

    pub fn meat(&self) -> DMatrix<f64> {
        let dim = self.rows.first().map_or(0, |r| r.len());
        let mut m = DMatrix::zeros(dim, dim);
        for r in &self.rows {
            m.ger(1.0, r, r, 1.0);
        }
        m
    }
}

fn indicator(t: f64, cut: &CutPair, j: usize) -> f64 {
    if t >= cut.cuts()[j] {
        1.0
    } else {
        0.0
    }
}

pub fn estimating_stack(
    alpha: &AlphaHat,
    ds: &Dataset,
    fits: &Fits,
) -> Result<EstFnStack> {
    let nu = nuisance_at(alpha, ds, fits)?;
    let method = alpha.method;
    let dt = pseudo_disease(method, ds, nu.rho.as_ref(), nu.pi.as_ref())?;
    let lead = alpha.leading();
    let dim = alpha.dim();
    let rho_scores = nu.disease.as_ref().map(|f| score_and_jacobian(f, ds)).transpose()?;
    let pi_scores = nu
        .verification
        .as_ref()
        .map(|f| score_and_jacobian(f, ds))
        .transpose()?;
    let qr = alpha.tau_rho.as_ref().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(ds.n());
    for (i, s) in ds.subjects().iter().enumerate() {
        let scale = match method {
            Method::Ipw => s.v() / nu.pi.as_ref().map_or(1.0, |p| p.pi[i]),
            _ => 1.0,
        };
        let mut g = DVector::zeros(dim);
        for (p, &(k, cut)) in COMPONENTS.iter().enumerate() {
            let ind = cut.map_or(1.0, |j| indicator(s.t, &alpha.cut, j));
            g[p] = ind * dt.dtilde[i][k] - scale * lead[p];
        }
        if let Some(sj) = &rho_scores {
            g.rows_mut(6, qr).copy_from(&sj.scores[i]);
        }
        if let Some(sj) = &pi_scores {
            let qp = sj.scores[i].len();
            g.rows_mut(6 + qr, qp).copy_from(&sj.scores[i]);
        }
        rows.push(g);
    }
    Ok(EstFnStack { rows })
}

/// Analytic bread `sum_i d g_i / d alpha`.
pub fn jacobian_stack(alpha: &AlphaHat, ds: &Dataset, fits: &Fits) -> Result<DMatrix<f64>> {
    let nu = nuisance_at(alpha, ds, fits)?;
    let method = alpha.method;
    let lead = alpha.leading();
    let dim = alpha.dim();
    let qr = alpha.tau_rho.as_ref().map_or(0, Vec::len);
    let mut bread = DMatrix::zeros(dim, dim);
    let m_flag = method.imputation_flag();
    for (i, s) in ds.subjects().iter().enumerate() {
        let v = s.v();
        let d = s.indicators();
        let pi = nu.pi.as_ref().map_or(1.0, |p| p.pi[i]);
        let diag = if method == Method::Ipw { -v / pi } else { -1.0 };
        for p in 0..6 {
            bread[(p, p)] += diag;
        }
        if let (Some(fit), Some(rho)) = (&nu.disease, &nu.rho) {
            let coef = match m_flag {
                Some(m) => 1.0 - m * v,
                None => 1.0 - v / pi,
            };
            if coef != 0.0 {
                let u = fit.design.row(s);
                for (p, &(k, cut)) in COMPONENTS.iter().enumerate() {
                    let ind = cut.map_or(1.0, |j| indicator(s.t, &alpha.cut, j));
                    if ind == 0.0 {
                        continue;
                    }
                    let grad = clipped_rho_gradient(&u, &rho.raw[i], k);
                    for (c, gv) in grad.iter().enumerate() {
                        bread[(p, 6 + c)] += ind * coef * gv;
                    }
                }
            }
        }
        if let Some(fit) = &nu.verification {
            if v != 0.0 {
                let u = fit.design.row(s);
                let grad = inv_pi_gradient(fit, &u);
                for (p, &(k, cut)) in COMPONENTS.iter().enumerate() {
                    let ind = cut.map_or(1.0, |j| indicator(s.t, &alpha.cut, j));
                    let resid = match method {
                        Method::Ipw => ind * d[k] - lead[p],
                        _ => {
                            let rho = nu.rho.as_ref().map_or(0.0, |r| r.rho[i][k]);
                            ind * (d[k] - rho)
                        }
                    };
                    if resid == 0.0 {
                        continue;
                    }
                    for (c, gv) in grad.iter().enumerate() {
                        bread[(p, 6 + qr + c)] += v * resid * gv;
                    }
                }
            }
        }
    }
    if let Some(fit) = &nu.disease {
        let jac = score_and_jacobian(fit, ds)?.jacobian_sum();
        bread.view_mut((6, 6), (qr, qr)).copy_from(&jac);
    }
    if let Some(fit) = &nu.verification {
        let jac = score_and_jacobian(fit, ds)?.jacobian_sum();
        let qp = jac.nrows();
        bread.view_mut((6 + qr, 6 + qr), (qp, qp)).copy_from(&jac);
    }
    Ok(bread)
}

/// Inverse of a square matrix through its SVD, refusing ill-conditioned input.
pub fn guarded_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularBread { condition });
    }
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Err(Error::Internal("SVD did not return singular vectors".into()));
    };
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Ok(vt.transpose() * inv_s * u.transpose())
}

#[derive(Debug, Clone)]
pub struct SandwichCov {
    /// `n * bread^-1 * meat * bread^-T`.
    pub sigma: DMatrix<f64>,
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub n: usize,
}

pub fn sandwich(alpha: &AlphaHat, ds: &Dataset, fits: &Fits) -> Result<SandwichCov> {
    let bread = jacobian_stack(alpha, ds, fits)?;
    let meat = estimating_stack(alpha, ds, fits)?.meat();
    let inv = guarded_inverse(&bread)?;
    let n = ds.n();
    let raw = &inv * &meat * inv.transpose() * n as f64;
    let sigma = (&raw + raw.transpose()) * 0.5;
    Ok(SandwichCov {
        sigma,
        bread,
        meat,
        n,
    })
}

/// TCF triple as a function of the leading six components of alpha.
pub fn h(alpha: &[f64]) -> [f64; 3] {
    let theta3 = 1.0 - alpha[0] - alpha[1];
    [
        1.0 - alpha[2] / alpha[0],
        (alpha[3] - alpha[4]) / alpha[1],
        alpha[5] / theta3,
    ]
}

/// `dh/dalpha`, 3 x `dim`; tau columns are zero.
pub fn h_gradient(alpha: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let (t1, t2) = (alpha[0], alpha[1]);
    let t3 = 1.0 - t1 - t2;
    if !(t1 > THETA_TOL && t2 > THETA_TOL && t3 > THETA_TOL) {
        return Err(Error::DegenerateTheta(t1, t2, t3));
    }
    let (b11, b12, b22, b23) = (alpha[2], alpha[3], alpha[4], alpha[5]);
    let mut g = DMatrix::zeros(3, dim.max(6));
    g[(0, 0)] = b11 / (t1 * t1);
    g[(0, 2)] = -1.0 / t1;
    g[(1, 1)] = -(b12 - b22) / (t2 * t2);
    g[(1, 3)] = 1.0 / t2;
    g[(1, 4)] = -1.0 / t2;
    g[(2, 0)] = b23 / (t3 * t3);
    g[(2, 1)] = b23 / (t3 * t3);
    g[(2, 5)] = 1.0 / t3;
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct TcfCov {
    /// `dh Sigma dh^T`; the covariance of the TCF triple is `xi / n`.
    pub xi: DMatrix<f64>,
    pub asy_sd: [f64; 3],
    pub n: usize,
}

impl TcfCov {
    pub fn cov(&self) -> [[f64; 3]; 3] {
        let n = self.n as f64;
        std::array::from_fn(|a| std::array::from_fn(|b| self.xi[(a, b)] / n))
    }
}

pub fn tcf_covariance_at(alpha: &AlphaHat, ds: &Dataset, fits: &Fits) -> Result<TcfCov> {
    let sw = sandwich(alpha, ds, fits)?;
    let dh = h_gradient(&alpha.to_vec(), alpha.dim())?;
    let xi = &dh * &sw.sigma * dh.transpose();
    let xi = (&xi + xi.transpose()) * 0.5;
    let n = ds.n() as f64;
    let asy_sd = std::array::from_fn(|k| (xi[(k, k)].max(0.0) / n).sqrt());
    Ok(TcfCov {
        xi,
        asy_sd,
        n: ds.n(),
    })
}

pub fn tcf_covariance(method: Method, ds: &Dataset, cut: &CutPair, fits: &Fits) -> Result<TcfCov> {
    let est = estimate_tcf(method, ds, cut, fits)?;
    tcf_covariance_at(&AlphaHat::new(&est, fits), ds, fits)
}

/// Point estimate with its sandwich covariance filled in.
pub fn estimate_with_variance(
    method: Method,
    ds: &Dataset,
    cut: &CutPair,
    fits: &Fits,
) -> Result<TcfEstimate> {
    let mut est = estimate_tcf(method, ds, cut, fits)?;
    let cov = tcf_covariance_at(&AlphaHat::new(&est, fits), ds, fits)?;
    est.cov = Some(cov.cov());
    est.asy_sd = Some(cov.asy_sd);
    Ok(est)
}

/// Wald intervals `tcf +/- z * sd`.
pub fn wald_intervals(tcf: &[f64; 3], sd: &[f64; 3], level: f64) -> [[f64; 2]; 3] {
    let z = norm_quantile(0.5 + level / 2.0);
    std::array::from_fn(|k| [tcf[k] - z * sd[k], tcf[k] + z * sd[k]])
}

/// Elliptical confidence region for a pair of TCFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Inverse covariance.
    pub shape: [[f64; 2]; 2],
    pub radius2: f64,
    pub polygon: Vec<[f64; 2]>,
}

pub const ELLIPSE_POINTS: usize = 100;

impl Ellipse {
    pub fn contains(&self, x: [f64; 2]) -> bool {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let q = d[0] * (self.shape[0][0] * d[0] + self.shape[0][1] * d[1])
            + d[1] * (self.shape[1][0] * d[0] + self.shape[1][1] * d[1]);
        q <= self.radius2 * (1.0 + 1e-12)
    }

    /// Semi-axis lengths, longest first.
    pub fn semi_axes(&self) -> [f64; 2] {
        let shape = Matrix2::new(
            self.shape[0][0],
            self.shape[0][1],
            self.shape[1][0],
            self.shape[1][1],
        );
        let eig = shape.symmetric_eigen().eigenvalues;
        let mut axes = [
            (self.radius2 / eig[0]).sqrt(),
            (self.radius2 / eig[1]).sqrt(),
        ];
        axes.sort_by(|a, b| b.total_cmp(a));
        axes
    }
}

pub fn confidence_region(cov: [[f64; 2]; 2], center: [f64; 2], level: f64) -> Result<Ellipse> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Contract("confidence level must lie in (0, 1)".into()));
    }
    let m = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    let chol = m.cholesky().ok_or(Error::SingularCovariance)?;
    let inv = chol.inverse();
    let radius2 = chi2_2df_quantile(level);
    let l = chol.l();
    let r = radius2.sqrt();
    let polygon = (0..ELLIPSE_POINTS)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / ELLIPSE_POINTS as f64;
            let p = l * Vector2::new(phi.cos(), phi.sin()) * r;
            [center[0] + p[0], center[1] + p[1]]
        })
        .collect();
    Ok(Ellipse {
        center,
        shape: [[inv[(0, 0)], inv[(0, 1)]], [inv[(1, 0)], inv[(1, 1)]]],
        radius2,
        polygon,
    })
}

/// JSON-ready summary of one TCF estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcfReport {
    pub method: Method,
    pub cut: CutPair,
    pub tcf: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asy_sd: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_sd: Option<[f64; 3]>,
    pub ci_level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<[[f64; 2]; 3]>,
    /// Region for `(TCF1, TCF2)`, absent when their covariance is singular.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipse: Option<Vec<[f64; 2]>>,
}

impl TcfReport {
    pub fn new(est: &TcfEstimate, level: f64) -> TcfReport {
        let ci = est.asy_sd.map(|sd| wald_intervals(&est.tcf, &sd, level));
        let ellipse = est.cov.and_then(|c| {
            confidence_region(
                [[c[0][0], c[0][1]], [c[1][0], c[1][1]]],
                [est.tcf[0], est.tcf[1]],
                level,
            )
            .ok()
            .map(|e| e.polygon)
        });
        TcfReport {
            method: est.method,
            cut: est.cut,
            tcf: est.tcf,
            asy_sd: est.asy_sd,
            boot_sd: est.boot_sd,
            ci_level: level,
            ci,
            ellipse,
        }
    }
}
