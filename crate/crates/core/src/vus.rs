//! Volume under the ROC surface: the weighted three-sample U-statistic, its
//! per-subject projections, and the plug-in asymptotic variance.
//!
//! With `s(a, b) = 1` if `t_a < t_b`, `1/2` if tied and `0` otherwise, the
//! kernel factors as `I(i, l, r) = s(i, l) s(l, r) - [all tied] / 12`. Sorting
//! once and keeping block sums then gives every per-subject partial sum in
//! `O(n log n)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::asymptotics::guarded_inverse;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{clipped_rho_gradient, inv_pi_gradient, score_and_jacobian};
use crate::model::{Fits, Method};
use crate::special::norm_quantile;
use crate::tcf::{pseudo_disease, PseudoDisease};

/// Below this size the fast engine is cross-checked against the naive one.
const SELF_CHECK_MAX_N: usize = 60;
const SELF_CHECK_TOL: f64 = 1e-10;

/// Ordering kernel with tie weights.
pub fn triple_kernel(ti: f64, tl: f64, tr: f64) -> f64 {
    if ti < tl {
        if tl < tr {
            1.0
        } else if tl == tr {
            0.5
        } else {
            0.0
        }
    } else if ti == tl {
        if tl < tr {
            0.5
        } else if tl == tr {
            1.0 / 6.0
        } else {
            0.0
        }
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Naive,
    #[default]
    Fast,
}

/// Per-subject partial sums over ordered pairs of the other two positions.
///
/// `k[p][i]` is the kernel-weighted sum with subject `i` in position `p`
/// (class `p + 1`), `d[p][i]` the unweighted one; both range over distinct
/// indices different from `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub k: [Vec<f64>; 3],
    pub d: [Vec<f64>; 3],
}

impl Projections {
    pub fn numerator(&self, w: &[[f64; 3]]) -> f64 {
        w.iter().zip(&self.k[0]).map(|(wi, k)| wi[0] * k).sum()
    }

    pub fn denominator(&self, w: &[[f64; 3]]) -> f64 {
        w.iter().zip(&self.d[0]).map(|(wi, d)| wi[0] * d).sum()
    }
}

/// `(numerator, denominator)` of the estimator by direct triple summation.
pub fn triple_sums_naive(t: &[f64], w: &[[f64; 3]]) -> (f64, f64) {
    let n = t.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for l in 0..n {
            if l == i {
                continue;
            }
            for r in 0..n {
                if r == i || r == l {
                    continue;
                }
                let prod = w[i][0] * w[l][1] * w[r][2];
                num += triple_kernel(t[i], t[l], t[r]) * prod;
                den += prod;
            }
        }
    }
    (num, den)
}

/// Projections by direct summation; `O(n^3)`.
pub fn projections_naive(t: &[f64], w: &[[f64; 3]]) -> Projections {
    let n = t.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut d = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for a in 0..n {
            if a == i {
                continue;
            }
            for b in 0..n {
                if b == i || b == a {
                    continue;
                }
                // i first: (i, a, b)
                let p = w[a][1] * w[b][2];
                k[0][i] += triple_kernel(t[i], t[a], t[b]) * p;
                d[0][i] += p;
                // i second: (a, i, b)
                let p = w[a][0] * w[b][2];
                k[1][i] += triple_kernel(t[a], t[i], t[b]) * p;
                d[1][i] += p;
                // i third: (a, b, i)
                let p = w[a][0] * w[b][1];
                k[2][i] += triple_kernel(t[a], t[b], t[i]) * p;
                d[2][i] += p;
            }
        }
    }
    Projections { k, d }
}

#[derive(Default, Clone, Copy)]
struct BlockSums {
    w: [f64; 3],
    w12: f64,
    w13: f64,
    w23: f64,
}

/// Projections via sorting and block prefix sums; `O(n log n)`.
pub fn projections_fast(t: &[f64], w: &[[f64; 3]]) -> Projections {
    let n = t.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));

    // tie blocks in increasing t
    let mut block_of = vec![0usize; n];
    let mut starts = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos == 0 || t[i] != t[order[pos - 1]] {
            starts.push(pos);
        }
        block_of[i] = starts.len() - 1;
    }
    let nb = starts.len();
    let members = |b: usize| {
        let end = if b + 1 < nb { starts[b + 1] } else { n };
        &order[starts[b]..end]
    };
    let mut blocks = vec![BlockSums::default(); nb];
    for (b, bs) in blocks.iter_mut().enumerate() {
        for &i in members(b) {
            for c in 0..3 {
                bs.w[c] += w[i][c];
            }
            bs.w12 += w[i][0] * w[i][1];
            bs.w13 += w[i][0] * w[i][2];
            bs.w23 += w[i][1] * w[i][2];
        }
    }

    // below[b] = sum over blocks strictly before b; above[b] = strictly after
    let below = |vals: &[f64]| {
        let mut out = vec![0.0; nb];
        let mut acc = 0.0;
        for b in 0..nb {
            out[b] = acc;
            acc += vals[b];
        }
        out
    };
    let above = |vals: &[f64]| {
        let mut out = vec![0.0; nb];
        let mut acc = 0.0;
        for b in (0..nb).rev() {
            out[b] = acc;
            acc += vals[b];
        }
        out
    };

    let b1: Vec<f64> = blocks.iter().map(|b| b.w[0]).collect();
    let b3: Vec<f64> = blocks.iter().map(|b| b.w[2]).collect();
    let below1 = below(&b1);
    let above3 = above(&b3);

    // L'(i) = sum_{j != i} w1_j s(j, i); R'(i) = sum_{r != i} w3_r s(i, r)
    let mut lp = vec![0.0; n];
    let mut rp = vec![0.0; n];
    for i in 0..n {
        let b = block_of[i];
        lp[i] = below1[b] + 0.5 * (b1[b] - w[i][0]);
        rp[i] = above3[b] + 0.5 * (b3[b] - w[i][2]);
    }

    // F(i) = sum_l w2_l R'(l) s(i, l); H(i) = sum_l w2_l L'(l) s(l, i)
    let mut xr = vec![0.0; nb];
    let mut yl = vec![0.0; nb];
    for i in 0..n {
        xr[block_of[i]] += w[i][1] * rp[i];
        yl[block_of[i]] += w[i][1] * lp[i];
    }
    let above_x = above(&xr);
    let below_y = below(&yl);

    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut d = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let total = blocks.iter().fold(BlockSums::default(), |mut acc, b| {
        for c in 0..3 {
            acc.w[c] += b.w[c];
        }
        acc.w12 += b.w12;
        acc.w13 += b.w13;
        acc.w23 += b.w23;
        acc
    });
    for i in 0..n {
        let bi = block_of[i];
        let bs = &blocks[bi];
        let [w1, w2, w3] = w[i];
        let (o1, o2, o3) = (bs.w[0] - w1, bs.w[1] - w2, bs.w[2] - w3);
        let f = above_x[bi] + 0.5 * xr[bi];
        let h = below_y[bi] + 0.5 * yl[bi];

        k[0][i] = f - 0.5 * w2 * rp[i] - 0.25 * w3 * o2 - (o2 * o3 - (bs.w23 - w2 * w3)) / 12.0;
        k[1][i] = lp[i] * rp[i] - 0.25 * (bs.w13 - w1 * w3) - (o1 * o3 - (bs.w13 - w1 * w3)) / 12.0;
        k[2][i] = h - 0.5 * w2 * lp[i] - 0.25 * w1 * o2 - (o1 * o2 - (bs.w12 - w1 * w2)) / 12.0;

        d[0][i] = (total.w[1] - w2) * (total.w[2] - w3) - (total.w23 - w2 * w3);
        d[1][i] = (total.w[0] - w1) * (total.w[2] - w3) - (total.w13 - w1 * w3);
        d[2][i] = (total.w[0] - w1) * (total.w[1] - w2) - (total.w12 - w1 * w2);
    }
    Projections { k, d }
}

/// `(numerator, denominator)` via the fast projections.
pub fn triple_sums_fast(t: &[f64], w: &[[f64; 3]]) -> (f64, f64) {
    let p = projections_fast(t, w);
    (p.numerator(w), p.denominator(w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VusEstimate {
    pub method: Method,
    pub mu_hat: f64,
    /// Estimated variance of `mu_hat` (the variance of `sqrt(n)(mu_hat - mu)`
    /// divided by `n`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asy_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_sd: Option<f64>,
    pub theta_hats: [f64; 3],
}

impl VusEstimate {
    pub fn asy_sd(&self) -> Option<f64> {
        self.asy_var.map(|v| v.max(0.0).sqrt())
    }
}

fn theta_hats(dt: &PseudoDisease) -> [f64; 3] {
    let sums = dt.column_sums();
    let total: f64 = sums.iter().sum();
    sums.map(|s| s / total)
}

fn mu_from(num: f64, den: f64) -> Result<f64> {
    if !(den.abs() > 1e-8) {
        return Err(Error::DegenerateVusDenominator(den.abs()));
    }
    Ok(num / den)
}

pub fn vus_point(method: Method, ds: &Dataset, fits: &Fits, engine: Engine) -> Result<VusEstimate> {
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let t = ds.t_values();
    let mu_hat = match engine {
        Engine::Naive => {
            let (num, den) = triple_sums_naive(&t, &dt.dtilde);
            mu_from(num, den)?
        }
        Engine::Fast => {
            let (num, den) = triple_sums_fast(&t, &dt.dtilde);
            let mu = mu_from(num, den)?;
            if t.len() <= SELF_CHECK_MAX_N {
                let (n2, d2) = triple_sums_naive(&t, &dt.dtilde);
                let naive = mu_from(n2, d2)?;
                if (naive - mu).abs() > SELF_CHECK_TOL {
                    return Err(Error::Internal(format!(
                        "fast VUS engine gave {mu}, naive gave {naive}"
                    )));
                }
            }
            mu
        }
    };
    Ok(VusEstimate {
        method,
        mu_hat,
        asy_var: None,
        boot_sd: None,
        theta_hats: theta_hats(&dt),
    })
}

/// Gradients of the pseudo-disease weights with respect to the nuisance
/// coefficients, `[subject][class] -> gradient`; `None` when the method does
/// not use that model or it was not fitted.
pub(crate) struct WeightGradients {
    pub rho: Option<Vec<[Vec<f64>; 3]>>,
    pub pi: Option<Vec<[Vec<f64>; 3]>>,
}

pub(crate) fn weight_gradients(method: Method, ds: &Dataset, fits: &Fits) -> Result<WeightGradients> {
    let n = ds.n();
    let rho_grad = match (&fits.disease, method.uses_disease()) {
        (Some(fit), true) => {
            let rho = fits.require_rho(n)?;
            let pi = if method == Method::Spe {
                Some(fits.require_pi(n)?)
            } else {
                None
            };
            let m = method.imputation_flag();
            let rows = ds
                .subjects()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let coef = match m {
                        Some(m) => 1.0 - m * s.v(),
                        None => 1.0 - s.v() / pi.map_or(1.0, |p| p.pi[i]),
                    };
                    let u = fit.design.row(s);
                    std::array::from_fn(|k| {
                        clipped_rho_gradient(&u, &rho.raw[i], k)
                            .into_iter()
                            .map(|g| coef * g)
                            .collect()
                    })
                })
                .collect();
            Some(rows)
        }
        _ => None,
    };
    let pi_grad = match (&fits.verification, method.uses_verification()) {
        (Some(fit), true) => {
            let rho = if method == Method::Spe {
                Some(fits.require_rho(n)?)
            } else {
                None
            };
            let rows = ds
                .subjects()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let q = fit.design.dim();
                    if !s.verified {
                        return std::array::from_fn(|_| vec![0.0; q]);
                    }
                    let g = inv_pi_gradient(fit, &fit.design.row(s));
                    let d = s.indicators();
                    std::array::from_fn(|k| {
                        let resid = d[k] - rho.map_or(0.0, |r| r.rho[i][k]);
                        g.iter().map(|x| resid * x).collect()
                    })
                })
                .collect();
            Some(rows)
        }
        _ => None,
    };
    Ok(WeightGradients {
        rho: rho_grad,
        pi: pi_grad,
    })
}

/// `sum_{i,l,r distinct} G_{ilr}` at `mu`.
pub fn kernel_total(method: Method, ds: &Dataset, fits: &Fits, mu: f64) -> Result<f64> {
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let p = projections_fast(&ds.t_values(), &dt.dtilde);
    Ok(p.numerator(&dt.dtilde) - mu * p.denominator(&dt.dtilde))
}

/// Analytic `sum_{i,l,r distinct} dG_{ilr}/dtau` at `mu`, for the disease and
/// verification coefficient blocks.
pub fn kernel_total_gradient(
    method: Method,
    ds: &Dataset,
    fits: &Fits,
    mu: f64,
) -> Result<(Option<DVector<f64>>, Option<DVector<f64>>)> {
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let p = projections_fast(&ds.t_values(), &dt.dtilde);
    let wg = weight_gradients(method, ds, fits)?;
    Ok(aggregate_gradient(&p, mu, &wg))
}

fn aggregate_gradient(
    p: &Projections,
    mu: f64,
    wg: &WeightGradients,
) -> (Option<DVector<f64>>, Option<DVector<f64>>) {
    let fold = |grads: &Vec<[Vec<f64>; 3]>| {
        let q = grads.first().map_or(0, |g| g[0].len());
        let mut acc = DVector::zeros(q);
        for (i, g) in grads.iter().enumerate() {
            for c in 0..3 {
                let e = p.k[c][i] - mu * p.d[c][i];
                for (a, x) in g[c].iter().enumerate() {
                    acc[a] += e * x;
                }
            }
        }
        acc
    };
    (wg.rho.as_ref().map(fold), wg.pi.as_ref().map(fold))
}

/// Per-subject influence terms `Q_i` at `mu_hat`.
pub fn q_vector(method: Method, ds: &Dataset, fits: &Fits, mu_hat: f64) -> Result<Vec<f64>> {
    let n = ds.n();
    if n < 4 {
        return Err(Error::Contract("VUS variance needs at least 4 subjects".into()));
    }
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let w = &dt.dtilde;
    let p = projections_fast(&ds.t_values(), w);
    let norm = ((n - 1) * (n - 2)) as f64;
    let mut q: Vec<f64> = (0..n)
        .map(|i| {
            (0..3)
                .map(|c| w[i][c] * (p.k[c][i] - mu_hat * p.d[c][i]))
                .sum::<f64>()
                / norm
        })
        .collect();

    let wg = weight_gradients(method, ds, fits)?;
    let (grad_rho, grad_pi) = aggregate_gradient(&p, mu_hat, &wg);
    let corrections = [
        (grad_rho, fits.disease.as_ref()),
        (grad_pi, fits.verification.as_ref()),
    ];
    for (grad, fit) in corrections {
        let (Some(grad), Some(fit)) = (grad, fit) else {
            continue;
        };
        let sj = score_and_jacobian(fit, ds)?;
        let inv = guarded_inverse(&sj.jacobian_sum())?;
        // a^T H^{-1}, shared by every subject
        let coef = inv.transpose() * (grad / norm);
        for (qi, g) in q.iter_mut().zip(&sj.scores) {
            *qi -= coef.dot(g);
        }
    }
    Ok(q)
}

/// Variance of `mu_hat` (already divided by `n`).
pub fn vus_variance(method: Method, ds: &Dataset, fits: &Fits, mu_hat: f64) -> Result<f64> {
    let q = q_vector(method, ds, fits, mu_hat)?;
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let th = theta_hats(&dt);
    let n = ds.n() as f64;
    let denom = (th[0] * th[1] * th[2]).powi(2);
    if !(denom > 0.0) {
        return Err(Error::DegenerateTheta(th[0], th[1], th[2]));
    }
    let var_sqrt_n = q.iter().map(|x| x * x).sum::<f64>() / (n - 1.0) / denom;
    Ok(var_sqrt_n / n)
}

/// Point estimate with asymptotic variance.
pub fn vus_estimate(method: Method, ds: &Dataset, fits: &Fits) -> Result<VusEstimate> {
    let mut est = vus_point(method, ds, fits, Engine::Fast)?;
    est.asy_var = Some(vus_variance(method, ds, fits, est.mu_hat)?);
    Ok(est)
}

/// JSON-ready VUS summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VusReport {
    pub method: Method,
    pub mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asy_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_sd: Option<f64>,
    pub ci_level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
}

impl VusReport {
    pub fn new(est: &VusEstimate, level: f64) -> VusReport {
        let z = norm_quantile(0.5 + level / 2.0);
        let asy_sd = est.asy_sd();
        VusReport {
            method: est.method,
            mu: est.mu_hat,
            asy_sd,
            boot_sd: est.boot_sd,
            ci_level: level,
            ci: asy_sd.map(|sd| [est.mu_hat - z * sd, est.mu_hat + z * sd]),
        }
    }
}
