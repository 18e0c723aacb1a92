//! Nonparametric row bootstrap with model refitting inside each replicate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::estimate_with_variance;
use crate::data::{CutPair, Dataset};
use crate::error::{Error, Result};
use crate::model::{Fits, Method, WorkingModels};
use crate::par::Exec;
use crate::tcf::{empirical_quantile, estimate_tcf};
use crate::vus::{vus_point, Engine};

pub const DEFAULT_REPLICATES: usize = 250;
/// Failure share above which a result is flagged.
pub const FAILURE_WARNING_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub replicates: usize,
    pub seed: u64,
}

impl BootstrapPlan {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        if replicates < 2 {
            return Err(Error::Contract("bootstrap needs at least 2 replicates".into()));
        }
        Ok(BootstrapPlan { replicates, seed })
    }

    /// Resampled row indices for replicate `b`; depends only on `(seed, b)`.
    pub fn indices(&self, b: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(b as u64);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    }
}

/// What to bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Statistic {
    Tcf { method: Method, cut: CutPair },
    Vus { method: Method },
}

impl Statistic {
    pub fn method(&self) -> Method {
        match *self {
            Statistic::Tcf { method, .. } | Statistic::Vus { method } => method,
        }
    }

    /// Refit the working models on `ds` and evaluate.
    pub fn evaluate(&self, ds: &Dataset, models: &WorkingModels) -> Result<Vec<f64>> {
        let method = self.method();
        let fits = Fits::fit(ds, models, method)?;
        match *self {
            Statistic::Tcf { cut, .. } => Ok(estimate_tcf(method, ds, &cut, &fits)?.tcf.to_vec()),
            Statistic::Vus { .. } => Ok(vec![vus_point(method, ds, &fits, Engine::Fast)?.mu_hat]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub sd: Vec<f64>,
    /// `[2.5%, 97.5%]` per component.
    pub percentiles: Vec<[f64; 2]>,
    pub replicates: usize,
    pub n_failed: usize,
    /// Set when more than a fifth of the replicates failed.
    pub warning: bool,
    /// `(replicate, message)` for each failure.
    pub failures: Vec<(usize, String)>,
}

/// Bootstrap an arbitrary statistic of a dataset.
pub fn bootstrap_with<F>(plan: &BootstrapPlan, ds: &Dataset, exec: Exec, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync + Send,
{
    let n = ds.n();
    let outcomes = exec.map(plan.replicates, |b| stat(&ds.resample(&plan.indices(b, n))));
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(plan.replicates);
    let mut failures = Vec::new();
    for (b, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => values.push(v),
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if values.is_empty() {
        return Err(Error::AllReplicatesFailed(plan.replicates));
    }
    let dim = values[0].len();
    if values.iter().any(|v| v.len() != dim) {
        return Err(Error::Internal("bootstrap statistic changed dimension".into()));
    }
    let mut sd = Vec::with_capacity(dim);
    let mut percentiles = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut col: Vec<f64> = values.iter().map(|v| v[c]).collect();
        sd.push(sample_sd(&col));
        col.sort_by(f64::total_cmp);
        percentiles.push([empirical_quantile(&col, 0.025), empirical_quantile(&col, 0.975)]);
    }
    let n_failed = failures.len();
    Ok(BootstrapResult {
        sd,
        percentiles,
        replicates: plan.replicates,
        n_failed,
        warning: n_failed as f64 / plan.replicates as f64 > FAILURE_WARNING_SHARE,
        failures,
    })
}

/// Sample standard deviation with the `n - 1` divisor; zero for fewer than
/// two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Bootstrap a TCF or VUS statistic, refitting the working models each time.
pub fn bootstrap(
    plan: &BootstrapPlan,
    ds: &Dataset,
    statistic: &Statistic,
    models: &WorkingModels,
    exec: Exec,
) -> Result<BootstrapResult> {
    statistic.evaluate(ds, models)?;
    bootstrap_with(plan, ds, exec, |sample| statistic.evaluate(sample, models))
}

/// TCF estimate with both asymptotic and bootstrap sds filled in.
pub fn tcf_with_bootstrap(
    method: Method,
    ds: &Dataset,
    cut: &CutPair,
    models: &WorkingModels,
    plan: &BootstrapPlan,
    exec: Exec,
) -> Result<crate::tcf::TcfEstimate> {
    let fits = Fits::fit(ds, models, method)?;
    let mut est = estimate_with_variance(method, ds, cut, &fits)?;
    let boot = bootstrap(plan, ds, &Statistic::Tcf { method, cut: *cut }, models, exec)?;
    est.boot_sd = Some([boot.sd[0], boot.sd[1], boot.sd[2]]);
    Ok(est)
}
