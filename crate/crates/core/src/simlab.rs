//! Data generators for the simulation studies, their true TCF and VUS values,
//! and a Monte Carlo runner producing table-style summaries.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::estimate_with_variance;
use crate::data::{fmt_cut, verification_rate, Class, CutPair, Dataset, DesignSpec, Subject, Term};
use crate::error::{Error, Result};
use crate::glm::Link;
use crate::model::{Fits, Method, WorkingModels};
use crate::par::Exec;
use crate::resampling::{bootstrap_with, sample_sd, BootstrapPlan};
use crate::special::{bisect, integrate, norm_cdf, norm_pdf, norm_quantile};
use crate::tcf::estimate_tcf;
use crate::vus::{vus_estimate, vus_point, Engine};

/// Class prevalences shared by every study.
pub const THETA: [f64; 3] = [0.4, 0.35, 0.25];
const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    S1,
    S2,
    S3,
    S4,
    Vus1,
    Vus2,
    Vus3,
}

impl Study {
    pub fn is_vus(self) -> bool {
        matches!(self, Study::Vus1 | Study::Vus2 | Study::Vus3)
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, Study::S1 | Study::S2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Study::S1 => "s1",
            Study::S2 => "s2",
            Study::S3 => "s3",
            Study::S4 => "s4",
            Study::Vus1 => "vus1",
            Study::Vus2 => "vus2",
            Study::Vus3 => "vus3",
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Study::S1 => 250,
            Study::S2 | Study::S3 | Study::S4 => 1000,
            _ => 200,
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            Study::S1 => 500,
            Study::S2 | Study::S3 | Study::S4 => 200,
            _ => 300,
        }
    }

    pub fn default_cuts(self) -> Vec<CutPair> {
        let pairs: &[(f64, f64)] = match self {
            Study::S1 | Study::S2 => &[(2., 4.), (2., 5.), (2., 7.), (4., 5.), (4., 7.), (5., 7.)],
            Study::S3 | Study::S4 => &[
                (-1., -0.5),
                (-1., 0.7),
                (-1., 1.3),
                (-0.5, 0.7),
                (-0.5, 1.3),
                (0.7, 1.3),
            ],
            _ => &[],
        };
        pairs
            .iter()
            .map(|&(a, b)| CutPair::new(a, b).expect("static cuts are ordered"))
            .collect()
    }

    /// Working models used by the study: correct ones for S1 and the VUS
    /// settings, a verification model on `t` only for S2, a disease model on
    /// `t` only for S3, and both misspecified for S4.
    pub fn working_models(self) -> WorkingModels {
        let correct = WorkingModels::full(1, Link::Logit);
        match self {
            Study::S2 => WorkingModels {
                verification: DesignSpec::t_only(),
                ..correct
            },
            Study::S3 => WorkingModels {
                disease: DesignSpec::t_only(),
                ..correct
            },
            Study::S4 => WorkingModels {
                disease: DesignSpec::t_only(),
                verification: DesignSpec::with_terms(&[Term::T, Term::AbsPow(0, 2.0 / 3.0)])
                    .expect("valid terms"),
                link: Link::Logit,
            },
            _ => correct,
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Study::S1),
            "s2" => Ok(Study::S2),
            "s3" => Ok(Study::S3),
            "s4" => Ok(Study::S4),
            "vus1" => Ok(Study::Vus1),
            "vus2" => Ok(Study::Vus2),
            "vus3" => Ok(Study::Vus3),
            other => Err(format!("unknown study `{other}`")),
        }
    }
}

/// Bivariate normal `(T, A) | class` design: class means `k * mean` for
/// `k = 1, 2, 3` and common covariance `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NormalDesign {
    lambda: [[f64; 2]; 2],
    step: [f64; 2],
}

impl NormalDesign {
    fn mean(&self, class: usize) -> [f64; 2] {
        let k = (class + 1) as f64;
        [k * self.step[0], k * self.step[1]]
    }

    fn sd_t(&self) -> f64 {
        self.lambda[0][0].sqrt()
    }

    fn sd_a(&self) -> f64 {
        self.lambda[1][1].sqrt()
    }

    fn draw(&self, class: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let [[l11, l12], [_, l22]] = self.lambda;
        let c11 = l11.sqrt();
        let c21 = l12 / c11;
        let c22 = (l22 - c21 * c21).sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let m = self.mean(class);
        (m[0] + c11 * z1, m[1] + c21 * z1 + c22 * z2)
    }
}

const LAMBDAS: [[[f64; 2]; 2]; 3] = [
    [[1.75, 0.1], [0.1, 2.5]],
    [[2.5, 1.5], [1.5, 2.5]],
    [[5.5, 3.0], [3.0, 2.5]],
];

/// Full study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study: Study,
    /// Covariance choice 1..=3 for S1/S2.
    pub lambda_index: Option<usize>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub cuts: Vec<CutPair>,
    pub methods: Vec<Method>,
    pub models: WorkingModels,
    /// Compute sandwich / U-statistic asymptotic sds.
    pub asymptotic: bool,
    /// Bootstrap replicates per Monte Carlo replicate (0 disables).
    pub boot: usize,
}

impl StudyConfig {
    pub fn new(study: Study) -> StudyConfig {
        StudyConfig {
            study,
            lambda_index: study.uses_lambda().then_some(1),
            n: study.default_n(),
            reps: study.default_reps(),
            seed: 20_240_601,
            cuts: study.default_cuts(),
            methods: Method::CORRECTED.to_vec(),
            models: study.working_models(),
            asymptotic: true,
            boot: 0,
        }
    }

    pub fn with_lambda(mut self, index: usize) -> Self {
        self.lambda_index = Some(index);
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.study.uses_lambda() {
            match self.lambda_index {
                Some(1..=3) => {}
                _ => return Err(Error::Contract("lambda index must be 1, 2 or 3".into())),
            }
        } else if self.lambda_index.is_some() {
            return Err(Error::Contract(format!(
                "study {} has a fixed covariance; lambda does not apply",
                self.study
            )));
        }
        if self.n < 4 {
            return Err(Error::Contract("sample size must be at least 4".into()));
        }
        if self.reps == 0 {
            return Err(Error::Contract("at least one replicate is required".into()));
        }
        if !self.study.is_vus() && self.cuts.is_empty() {
            return Err(Error::Contract("no cut pairs given".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Contract("no methods given".into()));
        }
        if self.boot == 1 {
            return Err(Error::Contract("bootstrap needs at least 2 replicates".into()));
        }
        Ok(())
    }

    fn normal_design(&self) -> Option<NormalDesign> {
        match self.study {
            Study::S1 | Study::S2 => Some(NormalDesign {
                lambda: LAMBDAS[self.lambda_index.unwrap_or(1) - 1],
                step: [2.0, 1.0],
            }),
            Study::Vus1 => Some(NormalDesign {
                lambda: [[1.2, 1.0], [1.0, 1.0]],
                step: [3.0, 2.0],
            }),
            Study::Vus2 => Some(NormalDesign {
                lambda: LAMBDAS[0],
                step: [2.0, 1.0],
            }),
            Study::Vus3 => Some(NormalDesign {
                lambda: LAMBDAS[2],
                step: [2.0, 1.0],
            }),
            Study::S3 | Study::S4 => None,
        }
    }

    /// Population 80th percentiles of `T` and `A` (S2 only).
    pub fn s2_thresholds(&self) -> Option<(f64, f64)> {
        if self.study != Study::S2 {
            return None;
        }
        let nd = self.normal_design()?;
        let pct = |coord: usize, sd: f64| {
            let cdf = |x: f64| {
                (0..3)
                    .map(|k| THETA[k] * norm_cdf((x - nd.mean(k)[coord]) / sd))
                    .sum::<f64>()
                    - 0.8
            };
            bisect(cdf, -50.0, 50.0, 1e-12)
        };
        Some((pct(0, nd.sd_t()), pct(1, nd.sd_a())))
    }
}

fn draw_class(rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    if u < THETA[0] {
        0
    } else if u < THETA[0] + THETA[1] {
        1
    } else {
        2
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One simulated sample: the observed data and the same subjects with every
/// class revealed.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub observed: Dataset,
    pub complete: Dataset,
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Generate replicate `rep` of a study.
pub fn generate_sample(config: &StudyConfig, rep: usize) -> Result<SimSample> {
    config.validate()?;
    let mut rng = rep_rng(config.seed, rep);
    Ok(sample_with(config, &mut rng))
}

fn sample_with(config: &StudyConfig, rng: &mut ChaCha8Rng) -> SimSample {
    let thresholds = config.s2_thresholds();
    let h1 = norm_quantile(THETA[0]);
    let h2 = norm_quantile(THETA[0] + THETA[1]);
    let nd = config.normal_design();
    let mut observed = Vec::with_capacity(config.n);
    let mut complete = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let (class, t, a) = match nd {
            Some(nd) => {
                let k = draw_class(rng);
                let (t, a) = nd.draw(k, rng);
                (k, t, a)
            }
            None => {
                let z1: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
                let z2: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
                let z = z1 + z2;
                let k = if z <= h1 {
                    0
                } else if z <= h2 {
                    1
                } else {
                    2
                };
                let e1: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
                let e2: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
                (k, 0.5 * z + e1, z + e2)
            }
        };
        let pi = match config.study {
            Study::S1 => logistic(0.5 - 0.3 * t + 0.75 * a),
            Study::S2 => {
                let (t80, a80) = thresholds.expect("S2 thresholds");
                0.35 + if t > t80 { 0.3 } else { 0.0 } + if a > a80 { 0.35 } else { 0.0 }
            }
            Study::S3 | Study::S4 => logistic(0.1 - 1.53 * t + a),
            Study::Vus1 => logistic(1.0 - 2.87 * t + 4.06 * a),
            Study::Vus2 | Study::Vus3 => logistic(1.0 - 2.2 * t + 4.0 * a),
        };
        let u: f64 = rng.random();
        let verified = u < pi;
        let cls = Class::from_index(class);
        observed.push(Subject::new(t, vec![a], verified, verified.then_some(cls)));
        complete.push(Subject::new(t, vec![a], true, Some(cls)));
    }
    SimSample {
        observed: Dataset::new(observed).expect("generated subjects are valid"),
        complete: Dataset::new(complete).expect("generated subjects are valid"),
    }
}

/// Observed data for replicate `rep`.
pub fn generate(config: &StudyConfig, rep: usize) -> Result<Dataset> {
    Ok(generate_sample(config, rep)?.observed)
}

/// True TCFs at a cut pair.
pub fn true_tcf(config: &StudyConfig, cut: &CutPair) -> Result<[f64; 3]> {
    let [c1, c2] = cut.cuts();
    match config.study {
        Study::S1 | Study::S2 => {
            let nd = config.normal_design().expect("normal design");
            let s = nd.sd_t();
            let m = |k: usize| nd.mean(k)[0];
            Ok([
                norm_cdf((c1 - m(0)) / s),
                norm_cdf((c2 - m(1)) / s) - norm_cdf((c1 - m(1)) / s),
                1.0 - norm_cdf((c2 - m(2)) / s),
            ])
        }
        Study::S3 | Study::S4 => {
            let h1 = norm_quantile(THETA[0]);
            let h2 = norm_quantile(THETA[0] + THETA[1]);
            let below = |c: f64| move |z: f64| norm_cdf((c - 0.5 * z) / 0.5) * norm_pdf(z);
            let tcf1 = integrate(below(c1), f64::NEG_INFINITY, h1, QUADRATURE_TOL)? / norm_cdf(h1);
            let mid2 = integrate(below(c2), h1, h2, QUADRATURE_TOL)?
                - integrate(below(c1), h1, h2, QUADRATURE_TOL)?;
            let tcf2 = mid2 / (norm_cdf(h2) - norm_cdf(h1));
            let tcf3 =
                1.0 - integrate(below(c2), h2, f64::INFINITY, QUADRATURE_TOL)? / (1.0 - norm_cdf(h2));
            Ok([tcf1, tcf2, tcf3])
        }
        _ => Err(Error::Contract(format!(
            "true TCFs are defined for s1..s4, not {}",
            config.study
        ))),
    }
}

/// True VUS `P(T_1 < T_2 < T_3)` for independent class-specific test values.
pub fn true_vus(config: &StudyConfig) -> Result<f64> {
    let nd = config
        .normal_design()
        .ok_or_else(|| Error::Contract("true VUS needs a normal design study".into()))?;
    let s = nd.sd_t();
    let (m1, m2, m3) = (nd.mean(0)[0], nd.mean(1)[0], nd.mean(2)[0]);
    integrate(
        |x| norm_pdf((x - m2) / s) / s * norm_cdf((x - m1) / s) * (1.0 - norm_cdf((x - m3) / s)),
        f64::NEG_INFINITY,
        f64::INFINITY,
        QUADRATURE_TOL,
    )
}

/// Summary of one (cut, method) cell across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    /// `None` for VUS studies.
    pub cut: Option<CutPair>,
    pub method: Method,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub mc_sd: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asy_sd: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_sd: Option<Vec<f64>>,
    /// Replicates that produced a value.
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: StudyConfig,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<ReplicateFailure>,
    pub mean_verification_rate: f64,
}

impl SimReport {
    pub fn cell(&self, method: Method, cut: Option<&CutPair>) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.cut.as_ref() == cut)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Table-shaped CSV, one row per (cut, method).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        if self.config.study.is_vus() {
            writeln!(w, "method,true,vus,mc_sd,asy_sd,boot_sd,reps_ok")?;
            for c in &self.cells {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    c.method,
                    c.truth[0],
                    c.mean[0],
                    c.mc_sd[0],
                    fmt_opt(c.asy_sd.as_ref().map(|v| v[0])),
                    fmt_opt(c.boot_sd.as_ref().map(|v| v[0])),
                    c.successes
                )?;
            }
        } else {
            writeln!(
                w,
                "method,c1,c2,true1,true2,true3,tcf1,tcf2,tcf3,mc_sd1,mc_sd2,mc_sd3,\
                 asy_sd1,asy_sd2,asy_sd3,boot_sd1,boot_sd2,boot_sd3,reps_ok"
            )?;
            for c in &self.cells {
                let cut = c.cut.expect("TCF cells carry a cut");
                write!(w, "{},{},{}", c.method, fmt_cut(cut.c1()), fmt_cut(cut.c2()))?;
                for v in c.truth.iter().chain(&c.mean).chain(&c.mc_sd) {
                    write!(w, ",{v}")?;
                }
                for opt in [&c.asy_sd, &c.boot_sd] {
                    for k in 0..3 {
                        write!(w, ",{}", fmt_opt(opt.as_ref().map(|v| v[k])))?;
                    }
                }
                writeln!(w, ",{}", c.successes)?;
            }
        }
        Ok(())
    }
}

/// Values produced by one replicate for one (cut, method) cell.
#[derive(Debug, Clone)]
struct CellValue {
    est: Vec<f64>,
    asy_sd: Option<Vec<f64>>,
    boot_sd: Option<Vec<f64>>,
}

struct RepOutcome {
    /// Indexed like the report cells.
    values: Vec<Option<CellValue>>,
    failures: Vec<ReplicateFailure>,
    verification_rate: f64,
}

fn cell_keys(config: &StudyConfig) -> Vec<(Option<CutPair>, Method)> {
    if config.study.is_vus() {
        config.methods.iter().map(|&m| (None, m)).collect()
    } else {
        config
            .cuts
            .iter()
            .flat_map(|c| config.methods.iter().map(move |&m| (Some(*c), m)))
            .collect()
    }
}

fn run_replicate(config: &StudyConfig, rep: usize) -> RepOutcome {
    let mut rng = rep_rng(config.seed, rep);
    let sample = sample_with(config, &mut rng);
    let boot_seed: u64 = rng.random();
    let keys = cell_keys(config);
    let mut values = vec![None; keys.len()];
    let mut failures = Vec::new();
    let ds = &sample.observed;
    let verification_rate = verification_rate(ds);

    for &method in &config.methods {
        let data = if method == Method::Full { &sample.complete } else { ds };
        let fits = match Fits::fit(data, &config.models, method) {
            Ok(f) => f,
            Err(e) => {
                failures.push(ReplicateFailure {
                    rep,
                    method: Some(method),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let boot = (config.boot >= 2).then(|| BootstrapPlan {
            replicates: config.boot,
            seed: boot_seed,
        });
        for (slot, (cut, m)) in keys.iter().enumerate() {
            if *m != method {
                continue;
            }
            let value = evaluate_cell(config, data, &fits, method, cut.as_ref(), boot.as_ref());
            match value {
                Ok(v) => values[slot] = Some(v),
                Err(e) => failures.push(ReplicateFailure {
                    rep,
                    method: Some(method),
                    message: match cut {
                        Some(c) => format!("cut {c}: {e}"),
                        None => e.to_string(),
                    },
                }),
            }
        }
    }
    RepOutcome {
        values,
        failures,
        verification_rate,
    }
}

fn evaluate_cell(
    config: &StudyConfig,
    ds: &Dataset,
    fits: &Fits,
    method: Method,
    cut: Option<&CutPair>,
    boot: Option<&BootstrapPlan>,
) -> Result<CellValue> {
    let (est, asy_sd) = match cut {
        Some(cut) if config.asymptotic => {
            let e = estimate_with_variance(method, ds, cut, fits)?;
            (e.tcf.to_vec(), e.asy_sd.map(|s| s.to_vec()))
        }
        Some(cut) => (estimate_tcf(method, ds, cut, fits)?.tcf.to_vec(), None),
        None if config.asymptotic => {
            let e = vus_estimate(method, ds, fits)?;
            (vec![e.mu_hat], e.asy_sd().map(|s| vec![s]))
        }
        None => (vec![vus_point(method, ds, fits, Engine::Fast)?.mu_hat], None),
    };
    let boot_sd = match boot {
        Some(plan) => {
            let models = &config.models;
            let res = bootstrap_with(plan, ds, Exec::Sequential, |sample| {
                let f = Fits::fit(sample, models, method)?;
                match cut {
                    Some(c) => Ok(estimate_tcf(method, sample, c, &f)?.tcf.to_vec()),
                    None => Ok(vec![vus_point(method, sample, &f, Engine::Fast)?.mu_hat]),
                }
            })?;
            Some(res.sd)
        }
        None => None,
    };
    Ok(CellValue {
        est,
        asy_sd,
        boot_sd,
    })
}

fn column_mean(rows: &[&Vec<f64>], k: usize) -> f64 {
    rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64
}

/// Run the Monte Carlo study. Replicates may run concurrently; the report is
/// assembled in replicate order.
pub fn run_monte_carlo(config: &StudyConfig, exec: Exec) -> Result<SimReport> {
    config.validate()?;
    let keys = cell_keys(config);
    let truths: Vec<Vec<f64>> = if config.study.is_vus() {
        let v = true_vus(config)?;
        keys.iter().map(|_| vec![v]).collect()
    } else {
        keys.iter()
            .map(|(cut, _)| true_tcf(config, cut.as_ref().expect("cut")).map(|t| t.to_vec()))
            .collect::<Result<_>>()?
    };
    let outcomes = exec.map(config.reps, |rep| run_replicate(config, rep));

    let mut failures = Vec::new();
    let mut vr = 0.0;
    for o in &outcomes {
        vr += o.verification_rate;
    }
    for o in &outcomes {
        failures.extend(o.failures.iter().cloned());
    }
    let mut cells = Vec::with_capacity(keys.len());
    for (slot, (cut, method)) in keys.iter().enumerate() {
        let vals: Vec<&CellValue> = outcomes.iter().filter_map(|o| o.values[slot].as_ref()).collect();
        let dim = truths[slot].len();
        let ests: Vec<&Vec<f64>> = vals.iter().map(|v| &v.est).collect();
        let (mean, mc_sd) = if ests.is_empty() {
            (vec![f64::NAN; dim], vec![f64::NAN; dim])
        } else {
            (
                (0..dim).map(|k| column_mean(&ests, k)).collect(),
                (0..dim)
                    .map(|k| sample_sd(&ests.iter().map(|r| r[k]).collect::<Vec<_>>()))
                    .collect(),
            )
        };
        let mean_of = |pick: &dyn Fn(&CellValue) -> Option<&Vec<f64>>| -> Option<Vec<f64>> {
            let rows: Vec<&Vec<f64>> = vals.iter().filter_map(|v| pick(v)).collect();
            (!rows.is_empty()).then(|| (0..dim).map(|k| column_mean(&rows, k)).collect())
        };
        cells.push(CellSummary {
            cut: *cut,
            method: *method,
            truth: truths[slot].clone(),
            mean,
            mc_sd,
            asy_sd: mean_of(&|v| v.asy_sd.as_ref()),
            boot_sd: mean_of(&|v| v.boot_sd.as_ref()),
            successes: vals.len(),
        });
    }
    Ok(SimReport {
        config: config.clone(),
        cells,
        failures,
        mean_verification_rate: vr / config.reps as f64,
    })
}
