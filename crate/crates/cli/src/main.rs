use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rocvb::asymptotics::{estimate_with_variance, TcfReport};
use rocvb::data::{load_csv, verification_rate, CutPair, Dataset};
use rocvb::glm::Link;
use rocvb::model::{Fits, Method, WorkingModels};
use rocvb::par::{with_threads, Exec};
use rocvb::resampling::{bootstrap, BootstrapPlan, Statistic};
use rocvb::simlab::{run_monte_carlo, Study, StudyConfig};
use rocvb::tcf::{
    empirical_quantile, roc_projection, roc_surface, write_curve_csv, ClassPair, GridSpec,
};
use rocvb::vus::{vus_estimate, VusReport};

#[derive(Parser)]
#[command(name = "rocvb", version, about = "Three-class ROC analysis under verification bias")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true, env = "ROC_SURFACE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TCFs with asymptotic (and optionally bootstrap) uncertainty at given cut pairs.
    Tcf {
        #[command(flatten)]
        common: Common,
        /// Cut pair `c1,c2`; repeatable.
        #[arg(long, value_parser = parse_cut, required = true)]
        cut: Vec<CutPair>,
        data: PathBuf,
    },
    /// TCF surface over a grid of cut pairs.
    Surface {
        #[command(flatten)]
        common: Common,
        /// `quantiles:K`, `levels:q1,q2,...`, `observed`, or `c1,c2;c1,c2;...`.
        #[arg(long, default_value = "quantiles:99")]
        grid: String,
        data: PathBuf,
    },
    /// Two-class ROC curve recovered from the surface.
    Curve {
        #[command(flatten)]
        common: Common,
        /// Class pair: 12, 23 or 13.
        #[arg(long, default_value = "12")]
        pair: ClassPair,
        /// `quantiles:K`, `levels:q1,...`, `observed`, or `c;c;...`.
        #[arg(long, default_value = "observed")]
        grid: String,
        data: PathBuf,
    },
    /// Volume under the ROC surface.
    Vus {
        #[command(flatten)]
        common: Common,
        data: PathBuf,
    },
    /// Monte Carlo study.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        study: Study,
        /// Covariance setting for studies 1 and 2.
        #[arg(long)]
        lambda: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Cut pair `c1,c2`; repeatable. Defaults to the study's cuts.
        #[arg(long, value_parser = parse_cut)]
        cut: Vec<CutPair>,
    },
    /// Dataset checks and working-model diagnostics.
    Validate {
        #[arg(long, default_value = "logit")]
        link: Link,
        #[arg(long, short)]
        out: Option<PathBuf>,
        data: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// full, fi, msi, ipw, spe or all.
    #[arg(long, default_value = "all")]
    method: MethodArg,
    /// Link of the verification model.
    #[arg(long, default_value = "logit")]
    link: Link,
    /// Bootstrap replicates (0 disables).
    #[arg(long, default_value_t = 0)]
    boot: usize,
    #[arg(long, default_value_t = 20240601)]
    seed: u64,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Output format; inferred from the `--out` extension when omitted.
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy)]
enum MethodArg {
    All,
    One(Method),
}

impl std::str::FromStr for MethodArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            Ok(MethodArg::All)
        } else {
            s.parse().map(MethodArg::One)
        }
    }
}

fn parse_cut(s: &str) -> Result<CutPair, String> {
    let (a, b) = s.split_once(',').ok_or("expected `c1,c2`")?;
    let c1: f64 = a.trim().parse().map_err(|e| format!("c1: {e}"))?;
    let c2: f64 = b.trim().parse().map_err(|e| format!("c2: {e}"))?;
    CutPair::new(c1, c2).map_err(|e| e.to_string())
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = error
            .chain()
            .any(|e| e.downcast_ref::<rocvb::Error>().is_some_and(|e| e.is_numerical()));
        Failure {
            code: if numerical { 3 } else { 2 },
            error,
        }
    }
}

impl From<rocvb::Error> for Failure {
    fn from(e: rocvb::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome<T> = Result<T, Failure>;

impl Common {
    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| infer_format(self.out.as_deref()))
    }

    fn plan(&self) -> Outcome<Option<BootstrapPlan>> {
        if self.boot == 0 {
            return Ok(None);
        }
        Ok(Some(BootstrapPlan::new(self.boot, self.seed)?))
    }

    fn check(&self) -> Outcome<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(anyhow!("--level must lie in (0, 1), got {}", self.level).into());
        }
        Ok(())
    }
}

fn infer_format(out: Option<&Path>) -> Format {
    match out.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Json,
    }
}

/// Methods to run, plus the ones skipped with their reasons. An explicitly
/// requested method that cannot run is an error.
fn select(arg: MethodArg, ds: &Dataset) -> Outcome<(Vec<Method>, Vec<Value>)> {
    match arg {
        MethodArg::One(m) => match m.unavailable_reason(ds) {
            Some(reason) => Err(anyhow!("--method {}: {reason}", m.name().to_lowercase()).into()),
            None => Ok((vec![m], vec![])),
        },
        MethodArg::All => {
            let mut run = Vec::new();
            let mut skipped = Vec::new();
            for m in Method::ALL {
                match m.unavailable_reason(ds) {
                    Some(reason) => skipped.push(json!({ "method": m, "reason": reason })),
                    None => run.push(m),
                }
            }
            if run.is_empty() {
                return Err(anyhow!("no method can run on this dataset").into());
            }
            Ok((run, skipped))
        }
    }
}

fn load(path: &Path) -> Outcome<Dataset> {
    Ok(load_csv(path, None).with_context(|| format!("reading {}", path.display()))?)
}

fn fit(ds: &Dataset, link: Link, methods: &[Method]) -> Outcome<(WorkingModels, Fits)> {
    let models = WorkingModels::full(ds.p(), link);
    let fits = Fits::fit_for(ds, &models, methods).context("fitting working models")?;
    Ok((models, fits))
}

fn emit(out: Option<&Path>, body: &str) -> Outcome<()> {
    let write = |w: &mut dyn Write| -> io::Result<()> {
        w.write_all(body.as_bytes())?;
        if !body.ends_with('\n') {
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    match out {
        Some(p) => {
            let mut f = BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            write(&mut f).with_context(|| format!("writing {}", p.display()))?;
        }
        None => write(&mut io::stdout().lock()).context("writing stdout")?,
    }
    Ok(())
}

fn to_json(v: &Value) -> Outcome<String> {
    Ok(serde_json::to_string_pretty(v).map_err(anyhow::Error::from)?)
}

fn opt3(x: Option<[f64; 3]>) -> [String; 3] {
    match x {
        Some(v) => v.map(|x| x.to_string()),
        None => Default::default(),
    }
}

fn run_tcf(common: &Common, cuts: &[CutPair], data: &Path) -> Outcome<String> {
    let ds = load(data)?;
    let (methods, skipped) = select(common.method, &ds)?;
    let (models, fits) = fit(&ds, common.link, &methods)?;
    let plan = common.plan()?;
    let mut reports = Vec::new();
    for &m in &methods {
        for cut in cuts {
            let mut est = estimate_with_variance(m, &ds, cut, &fits)
                .with_context(|| format!("{m} at {cut}"))?;
            if let Some(plan) = &plan {
                let stat = Statistic::Tcf { method: m, cut: *cut };
                let b = bootstrap(plan, &ds, &stat, &models, Exec::Parallel)
                    .with_context(|| format!("{m} bootstrap at {cut}"))?;
                est.boot_sd = Some([b.sd[0], b.sd[1], b.sd[2]]);
            }
            reports.push(TcfReport::new(&est, common.level));
        }
    }
    match common.format() {
        Format::Json => to_json(&json!({ "estimates": reports, "skipped": skipped })),
        Format::Csv => {
            let mut s = String::from(
                "method,c1,c2,tcf1,tcf2,tcf3,asy_sd1,asy_sd2,asy_sd3,boot_sd1,boot_sd2,boot_sd3,\
                 ci1_lo,ci1_hi,ci2_lo,ci2_hi,ci3_lo,ci3_hi\n",
            );
            for r in &reports {
                let [a1, a2, a3] = opt3(r.asy_sd);
                let [b1, b2, b3] = opt3(r.boot_sd);
                let ci: Vec<String> = match r.ci {
                    Some(ci) => ci.iter().flat_map(|c| c.map(|x| x.to_string())).collect(),
                    None => vec![String::new(); 6],
                };
                s += &format!(
                    "{},{},{},{},{},{},{a1},{a2},{a3},{b1},{b2},{b3},{}\n",
                    r.method,
                    r.cut.c1(),
                    r.cut.c2(),
                    r.tcf[0],
                    r.tcf[1],
                    r.tcf[2],
                    ci.join(",")
                );
            }
            Ok(s)
        }
    }
}

fn parse_levels(s: &str) -> Outcome<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("--grid level `{x}`: {e}").into()))
        .collect()
}

fn parse_grid(spec: &str) -> Outcome<GridSpec> {
    if spec == "observed" {
        return Ok(GridSpec::ObservedPairs);
    }
    if let Some(k) = spec.strip_prefix("quantiles:") {
        let k: usize = k.parse().map_err(|e| anyhow!("--grid quantiles:K: {e}"))?;
        if k == 0 {
            return Err(anyhow!("--grid quantiles:K needs K >= 1").into());
        }
        return Ok(GridSpec::Quantiles((1..=k).map(|i| i as f64 / (k + 1) as f64).collect()));
    }
    if let Some(levels) = spec.strip_prefix("levels:") {
        return Ok(GridSpec::Quantiles(parse_levels(levels)?));
    }
    let cuts = spec
        .split(';')
        .map(|c| parse_cut(c).map_err(|e| anyhow!("--grid `{c}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridSpec::Explicit(cuts))
}

fn run_surface(common: &Common, grid: &str, data: &Path) -> Outcome<String> {
    let grid = parse_grid(grid)?;
    if common.boot > 0 {
        return Err(anyhow!("--boot is not supported for surface; use tcf at selected cuts").into());
    }
    let ds = load(data)?;
    let (methods, skipped) = select(common.method, &ds)?;
    let cuts = grid.resolve(&ds)?;
    let (_, fits) = fit(&ds, common.link, &methods)?;
    let mut surfaces = Vec::new();
    for &m in &methods {
        let pts = roc_surface(m, &ds, &cuts, &fits, Exec::Parallel).with_context(|| format!("{m} surface"))?;
        surfaces.push((m, pts));
    }
    match common.format() {
        Format::Json => {
            let out: Vec<Value> = surfaces
                .iter()
                .map(|(m, pts)| {
                    let points: Vec<Value> =
                        pts.iter().map(|p| json!({ "cut": p.cut, "tcf": p.tcf })).collect();
                    json!({ "method": m, "points": points })
                })
                .collect();
            to_json(&json!({ "surfaces": out, "skipped": skipped }))
        }
        Format::Csv => {
            let mut s = String::from("method,c1,c2,tcf1,tcf2,tcf3\n");
            for (m, pts) in &surfaces {
                for p in pts {
                    s += &format!(
                        "{m},{},{},{},{},{}\n",
                        p.cut.c1(),
                        p.cut.c2(),
                        p.tcf[0],
                        p.tcf[1],
                        p.tcf[2]
                    );
                }
            }
            Ok(s)
        }
    }
}

fn curve_cuts(spec: &str, ds: &Dataset) -> Outcome<Vec<f64>> {
    let mut t = ds.t_values();
    t.sort_by(f64::total_cmp);
    let mut cuts = if spec == "observed" {
        t.clone()
    } else if let Some(k) = spec.strip_prefix("quantiles:") {
        let k: usize = k.parse().map_err(|e| anyhow!("--grid quantiles:K: {e}"))?;
        (1..=k).map(|i| empirical_quantile(&t, i as f64 / (k + 1) as f64)).collect()
    } else if let Some(levels) = spec.strip_prefix("levels:") {
        let levels = parse_levels(levels)?;
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(anyhow!("--grid levels must lie in [0, 1]").into());
        }
        levels.iter().map(|&l| empirical_quantile(&t, l)).collect()
    } else {
        spec.split(';')
            .map(|c| c.trim().parse::<f64>().map_err(|e| anyhow!("--grid `{c}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    if cuts.is_empty() {
        return Err(anyhow!("--grid produced no cut values").into());
    }
    Ok(cuts)
}

fn run_curve(common: &Common, pair: ClassPair, grid: &str, data: &Path) -> Outcome<String> {
    let ds = load(data)?;
    let cuts = curve_cuts(grid, &ds)?;
    let (methods, skipped) = select(common.method, &ds)?;
    let (_, fits) = fit(&ds, common.link, &methods)?;
    let mut curves = Vec::new();
    for &m in &methods {
        curves.push((m, roc_projection(m, &ds, pair, &cuts, &fits).with_context(|| format!("{m} curve"))?));
    }
    match common.format() {
        Format::Json => {
            let out: Vec<Value> =
                curves.iter().map(|(m, pts)| json!({ "method": m, "points": pts })).collect();
            to_json(&json!({ "pair": pair, "curves": out, "skipped": skipped }))
        }
        Format::Csv => {
            let mut s = String::new();
            for (i, (m, pts)) in curves.iter().enumerate() {
                let mut buf = Vec::new();
                write_curve_csv(pts, &mut buf)?;
                let text = String::from_utf8(buf).map_err(anyhow::Error::from)?;
                for (j, line) in text.lines().enumerate() {
                    match j {
                        0 if i == 0 => s += &format!("method,{line}\n"),
                        0 => {}
                        _ => s += &format!("{m},{line}\n"),
                    }
                }
            }
            Ok(s)
        }
    }
}

fn run_vus(common: &Common, data: &Path) -> Outcome<String> {
    let ds = load(data)?;
    let (methods, skipped) = select(common.method, &ds)?;
    let (models, fits) = fit(&ds, common.link, &methods)?;
    let plan = common.plan()?;
    let mut reports = Vec::new();
    for &m in &methods {
        let mut est = vus_estimate(m, &ds, &fits).with_context(|| format!("{m} VUS"))?;
        if let Some(plan) = &plan {
            let b = bootstrap(plan, &ds, &Statistic::Vus { method: m }, &models, Exec::Parallel)
                .with_context(|| format!("{m} VUS bootstrap"))?;
            est.boot_sd = Some(b.sd[0]);
        }
        reports.push(VusReport::new(&est, common.level));
    }
    match common.format() {
        Format::Json => to_json(&json!({ "estimates": reports, "skipped": skipped })),
        Format::Csv => {
            let mut s = String::from("method,estimate,asy_sd,boot_sd,ci_lo,ci_hi\n");
            let show = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            for r in &reports {
                s += &format!(
                    "{},{},{},{},{},{}\n",
                    r.method,
                    r.mu,
                    show(r.asy_sd),
                    show(r.boot_sd),
                    show(r.ci.map(|c| c[0])),
                    show(r.ci.map(|c| c[1]))
                );
            }
            Ok(s)
        }
    }
}

struct SimArgs<'a> {
    study: Study,
    lambda: Option<usize>,
    n: Option<usize>,
    reps: Option<usize>,
    cuts: &'a [CutPair],
}

fn run_simulate(common: &Common, args: SimArgs) -> Outcome<String> {
    let mut config = StudyConfig::new(args.study).with_seed(common.seed);
    if let Some(l) = args.lambda {
        if !args.study.uses_lambda() {
            return Err(anyhow!("--lambda applies to studies s1 and s2 only").into());
        }
        config = config.with_lambda(l);
    }
    if let Some(n) = args.n {
        config = config.with_n(n);
    }
    if let Some(r) = args.reps {
        config = config.with_reps(r);
    }
    if !args.cuts.is_empty() {
        if args.study.is_vus() {
            return Err(anyhow!("--cut does not apply to VUS studies").into());
        }
        config.cuts = args.cuts.to_vec();
    }
    if let MethodArg::One(m) = common.method {
        config.methods = vec![m];
    }
    config.boot = common.boot;
    config.validate()?;
    let report = run_monte_carlo(&config, Exec::Parallel)?;
    match common.format() {
        Format::Json => Ok(report.to_json()?),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf).map_err(anyhow::Error::from)?)
        }
    }
}

fn run_validate(link: Link, data: &Path) -> Outcome<String> {
    let ds = load(data)?;
    let models = WorkingModels::full(ds.p(), link);
    let counts = ds.verified_class_counts();
    let mut diagnostics = serde_json::Map::new();
    diagnostics.insert("n".into(), json!(ds.n()));
    diagnostics.insert("covariates".into(), json!(ds.p()));
    diagnostics.insert("verified".into(), json!(ds.n_verified()));
    diagnostics.insert("verification_rate".into(), json!(verification_rate(&ds)));
    diagnostics.insert("verified_class_counts".into(), json!(counts));

    let disease = if Method::Fi.unavailable_reason(&ds).is_some() {
        json!({ "status": "unavailable", "reason": Method::Fi.unavailable_reason(&ds) })
    } else {
        match Fits::fit(&ds, &models, Method::Fi) {
            Ok(f) => {
                let g = f.disease.as_ref().expect("disease fit");
                json!({
                    "status": "ok",
                    "coefficients": g.tau,
                    "iterations": g.iterations,
                    "clipped": f.rho.as_ref().map(|r| r.clipped),
                })
            }
            Err(e) => json!({ "status": "failed", "error": e.to_string() }),
        }
    };
    let verification = if Method::Ipw.unavailable_reason(&ds).is_some() {
        json!({ "status": "unavailable", "reason": Method::Ipw.unavailable_reason(&ds) })
    } else {
        match Fits::fit(&ds, &models, Method::Ipw) {
            Ok(f) => {
                let g = f.verification.as_ref().expect("verification fit");
                json!({
                    "status": "ok",
                    "link": link,
                    "coefficients": g.tau,
                    "iterations": g.iterations,
                    "clipped": f.pi.as_ref().map(|p| p.clipped),
                })
            }
            Err(e) => json!({ "status": "failed", "error": e.to_string() }),
        }
    };
    diagnostics.insert("disease_model".into(), disease);
    diagnostics.insert("verification_model".into(), verification);
    let methods: Vec<Value> = Method::ALL
        .iter()
        .map(|m| match m.unavailable_reason(&ds) {
            Some(reason) => json!({ "method": m, "available": false, "reason": reason }),
            None => json!({ "method": m, "available": true }),
        })
        .collect();
    diagnostics.insert("methods".into(), Value::Array(methods));
    to_json(&Value::Object(diagnostics))
}

fn dispatch(command: Command) -> Outcome<()> {
    match command {
        Command::Tcf { common, cut, data } => {
            common.check()?;
            emit(common.out.as_deref(), &run_tcf(&common, &cut, &data)?)
        }
        Command::Surface { common, grid, data } => {
            common.check()?;
            emit(common.out.as_deref(), &run_surface(&common, &grid, &data)?)
        }
        Command::Curve { common, pair, grid, data } => {
            common.check()?;
            emit(common.out.as_deref(), &run_curve(&common, pair, &grid, &data)?)
        }
        Command::Vus { common, data } => {
            common.check()?;
            emit(common.out.as_deref(), &run_vus(&common, &data)?)
        }
        Command::Simulate { common, study, lambda, n, reps, cut } => {
            common.check()?;
            let body = run_simulate(&common, SimArgs { study, lambda, n, reps, cuts: &cut })?;
            emit(common.out.as_deref(), &body)
        }
        Command::Validate { link, out, data } => emit(out.as_deref(), &run_validate(link, &data)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    match with_threads(cli.threads, || dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
