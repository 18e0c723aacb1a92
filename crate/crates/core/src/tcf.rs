//! Pseudo-disease weights, class prevalences, and true class fractions at a
//! cut pair, over a grid of cut pairs, and along two-class projections.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_cut, CutPair, Dataset};
use crate::error::{Error, Result};
use crate::glm::{DiseaseProbs, VerificationProbs};
use crate::model::{Fits, Method};
use crate::par::Exec;

/// Denominators smaller than this in magnitude are rejected.
pub const DENOMINATOR_TOL: f64 = 1e-8;

/// Method-specific replacement for the class indicators, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDisease {
    pub dtilde: Vec<[f64; 3]>,
}

impl PseudoDisease {
    pub fn column_sums(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for row in &self.dtilde {
            for k in 0..3 {
                s[k] += row[k];
            }
        }
        s
    }

    pub fn check_denominators(&self) -> Result<[f64; 3]> {
        let sums = self.column_sums();
        for (k, &s) in sums.iter().enumerate() {
            if !(s.abs() > DENOMINATOR_TOL) {
                return Err(Error::DegenerateDenominator {
                    class: k + 1,
                    value: s.abs(),
                });
            }
        }
        Ok(sums)
    }
}

pub fn pseudo_disease(
    method: Method,
    ds: &Dataset,
    rho: Option<&DiseaseProbs>,
    pi: Option<&VerificationProbs>,
) -> Result<PseudoDisease> {
    let n = ds.n();
    let need_rho = || {
        rho.filter(|r| r.rho.len() == n).ok_or_else(|| {
            Error::Contract(format!("{method} requires disease probabilities for every subject"))
        })
    };
    let need_pi = || {
        pi.filter(|p| p.pi.len() == n).ok_or_else(|| {
            Error::Contract(format!(
                "{method} requires verification probabilities for every subject"
            ))
        })
    };
    let subjects = ds.subjects();
    let dtilde = match method {
        Method::Full => {
            if ds.any_unverified() {
                return Err(Error::Contract("FULL requires complete verification".into()));
            }
            subjects.iter().map(|s| s.indicators()).collect()
        }
        Method::Fi => need_rho()?.rho.clone(),
        Method::Msi => {
            let rho = need_rho()?;
            subjects
                .iter()
                .zip(&rho.rho)
                .map(|(s, r)| if s.verified { s.indicators() } else { *r })
                .collect()
        }
        Method::Ipw => {
            let pi = need_pi()?;
            subjects
                .iter()
                .zip(&pi.pi)
                .map(|(s, &p)| {
                    let w = s.v() / p;
                    let d = s.indicators();
                    [w * d[0], w * d[1], w * d[2]]
                })
                .collect()
        }
        Method::Spe => {
            let rho = need_rho()?;
            let pi = need_pi()?;
            subjects
                .iter()
                .zip(rho.rho.iter().zip(&pi.pi))
                .map(|(s, (r, &p))| {
                    let w = s.v() / p;
                    let d = s.indicators();
                    let mut row = [0.0; 3];
                    for k in 0..3 {
                        row[k] = w * d[k] - r[k] * (w - 1.0);
                    }
                    row
                })
                .collect()
        }
    };
    Ok(PseudoDisease { dtilde })
}

/// Class prevalences and the cumulative class fractions entering the TCFs.
///
/// `theta[k] = sum_i D~_ki / W` and `beta[j][k] = sum_i I(T_i >= c_j) D~_ki / W`
/// with `W = sum_i sum_k D~_ki` (equal to `n` except for IPW, where it is
/// `sum_i V_i / pi_i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBeta {
    pub theta: [f64; 3],
    /// Rows are cuts `c1`, `c2`; columns are classes.
    pub beta: [[f64; 3]; 2],
}

impl ThetaBeta {
    pub fn compute(dt: &PseudoDisease, t: &[f64], cut: &CutPair) -> ThetaBeta {
        let [c1, c2] = cut.cuts();
        let mut total = 0.0;
        let mut theta = [0.0; 3];
        let mut beta = [[0.0; 3]; 2];
        for (row, &ti) in dt.dtilde.iter().zip(t) {
            for k in 0..3 {
                total += row[k];
                theta[k] += row[k];
                if ti >= c1 {
                    beta[0][k] += row[k];
                }
                if ti >= c2 {
                    beta[1][k] += row[k];
                }
            }
        }
        for k in 0..3 {
            theta[k] /= total;
            beta[0][k] /= total;
            beta[1][k] /= total;
        }
        ThetaBeta { theta, beta }
    }

    /// The six free components `(theta1, theta2, beta11, beta12, beta22, beta23)`.
    pub fn alpha(&self) -> [f64; 6] {
        [
            self.theta[0],
            self.theta[1],
            self.beta[0][0],
            self.beta[0][1],
            self.beta[1][1],
            self.beta[1][2],
        ]
    }
}

/// TCFs at one cut pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcfEstimate {
    pub cut: CutPair,
    pub method: Method,
    pub tcf: [f64; 3],
    pub theta_beta: ThetaBeta,
    /// Covariance of the TCF triple (Xi / n).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov: Option<[[f64; 3]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asy_sd: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_sd: Option<[f64; 3]>,
}

impl TcfEstimate {
    /// TCFs truncated to `[0, 1]` for display. SPE estimates can leave the
    /// unit interval; variance calculations always use the raw values.
    pub fn clipped(&self) -> [f64; 3] {
        self.tcf.map(|x| x.clamp(0.0, 1.0))
    }
}

fn tcf_from_weights(dt: &PseudoDisease, sums: &[f64; 3], t: &[f64], c1: f64, c2: f64) -> [f64; 3] {
    let mut upper1 = 0.0;
    let mut middle2 = 0.0;
    let mut upper3 = 0.0;
    for (row, &ti) in dt.dtilde.iter().zip(t) {
        if ti >= c1 {
            upper1 += row[0];
            if ti < c2 {
                middle2 += row[1];
            }
        }
        if ti >= c2 {
            upper3 += row[2];
        }
    }
    [1.0 - upper1 / sums[0], middle2 / sums[1], upper3 / sums[2]]
}

pub fn estimate_tcf(method: Method, ds: &Dataset, cut: &CutPair, fits: &Fits) -> Result<TcfEstimate> {
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    estimate_from_weights(method, &dt, &ds.t_values(), cut)
}

pub(crate) fn estimate_from_weights(
    method: Method,
    dt: &PseudoDisease,
    t: &[f64],
    cut: &CutPair,
) -> Result<TcfEstimate> {
    let sums = dt.check_denominators()?;
    Ok(TcfEstimate {
        cut: *cut,
        method,
        tcf: tcf_from_weights(dt, &sums, t, cut.c1(), cut.c2()),
        theta_beta: ThetaBeta::compute(dt, t, cut),
        cov: None,
        asy_sd: None,
        boot_sd: None,
    })
}

/// How to choose the cut pairs of a surface.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Explicit(Vec<CutPair>),
    /// All pairs of distinct observed test values with `c1 < c2`.
    ObservedPairs,
    /// All pairs of distinct empirical quantiles of `T` at these levels.
    Quantiles(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles((1..=99).map(|k| k as f64 / 100.0).collect())
    }
}

/// Empirical quantile, linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn ordered_pairs(values: &[f64]) -> Vec<CutPair> {
    let mut out = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for (a, &c1) in values.iter().enumerate() {
        for &c2 in &values[a + 1..] {
            if let Ok(cut) = CutPair::new(c1, c2) {
                out.push(cut);
            }
        }
    }
    out
}

impl GridSpec {
    pub fn resolve(&self, ds: &Dataset) -> Result<Vec<CutPair>> {
        let mut t = ds.t_values();
        t.sort_by(f64::total_cmp);
        let cuts = match self {
            GridSpec::Explicit(cuts) => cuts.clone(),
            GridSpec::ObservedPairs => {
                t.dedup();
                ordered_pairs(&t)
            }
            GridSpec::Quantiles(levels) => {
                if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(Error::Contract("quantile levels must lie in [0, 1]".into()));
                }
                let mut q: Vec<f64> = levels.iter().map(|&l| empirical_quantile(&t, l)).collect();
                q.sort_by(f64::total_cmp);
                q.dedup();
                ordered_pairs(&q)
            }
        };
        if cuts.is_empty() {
            return Err(Error::Contract("cut grid is empty".into()));
        }
        Ok(cuts)
    }
}

/// TCFs at every pair of `grid`, in grid order.
pub fn roc_surface(
    method: Method,
    ds: &Dataset,
    grid: &[CutPair],
    fits: &Fits,
    exec: Exec,
) -> Result<Vec<TcfEstimate>> {
    if grid.is_empty() {
        return Err(Error::Contract("cut grid is empty".into()));
    }
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let t = ds.t_values();
    exec.map(grid.len(), |g| estimate_from_weights(method, &dt, &t, &grid[g]))
        .into_iter()
        .collect()
}

/// Pair of classes for a two-dimensional ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassPair {
    /// `(TCF1(c), TCF2(c, +inf))`.
    OneTwo,
    /// `(TCF2(-inf, c), TCF3(c))`.
    TwoThree,
    /// `(TCF1(c), TCF3(c))`, the single cut `c` separating classes 1 and 3.
    OneThree,
}

impl std::str::FromStr for ClassPair {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace(' ', "").as_str() {
            "12" | "1,2" | "(1,2)" => Ok(ClassPair::OneTwo),
            "23" | "2,3" | "(2,3)" => Ok(ClassPair::TwoThree),
            "13" | "1,3" | "(1,3)" => Ok(ClassPair::OneThree),
            other => Err(format!("unknown class pair `{other}` (expected 12, 23 or 13)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(
        serialize_with = "crate::data::serialize_cut_value",
        deserialize_with = "crate::data::deserialize_cut_value"
    )]
    pub cut: f64,
    pub x: f64,
    pub y: f64,
}

pub fn roc_projection(
    method: Method,
    ds: &Dataset,
    pair: ClassPair,
    cuts: &[f64],
    fits: &Fits,
) -> Result<Vec<CurvePoint>> {
    let dt = pseudo_disease(method, ds, fits.rho.as_ref(), fits.pi.as_ref())?;
    let sums = dt.check_denominators()?;
    let t = ds.t_values();
    let mut out = Vec::with_capacity(cuts.len());
    for &c in cuts {
        if c.is_nan() {
            return Err(Error::Contract("cut value is NaN".into()));
        }
        let (x, y) = match pair {
            ClassPair::OneTwo => {
                let v = tcf_from_weights(&dt, &sums, &t, c, f64::INFINITY);
                (v[0], v[1])
            }
            ClassPair::TwoThree => {
                let v = tcf_from_weights(&dt, &sums, &t, f64::NEG_INFINITY, c);
                (v[1], v[2])
            }
            ClassPair::OneThree => {
                let v = tcf_from_weights(&dt, &sums, &t, c, c);
                (v[0], v[2])
            }
        };
        out.push(CurvePoint { cut: c, x, y });
    }
    Ok(out)
}

/// Surface grid as CSV: `c1,c2,tcf1,tcf2,tcf3` plus `sd1..sd3` when any
/// estimate carries an asymptotic sd.
pub fn write_surface_csv<W: Write>(points: &[TcfEstimate], mut w: W) -> Result<()> {
    let with_sd = points.iter().any(|p| p.asy_sd.is_some());
    write!(w, "c1,c2,tcf1,tcf2,tcf3")?;
    if with_sd {
        write!(w, ",sd1,sd2,sd3")?;
    }
    writeln!(w)?;
    for p in points {
        write!(
            w,
            "{},{},{},{},{}",
            fmt_cut(p.cut.c1()),
            fmt_cut(p.cut.c2()),
            p.tcf[0],
            p.tcf[1],
            p.tcf[2]
        )?;
        if with_sd {
            match p.asy_sd {
                Some(sd) => write!(w, ",{},{},{}", sd[0], sd[1], sd[2])?,
                None => write!(w, ",,,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "cut,x,y")?;
    for p in points {
        writeln!(w, "{},{},{}", fmt_cut(p.cut), p.x, p.y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Class, Subject};

    fn toy() -> Dataset {
        let classes = [1, 1, 2, 2, 3, 3];
        Dataset::new(
            classes
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    Subject::new((i + 1) as f64, vec![], true, Class::from_label(c))
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cuts_outside_range() {
        let est =
            estimate_tcf(Method::Full, &toy(), &CutPair::new(0.0, 7.0).unwrap(), &Fits::default())
                .unwrap();
        assert_eq!(est.tcf, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn separated_classes() {
        let est =
            estimate_tcf(Method::Full, &toy(), &CutPair::new(2.5, 4.5).unwrap(), &Fits::default())
                .unwrap();
        assert_eq!(est.tcf, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn ipw_hand_example() {
        let ds = Dataset::new(vec![
            Subject::new(1.0, vec![], true, Some(Class::One)),
            Subject::new(2.0, vec![], true, Some(Class::Two)),
            Subject::new(3.0, vec![], true, Some(Class::Three)),
            Subject::new(2.2, vec![], false, None),
        ])
        .unwrap();
        let fits = Fits::known(None, Some(VerificationProbs::from_values(vec![0.5, 0.5, 1.0, 0.4])));
        let est = estimate_tcf(Method::Ipw, &ds, &CutPair::new(1.5, 2.5).unwrap(), &fits).unwrap();
        assert_eq!(est.tcf, [1.0, 1.0, 1.0]);
        let w = 2.0 + 2.0 + 1.0;
        assert!((est.theta_beta.theta[0] - 2.0 / w).abs() < 1e-15);
    }

    #[test]
    fn spe_hand_row() {
        let ds = Dataset::new(vec![Subject::new(0.0, vec![], true, Some(Class::Two))]).unwrap();
        let rho = DiseaseProbs::from_rows(vec![[0.2, 0.5, 0.3]]);
        let pi = VerificationProbs::from_values(vec![0.5]);
        let dt = pseudo_disease(Method::Spe, &ds, Some(&rho), Some(&pi)).unwrap();
        let expected = [-0.2, 1.5, -0.3];
        for k in 0..3 {
            assert!((dt.dtilde[0][k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn unverified_rows() {
        let ds = Dataset::new(vec![
            Subject::new(0.0, vec![], false, None),
            Subject::new(1.0, vec![], true, Some(Class::One)),
        ])
        .unwrap();
        let rho = DiseaseProbs::from_rows(vec![[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]]);
        let pi = VerificationProbs::from_values(vec![0.3, 0.7]);
        let msi = pseudo_disease(Method::Msi, &ds, Some(&rho), None).unwrap();
        let ipw = pseudo_disease(Method::Ipw, &ds, None, Some(&pi)).unwrap();
        let spe = pseudo_disease(Method::Spe, &ds, Some(&rho), Some(&pi)).unwrap();
        assert_eq!(msi.dtilde[0], [0.2, 0.5, 0.3]);
        assert_eq!(ipw.dtilde[0], [0.0, 0.0, 0.0]);
        assert_eq!(spe.dtilde[0], [0.2, 0.5, 0.3]);
    }

    #[test]
    fn missing_probabilities_and_full_on_partial_data() {
        let ds = Dataset::new(vec![
            Subject::new(0.0, vec![], false, None),
            Subject::new(1.0, vec![], true, Some(Class::One)),
        ])
        .unwrap();
        let err = pseudo_disease(Method::Full, &ds, None, None).unwrap_err();
        assert!(err.to_string().contains("FULL requires complete verification"));
        assert!(matches!(
            pseudo_disease(Method::Spe, &ds, None, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn degenerate_denominator() {
        let ds = Dataset::new(vec![
            Subject::new(0.0, vec![], true, Some(Class::One)),
            Subject::new(1.0, vec![], true, Some(Class::Two)),
        ])
        .unwrap();
        let err = estimate_tcf(Method::Full, &ds, &CutPair::new(0.0, 1.0).unwrap(), &Fits::default())
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateDenominator { class: 3, .. }));
    }

    #[test]
    fn full_range_grid_and_projections() {
        let ds = toy();
        let fits = Fits::default();
        let s = roc_surface(Method::Full, &ds, &[CutPair::full_range()], &fits, Exec::Sequential)
            .unwrap();
        assert_eq!(s[0].tcf, [0.0, 1.0, 0.0]);
        let p12 = roc_projection(Method::Full, &ds, ClassPair::OneTwo, &[f64::NEG_INFINITY, 2.5], &fits)
            .unwrap();
        assert_eq!((p12[0].x, p12[0].y), (0.0, 1.0));
        assert_eq!((p12[1].x, p12[1].y), (1.0, 1.0));
        let p23 = roc_projection(Method::Full, &ds, ClassPair::TwoThree, &[f64::INFINITY], &fits)
            .unwrap();
        assert_eq!((p23[0].x, p23[0].y), (1.0, 0.0));
        let p13 = roc_projection(Method::Full, &ds, ClassPair::OneThree, &[3.5], &fits).unwrap();
        assert_eq!((p13[0].x, p13[0].y), (1.0, 1.0));
        assert!(roc_surface(Method::Full, &ds, &[], &fits, Exec::Sequential).is_err());
    }

    #[test]
    fn quantile_grid_is_increasing_pairs() {
        let grid = GridSpec::default().resolve(&toy()).unwrap();
        assert!(grid.iter().all(|c| c.c1() < c.c2()));
        let observed = GridSpec::ObservedPairs.resolve(&toy()).unwrap();
        assert_eq!(observed.len(), 15);
    }

    #[test]
    fn surface_csv_layout() {
        let ds = toy();
        let s = roc_surface(
            Method::Full,
            &ds,
            &[CutPair::full_range(), CutPair::new(2.5, 4.5).unwrap()],
            &Fits::default(),
            Exec::Sequential,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_surface_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "c1,c2,tcf1,tcf2,tcf3\n-inf,inf,0,1,0\n2.5,4.5,1,1,1\n");
    }
}
