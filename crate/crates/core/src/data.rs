//! Partially verified three-class diagnostic data.
//!
//! A [`Dataset`] is an ordered, immutable list of [`Subject`]s. Row order is
//! significant: every per-subject quantity computed downstream (fitted
//! probabilities, pseudo-disease weights, estimating-function rows) is aligned
//! with it by index.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Disease class. Class 3 is the reference category of the disease model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    One,
    Two,
    Three,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::One, Class::Two, Class::Three];

    /// Zero-based index (0, 1, 2).
    pub fn index(self) -> usize {
        match self {
            Class::One => 0,
            Class::Two => 1,
            Class::Three => 2,
        }
    }

    /// Label as used in files (1, 2, 3).
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: i64) -> Option<Class> {
        match label {
            1 => Some(Class::One),
            2 => Some(Class::Two),
            3 => Some(Class::Three),
            _ => None,
        }
    }

    pub fn from_index(index: usize) -> Class {
        Class::ALL[index]
    }
}

/// One patient row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub t: f64,
    pub a: Vec<f64>,
    pub verified: bool,
    pub class: Option<Class>,
}

impl Subject {
    pub fn new(t: f64, a: Vec<f64>, verified: bool, class: Option<Class>) -> Self {
        Subject {
            t,
            a,
            verified,
            class,
        }
    }

    pub fn v(&self) -> f64 {
        if self.verified {
            1.0
        } else {
            0.0
        }
    }

    /// Indicator D_k for this subject; zero when the class is unknown.
    pub fn indicator(&self, k: usize) -> f64 {
        match self.class {
            Some(c) if c.index() == k => 1.0,
            _ => 0.0,
        }
    }

    /// Observed indicator row (D_1, D_2, D_3), all zero when unverified.
    pub fn indicators(&self) -> [f64; 3] {
        [self.indicator(0), self.indicator(1), self.indicator(2)]
    }
}

/// Validated, immutable collection of subjects sharing a covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    p: usize,
}

impl Dataset {
    /// Builds a dataset, checking every row invariant. Row numbers in errors
    /// are one-based positions in `subjects`.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Contract("dataset must contain at least one subject".into()));
        }
        let p = subjects[0].a.len();
        for (i, s) in subjects.iter().enumerate() {
            validate_subject(s, p).map_err(|message| Error::Validation {
                row: i + 1,
                message,
            })?;
        }
        Ok(Dataset { subjects, p })
    }

    /// Convenience constructor from parallel columns; `a` is row-major.
    pub fn from_columns(
        t: &[f64],
        a: &[Vec<f64>],
        v: &[bool],
        d: &[Option<Class>],
    ) -> Result<Self> {
        let n = t.len();
        if a.len() != n || v.len() != n || d.len() != n {
            return Err(Error::Contract("column lengths differ".into()));
        }
        Dataset::new(
            (0..n)
                .map(|i| Subject::new(t[i], a[i].clone(), v[i], d[i]))
                .collect(),
        )
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.t).collect()
    }

    pub fn all_verified(&self) -> bool {
        self.subjects.iter().all(|s| s.verified)
    }

    pub fn any_unverified(&self) -> bool {
        !self.all_verified()
    }

    pub fn n_verified(&self) -> usize {
        self.subjects.iter().filter(|s| s.verified).count()
    }

    /// Counts of each class among verified subjects.
    pub fn verified_class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.subjects {
            if let Some(c) = s.class {
                counts[c.index()] += 1;
            }
        }
        counts
    }

    /// New dataset made of the given rows (indices may repeat).
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        Dataset {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            p: self.p,
        }
    }

    /// Applies `f` to every test value. Used for transform-invariance checks.
    pub fn map_t(&self, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        Dataset::new(
            self.subjects
                .iter()
                .map(|s| Subject {
                    t: f(s.t),
                    ..s.clone()
                })
                .collect(),
        )
    }
}

fn validate_subject(s: &Subject, p: usize) -> std::result::Result<(), String> {
    if !s.t.is_finite() {
        return Err(format!("test value t = {} is not finite", s.t));
    }
    if s.a.len() != p {
        return Err(format!("expected {} covariates, found {}", p, s.a.len()));
    }
    if let Some(j) = s.a.iter().position(|x| !x.is_finite()) {
        return Err(format!("covariate a{} is not finite", j + 1));
    }
    match (s.verified, s.class) {
        (true, None) => Err("verified subject (v=1) has no disease class".into()),
        (false, Some(_)) => Err("unverified subject (v=0) carries a disease class".into()),
        _ => Ok(()),
    }
}

/// Fraction of verified subjects.
pub fn verification_rate(ds: &Dataset) -> f64 {
    ds.n_verified() as f64 / ds.n() as f64
}

/// A pair of cut points with `c1 < c2`. Infinite sentinels are allowed
/// (`c1 = -inf`, `c2 = +inf`) for ROC-curve projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutPair {
    c1: f64,
    c2: f64,
}

impl CutPair {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if c1.is_nan() || c2.is_nan() {
            return Err(Error::Contract("cut points must not be NaN".into()));
        }
        if c1 == f64::INFINITY || c2 == f64::NEG_INFINITY {
            return Err(Error::Contract(format!(
                "invalid sentinel cut pair ({c1}, {c2})"
            )));
        }
        if c1 >= c2 {
            return Err(Error::Contract(format!(
                "cut points must satisfy c1 < c2, got ({c1}, {c2})"
            )));
        }
        Ok(CutPair { c1, c2 })
    }

    /// The whole real line, `(-inf, +inf)`.
    pub fn full_range() -> Self {
        CutPair {
            c1: f64::NEG_INFINITY,
            c2: f64::INFINITY,
        }
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `[c1, c2]` in estimating-function order.
    pub fn cuts(&self) -> [f64; 2] {
        [self.c1, self.c2]
    }
}

impl fmt::Display for CutPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", fmt_cut(self.c1), fmt_cut(self.c2))
    }
}

pub(crate) fn fmt_cut(c: f64) -> String {
    if c == f64::INFINITY {
        "inf".into()
    } else if c == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{c}")
    }
}

/// Cut values serialize as JSON numbers, or as the strings `"inf"`/`"-inf"`
/// for the sentinels.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CutRepr {
    Num(f64),
    Text(String),
}

fn cut_to_repr(c: f64) -> CutRepr {
    if c.is_finite() {
        CutRepr::Num(c)
    } else {
        CutRepr::Text(fmt_cut(c))
    }
}

fn cut_from_repr(r: CutRepr) -> std::result::Result<f64, String> {
    match r {
        CutRepr::Num(x) => Ok(x),
        CutRepr::Text(s) => s.parse::<f64>().map_err(|e| e.to_string()),
    }
}

pub(crate) fn serialize_cut_value<S: Serializer>(
    c: &f64,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    cut_to_repr(*c).serialize(serializer)
}

pub(crate) fn deserialize_cut_value<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<f64, D::Error> {
    cut_from_repr(CutRepr::deserialize(deserializer)?).map_err(serde::de::Error::custom)
}

impl Serialize for CutPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [cut_to_repr(self.c1), cut_to_repr(self.c2)].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CutPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [a, b] = <[CutRepr; 2]>::deserialize(deserializer)?;
        let c1 = cut_from_repr(a).map_err(serde::de::Error::custom)?;
        let c2 = cut_from_repr(b).map_err(serde::de::Error::custom)?;
        CutPair::new(c1, c2).map_err(serde::de::Error::custom)
    }
}

/// One column of a working-model design row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    T,
    /// Covariate `a_j` (zero-based).
    A(usize),
    /// `|a_j|^e`, the real branch of `a^(2/3)` style transforms.
    AbsPow(usize, f64),
}

/// Columns of the design row U used by a working model. The first term is
/// always the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    terms: Vec<Term>,
}

impl DesignSpec {
    /// `(1, t, a_1, ..., a_p)`.
    pub fn full(p: usize) -> Self {
        let mut terms = vec![Term::Intercept, Term::T];
        terms.extend((0..p).map(Term::A));
        DesignSpec { terms }
    }

    /// `(1, t)`.
    pub fn t_only() -> Self {
        DesignSpec {
            terms: vec![Term::Intercept, Term::T],
        }
    }

    pub fn intercept_only() -> Self {
        DesignSpec {
            terms: vec![Term::Intercept],
        }
    }

    /// Intercept followed by `extra`.
    pub fn with_terms(extra: &[Term]) -> Result<Self> {
        if extra.contains(&Term::Intercept) {
            return Err(Error::Contract("intercept is implicit in a design".into()));
        }
        let mut terms = vec![Term::Intercept];
        terms.extend_from_slice(extra);
        Ok(DesignSpec { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn check(&self, p: usize) -> Result<()> {
        for term in &self.terms {
            if let Term::A(j) | Term::AbsPow(j, _) = *term {
                if j >= p {
                    return Err(Error::Contract(format!(
                        "design uses covariate a{} but the data has p = {p}",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn row(&self, s: &Subject) -> Vec<f64> {
        self.terms
            .iter()
            .map(|term| match *term {
                Term::Intercept => 1.0,
                Term::T => s.t,
                Term::A(j) => s.a[j],
                Term::AbsPow(j, e) => s.a[j].abs().powf(e),
            })
            .collect()
    }

    /// Row-major design matrix, one row per subject.
    pub fn matrix(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        ds.subjects().iter().map(|s| self.row(s)).collect()
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub t: String,
    pub a: Vec<String>,
    pub v: String,
    pub d: String,
}

impl Schema {
    /// `t`, `a1..ap`, `v`, `d` with covariates detected from the header.
    pub fn detect(header: &[&str]) -> Self {
        let mut a: Vec<(usize, String)> = header
            .iter()
            .filter_map(|h| {
                h.strip_prefix('a')
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(|j| (j, h.to_string()))
            })
            .collect();
        a.sort();
        Schema {
            t: "t".into(),
            a: a.into_iter().map(|(_, h)| h).collect(),
            v: "v".into(),
            d: "d".into(),
        }
    }
}

/// Reads a dataset from a CSV file. `schema = None` detects the default
/// column layout from the header.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: Option<&Schema>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => Schema::detect(&header_refs),
    };
    let positions: HashMap<&str, usize> = header_refs
        .iter()
        .enumerate()
        .map(|(i, h)| (*h, i))
        .collect();
    let find = |name: &str| {
        positions.get(name).copied().ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
    };
    let t_col = find(&schema.t)?;
    let v_col = find(&schema.v)?;
    let d_col = find(&schema.d)?;
    let a_cols = schema
        .a
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;

    let mut subjects = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        // line number in the file, header is line 1
        let row = idx + 2;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = cell(col);
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let t = number(t_col, &schema.t)?;
        let a = a_cols
            .iter()
            .zip(&schema.a)
            .map(|(&c, name)| number(c, name))
            .collect::<Result<Vec<_>>>()?;
        let verified = match cell(v_col) {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.v.clone(),
                    message: format!("`{other}` is not 0 or 1"),
                })
            }
        };
        let raw_d = cell(d_col);
        let class = if raw_d.is_empty() {
            None
        } else {
            let label = raw_d.parse::<i64>().map_err(|_| Error::Validation {
                row,
                message: format!("disease class `{raw_d}` is not one of 1, 2, 3 or empty"),
            })?;
            Some(Class::from_label(label).ok_or_else(|| Error::Validation {
                row,
                message: format!("disease class `{raw_d}` is not one of 1, 2, 3 or empty"),
            })?)
        };
        let subject = Subject::new(t, a, verified, class);
        validate_subject(&subject, schema.a.len())
            .map_err(|message| Error::Validation { row, message })?;
        subjects.push(subject);
    }
    Dataset::new(subjects)
}

/// Writes a dataset using the default column layout. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=ds.p()).map(|j| format!("a{j}")));
    header.push("v".into());
    header.push("d".into());
    wtr.write_record(&header)?;
    for s in ds.subjects() {
        let mut rec = vec![format!("{}", s.t)];
        rec.extend(s.a.iter().map(|x| format!("{x}")));
        rec.push(if s.verified { "1".into() } else { "0".into() });
        rec.push(s.class.map(|c| c.label().to_string()).unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(ds, std::io::BufWriter::new(file))
}
