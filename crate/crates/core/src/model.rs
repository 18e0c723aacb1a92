//! Estimation methods and the bundle of fitted working models they consume.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DesignSpec};
use crate::error::{Error, Result};
use crate::glm::{
    fit_disease_with, fit_verification_with, predict_disease, predict_verification,
    DiseaseProbs, GlmFit, Link, VerificationProbs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "FI")]
    Fi,
    #[serde(rename = "MSI")]
    Msi,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "SPE")]
    Spe,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Full, Method::Fi, Method::Msi, Method::Ipw, Method::Spe];
    /// The bias-corrected estimators.
    pub const CORRECTED: [Method; 4] = [Method::Fi, Method::Msi, Method::Ipw, Method::Spe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "FULL",
            Method::Fi => "FI",
            Method::Msi => "MSI",
            Method::Ipw => "IPW",
            Method::Spe => "SPE",
        }
    }

    pub fn uses_disease(self) -> bool {
        matches!(self, Method::Fi | Method::Msi | Method::Spe)
    }

    pub fn uses_verification(self) -> bool {
        matches!(self, Method::Ipw | Method::Spe)
    }

    /// Imputation flag `m` of the FI (0) / MSI (1) family.
    pub fn imputation_flag(self) -> Option<f64> {
        match self {
            Method::Fi => Some(0.0),
            Method::Msi => Some(1.0),
            _ => None,
        }
    }

    /// Why this method cannot run on `ds`, if it cannot.
    pub fn unavailable_reason(self, ds: &Dataset) -> Option<&'static str> {
        if self == Method::Full && ds.any_unverified() {
            return Some("FULL requires complete verification");
        }
        if self.uses_verification() && ds.all_verified() {
            return Some("verification model needs both verified and unverified subjects");
        }
        if self.uses_disease() && ds.verified_class_counts().contains(&0) {
            return Some("disease model needs every class among verified subjects");
        }
        None
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Method::Full),
            "fi" => Ok(Method::Fi),
            "msi" => Ok(Method::Msi),
            "ipw" => Ok(Method::Ipw),
            "spe" => Ok(Method::Spe),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Which covariates enter each working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingModels {
    pub disease: DesignSpec,
    pub verification: DesignSpec,
    pub link: Link,
}

impl WorkingModels {
    /// Both models on `(1, t, a_1..a_p)`.
    pub fn full(p: usize, link: Link) -> Self {
        WorkingModels {
            disease: DesignSpec::full(p),
            verification: DesignSpec::full(p),
            link,
        }
    }
}

/// Fitted nuisance models and their predicted probabilities.
///
/// A probability vector without its `GlmFit` is treated as known: it enters
/// the estimators but contributes no estimating-equation block to the
/// variance.
#[derive(Debug, Clone, Default)]
pub struct Fits {
    pub disease: Option<GlmFit>,
    pub rho: Option<DiseaseProbs>,
    pub verification: Option<GlmFit>,
    pub pi: Option<VerificationProbs>,
}

impl Fits {
    /// Fit whatever `method` needs.
    pub fn fit(ds: &Dataset, models: &WorkingModels, method: Method) -> Result<Fits> {
        Self::fit_for(ds, models, &[method])
    }

    /// Fit the union of what `methods` need.
    pub fn fit_for(ds: &Dataset, models: &WorkingModels, methods: &[Method]) -> Result<Fits> {
        let mut fits = Fits::default();
        if methods.iter().any(|m| m.uses_disease()) {
            let fit = fit_disease_with(ds, &models.disease)?;
            fits.rho = Some(predict_disease(&fit, ds)?);
            fits.disease = Some(fit);
        }
        if methods.iter().any(|m| m.uses_verification()) {
            let fit = fit_verification_with(ds, models.link, &models.verification)?;
            fits.pi = Some(predict_verification(&fit, ds)?);
            fits.verification = Some(fit);
        }
        Ok(fits)
    }

    /// Known probabilities, no fitted models.
    pub fn known(rho: Option<DiseaseProbs>, pi: Option<VerificationProbs>) -> Fits {
        Fits {
            disease: None,
            rho,
            verification: None,
            pi,
        }
    }

    pub(crate) fn require_rho(&self, n: usize) -> Result<&DiseaseProbs> {
        let rho = self
            .rho
            .as_ref()
            .ok_or_else(|| Error::Contract("method requires disease probabilities".into()))?;
        if rho.rho.len() != n {
            return Err(Error::Contract("disease probabilities do not match dataset".into()));
        }
        Ok(rho)
    }

    pub(crate) fn require_pi(&self, n: usize) -> Result<&VerificationProbs> {
        let pi = self
            .pi
            .as_ref()
            .ok_or_else(|| Error::Contract("method requires verification probabilities".into()))?;
        if pi.pi.len() != n {
            return Err(Error::Contract(
                "verification probabilities do not match dataset".into(),
            ));
        }
        Ok(pi)
    }
}
