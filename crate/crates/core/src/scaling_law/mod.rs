//! Joint multilingual scaling law.
//!
//! For a language (or data category) trained with mixture weight `p` in a
//! model with `N` non-embedding parameters, the expected loss is
//!
//! ```text
//! L(N, p) = f(p) · β · N^(−α) + L∞,    f(p) = p + c1 · p^c2 · (1 − p)^c3
//! ```
//!
//! `f` is the ratio function. With `c2, c3 > 0` it is pinned to `f(0) = 0`
//! and `f(1) = 1`, so `c1 = 0` reduces it to the plain weight.

mod fit;
mod io;
mod recommend;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_fraction, Error, Result};

pub use fit::{fit, fit_by_domain, FitOptions, FitReport};
pub use io::{parse_laws, read_laws, read_observations, render_laws, write_laws};
pub use recommend::{recommend_weight, CandidateLosses, Recommendation};

/// One training run's measured loss on a test domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossObservation {
    pub run_id: String,
    /// Non-embedding parameter count `N`.
    pub n_params: f64,
    /// Mixture weight `p` of the language or category under study.
    pub weight: f64,
    pub domain_tag: String,
    /// Cross-entropy in nats.
    pub loss: f64,
}

impl LossObservation {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_params.is_finite() && self.n_params > 0.0) {
            return Err(Error::validation(
                "n_params",
                format!("run `{}`: must be positive, got {}", self.run_id, self.n_params),
            ));
        }
        ensure_fraction("weight", self.weight)?;
        if !(self.loss.is_finite() && self.loss > 0.0) {
            return Err(Error::validation(
                "loss",
                format!("run `{}`: must be positive, got {}", self.run_id, self.loss),
            ));
        }
        Ok(())
    }
}

/// Fitted coefficients of the joint law for one test domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawParams {
    pub alpha: f64,
    pub beta: f64,
    pub l_inf: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub domain_tag: String,
}

impl ScalingLawParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(key, format!("must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("c2", self.c2)?;
        positive("c3", self.c3)?;
        if !(self.l_inf.is_finite() && self.l_inf >= 0.0) {
            return Err(Error::validation(
                "l_inf",
                format!("must be non-negative, got {}", self.l_inf),
            ));
        }
        if !self.c1.is_finite() {
            return Err(Error::validation("c1", "must be finite"));
        }
        Ok(())
    }

    /// `f(p)` without validation; callers guarantee `p ∈ [0, 1]`.
    pub(crate) fn ratio_unchecked(&self, p: f64) -> f64 {
        p + self.c1 * p.powf(self.c2) * (1.0 - p).powf(self.c3)
    }

    pub(crate) fn predict_unchecked(&self, n_params: f64, p: f64) -> f64 {
        self.ratio_unchecked(p) * self.beta * n_params.powf(-self.alpha) + self.l_inf
    }

    pub fn ratio(&self, p: f64) -> Result<f64> {
        ratio_function(self, p)
    }

    pub fn predict(&self, n_params: f64, p: f64) -> Result<f64> {
        predict_loss(self, n_params, p)
    }
}

/// Ratio function `f(p) = p + c1·p^c2·(1−p)^c3`.
pub fn ratio_function(params: &ScalingLawParams, p: f64) -> Result<f64> {
    ensure_fraction("p", p)?;
    params.validate()?;
    Ok(params.ratio_unchecked(p))
}

/// Predicted loss `f(p)·β·N^(−α) + L∞` in nats.
pub fn predict_loss(params: &ScalingLawParams, n_params: f64, p: f64) -> Result<f64> {
    params.validate()?;
    ensure_fraction("p", p)?;
    if !(n_params.is_finite() && n_params > 0.0) {
        return Err(Error::validation(
            "n_params",
            format!("must be positive, got {n_params}"),
        ));
    }
    Ok(params.predict_unchecked(n_params, p))
}
