use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScalingLawParams;
use crate::error::{ensure_fraction, Error, Result};

/// Predicted loss of every domain at one candidate weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLosses {
    pub weight: f64,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub chosen: f64,
    pub target_domain: String,
    pub n_params: f64,
    pub rationale: Vec<CandidateLosses>,
}

/// Picks the smallest candidate weight past which the target domain stops
/// paying off.
///
/// A candidate `c_i` qualifies when the predicted target-domain gain from
/// `c_i` to `c_{i+1}` is below `gain_epsilon` and no guard domain (every law
/// other than the target) is worse than at `c_0` by more than `harm_delta`.
/// If nothing qualifies the largest candidate is returned. All laws are
/// evaluated at the candidate weight itself.
pub fn recommend_weight(
    laws_by_domain: &BTreeMap<String, ScalingLawParams>,
    target_domain: &str,
    candidates: &[f64],
    n_params: f64,
    gain_epsilon: f64,
    harm_delta: f64,
) -> Result<Recommendation> {
    if candidates.is_empty() {
        return Err(Error::validation("candidates", "candidate list is empty"));
    }
    for &c in candidates {
        ensure_fraction("candidates", c)?;
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "candidates",
            "must be strictly ascending",
        ));
    }
    if !laws_by_domain.contains_key(target_domain) {
        return Err(Error::Config(format!(
            "no scaling law for target domain `{target_domain}`"
        )));
    }
    if gain_epsilon.is_nan() {
        return Err(Error::validation("gain_epsilon", "must be a number"));
    }
    if !(harm_delta >= 0.0) {
        return Err(Error::validation("harm_delta", "must be non-negative"));
    }
    if !(n_params.is_finite() && n_params > 0.0) {
        return Err(Error::validation("n_params", "must be positive"));
    }
    for law in laws_by_domain.values() {
        law.validate()?;
    }

    let rationale: Vec<CandidateLosses> = candidates
        .iter()
        .map(|&c| CandidateLosses {
            weight: c,
            losses: laws_by_domain
                .iter()
                .map(|(d, law)| (d.clone(), law.predict_unchecked(n_params, c)))
                .collect(),
        })
        .collect();

    let target = |i: usize| rationale[i].losses[target_domain];
    let guards_ok = |i: usize| {
        laws_by_domain.keys().filter(|d| *d != target_domain).all(|d| {
            rationale[i].losses[d] - rationale[0].losses[d] <= harm_delta
        })
    };

    let chosen = (0..candidates.len().saturating_sub(1))
        .find(|&i| target(i) - target(i + 1) < gain_epsilon && guards_ok(i))
        .map_or(*candidates.last().unwrap(), |i| candidates[i]);

    Ok(Recommendation {
        chosen,
        target_domain: target_domain.to_string(),
        n_params,
        rationale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(domain: &str, c1: f64) -> ScalingLawParams {
        ScalingLawParams {
            alpha: 0.3,
            beta: 400.0,
            l_inf: 1.5,
            c1,
            c2: 1.0,
            c3: 1.0,
            domain_tag: domain.into(),
        }
    }

    /// Target loss falls steeply from 0 to 0.25 and barely from 0.25 to
    /// 0.375: f(p) = p − 10·p(1−p) = 10p² − 9p.
    fn flattening_laws() -> BTreeMap<String, ScalingLawParams> {
        let mut laws = BTreeMap::new();
        laws.insert("parallel".to_string(), law("parallel", -10.0));
        laws.insert("web".to_string(), law("web", 0.0));
        laws
    }

    const N: f64 = 1.7e9;
    const CANDIDATES: [f64; 3] = [0.0, 0.25, 0.375];

    #[test]
    fn infinite_epsilon_picks_the_smallest() {
        let r = recommend_weight(&flattening_laws(), "parallel", &CANDIDATES, N, f64::INFINITY, 0.0)
            .unwrap();
        assert_eq!(r.chosen, 0.0);
    }

    #[test]
    fn steadily_improving_target_picks_the_largest() {
        let r = recommend_weight(&flattening_laws(), "parallel", &CANDIDATES, N, 0.0, 10.0).unwrap();
        assert_eq!(r.chosen, 0.375);
    }

    #[test]
    fn flattening_gain_stops_at_a_quarter() {
        let laws = flattening_laws();
        // Brute-force the gains from the closed form of each law.
        let scale = 400.0 * N.powf(-0.3);
        let f = |p: f64| p - 10.0 * p * (1.0 - p);
        let gain_first = (f(0.0) - f(0.25)) * scale;
        let gain_second = (f(0.25) - f(0.375)) * scale;
        assert!(gain_first > 4.0 * gain_second);
        let epsilon = 0.5 * (gain_first + gain_second);
        let web_harm = 0.25 * scale;

        let r = recommend_weight(&laws, "parallel", &CANDIDATES, N, epsilon, web_harm * 1.01)
            .unwrap();
        assert_eq!(r.chosen, 0.25);
        assert_eq!(r.rationale.len(), CANDIDATES.len());
        assert!(r.rationale.iter().all(|c| c.losses.len() == laws.len()));
        let expected = 1.5 + f(0.25) * scale;
        assert!((r.rationale[1].losses["parallel"] - expected).abs() < 1e-12);

        // Too little tolerance for web degradation pushes past every candidate.
        let strict = recommend_weight(&laws, "parallel", &CANDIDATES, N, epsilon, web_harm * 0.5)
            .unwrap();
        assert_eq!(strict.chosen, 0.375);
    }

    #[test]
    fn validation_errors() {
        let laws = flattening_laws();
        assert!(matches!(
            recommend_weight(&laws, "parallel", &[], N, 0.1, 0.1),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            recommend_weight(&laws, "code", &CANDIDATES, N, 0.1, 0.1),
            Err(Error::Config(_))
        ));
        assert!(recommend_weight(&laws, "parallel", &[0.5, 0.25], N, 0.1, 0.1).is_err());
    }
}
