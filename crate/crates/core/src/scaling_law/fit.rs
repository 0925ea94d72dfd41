use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LossObservation, ScalingLawParams};
use crate::error::{Error, Result};

const N_PARAMS: usize = 6;

const ALPHA_MIN: f64 = 1e-6;
const ALPHA_MAX: f64 = 2.0;
const C_EXP_MIN: f64 = 1e-6;
const C_EXP_MAX: f64 = 10.0;
const C1_BOUND: f64 = 10.0;

/// Knobs for [`fit`]. The defaults match the documented behaviour: a 48×48
/// coarse grid, then at most 200 damped Gauss–Newton iterations stopping once
/// the relative objective decrease falls below `1e-10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Points on the log-spaced α grid used to seed the refinement.
    pub alpha_grid: usize,
    /// Points on the linear L∞ grid over `[0, min observed loss)`.
    pub l_inf_grid: usize,
    pub alpha_grid_min: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            alpha_grid: 48,
            l_inf_grid: 48,
            alpha_grid_min: 0.01,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid < 2 {
            return Err(Error::validation("scaling.alpha_grid", "needs at least 2 points"));
        }
        if self.l_inf_grid < 1 {
            return Err(Error::validation("scaling.l_inf_grid", "needs at least 1 point"));
        }
        if !(self.alpha_grid_min > 0.0 && self.alpha_grid_min < ALPHA_MAX) {
            return Err(Error::validation(
                "scaling.alpha_grid_min",
                format!("must lie in (0, {ALPHA_MAX})"),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::validation("scaling.tolerance", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ScalingLawParams,
    pub rmse: f64,
    /// `(run_id, predicted − observed)` in input order.
    pub residuals: Vec<(String, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

/// Parameter vector in the solver's coordinates: `[α, ln β', L∞, c1, c2, c3]`
/// where `β = β' · n_ref^α` and `N` enters as `N / n_ref`.
type Theta = [f64; N_PARAMS];

struct Problem {
    /// Normalised parameter counts `N / n_ref`.
    x: Vec<f64>,
    p: Vec<f64>,
    y: Vec<f64>,
    n_ref: f64,
    l_inf_max: f64,
}

impl Problem {
    fn predict(&self, t: &Theta, i: usize) -> f64 {
        let ratio = self.p[i] + t[3] * self.p[i].powf(t[4]) * (1.0 - self.p[i]).powf(t[5]);
        ratio * t[1].exp() * self.x[i].powf(-t[0]) + t[2]
    }

    fn cost(&self, t: &Theta) -> f64 {
        (0..self.y.len())
            .map(|i| {
                let r = self.y[i] - self.predict(t, i);
                r * r
            })
            .sum()
    }

    /// Residuals `y − ŷ` and the Jacobian of `ŷ`.
    fn linearise(&self, t: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.y.len();
        let mut r = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, N_PARAMS);
        for i in 0..m {
            let p = self.p[i];
            let scale = t[1].exp() * self.x[i].powf(-t[0]);
            let pc2 = p.powf(t[4]);
            let qc3 = (1.0 - p).powf(t[5]);
            let bump = pc2 * qc3;
            let ratio = p + t[3] * bump;
            let pred = ratio * scale + t[2];
            r[i] = self.y[i] - pred;
            jac[(i, 0)] = -ratio * scale * self.x[i].ln();
            jac[(i, 1)] = ratio * scale;
            jac[(i, 2)] = 1.0;
            jac[(i, 3)] = scale * bump;
            // p^c2·ln p and (1−p)^c3·ln(1−p) vanish at the endpoints.
            jac[(i, 4)] = if p > 0.0 && p < 1.0 {
                scale * t[3] * bump * p.ln()
            } else {
                0.0
            };
            jac[(i, 5)] = if p > 0.0 && p < 1.0 {
                scale * t[3] * bump * (1.0 - p).ln()
            } else {
                0.0
            };
        }
        (r, jac)
    }

    fn project(&self, t: &mut Theta) {
        t[0] = t[0].clamp(ALPHA_MIN, ALPHA_MAX);
        t[2] = t[2].clamp(0.0, self.l_inf_max);
        t[3] = t[3].clamp(-C1_BOUND, C1_BOUND);
        t[4] = t[4].clamp(C_EXP_MIN, C_EXP_MAX);
        t[5] = t[5].clamp(C_EXP_MIN, C_EXP_MAX);
    }
}

/// Fits the joint law to observations from a single domain by least squares
/// on raw loss.
///
/// The objective is non-convex, so the fit runs in two stages. A coarse grid
/// over `(α, L∞)` solves the remaining per-weight scale factors in closed
/// form and picks the best cell; a bounded Levenberg–Marquardt refinement
/// over all six coefficients then starts from there. No randomness is
/// involved: identical inputs give bit-identical reports.
pub fn fit(observations: &[LossObservation], options: &FitOptions) -> Result<FitReport> {
    options.validate()?;
    for obs in observations {
        obs.validate()?;
    }
    let domain = match observations.first() {
        Some(o) => o.domain_tag.clone(),
        None => {
            return Err(Error::Underdetermined {
                observations: 0,
                parameters: N_PARAMS,
            })
        }
    };
    if let Some(other) = observations.iter().find(|o| o.domain_tag != domain) {
        return Err(Error::validation(
            "domain_tag",
            format!(
                "fit expects a single domain, found `{domain}` and `{}`; use fit_by_domain",
                other.domain_tag
            ),
        ));
    }
    let weights = distinct(observations.iter().map(|o| o.weight));
    if weights.len() < 2 {
        return Err(Error::Unidentifiable(format!(
            "ratio parameters unidentifiable: every observation has weight {}",
            observations[0].weight
        )));
    }
    let sizes = distinct(observations.iter().map(|o| o.n_params));
    if sizes.len() < 2 {
        return Err(Error::Unidentifiable(format!(
            "α/β unidentifiable: every observation has n_params {}",
            observations[0].n_params
        )));
    }
    if observations.len() < N_PARAMS {
        return Err(Error::Underdetermined {
            observations: observations.len(),
            parameters: N_PARAMS,
        });
    }

    let n_ref = (sizes.iter().map(|n| n.ln()).sum::<f64>() / sizes.len() as f64).exp();
    let problem = Problem {
        x: observations.iter().map(|o| o.n_params / n_ref).collect(),
        p: observations.iter().map(|o| o.weight).collect(),
        y: observations.iter().map(|o| o.loss).collect(),
        n_ref,
        l_inf_max: observations
            .iter()
            .map(|o| o.loss)
            .fold(f64::INFINITY, f64::min),
    };

    let start = grid_start(&problem, &weights, options);
    let (theta, iterations, converged) = refine(&problem, start, options);

    let params = ScalingLawParams {
        alpha: theta[0],
        beta: theta[1].exp() * problem.n_ref.powf(theta[0]),
        l_inf: theta[2],
        c1: theta[3],
        c2: theta[4],
        c3: theta[5],
        domain_tag: domain,
    };
    let residuals: Vec<(String, f64)> = observations
        .iter()
        .enumerate()
        .map(|(i, o)| (o.run_id.clone(), problem.predict(&theta, i) - o.loss))
        .collect();
    let rmse = (residuals.iter().map(|(_, r)| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(FitReport {
        params,
        rmse,
        residuals,
        iterations,
        converged,
    })
}

/// Groups observations by `domain_tag` and fits each group independently.
pub fn fit_by_domain(
    observations: &[LossObservation],
    options: &FitOptions,
) -> Result<BTreeMap<String, FitReport>> {
    let mut groups: BTreeMap<String, Vec<LossObservation>> = BTreeMap::new();
    for obs in observations {
        groups
            .entry(obs.domain_tag.clone())
            .or_default()
            .push(obs.clone());
    }
    if groups.is_empty() {
        return Err(Error::Underdetermined {
            observations: 0,
            parameters: N_PARAMS,
        });
    }
    groups
        .into_iter()
        .map(|(domain, obs)| {
            fit(&obs, options)
                .map_err(|e| match e {
                    Error::Unidentifiable(msg) => {
                        Error::Unidentifiable(format!("domain `{domain}`: {msg}"))
                    }
                    other => other,
                })
                .map(|r| (domain, r))
        })
        .collect()
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Coarse search over `(α, L∞)`. For a fixed cell the model is linear in one
/// scale factor `g_p = β'·f(p)` per distinct weight, which has a closed-form
/// least-squares solution. The best cell's factors then seed `β'` and `c1`
/// (with `c2 = c3 = 1`) through a second small linear solve.
fn grid_start(problem: &Problem, weights: &[f64], options: &FitOptions) -> Theta {
    let groups: Vec<Vec<usize>> = weights
        .iter()
        .map(|w| (0..problem.p.len()).filter(|&i| problem.p[i] == *w).collect())
        .collect();
    let log_lo = options.alpha_grid_min.ln();
    let log_hi = ALPHA_MAX.ln();

    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
    for ai in 0..options.alpha_grid {
        let alpha =
            (log_lo + (log_hi - log_lo) * ai as f64 / (options.alpha_grid - 1) as f64).exp();
        let powers: Vec<f64> = problem.x.iter().map(|x| x.powf(-alpha)).collect();
        for li in 0..options.l_inf_grid {
            let l_inf = problem.l_inf_max * li as f64 / options.l_inf_grid as f64;
            let mut ssr = 0.0;
            let mut factors = Vec::with_capacity(weights.len());
            for (w, idx) in weights.iter().zip(&groups) {
                let g = if *w == 0.0 {
                    0.0
                } else {
                    let num: f64 = idx.iter().map(|&i| powers[i] * (problem.y[i] - l_inf)).sum();
                    let den: f64 = idx.iter().map(|&i| powers[i] * powers[i]).sum();
                    num / den
                };
                ssr += idx
                    .iter()
                    .map(|&i| {
                        let r = problem.y[i] - l_inf - g * powers[i];
                        r * r
                    })
                    .sum::<f64>();
                factors.push(g);
            }
            if best.as_ref().is_none_or(|b| ssr < b.0) {
                best = Some((ssr, alpha, l_inf, factors));
            }
        }
    }
    let (_, alpha, l_inf, factors) = best.expect("grid has at least one cell");

    // g_p ≈ β'·p + γ·p(1−p), with γ = β'·c1.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in weights.iter().zip(&factors) {
        let u = p;
        let v = p * (1.0 - p);
        s11 += u * u;
        s12 += u * v;
        s22 += v * v;
        b1 += u * g;
        b2 += v * g;
    }
    let det = s11 * s22 - s12 * s12;
    let (mut beta, mut c1) = if det.abs() > 1e-12 * (s11 * s22).max(f64::MIN_POSITIVE) {
        let beta = (b1 * s22 - b2 * s12) / det;
        let gamma = (s11 * b2 - s12 * b1) / det;
        (beta, if beta != 0.0 { gamma / beta } else { 0.0 })
    } else {
        (b1 / s11, 0.0)
    };
    if !(beta.is_finite() && beta > 0.0) {
        let mean_abs = factors.iter().map(|g| g.abs()).sum::<f64>() / factors.len() as f64;
        beta = mean_abs.max(1e-12);
        c1 = 0.0;
    }
    let mut theta = [alpha, beta.ln(), l_inf, c1, 1.0, 1.0];
    problem.project(&mut theta);
    theta
}

/// Bounded Levenberg–Marquardt. Returns the final parameters, the number of
/// accepted iterations, and whether a stopping criterion other than the
/// iteration cap fired.
fn refine(problem: &Problem, start: Theta, options: &FitOptions) -> (Theta, usize, bool) {
    let mut theta = start;
    let mut cost = problem.cost(&theta);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        if cost == 0.0 {
            return (theta, iterations, true);
        }
        let (r, jac) = problem.linearise(&theta);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * r;
        let diag_floor = 1e-12 * (0..N_PARAMS).map(|k| jtj[(k, k)]).fold(0.0, f64::max);

        let mut accepted = None;
        while lambda <= 1e16 {
            let mut a = jtj.clone();
            for k in 0..N_PARAMS {
                a[(k, k)] += lambda * jtj[(k, k)].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            if let Some(step) = a.lu().solve(&jtr) {
                let mut trial = theta;
                for k in 0..N_PARAMS {
                    trial[k] += step[k];
                }
                problem.project(&mut trial);
                let trial_cost = problem.cost(&trial);
                if trial_cost.is_finite() && trial_cost < cost {
                    accepted = Some((trial, trial_cost));
                    lambda = (lambda / 10.0).max(1e-15);
                    break;
                }
            }
            lambda *= 10.0;
        }

        let Some((next, next_cost)) = accepted else {
            // No damping level reduces the objective: stationary point.
            return (theta, iterations, true);
        };
        iterations += 1;
        let relative = (cost - next_cost) / cost;
        theta = next;
        cost = next_cost;
        if relative < options.tolerance {
            return (theta, iterations, true);
        }
    }
    (theta, iterations, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> ScalingLawParams {
        ScalingLawParams {
            alpha: 0.3,
            beta: 450.0,
            l_inf: 1.7,
            c1: 0.8,
            c2: 0.6,
            c3: 1.4,
            domain_tag: "web".into(),
        }
    }

    fn grid(law: &ScalingLawParams, sizes: &[f64], weights: &[f64]) -> Vec<LossObservation> {
        let mut out = Vec::new();
        for &n in sizes {
            for &p in weights {
                out.push(LossObservation {
                    run_id: format!("n{n}-p{p}"),
                    n_params: n,
                    weight: p,
                    domain_tag: law.domain_tag.clone(),
                    loss: law.predict(n, p).unwrap(),
                });
            }
        }
        out
    }

    const SIZES: [f64; 3] = [1e8, 2.03e8, 3.41e8];
    const WEIGHTS: [f64; 3] = [0.25, 0.5, 1.0];

    #[test]
    fn recovers_generator_on_the_three_by_three_grid() {
        let law = truth();
        let obs = grid(&law, &SIZES, &WEIGHTS);
        let report = fit(&obs, &FitOptions::default()).unwrap();
        assert!(report.rmse < 1e-6, "rmse {}", report.rmse);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(report.params.alpha, law.alpha) < 0.01, "{:?}", report.params);
        assert!(rel(report.params.beta, law.beta) < 0.01, "{:?}", report.params);
        assert!(rel(report.params.l_inf, law.l_inf) < 0.01, "{:?}", report.params);
        assert_eq!(report.residuals.len(), obs.len());
    }

    #[test]
    fn identical_inputs_give_identical_reports() {
        let obs = grid(&truth(), &SIZES, &WEIGHTS);
        let a = fit(&obs, &FitOptions::default()).unwrap();
        let b = fit(&obs, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.alpha.to_bits(), b.params.alpha.to_bits());
    }

    #[test]
    fn single_weight_is_unidentifiable() {
        let obs = grid(&truth(), &SIZES, &[1.0, 1.0]);
        let err = fit(&obs, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("ratio parameters unidentifiable"), "{err}");
    }

    #[test]
    fn single_size_is_unidentifiable() {
        let obs = grid(&truth(), &[1e8, 1e8], &WEIGHTS);
        let err = fit(&obs, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("α/β unidentifiable"), "{err}");
    }

    #[test]
    fn too_few_observations() {
        let obs = grid(&truth(), &[1e8, 2e8], &[0.5, 1.0]);
        assert!(matches!(
            fit(&obs, &FitOptions::default()),
            Err(Error::Underdetermined { observations: 4, parameters: 6 })
        ));
    }

    #[test]
    fn mixed_domains_are_rejected_but_fit_by_domain_splits_them() {
        let mut obs = grid(&truth(), &SIZES, &WEIGHTS);
        let mut wiki = truth();
        wiki.domain_tag = "wikipedia".into();
        wiki.l_inf = 1.2;
        obs.extend(grid(&wiki, &SIZES, &WEIGHTS));
        assert!(fit(&obs, &FitOptions::default()).is_err());
        let reports = fit_by_domain(&obs, &FitOptions::default()).unwrap();
        assert_eq!(reports.len(), 2);
        assert!((reports["wikipedia"].params.l_inf - 1.2).abs() < 0.012);
    }

    #[test]
    fn scaled_sizes_give_the_same_predictions() {
        let law = truth();
        let obs = grid(&law, &SIZES, &WEIGHTS);
        let base = fit(&obs, &FitOptions::default()).unwrap();
        let k = 7.5;
        let scaled: Vec<_> = obs
            .iter()
            .map(|o| LossObservation {
                n_params: o.n_params * k,
                ..o.clone()
            })
            .collect();
        let rescaled = fit(&scaled, &FitOptions::default()).unwrap();
        for o in &obs {
            let a = base.params.predict(o.n_params, o.weight).unwrap();
            let b = rescaled.params.predict(o.n_params * k, o.weight).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
