//! Variational Bayes for finite mixtures of univariate NIG distributions.
//!
//! The posterior over each component is parameterized by five numbers
//! `a0..a4`: a Dirichlet count `a0`, a bivariate normal for `(mu, beta)`, a
//! Gamma (shape-rate) for `delta^2`, and a truncated normal for
//! `gamma | delta`. Latent mixing variables get GIG(-1, A, B) posteriors.

use serde::{Deserialize, Serialize};

use crate::distributions::{gig_moments, unig_density, DistError, UnigParams};
use crate::mixture::{
    initial_labels, normalize_log_scores, FitResult, IterationTrace, LatentMoments,
    Responsibilities, VbConfig, VbError,
};
use crate::special_fn::{
    digamma, gauss_legendre, log_bessel_k, sqrt_gamma_moment, trunc_normal_moments,
    TruncNormalSpec, LN_TWO,
};

/// Truncated-normal locations at least this many scales above zero are
/// treated as untruncated.
pub const UNTRUNCATED_SCALES: f64 = 6.0;

const DELTA_PANELS: usize = 24;
const DELTA_NODES_PER_PANEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentHyper {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl ComponentHyper {
    pub fn flat(value: f64) -> Self {
        Self {
            a0: value,
            a1: value,
            a2: value,
            a3: value,
            a4: value,
        }
    }

    /// Rate of the Gamma posterior on `delta^2`.
    pub fn gamma_rate(&self) -> f64 {
        self.a4 - self.a0 * self.a0 / (4.0 * self.a3)
    }

    pub fn rho(&self) -> f64 {
        -self.a0 / (2.0 * (self.a3 * self.a4).sqrt())
    }

    pub fn validate(&self) -> Result<(), String> {
        let all_finite = [self.a0, self.a1, self.a2, self.a3, self.a4]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err("non-finite hyperparameter".into());
        }
        if !(self.a0 > 0.0 && self.a3 > 0.0 && self.a4 > 0.0) {
            return Err(format!(
                "a0={}, a3={}, a4={} must be positive",
                self.a0, self.a3, self.a4
            ));
        }
        if !(self.gamma_rate() > 0.0) {
            return Err(format!("Gamma rate {} is not positive", self.gamma_rate()));
        }
        if !(self.rho().abs() < 1.0) {
            return Err(format!("|rho| = {} is not below 1", self.rho().abs()));
        }
        Ok(())
    }

    pub fn posterior_mu_beta(&self) -> PosteriorMuBeta {
        let rho = self.rho();
        let one_m = 1.0 - rho * rho;
        PosteriorMuBeta {
            mu_bar: (self.a2 - self.a0 * self.a1 / (2.0 * self.a3)) / (2.0 * one_m * self.a4),
            beta_bar: (self.a1 - self.a0 * self.a2 / (2.0 * self.a4)) / (2.0 * one_m * self.a3),
            sigma_mu2: 1.0 / (2.0 * one_m * self.a4),
            sigma_beta2: 1.0 / (2.0 * one_m * self.a3),
            rho,
        }
    }
}

/// Bivariate normal posterior of `(mu, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMuBeta {
    pub mu_bar: f64,
    pub beta_bar: f64,
    pub sigma_mu2: f64,
    pub sigma_beta2: f64,
    pub rho: f64,
}

impl PosteriorMuBeta {
    pub fn cov(&self) -> f64 {
        self.rho * (self.sigma_mu2 * self.sigma_beta2).sqrt()
    }
}

/// Posterior expectations of the parameter functionals entering the
/// responsibility update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBundle {
    pub e_log_pi: f64,
    pub e_log_delta2: f64,
    pub e_delta2: f64,
    pub e_delta: f64,
    pub e_mu: f64,
    pub e_mu2: f64,
    pub e_beta: f64,
    pub e_beta2: f64,
    pub cov_mu_beta: f64,
    pub e_gamma: f64,
    pub e_gamma2: f64,
    pub e_delta_gamma: f64,
}

impl ExpectationBundle {
    /// `E[A] = E[delta^2] + E[(y - mu)^2]`.
    pub fn e_a(&self, y: f64) -> f64 {
        self.e_delta2 + y * y - 2.0 * y * self.e_mu + self.e_mu2
    }

    /// `E[B] = E[gamma^2] + E[beta^2]`.
    pub fn e_b(&self) -> f64 {
        self.e_gamma2 + self.e_beta2
    }

    /// `E[C] = E[delta gamma] + E[beta (y - mu)]`.
    pub fn e_c(&self, y: f64) -> f64 {
        self.e_delta_gamma + y * self.e_beta - (self.e_mu * self.e_beta + self.cov_mu_beta)
    }

    /// Unnormalized log responsibility of `y`, with the matching GIG(-1, A, B)
    /// latent moments.
    pub fn log_score(&self, y: f64) -> Result<(f64, f64, f64), VbError> {
        let a = self.e_a(y);
        let b = self.e_b();
        let score = self.e_log_pi + 0.5 * self.e_log_delta2 + self.e_c(y) + LN_TWO
            - 0.5 * (a / b).ln()
            + log_bessel_k(-1.0, (a * b).sqrt())?;
        let m = gig_moments(-1.0, a, b).map_err(dist_to_vb)?;
        Ok((score, m.e_u, m.e_uinv))
    }
}

pub(crate) fn dist_to_vb(e: DistError) -> VbError {
    match e {
        DistError::Special(s) => VbError::Special(s),
        DistError::Linalg(l) => VbError::Linalg(l),
        other => VbError::InvalidConfig(other.to_string()),
    }
}

/// Adds responsibility-weighted sufficient statistics to the priors.
pub fn update_hypers(
    priors: &[ComponentHyper],
    resp: &Responsibilities,
    lat: &LatentMoments,
    data: &[f64],
) -> Vec<ComponentHyper> {
    let mut out = priors.to_vec();
    for (i, &y) in data.iter().enumerate() {
        for (g, h) in out.iter_mut().enumerate() {
            let z = resp.get(i, g);
            let e_uinv = lat.e_uinv(i, g);
            h.a0 += z;
            h.a1 += z * y;
            h.a2 += z * e_uinv * y;
            h.a3 += 0.5 * z * lat.e_u(i, g);
            h.a4 += 0.5 * z * e_uinv;
        }
    }
    out
}

/// `(E[gamma], E[gamma^2], E[delta gamma])` with
/// `delta^2 ~ Gamma(shape, rate)` and `gamma | delta ~ N(a0 delta/(2 a3), 1/(2 a3))`
/// truncated to `gamma > 0`.
pub fn gamma_moments(h: &ComponentHyper) -> Result<(f64, f64, f64), VbError> {
    let shape = 0.5 * h.a0 + 1.0;
    let rate = h.gamma_rate();
    let slope = h.a0 / (2.0 * h.a3);
    let s = 1.0 / (2.0 * h.a3).sqrt();
    let low = (shape - 4.0 * shape.sqrt()).max(0.0) / rate;
    if slope * low.sqrt() >= UNTRUNCATED_SCALES * s {
        let e_delta2 = shape / rate;
        let e_delta = sqrt_gamma_moment(shape, rate)?;
        return Ok((
            slope * e_delta,
            slope * slope * e_delta2 + s * s,
            slope * e_delta2,
        ));
    }
    gamma_moments_quadrature(shape, rate, slope, s)
}

fn gamma_moments_quadrature(
    shape: f64,
    rate: f64,
    slope: f64,
    s: f64,
) -> Result<(f64, f64, f64), VbError> {
    // Integrate over v = ln(delta^2), where the Gamma density times the
    // Jacobian, t^shape exp(-rate t), is smooth. The weights are normalized so
    // truncation of the v-range cancels.
    let v_mode = (shape / rate).ln();
    let v_lo = v_mode - 12.0 / shape.sqrt() - 36.0 / shape;
    let v_hi = v_mode + 12.0 / shape.sqrt();
    let (nodes, weights) = gauss_legendre(DELTA_NODES_PER_PANEL);
    let width = (v_hi - v_lo) / DELTA_PANELS as f64;
    let peak = shape * v_mode - shape;
    let (mut mass, mut e_g, mut e_g2, mut e_dg) = (0.0, 0.0, 0.0, 0.0);
    for p in 0..DELTA_PANELS {
        let mid = v_lo + (p as f64 + 0.5) * width;
        for (x, w) in nodes.iter().zip(&weights) {
            let v = mid + 0.5 * width * x;
            let t = v.exp();
            let dens = (shape * v - rate * t - peak).exp() * w;
            let delta = t.sqrt();
            let (m1, m2) = trunc_normal_moments(TruncNormalSpec::new(slope * delta, s)?)?;
            mass += dens;
            e_g += dens * m1;
            e_g2 += dens * m2;
            e_dg += dens * delta * m1;
        }
    }
    Ok((e_g / mass, e_g2 / mass, e_dg / mass))
}

/// Posterior expectations for one component. `total_a0` is the summed
/// Dirichlet mass over live components.
pub fn expectations_from_hypers(
    h: &ComponentHyper,
    total_a0: f64,
) -> Result<ExpectationBundle, VbError> {
    h.validate().map_err(|reason| VbError::InvalidHyper {
        component: 0,
        reason,
    })?;
    let shape = 0.5 * h.a0 + 1.0;
    let rate = h.gamma_rate();
    let post = h.posterior_mu_beta();
    let (e_gamma, e_gamma2, e_delta_gamma) = gamma_moments(h)?;
    Ok(ExpectationBundle {
        e_log_pi: digamma(h.a0)? - digamma(total_a0)?,
        e_log_delta2: digamma(shape)? - rate.ln(),
        e_delta2: shape / rate,
        e_delta: sqrt_gamma_moment(shape, rate)?,
        e_mu: post.mu_bar,
        e_mu2: post.mu_bar * post.mu_bar + post.sigma_mu2,
        e_beta: post.beta_bar,
        e_beta2: post.beta_bar * post.beta_bar + post.sigma_beta2,
        cov_mu_beta: post.cov(),
        e_gamma,
        e_gamma2,
        e_delta_gamma,
    })
}

/// Recomputes responsibilities and latent moments. The third value counts
/// rows where every component score underflowed (those rows are uniform).
pub fn update_responsibilities(
    data: &[f64],
    bundles: &[ExpectationBundle],
) -> Result<(Responsibilities, LatentMoments, usize), VbError> {
    let (n, g) = (data.len(), bundles.len());
    let mut z = vec![0.0; n * g];
    let mut e_u = vec![0.0; n * g];
    let mut e_uinv = vec![0.0; n * g];
    let mut degenerate = 0;
    for (i, &y) in data.iter().enumerate() {
        for (k, b) in bundles.iter().enumerate() {
            let (score, u, uinv) = b.log_score(y)?;
            z[i * g + k] = score;
            e_u[i * g + k] = u;
            e_uinv[i * g + k] = uinv;
        }
        if !normalize_log_scores(&mut z[i * g..(i + 1) * g]) {
            degenerate += 1;
        }
    }
    Ok((
        Responsibilities::from_flat(n, g, z),
        LatentMoments::from_flat(n, g, e_u, e_uinv),
        degenerate,
    ))
}

/// Starting state: one-hot responsibilities, component means for `mu`,
/// `beta = 0`, `gamma = delta = 1`, and the matching latent moments.
#[derive(Debug, Clone, PartialEq)]
pub struct InitState {
    pub resp: Responsibilities,
    pub lat: LatentMoments,
    pub priors: Vec<ComponentHyper>,
}

pub fn init_fit(data: &[f64], config: &VbConfig) -> Result<InitState, VbError> {
    config.validate(data.len())?;
    check_finite(data)?;
    let labels = initial_labels(data, 1, config);
    init_from_labels(data, &labels, config.g_init, config.hyper_init)
}

/// As [`init_fit`] with caller-supplied 0-based labels.
pub fn init_from_labels(
    data: &[f64],
    labels: &[usize],
    g: usize,
    hyper_init: f64,
) -> Result<InitState, VbError> {
    let n = data.len();
    let overall = data.iter().sum::<f64>() / n as f64;
    let mut sums = vec![0.0; g];
    let mut counts = vec![0usize; g];
    for (&y, &l) in data.iter().zip(labels) {
        sums[l] += y;
        counts[l] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { overall })
        .collect();
    let mut lat = LatentMoments::filled(n, g, 1.0, 1.0);
    for (i, &y) in data.iter().enumerate() {
        for (k, mu) in means.iter().enumerate() {
            let m = gig_moments(-1.0, 1.0 + (y - mu) * (y - mu), 1.0).map_err(dist_to_vb)?;
            lat.set(i, k, m.e_u, m.e_uinv);
        }
    }
    Ok(InitState {
        resp: Responsibilities::one_hot(labels, g),
        lat,
        priors: vec![ComponentHyper::flat(hyper_init); g],
    })
}

fn check_finite(data: &[f64]) -> Result<(), VbError> {
    match data.iter().position(|y| !y.is_finite()) {
        Some(row) => Err(VbError::NonFiniteData { row }),
        None => Ok(()),
    }
}

pub fn fit(data: &[f64], config: &VbConfig) -> Result<FitResult<ComponentHyper>, VbError> {
    let init = init_fit(data, config)?;
    fit_from(data, init, config)
}

/// Runs the iteration from an explicit starting state.
pub fn fit_from(
    data: &[f64],
    init: InitState,
    config: &VbConfig,
) -> Result<FitResult<ComponentHyper>, VbError> {
    check_finite(data)?;
    let InitState {
        mut resp,
        mut lat,
        priors,
    } = init;
    let prior = priors[0];
    let mut surviving: Vec<usize> = (0..resp.g()).collect();
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iter {
        let hypers = update_hypers(&vec![prior; surviving.len()], &resp, &lat, data);
        let count_mass: f64 = hypers.iter().map(|h| h.a0).sum();
        let prior_mass = prior.a0 * surviving.len() as f64;
        let valid: Vec<usize> = (0..hypers.len())
            .filter(|&k| hypers[k].validate().is_ok())
            .collect();
        let mut structural_change = valid.len() < hypers.len();
        if valid.is_empty() {
            return Err(VbError::AllPruned);
        }
        let hypers: Vec<ComponentHyper> = valid.iter().map(|&k| hypers[k]).collect();
        let total_a0: f64 = hypers.iter().map(|h| h.a0).sum();
        let bundles = hypers
            .iter()
            .map(|h| expectations_from_hypers(h, total_a0))
            .collect::<Result<Vec<_>, _>>()?;
        let (new_resp, new_lat, degenerate) = update_responsibilities(data, &bundles)?;

        let keep = crate::mixture::surviving_columns(&new_resp, config.prune_threshold);
        if keep.is_empty() {
            return Err(VbError::AllPruned);
        }
        structural_change |= keep.len() < valid.len();
        let max_change = (!structural_change)
            .then(|| new_resp.max_abs_diff(&resp).max(new_lat.max_rel_diff(&lat)));
        surviving = keep.iter().map(|&k| surviving[valid[k]]).collect();
        resp = new_resp.retain_columns(&keep);
        lat = new_lat.retain_columns(&keep);
        trace.push(IterationTrace {
            iteration,
            max_resp_change: max_change,
            alive: surviving.len(),
            degenerate_rows: degenerate,
            count_mass,
            prior_mass,
        });
        if max_change.is_some_and(|c| c < config.tol) {
            converged = true;
            break;
        }
    }

    let hypers = update_hypers(&vec![prior; surviving.len()], &resp, &lat, data);
    Ok(FitResult {
        labels: resp.map_labels(),
        surviving,
        hypers,
        resp,
        iterations: trace.len(),
        converged,
        trace,
    })
}

/// Posterior-mean plug-in parameters `(mu_bar, beta_bar, E[delta], E[gamma])`.
pub fn plug_in_params(h: &ComponentHyper) -> Result<UnigParams, VbError> {
    let b = expectations_from_hypers(h, h.a0)?;
    UnigParams::new(b.e_mu, b.e_beta, b.e_delta, b.e_gamma).map_err(dist_to_vb)
}

/// Mixing weights `a0 / sum(a0)`.
pub fn mixing_weights(hypers: &[ComponentHyper]) -> Vec<f64> {
    let total: f64 = hypers.iter().map(|h| h.a0).sum();
    hypers.iter().map(|h| h.a0 / total).collect()
}

/// Plug-in mixture density on `grid`.
pub fn fitted_density(
    result: &FitResult<ComponentHyper>,
    grid: &[f64],
) -> Result<Vec<f64>, VbError> {
    let params = result
        .hypers
        .iter()
        .map(plug_in_params)
        .collect::<Result<Vec<_>, _>>()?;
    let weights = mixing_weights(&result.hypers);
    grid.iter()
        .map(|&y| {
            params.iter().zip(&weights).try_fold(0.0, |acc, (p, w)| {
                Ok(acc + w * unig_density(y, p).map_err(dist_to_vb)?)
            })
        })
        .collect()
}
