//! Variational Bayes for finite mixtures of multivariate NIG distributions in
//! the unconstrained `(mu, beta, sigma, gamma)` parameterization.
//!
//! Each component carries a Dirichlet count `a0`, vector statistics `a1`,
//! `a2`, scalars `a3`, `a4`, and a Wishart scale `V`. Given `sigma`, the
//! pair `(mu, beta)` is jointly normal with covariance
//! `sigma (x) [[a3, -a0], [-a0, a4]] / (a3 a4 - a0^2)`.

use serde::{Deserialize, Serialize};

use crate::distributions::{gig_moments, MnigParams, PreparedMnig};
use crate::linalg::{self, SpdMatrix};
use crate::mixture::{
    initial_labels, normalize_log_scores, surviving_columns, FitResult, IterationTrace,
    LatentMoments, Responsibilities, VbConfig, VbError,
};
use crate::special_fn::{digamma, log_bessel_k, trunc_normal_moments, TruncNormalSpec, LN_TWO};
use crate::vb_unig::dist_to_vb;

/// Scale of the default Wishart prior relative to the mean data variance.
pub const V0_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentHyperM {
    pub a0: f64,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: f64,
    pub a4: f64,
    pub v: SpdMatrix,
}

impl ComponentHyperM {
    pub fn flat(value: f64, v: SpdMatrix) -> Self {
        let d = v.dim();
        Self {
            a0: value,
            a1: vec![value; d],
            a2: vec![value; d],
            a3: value,
            a4: value,
            v,
        }
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    /// `a3 a4 - a0^2`.
    pub fn det(&self) -> f64 {
        self.a3 * self.a4 - self.a0 * self.a0
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.dim();
        if !(self.a0 > 0.0 && self.a3 > 0.0 && self.a4 > 0.0) {
            return Err(format!(
                "a0={}, a3={}, a4={} must be positive",
                self.a0, self.a3, self.a4
            ));
        }
        if !(self.det() > 0.0) {
            return Err(format!("a3 a4 - a0^2 = {} is not positive", self.det()));
        }
        if !(self.a0 > d as f64 - 1.0) {
            return Err(format!(
                "Wishart degrees of freedom {} need to exceed {}",
                self.a0,
                d - 1
            ));
        }
        if self.a1.len() != d || self.a2.len() != d {
            return Err("vector statistics disagree with V".into());
        }
        if !self.a1.iter().chain(&self.a2).all(|x| x.is_finite()) {
            return Err("non-finite hyperparameter".into());
        }
        linalg::cholesky(&self.v).map_err(|e| format!("V: {e}"))?;
        Ok(())
    }

    pub fn posterior_mu_beta(&self) -> PosteriorMuBetaM {
        let det = self.det();
        let mu_bar = self
            .a2
            .iter()
            .zip(&self.a1)
            .map(|(a2, a1)| (self.a3 * a2 - self.a0 * a1) / det)
            .collect();
        let beta_bar = self
            .a1
            .iter()
            .zip(&self.a2)
            .map(|(a1, a2)| (self.a4 * a1 - self.a0 * a2) / det)
            .collect();
        PosteriorMuBetaM {
            mu_bar,
            beta_bar,
            c_mu: self.a3 / det,
            c_beta: self.a4 / det,
            c_cross: -self.a0 / det,
        }
    }
}

/// Conditional normal posterior of `(mu, beta)`: means plus the scalars
/// multiplying `sigma` in `Var(mu)`, `Var(beta)`, `Cov(mu, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMuBetaM {
    pub mu_bar: Vec<f64>,
    pub beta_bar: Vec<f64>,
    pub c_mu: f64,
    pub c_beta: f64,
    pub c_cross: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBundleM {
    pub e_log_pi: f64,
    /// `E[log |sigma^-1|]`.
    pub e_log_det_prec: f64,
    /// `E[sigma^-1] = a0 V^-1`.
    pub prec_mean: SpdMatrix,
    pub mu_bar: Vec<f64>,
    pub beta_bar: Vec<f64>,
    pub c_mu: f64,
    pub c_beta: f64,
    pub c_cross: f64,
    pub e_gamma: f64,
    pub e_gamma2: f64,
}

impl ExpectationBundleM {
    pub fn dim(&self) -> usize {
        self.mu_bar.len()
    }

    fn scorer(&self) -> Result<Scorer<'_>, VbError> {
        let d = self.dim() as f64;
        let w_beta = self.prec_mean.mat_vec(&self.beta_bar)?;
        let e_b = self.e_gamma2 + linalg::dot(&self.beta_bar, &w_beta) + d * self.c_beta;
        Ok(Scorer {
            bundle: self,
            w_beta,
            e_b,
        })
    }

    /// Unnormalized log responsibility of `y`, with the matching
    /// GIG(-(d+1)/2, A, B) latent moments.
    pub fn log_score(&self, y: &[f64]) -> Result<(f64, f64, f64), VbError> {
        self.scorer()?.score(y)
    }
}

struct Scorer<'a> {
    bundle: &'a ExpectationBundleM,
    w_beta: Vec<f64>,
    e_b: f64,
}

impl Scorer<'_> {
    fn score(&self, y: &[f64]) -> Result<(f64, f64, f64), VbError> {
        let b = self.bundle;
        let d = b.dim() as f64;
        let centered: Vec<f64> = y.iter().zip(&b.mu_bar).map(|(y, m)| y - m).collect();
        let e_a = 1.0 + linalg::quad_form(&centered, &b.prec_mean)? + d * b.c_mu;
        let e_c = b.e_gamma + linalg::dot(&centered, &self.w_beta) - d * b.c_cross;
        let lambda = -0.5 * (d + 1.0);
        let score = b.e_log_pi
            + 0.5 * b.e_log_det_prec
            + e_c
            + LN_TWO
            + 0.5 * lambda * (e_a / self.e_b).ln()
            + log_bessel_k(lambda, (e_a * self.e_b).sqrt())?;
        let m = gig_moments(lambda, e_a, self.e_b).map_err(dist_to_vb)?;
        Ok((score, m.e_u, m.e_uinv))
    }
}

fn check_shape(data: &[f64], d: usize) -> Result<usize, VbError> {
    if d == 0 || !data.len().is_multiple_of(d) {
        return Err(VbError::Shape {
            expected: d,
            found: data.len() % d.max(1),
        });
    }
    if let Some(pos) = data.iter().position(|y| !y.is_finite()) {
        return Err(VbError::NonFiniteData { row: pos / d });
    }
    Ok(data.len() / d)
}

/// Adds responsibility-weighted statistics to the priors; `V` uses the
/// updated posterior means in place of `mu` and `beta`. `data` is row-major
/// with `d` columns.
pub fn update_hypers_m(
    priors: &[ComponentHyperM],
    resp: &Responsibilities,
    lat: &LatentMoments,
    data: &[f64],
    d: usize,
) -> Vec<ComponentHyperM> {
    let mut out = priors.to_vec();
    let mut scatter: Vec<Vec<f64>> = vec![vec![0.0; d * d]; priors.len()];
    for (i, y) in data.chunks(d).enumerate() {
        for (g, h) in out.iter_mut().enumerate() {
            let z = resp.get(i, g);
            let e_uinv = lat.e_uinv(i, g);
            h.a0 += z;
            h.a3 += z * lat.e_u(i, g);
            h.a4 += z * e_uinv;
            for j in 0..d {
                h.a1[j] += z * y[j];
                h.a2[j] += z * e_uinv * y[j];
            }
            let w = z * e_uinv;
            let s = &mut scatter[g];
            for j in 0..d {
                for k in 0..d {
                    s[j * d + k] += w * y[j] * y[k];
                }
            }
        }
    }
    for ((h, prior), s) in out.iter_mut().zip(priors).zip(scatter) {
        // Without a proper (mu, beta) posterior there are no means to plug in;
        // such components fail validation and are dropped by the caller.
        let post = if h.det() > 0.0 {
            h.posterior_mu_beta()
        } else {
            PosteriorMuBetaM {
                mu_bar: vec![0.0; d],
                beta_bar: vec![0.0; d],
                c_mu: 0.0,
                c_beta: 0.0,
                c_cross: 0.0,
            }
        };
        let (mu, beta) = (&post.mu_bar, &post.beta_bar);
        let mut v = vec![0.0; d * d];
        for j in 0..d {
            for k in 0..d {
                v[j * d + k] = prior.v.get(j, k) + s[j * d + k] - h.a2[j] * mu[k] - mu[j] * h.a2[k]
                    + h.a4 * mu[j] * mu[k]
                    - beta[j] * h.a1[k]
                    - h.a1[j] * beta[k]
                    + h.a0 * (beta[j] * mu[k] + mu[j] * beta[k])
                    + h.a3 * beta[j] * beta[k];
            }
        }
        // SpdMatrix::new symmetrizes; it only fails on non-finite input.
        h.v = SpdMatrix::new(d, v).unwrap_or_else(|_| SpdMatrix::scaled_identity(d, f64::NAN));
    }
    out
}

/// `E[log |sigma^-1|]` under the Wishart posterior.
pub fn e_log_det_precision(a0: f64, logdet_v: f64, d: usize) -> Result<f64, VbError> {
    let mut total = d as f64 * LN_TWO - logdet_v;
    for s in 1..=d {
        total += digamma(0.5 * (a0 + 1.0 - s as f64))?;
    }
    Ok(total)
}

/// Posterior expectations for one component. `total_a0` is the summed
/// Dirichlet mass over live components.
pub fn expectations_from_hypers_m(
    h: &ComponentHyperM,
    total_a0: f64,
) -> Result<ExpectationBundleM, VbError> {
    h.validate().map_err(|reason| VbError::InvalidHyper {
        component: 0,
        reason,
    })?;
    let d = h.dim();
    let (v_inv, logdet_v) = linalg::spd_inverse_logdet(&h.v)?;
    let post = h.posterior_mu_beta();
    let (e_gamma, e_gamma2) =
        trunc_normal_moments(TruncNormalSpec::new(h.a0 / h.a3, (0.5 / h.a3).sqrt())?)?;
    Ok(ExpectationBundleM {
        e_log_pi: digamma(h.a0)? - digamma(total_a0)?,
        e_log_det_prec: e_log_det_precision(h.a0, logdet_v, d)?,
        prec_mean: v_inv.scale(h.a0),
        mu_bar: post.mu_bar,
        beta_bar: post.beta_bar,
        c_mu: post.c_mu,
        c_beta: post.c_beta,
        c_cross: post.c_cross,
        e_gamma,
        e_gamma2,
    })
}

/// Recomputes responsibilities and latent moments; the third value counts
/// rows where every score underflowed.
pub fn update_responsibilities_m(
    data: &[f64],
    d: usize,
    bundles: &[ExpectationBundleM],
) -> Result<(Responsibilities, LatentMoments, usize), VbError> {
    let n = data.len() / d;
    let g = bundles.len();
    let scorers = bundles
        .iter()
        .map(ExpectationBundleM::scorer)
        .collect::<Result<Vec<_>, _>>()?;
    let mut z = vec![0.0; n * g];
    let mut e_u = vec![0.0; n * g];
    let mut e_uinv = vec![0.0; n * g];
    let mut degenerate = 0;
    for (i, y) in data.chunks(d).enumerate() {
        for (k, s) in scorers.iter().enumerate() {
            let (score, u, uinv) = s.score(y)?;
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

#[derive(Debug, Clone, PartialEq)]
pub struct InitStateM {
    pub resp: Responsibilities,
    pub lat: LatentMoments,
    pub priors: Vec<ComponentHyperM>,
}

fn mean_and_cov(rows: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for j in 0..d {
            for k in 0..d {
                cov[j * d + k] += (r[j] - mean[j]) * (r[k] - mean[k]) / (n - 1.0).max(1.0);
            }
        }
    }
    (mean, cov)
}

/// Default Wishart prior scale: `V0_SCALE * trace(S) / d * I`.
pub fn default_v0(data: &[f64], d: usize) -> SpdMatrix {
    let rows: Vec<&[f64]> = data.chunks(d).collect();
    let (_, cov) = mean_and_cov(&rows, d);
    let trace: f64 = (0..d).map(|j| cov[j * d + j]).sum();
    let scale = if trace > 0.0 {
        V0_SCALE * trace / d as f64
    } else {
        V0_SCALE
    };
    SpdMatrix::scaled_identity(d, scale)
}

pub fn init_fit_m(data: &[f64], d: usize, config: &VbConfig) -> Result<InitStateM, VbError> {
    let n = check_shape(data, d)?;
    config.validate(n)?;
    let labels = initial_labels(data, d, config);
    init_from_labels_m(data, d, &labels, config.g_init, config.hyper_init)
}

/// Component means and covariances from 0-based labels, `beta = 0`,
/// `gamma = 1`. Components too small for a full-rank covariance borrow the
/// pooled covariance.
pub fn init_from_labels_m(
    data: &[f64],
    d: usize,
    labels: &[usize],
    g: usize,
    hyper_init: f64,
) -> Result<InitStateM, VbError> {
    let n = check_shape(data, d)?;
    let rows: Vec<&[f64]> = data.chunks(d).collect();
    let (overall_mean, overall_cov) = mean_and_cov(&rows, d);
    let pooled = SpdMatrix::new(d, overall_cov)?;
    let pooled = match linalg::cholesky(&pooled) {
        Ok(_) => pooled,
        Err(_) => pooled.add_jitter(1e-6 * (pooled.trace() / d as f64).max(1e-12)),
    };
    let mut lat = LatentMoments::filled(n, g, 1.0, 1.0);
    let lambda = -0.5 * (d as f64 + 1.0);
    for k in 0..g {
        let members: Vec<&[f64]> = rows
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == k)
            .map(|(r, _)| *r)
            .collect();
        let (mean, sigma) = if members.len() > d {
            let (mean, cov) = mean_and_cov(&members, d);
            let cov = SpdMatrix::new(d, cov)?;
            match linalg::cholesky(&cov) {
                Ok(_) => (mean, cov),
                Err(_) => (mean, pooled.clone()),
            }
        } else if members.is_empty() {
            (overall_mean.clone(), pooled.clone())
        } else {
            (mean_and_cov(&members, d).0, pooled.clone())
        };
        let chol = linalg::cholesky(&sigma)?;
        for (i, y) in rows.iter().enumerate() {
            let centered: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let q = linalg::dot(&centered, &chol.solve(&centered)?);
            let m = gig_moments(lambda, 1.0 + q, 1.0).map_err(dist_to_vb)?;
            lat.set(i, k, m.e_u, m.e_uinv);
        }
    }
    let v0 = default_v0(data, d);
    Ok(InitStateM {
        resp: Responsibilities::one_hot(labels, g),
        lat,
        priors: vec![ComponentHyperM::flat(hyper_init, v0); g],
    })
}

pub fn fit_m(
    data: &[f64],
    d: usize,
    config: &VbConfig,
) -> Result<FitResult<ComponentHyperM>, VbError> {
    let init = init_fit_m(data, d, config)?;
    fit_from_m(data, d, init, config)
}

pub fn fit_from_m(
    data: &[f64],
    d: usize,
    init: InitStateM,
    config: &VbConfig,
) -> Result<FitResult<ComponentHyperM>, VbError> {
    check_shape(data, d)?;
    let InitStateM {
        mut resp,
        mut lat,
        priors,
    } = init;
    let prior = priors[0].clone();
    let mut surviving: Vec<usize> = (0..resp.g()).collect();
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iter {
        let hypers = update_hypers_m(&vec![prior.clone(); surviving.len()], &resp, &lat, data, d);
        let count_mass: f64 = hypers.iter().map(|h| h.a0).sum();
        let prior_mass = prior.a0 * surviving.len() as f64;
        let valid: Vec<usize> = (0..hypers.len())
            .filter(|&k| hypers[k].validate().is_ok())
            .collect();
        if valid.is_empty() {
            return Err(VbError::AllPruned);
        }
        let mut structural_change = valid.len() < hypers.len();
        let total_a0: f64 = valid.iter().map(|&k| hypers[k].a0).sum();
        let bundles = valid
            .iter()
            .map(|&k| expectations_from_hypers_m(&hypers[k], total_a0))
            .collect::<Result<Vec<_>, _>>()?;
        let (new_resp, new_lat, degenerate) = update_responsibilities_m(data, d, &bundles)?;

        let keep = surviving_columns(&new_resp, config.prune_threshold);
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

    let hypers = update_hypers_m(&vec![prior; surviving.len()], &resp, &lat, data, d);
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

/// Plug-in parameters: posterior means of `mu`, `beta`, `gamma`, and
/// `sigma = (E[sigma^-1])^-1 = V / a0`.
pub fn plug_in_params_m(h: &ComponentHyperM) -> Result<MnigParams, VbError> {
    let b = expectations_from_hypers_m(h, h.a0)?;
    MnigParams::new(b.mu_bar, b.beta_bar, h.v.scale(1.0 / h.a0), b.e_gamma).map_err(dist_to_vb)
}

/// Mixture weights and prepared plug-in components for density evaluation.
pub fn fitted_components_m(
    result: &FitResult<ComponentHyperM>,
) -> Result<Vec<(f64, PreparedMnig)>, VbError> {
    let total: f64 = result.hypers.iter().map(|h| h.a0).sum();
    result
        .hypers
        .iter()
        .map(|h| {
            Ok((
                h.a0 / total,
                plug_in_params_m(h)?.prepare().map_err(dist_to_vb)?,
            ))
        })
        .collect()
}

/// Plug-in mixture density at each row of `points` (row-major, `d` columns).
pub fn fitted_density_m(
    result: &FitResult<ComponentHyperM>,
    points: &[f64],
) -> Result<Vec<f64>, VbError> {
    let comps = fitted_components_m(result)?;
    let d = result.hypers.first().map_or(1, ComponentHyperM::dim);
    points
        .chunks(d)
        .map(|y| {
            comps.iter().try_fold(0.0, |acc, (w, p)| {
                Ok(acc + w * p.log_density(y).map_err(dist_to_vb)?.exp())
            })
        })
        .collect()
}
