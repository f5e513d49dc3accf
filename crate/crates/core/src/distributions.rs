//! Inverse Gaussian, generalized inverse Gaussian, and normal inverse Gaussian
//! densities, plus a seeded mixture simulator.
//!
//! GIG arguments are always `(lambda, chi, psi)` with density proportional to
//! `u^(lambda-1) exp(-(chi/u + psi*u)/2)`. Call sites that carry the square
//! roots `sqrt(E[A])`, `sqrt(E[B])` pass `E[A]`, `E[B]` directly as `chi`, `psi`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, LowerTriangular, SpdMatrix};
use crate::special_fn::{log_bessel_k, SpecialError, LN_TWO};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter {name} = {value}")]
    Param { name: &'static str, value: f64 },
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn positive(name: &'static str, value: f64) -> Result<f64, DistError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DistError::Param { name, value })
    }
}

fn finite(name: &'static str, value: f64) -> Result<f64, DistError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DistError::Param { name, value })
    }
}

/// Univariate NIG with location `mu`, asymmetry `beta`, scale `delta`, and
/// `gamma = sqrt(alpha^2 - beta^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnigParams {
    pub mu: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl UnigParams {
    pub fn new(mu: f64, beta: f64, delta: f64, gamma: f64) -> Result<Self, DistError> {
        Ok(Self {
            mu: finite("mu", mu)?,
            beta: finite("beta", beta)?,
            delta: positive("delta", delta)?,
            gamma: positive("gamma", gamma)?,
        })
    }

    pub fn validate(&self) -> Result<(), DistError> {
        Self::new(self.mu, self.beta, self.delta, self.gamma).map(|_| ())
    }

    pub fn alpha(&self) -> f64 {
        self.gamma.hypot(self.beta)
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.delta * self.beta / self.gamma
    }

    pub fn variance(&self) -> f64 {
        self.delta * self.alpha().powi(2) / self.gamma.powi(3)
    }
}

/// Multivariate NIG in the unconstrained parameterization
/// `Y | u ~ N(mu + u beta, u sigma)`, `U ~ IG(1, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnigParams {
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: SpdMatrix,
    pub gamma: f64,
}

impl MnigParams {
    pub fn new(
        mu: Vec<f64>,
        beta: Vec<f64>,
        sigma: SpdMatrix,
        gamma: f64,
    ) -> Result<Self, DistError> {
        let p = Self {
            mu,
            beta,
            sigma,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let d = self.sigma.dim();
        for (name, v) in [("mu", &self.mu), ("beta", &self.beta)] {
            if v.len() != d {
                return Err(LinalgError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                }
                .into());
            }
            for &x in v.iter() {
                finite(name, x)?;
            }
        }
        positive("gamma", self.gamma)?;
        linalg::cholesky(&self.sigma)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// The one-dimensional reparameterization of a UNIG:
    /// `sigma = delta^2`, `gamma = gamma delta`, `beta = beta sigma`.
    pub fn from_unig(p: &UnigParams) -> Self {
        let sigma = p.delta * p.delta;
        Self {
            mu: vec![p.mu],
            beta: vec![p.beta * sigma],
            sigma: SpdMatrix::scaled_identity(1, sigma),
            gamma: p.gamma * p.delta,
        }
    }

    /// Inverse of [`MnigParams::from_unig`]; `None` unless `dim() == 1`.
    pub fn to_unig(&self) -> Option<UnigParams> {
        if self.dim() != 1 {
            return None;
        }
        let sigma = self.sigma.get(0, 0);
        let delta = sigma.sqrt();
        Some(UnigParams {
            mu: self.mu[0],
            beta: self.beta[0] / sigma,
            delta,
            gamma: self.gamma / delta,
        })
    }

    /// `Cov(Y) = E[U] sigma + Var(U) beta beta^T` with `E[U] = 1/gamma`,
    /// `Var(U) = 1/gamma^3`.
    pub fn covariance(&self) -> SpdMatrix {
        let d = self.dim();
        let e_u = 1.0 / self.gamma;
        let var_u = 1.0 / self.gamma.powi(3);
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = e_u * self.sigma.get(i, j) + var_u * self.beta[i] * self.beta[j];
            }
        }
        SpdMatrix::new(d, data).expect("covariance of valid parameters")
    }

    pub fn prepare(&self) -> Result<PreparedMnig, DistError> {
        let chol = linalg::cholesky(&self.sigma)?;
        let sigma_inv_beta = chol.solve(&self.beta)?;
        let beta_quad = linalg::dot(&self.beta, &sigma_inv_beta);
        Ok(PreparedMnig {
            params: self.clone(),
            logdet: chol.logdet(),
            chol,
            sigma_inv_beta,
            beta_quad,
        })
    }
}

/// MNIG parameters with the scale matrix factored, for repeated density calls.
#[derive(Debug, Clone)]
pub struct PreparedMnig {
    params: MnigParams,
    chol: LowerTriangular,
    logdet: f64,
    sigma_inv_beta: Vec<f64>,
    beta_quad: f64,
}

impl PreparedMnig {
    pub fn params(&self) -> &MnigParams {
        &self.params
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64, DistError> {
        let d = self.params.dim();
        if y.len() != d {
            return Err(LinalgError::DimensionMismatch {
                expected: d,
                found: y.len(),
            }
            .into());
        }
        let centered: Vec<f64> = y.iter().zip(&self.params.mu).map(|(a, b)| a - b).collect();
        let solved = self.chol.solve(&centered)?;
        let q = linalg::dot(&centered, &solved);
        let chi = 1.0 + q;
        let psi = self.params.gamma * self.params.gamma + self.beta_quad;
        let lambda = -0.5 * (d as f64 + 1.0);
        let omega = (chi * psi).sqrt();
        Ok(
            -0.5 * (d as f64 + 1.0) * (2.0 * PI).ln() - 0.5 * self.logdet
                + self.params.gamma
                + linalg::dot(&centered, &self.sigma_inv_beta)
                + LN_TWO
                + 0.5 * lambda * (chi / psi).ln()
                + log_bessel_k(lambda, omega)?,
        )
    }
}

/// `ln f(u)` for `U ~ IG(delta, gamma)`, mean `delta/gamma`.
pub fn ig_log_density(u: f64, delta: f64, gamma: f64) -> Result<f64, DistError> {
    positive("u", u)?;
    positive("delta", delta)?;
    positive("gamma", gamma)?;
    Ok(
        -0.5 * (2.0 * PI).ln() + delta.ln() - 1.5 * u.ln() + delta * gamma
            - 0.5 * (delta * delta / u + gamma * gamma * u),
    )
}

pub fn ig_density(u: f64, delta: f64, gamma: f64) -> Result<f64, DistError> {
    ig_log_density(u, delta, gamma).map(f64::exp)
}

/// Log of the GIG(`lambda`, `chi`, `psi`) density at `u`.
pub fn gig_log_density(u: f64, lambda: f64, chi: f64, psi: f64) -> Result<f64, DistError> {
    positive("u", u)?;
    finite("lambda", lambda)?;
    positive("chi", chi)?;
    positive("psi", psi)?;
    let omega = (chi * psi).sqrt();
    Ok(
        0.5 * lambda * (psi / chi).ln() - LN_TWO - log_bessel_k(lambda, omega)?
            + (lambda - 1.0) * u.ln()
            - 0.5 * (chi / u + psi * u),
    )
}

/// `E[U]` and `E[1/U]` under a GIG law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    pub e_u: f64,
    pub e_uinv: f64,
}

/// `E[U] = sqrt(chi/psi) K_{lambda+1}(w) / K_lambda(w)` and
/// `E[1/U] = sqrt(psi/chi) K_{lambda-1}(w) / K_lambda(w)`, `w = sqrt(chi psi)`.
pub fn gig_moments(lambda: f64, chi: f64, psi: f64) -> Result<GigMoments, DistError> {
    finite("lambda", lambda)?;
    positive("chi", chi)?;
    positive("psi", psi)?;
    let omega = (chi * psi).sqrt();
    let ln_scale = 0.5 * (chi.ln() - psi.ln());
    let ln_k = log_bessel_k(lambda, omega)?;
    let e_u = (ln_scale + log_bessel_k(lambda + 1.0, omega)? - ln_k).exp();
    let e_uinv = (-ln_scale + log_bessel_k(lambda - 1.0, omega)? - ln_k).exp();
    Ok(GigMoments { e_u, e_uinv })
}

pub fn unig_log_density(y: f64, p: &UnigParams) -> Result<f64, DistError> {
    finite("y", y)?;
    let alpha = p.alpha();
    let z = (y - p.mu) / p.delta;
    let phi = 1.0 + z * z;
    Ok(
        alpha.ln() - PI.ln() + p.delta * p.gamma + p.beta * (y - p.mu) - 0.5 * phi.ln()
            + log_bessel_k(1.0, p.delta * alpha * phi.sqrt())?,
    )
}

pub fn unig_density(y: f64, p: &UnigParams) -> Result<f64, DistError> {
    unig_log_density(y, p).map(f64::exp)
}

pub fn mnig_log_density(y: &[f64], p: &MnigParams) -> Result<f64, DistError> {
    p.prepare()?.log_density(y)
}

/// Draws `U ~ IG(delta, gamma)` with the Michael-Schucany-Haas transform.
pub fn sample_ig<R: Rng + ?Sized>(rng: &mut R, delta: f64, gamma: f64) -> f64 {
    let mean = delta / gamma;
    let shape = delta * delta;
    let v: f64 = rng.sample(StandardNormal);
    let y = v * v;
    let root = (4.0 * mean * shape * y + mean * mean * y * y).sqrt();
    let x = mean + mean * mean * y / (2.0 * shape) - mean / (2.0 * shape) * root;
    let u: f64 = rng.gen();
    if u <= mean / (mean + x) {
        x
    } else {
        mean * mean / x
    }
}

/// How rows are split among components when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Labels drawn independently from the mixing weights.
    #[default]
    Random,
    /// Deterministic counts `round(n * w_g)` (largest remainder).
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Components {
    Univariate(Vec<UnigParams>),
    Multivariate(Vec<MnigParams>),
}

impl Components {
    pub fn len(&self) -> usize {
        match self {
            Components::Univariate(c) => c.len(),
            Components::Multivariate(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Components::Univariate(_) => 1,
            Components::Multivariate(c) => c.first().map_or(0, MnigParams::dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub components: Components,
    #[serde(default)]
    pub allocation: Allocation,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), DistError> {
        let g = self.components.len();
        if g == 0 || self.weights.len() != g {
            return Err(DistError::InvalidSpec(format!(
                "{} weights for {} components",
                self.weights.len(),
                g
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(DistError::InvalidSpec("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DistError::InvalidSpec(format!(
                "weights sum to {total}, not 1"
            )));
        }
        match &self.components {
            Components::Univariate(c) => c.iter().try_for_each(UnigParams::validate),
            Components::Multivariate(c) => {
                let d = c[0].dim();
                for p in c {
                    if p.dim() != d {
                        return Err(DistError::InvalidSpec(
                            "components disagree on dimension".into(),
                        ));
                    }
                    p.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Mixture density at `y` (length 1 for univariate specs).
    pub fn log_density(&self, y: &[f64]) -> Result<f64, DistError> {
        let logs: Vec<f64> = match &self.components {
            Components::Univariate(c) => c
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| Ok(w.ln() + unig_log_density(y[0], p)?))
                .collect::<Result<_, DistError>>()?,
            Components::Multivariate(c) => c
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| Ok(w.ln() + mnig_log_density(y, p)?))
                .collect::<Result<_, DistError>>()?,
        };
        Ok(log_sum_exp(&logs))
    }

    /// Exact per-component counts under [`Allocation::Stratified`].
    pub fn stratified_counts(&self, n: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.weights.iter().map(|w| w * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut short = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            (raw[b] - raw[b].floor())
                .total_cmp(&(raw[a] - raw[a].floor()))
                .then(a.cmp(&b))
        });
        for g in order {
            if short == 0 {
                break;
            }
            counts[g] += 1;
            short -= 1;
        }
        counts
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Simulated observations with their generating labels (1-based) and latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub observations: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub latents: Vec<f64>,
}

impl LabeledSample {
    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, Vec::len)
    }

    /// Row-major copy of the observations.
    pub fn flat(&self) -> Vec<f64> {
        self.observations.iter().flatten().copied().collect()
    }

    pub fn label_counts(&self, g: usize) -> Vec<usize> {
        let mut counts = vec![0; g];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
    }
}

/// Draws `n` rows. Each row picks a label, an IG latent `u`, then
/// `y ~ N(mu + u beta, u * scale)`.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<LabeledSample, DistError> {
    spec.validate()?;
    if n == 0 {
        return Err(DistError::InvalidSpec("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = match spec.allocation {
        Allocation::Stratified => spec
            .stratified_counts(n)
            .iter()
            .enumerate()
            .flat_map(|(g, &c)| std::iter::repeat_n(g + 1, c))
            .collect(),
        Allocation::Random => (0..n)
            .map(|_| draw_categorical(&mut rng, &spec.weights) + 1)
            .collect(),
    };
    let factors: Vec<LowerTriangular> = match &spec.components {
        Components::Univariate(_) => Vec::new(),
        Components::Multivariate(c) => c
            .iter()
            .map(|p| linalg::cholesky(&p.sigma))
            .collect::<Result<_, _>>()?,
    };
    let mut observations = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for &label in &labels {
        let g = label - 1;
        match &spec.components {
            Components::Univariate(c) => {
                let p = &c[g];
                let u = sample_ig(&mut rng, p.delta, p.gamma);
                let z: f64 = rng.sample(StandardNormal);
                observations.push(vec![p.mu + p.beta * u + u.sqrt() * z]);
                latents.push(u);
            }
            Components::Multivariate(c) => {
                let p = &c[g];
                let d = p.dim();
                let u = sample_ig(&mut rng, 1.0, p.gamma);
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let l = &factors[g];
                let row = (0..d)
                    .map(|i| {
                        let noise: f64 = (0..=i).map(|k| l.get(i, k) * z[k]).sum();
                        p.mu[i] + u * p.beta[i] + u.sqrt() * noise
                    })
                    .collect();
                observations.push(row);
                latents.push(u);
            }
        }
    }
    Ok(LabeledSample {
        observations,
        labels,
        latents,
    })
}

fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (g, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return g;
        }
    }
    weights.len() - 1
}

/// Generating configurations for the simulation studies.
pub mod presets {
    use super::*;

    /// Two well-separated skewed components, 150 rows each.
    pub fn study1() -> MixtureSpec {
        MixtureSpec {
            weights: vec![0.5, 0.5],
            components: Components::Univariate(vec![
                UnigParams {
                    mu: 0.0,
                    beta: 1.0,
                    delta: 1.0,
                    gamma: 2.0,
                },
                UnigParams {
                    mu: 12.0,
                    beta: -1.0,
                    delta: 1.0,
                    gamma: 2.0,
                },
            ]),
            allocation: Allocation::Stratified,
        }
    }

    pub const STUDY1_N: usize = 300;

    /// As [`study1`] with the second location moved to 5 and 150/155 rows.
    pub fn study2() -> MixtureSpec {
        MixtureSpec {
            weights: vec![150.0 / 305.0, 155.0 / 305.0],
            components: Components::Univariate(vec![
                UnigParams {
                    mu: 0.0,
                    beta: 1.0,
                    delta: 1.0,
                    gamma: 2.0,
                },
                UnigParams {
                    mu: 5.0,
                    beta: -1.0,
                    delta: 1.0,
                    gamma: 2.0,
                },
            ]),
            allocation: Allocation::Stratified,
        }
    }

    pub const STUDY2_N: usize = 305;

    /// Bivariate symmetric-scale components with 150 and 200 rows.
    pub fn study4() -> MixtureSpec {
        MixtureSpec {
            weights: vec![150.0 / 350.0, 200.0 / 350.0],
            components: Components::Multivariate(vec![
                MnigParams {
                    mu: vec![-2.0, -10.0],
                    beta: vec![0.1, 0.2],
                    sigma: SpdMatrix::scaled_identity(2, 1.2),
                    gamma: 1.2,
                },
                MnigParams {
                    mu: vec![-10.0, -12.0],
                    beta: vec![0.2, 0.75],
                    sigma: SpdMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 1.0]]).expect("2x2"),
                    gamma: 0.8,
                },
            ]),
            allocation: Allocation::Stratified,
        }
    }

    pub const STUDY4_N: usize = 350;

    /// Ten-dimensional pair with 150 and 200 rows. The first component has an
    /// AR(1)-correlated scale (rho = 0.5) and mild positive skew; the second
    /// has identity scale, negative skew, and location 6 in every coordinate.
    pub fn study5() -> MixtureSpec {
        let d: usize = 10;
        let ar: Vec<f64> = (0..d * d)
            .map(|k| 0.5f64.powi((k / d).abs_diff(k % d) as i32))
            .collect();
        MixtureSpec {
            weights: vec![150.0 / 350.0, 200.0 / 350.0],
            components: Components::Multivariate(vec![
                MnigParams {
                    mu: vec![0.0; d],
                    beta: vec![0.2; d],
                    sigma: SpdMatrix::new(d, ar).expect("AR(1) matrix"),
                    gamma: 1.0,
                },
                MnigParams {
                    mu: vec![6.0; d],
                    beta: vec![-0.2; d],
                    sigma: SpdMatrix::identity(d),
                    gamma: 1.0,
                },
            ]),
            allocation: Allocation::Stratified,
        }
    }

    pub const STUDY5_N: usize = 350;
}
