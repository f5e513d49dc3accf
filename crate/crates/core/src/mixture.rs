//! State and plumbing shared by the univariate and multivariate engines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::special_fn::SpecialError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VbError {
    #[error("no observations")]
    EmptyData,
    #[error("g_init = {g_init} needs more than {g_init} observations, got {n}")]
    TooManyComponents { g_init: usize, n: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("observation {row} is not finite")]
    NonFiniteData { row: usize },
    #[error("data has {found} columns, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("component {component} violates posterior invariants: {reason}")]
    InvalidHyper { component: usize, reason: String },
    #[error("every component was pruned")]
    AllPruned,
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Random,
    Kmeans,
}

impl std::str::FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(InitMode::Random),
            "kmeans" => Ok(InitMode::Kmeans),
            other => Err(format!("unknown init mode {other:?}")),
        }
    }
}

/// Engine settings common to both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbConfig {
    pub g_init: usize,
    pub init_mode: InitMode,
    pub hyper_init: f64,
    pub prune_threshold: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            g_init: 10,
            init_mode: InitMode::Random,
            hyper_init: 1e-8,
            prune_threshold: 1.0,
            tol: 1e-6,
            max_iter: 500,
            seed: 1,
        }
    }
}

impl VbConfig {
    pub fn validate(&self, n: usize) -> Result<(), VbError> {
        if n == 0 {
            return Err(VbError::EmptyData);
        }
        if self.g_init < 2 {
            return Err(VbError::InvalidConfig("g_init must be at least 2".into()));
        }
        if self.g_init >= n {
            return Err(VbError::TooManyComponents {
                g_init: self.g_init,
                n,
            });
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(VbError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("hyper_init", self.hyper_init)?;
        positive("prune_threshold", self.prune_threshold)?;
        positive("tol", self.tol)?;
        if self.max_iter == 0 {
            return Err(VbError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-major `n x g` matrix of `q(z_ig = 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    n: usize,
    g: usize,
    z_hat: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let g = rows.first().map_or(0, Vec::len);
        Self {
            n: rows.len(),
            g,
            z_hat: rows.iter().flatten().copied().collect(),
        }
    }

    pub(crate) fn from_flat(n: usize, g: usize, z_hat: Vec<f64>) -> Self {
        debug_assert_eq!(z_hat.len(), n * g);
        Self { n, g, z_hat }
    }

    /// One-hot rows from 0-based labels.
    pub fn one_hot(labels: &[usize], g: usize) -> Self {
        let mut z_hat = vec![0.0; labels.len() * g];
        for (i, &l) in labels.iter().enumerate() {
            z_hat[i * g + l] = 1.0;
        }
        Self {
            n: labels.len(),
            g,
            z_hat,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn get(&self, i: usize, g: usize) -> f64 {
        self.z_hat[i * self.g + g]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z_hat[i * self.g..(i + 1) * self.g]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.z_hat.chunks(self.g.max(1))
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.g];
        for row in self.rows() {
            for (s, z) in sums.iter_mut().zip(row) {
                *s += z;
            }
        }
        sums
    }

    /// 1-based MAP labels indexing the current columns. Ties go to the
    /// lowest column.
    pub fn map_labels(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (g, &z) in row.iter().enumerate() {
                    if z > row[best] {
                        best = g;
                    }
                }
                best + 1
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.z_hat
            .iter()
            .zip(&other.z_hat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Keeps the listed columns and rescales each row to sum to one.
    pub fn retain_columns(&self, keep: &[usize]) -> Self {
        let g = keep.len();
        let mut z_hat = Vec::with_capacity(self.n * g);
        for row in self.rows() {
            let start = z_hat.len();
            z_hat.extend(keep.iter().map(|&k| row[k]));
            let total: f64 = z_hat[start..].iter().sum();
            if total > 0.0 {
                z_hat[start..].iter_mut().for_each(|z| *z /= total);
            } else {
                z_hat[start..].iter_mut().for_each(|z| *z = 1.0 / g as f64);
            }
        }
        Self {
            n: self.n,
            g,
            z_hat,
        }
    }
}

/// Conditional moments `E[U_ig | z_ig = 1]` and `E[1/U_ig | z_ig = 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    n: usize,
    g: usize,
    e_u: Vec<f64>,
    e_uinv: Vec<f64>,
}

impl LatentMoments {
    pub(crate) fn from_flat(n: usize, g: usize, e_u: Vec<f64>, e_uinv: Vec<f64>) -> Self {
        Self { n, g, e_u, e_uinv }
    }

    pub fn filled(n: usize, g: usize, e_u: f64, e_uinv: f64) -> Self {
        Self {
            n,
            g,
            e_u: vec![e_u; n * g],
            e_uinv: vec![e_uinv; n * g],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn e_u(&self, i: usize, g: usize) -> f64 {
        self.e_u[i * self.g + g]
    }

    pub fn e_uinv(&self, i: usize, g: usize) -> f64 {
        self.e_uinv[i * self.g + g]
    }

    pub fn set(&mut self, i: usize, g: usize, e_u: f64, e_uinv: f64) {
        self.e_u[i * self.g + g] = e_u;
        self.e_uinv[i * self.g + g] = e_uinv;
    }

    /// Largest relative change in `E[U]` between two states of equal shape.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        self.e_u
            .iter()
            .zip(&other.e_u)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0, f64::max)
    }

    pub fn retain_columns(&self, keep: &[usize]) -> Self {
        let pick = |v: &[f64]| {
            v.chunks(self.g.max(1))
                .flat_map(|row| keep.iter().map(move |&k| row[k]))
                .collect::<Vec<_>>()
        };
        Self {
            n: self.n,
            g: keep.len(),
            e_u: pick(&self.e_u),
            e_uinv: pick(&self.e_uinv),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// `None` when components were removed this iteration.
    pub max_resp_change: Option<f64>,
    pub alive: usize,
    pub degenerate_rows: usize,
    /// Summed `a0` over the components updated this iteration, and the
    /// part of it contributed by the priors.
    pub count_mass: f64,
    pub prior_mass: f64,
}

/// Outcome of a fit. `surviving` holds the original (0-based) component ids
/// in column order; `labels` are 1-based positions within `surviving`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<H> {
    pub surviving: Vec<usize>,
    pub hypers: Vec<H>,
    pub resp: Responsibilities,
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

impl<H> FitResult<H> {
    pub fn n_components(&self) -> usize {
        self.surviving.len()
    }
}

/// Normalizes log scores in place to probabilities. Returns `false` (and a
/// uniform row) when no score is finite.
pub fn normalize_log_scores(scores: &mut [f64]) -> bool {
    let finite: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_nan() { f64::NEG_INFINITY } else { s })
        .collect();
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / scores.len() as f64;
        scores.iter_mut().for_each(|s| *s = u);
        return false;
    }
    for (s, f) in scores.iter_mut().zip(&finite) {
        *s = (f - max).exp();
    }
    let total: f64 = scores.iter().sum();
    scores.iter_mut().for_each(|s| *s /= total);
    true
}

/// Indices of columns whose effective count reaches `threshold`.
pub fn surviving_columns(resp: &Responsibilities, threshold: f64) -> Vec<usize> {
    resp.column_sums()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(g, _)| g)
        .collect()
}

/// Removes columns with effective count below `threshold` and renormalizes.
/// Returns the pruned responsibilities and the removed column indices.
pub fn prune<H: Clone>(
    resp: &Responsibilities,
    hypers: &[H],
    threshold: f64,
) -> Result<(Responsibilities, Vec<H>, Vec<usize>), VbError> {
    let keep = surviving_columns(resp, threshold);
    if keep.is_empty() {
        return Err(VbError::AllPruned);
    }
    let removed = (0..resp.g()).filter(|g| !keep.contains(g)).collect();
    let hypers = keep.iter().map(|&g| hypers[g].clone()).collect();
    Ok((resp.retain_columns(&keep), hypers, removed))
}

/// 0-based labels from Lloyd's algorithm with k-means++ seeding, best of
/// `restarts` runs by within-cluster sum of squares. `data` is row-major.
pub fn kmeans(data: &[f64], d: usize, k: usize, seed: u64, restarts: usize) -> Vec<usize> {
    let n = data.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (sse, labels) = lloyd(data, n, d, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(data: &[f64], n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let point = |i: usize| &data[i * d..(i + 1) * d];
    let mut centers: Vec<f64> = point(rng.gen_range(0..n)).to_vec();
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[..d])).collect();
    while centers.len() < k * d {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(point(i), &c));
        }
        centers.extend(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let dist = sq_dist(point(i), &centers[c * d..(c + 1) * d]);
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if *label != best.1 {
                *label = best.1;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l * d + j] += data[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let sse = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(point(i), &centers[l * d..(l + 1) * d]))
        .sum();
    (sse, labels)
}

/// 0-based initial labels for `config.init_mode`.
pub(crate) fn initial_labels(data: &[f64], d: usize, config: &VbConfig) -> Vec<usize> {
    let n = data.len() / d;
    match config.init_mode {
        InitMode::Kmeans => kmeans(data, d, config.g_init, config.seed, 10),
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..n).map(|_| rng.gen_range(0..config.g_init)).collect()
        }
    }
}
