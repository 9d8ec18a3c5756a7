//! Analytic velocity oracles for the straight-line path
//! `x_t = (1 - t) x_0 + t x_1`, `x_0 ~ N(0, I)`.
//!
//! For Gaussian (or Gaussian-mixture) data the ideal velocity
//! `E[x_1 - x_0 | x_t]` is available in closed form, which makes every
//! property of the sampler checkable without a trained network.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{from_json, read_text, to_json, write_text};

/// Largest time at which an oracle may be evaluated.
pub const T_MAX: f64 = 1.0 - 1e-6;

/// Floor on the isotropic variance of a fitted prior.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `(x_t, t) -> v`, deterministic in its inputs.
pub trait VelocityOracle: Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>>;
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(0.0..=T_MAX).contains(&t) {
        return Err(Error::Domain(format!("oracle time {t} outside [0, 1 - 1e-6]")));
    }
    Ok(())
}

/// Clean endpoint `x_t + (1 - t) v(x_t, t)`.
pub fn tweedie_endpoint(oracle: &dyn VelocityOracle, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    let v = oracle.velocity(x_t, t)?;
    Ok(x_t.iter().zip(&v).map(|(x, v)| x + (1.0 - t) * v).collect())
}

/// Velocity field that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroVelocity(pub usize);

impl VelocityOracle for ZeroVelocity {
    fn dim(&self) -> usize {
        self.0
    }

    fn velocity(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        Ok(vec![0.0; x_t.len()])
    }
}

/// `N(mean, W W^T + base I)`. `W` may have zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    factor: DMatrix<f64>,
    base: f64,
    gram: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::low_rank(mean, DMatrix::zeros(d, 0), variance)
    }

    pub fn low_rank(mean: Vec<f64>, factor: DMatrix<f64>, base: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParam("prior dimension must be positive".into()));
        }
        if factor.nrows() != mean.len() {
            return Err(Error::dim("prior factor rows", mean.len(), factor.nrows()));
        }
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::InvalidParam(format!(
                "prior base variance must be > 0, got {base}"
            )));
        }
        if mean.iter().chain(factor.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("prior contains non-finite values".into()));
        }
        let gram = factor.transpose() * &factor;
        Ok(GaussianPrior {
            mean,
            factor,
            base,
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Dense covariance. Small dimensions only.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose() + DMatrix::identity(self.dim(), self.dim()) * self.base
    }

    pub fn covariance_diagonal(&self) -> Vec<f64> {
        self.factor
            .row_iter()
            .map(|row| row.norm_squared() + self.base)
            .collect()
    }

    /// `C v`.
    fn cov_apply(&self, v: &[f64]) -> Vec<f64> {
        let wt_v = self.factor.tr_mul(&DVector::from_column_slice(v));
        let w_wt_v = &self.factor * wt_v;
        v.iter().zip(w_wt_v.iter()).map(|(x, y)| y + self.base * x).collect()
    }

    /// With `M = a2 C + s2 I`, returns `(M^-1 r, log det M)`.
    fn scaled_solve(&self, r: &[f64], a2: f64, s2: f64) -> (Vec<f64>, f64) {
        let d = self.dim();
        let k = self.rank();
        let beta = a2 * self.base + s2;
        let mut logdet = d as f64 * beta.ln();
        if k == 0 || a2 == 0.0 {
            return (r.iter().map(|v| v / beta).collect(), logdet);
        }
        // Woodbury with capacitance beta I_k + a2 W^T W
        let cap = DMatrix::identity(k, k) * beta + &self.gram * a2;
        let chol = nalgebra::Cholesky::new(cap).expect("capacitance is positive definite");
        logdet += chol.l_dirty().diagonal().iter().map(|l| 2.0 * l.ln()).sum::<f64>() - k as f64 * beta.ln();
        let wt_r = self.factor.tr_mul(&DVector::from_column_slice(r));
        let inner = chol.solve(&wt_r);
        let correction = &self.factor * inner;
        let z = r
            .iter()
            .zip(correction.iter())
            .map(|(ri, ci)| (ri - a2 * ci) / beta)
            .collect();
        (z, logdet)
    }

    /// `E[x_1 | x_t] = mu + t C (t^2 C + (1-t)^2 I)^-1 (x_t - t mu)`.
    pub fn conditional_mean(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        self.check_dim(x_t)?;
        Ok(self.conditional_mean_unchecked(x_t, t))
    }

    fn conditional_mean_unchecked(&self, x_t: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return self.mean.clone();
        }
        let r: Vec<f64> = x_t.iter().zip(&self.mean).map(|(x, m)| x - t * m).collect();
        let (z, _) = self.scaled_solve(&r, t * t, (1.0 - t) * (1.0 - t));
        let cz = self.cov_apply(&z);
        self.mean.iter().zip(&cz).map(|(m, c)| m + t * c).collect()
    }

    /// `log N(x_t; t mu, t^2 C + (1-t)^2 I)`, the marginal of the path at time `t`.
    pub fn path_log_density(&self, x_t: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x_t)?;
        let r: Vec<f64> = x_t.iter().zip(&self.mean).map(|(x, m)| x - t * m).collect();
        let (z, logdet) = self.scaled_solve(&r, t * t, (1.0 - t) * (1.0 - t));
        let quad: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + logdet + quad))
    }

    /// Negative log-likelihood of `x` under `N(mu, C)`.
    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.path_log_density(x, 1.0)?)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.rank();
        let xi = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let low = &self.factor * xi;
        let s = self.base.sqrt();
        self.mean
            .iter()
            .zip(low.iter())
            .map(|(m, l)| m + l + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim("oracle state", self.dim(), x.len()));
        }
        Ok(())
    }
}

impl VelocityOracle for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn velocity(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let e = self.conditional_mean(x_t, t)?;
        Ok(e.iter().zip(x_t).map(|(e, x)| (e - x) / (1.0 - t)).collect())
    }
}

/// Finite mixture of [`GaussianPrior`]s with normalized weights.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    weights: Vec<f64>,
    components: Vec<GaussianPrior>,
}

impl MixturePrior {
    pub fn new(components: Vec<(f64, GaussianPrior)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidParam("mixture needs at least one component".into()));
        };
        let d = first.1.dim();
        if let Some((w, _)) = components.iter().find(|(w, _)| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam(format!("mixture weight must be > 0, got {w}")));
        }
        if let Some((_, c)) = components.iter().find(|(_, c)| c.dim() != d) {
            return Err(Error::dim("mixture component", d, c.dim()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        let (weights, components) = components.into_iter().map(|(w, c)| (w / total, c)).unzip();
        Ok(MixturePrior { weights, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianPrior] {
        &self.components
    }

    /// Posterior component probabilities given `x_t`, computed in log space.
    pub fn responsibilities(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let logs = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.path_log_density(x_t, t)?))
            .collect::<Result<Vec<f64>>>()?;
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            // nearest component by log density
            let best = logs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let mut r = vec![0.0; logs.len()];
            r[best] = 1.0;
            return Ok(r);
        }
        let exps: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn conditional_mean(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let resp = self.responsibilities(x_t, t)?;
        let mut out = vec![0.0; x_t.len()];
        for (r, c) in resp.iter().zip(&self.components) {
            if *r == 0.0 {
                continue;
            }
            let e = c.conditional_mean(x_t, t)?;
            for (o, v) in out.iter_mut().zip(e) {
                *o += r * v;
            }
        }
        Ok(out)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().unwrap().sample(rng)
    }
}

impl VelocityOracle for MixturePrior {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn velocity(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let e = self.conditional_mean(x_t, t)?;
        Ok(e.iter().zip(x_t).map(|(e, x)| (e - x) / (1.0 - t)).collect())
    }
}

/// Fits `N(mu, W W^T + b I)` to flattened samples: `mu` is the sample mean,
/// `W` spans the top-`rank` eigenpairs of the sample covariance scaled to
/// `sqrt(e_i - b)`, and `b` is the mean of the remaining eigenvalues.
pub fn fit_gaussian_prior(samples: &[Vec<f64>], rank: usize) -> Result<GaussianPrior> {
    let count = samples.len();
    if count <= rank || count < 2 {
        return Err(Error::InvalidParam(format!(
            "fitting a rank-{rank} prior needs more than {} samples, got {count}",
            rank.max(1)
        )));
    }
    let d = samples[0].len();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::dim("corpus sample", d, s.len()));
    }
    if rank > d {
        return Err(Error::InvalidParam(format!("rank {rank} exceeds dimension {d}")));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let centered = DMatrix::from_fn(count, d, |i, j| samples[i][j] - mean[j]);
    let denom = (count - 1) as f64;
    let trace = centered.iter().map(|v| v * v).sum::<f64>() / denom;

    // eigenpairs of the smaller of X X^T and X^T X
    let (values, directions) = if count <= d {
        let gram = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = Vec::with_capacity(rank);
        let mut dirs = DMatrix::zeros(d, rank);
        for (slot, &k) in order.iter().take(rank).enumerate() {
            let e = eig.eigenvalues[k].max(0.0);
            values.push(e);
            if e > 0.0 {
                let u = eig.eigenvectors.column(k);
                let v = centered.tr_mul(&u) / (denom * e).sqrt();
                dirs.set_column(slot, &v);
            }
        }
        (values, dirs)
    } else {
        let cov = centered.tr_mul(&centered) / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().take(rank).map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        let dirs = DMatrix::from_fn(d, rank, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, dirs)
    };

    let top: f64 = values.iter().sum();
    let base = if d > rank {
        ((trace - top) / (d - rank) as f64).max(VARIANCE_FLOOR)
    } else {
        VARIANCE_FLOOR
    };
    let mut factor = directions;
    for (c, e) in values.iter().enumerate() {
        let scale = (e - base).max(0.0).sqrt();
        factor.column_mut(c).scale_mut(scale);
    }
    GaussianPrior::low_rank(mean, factor, base)
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorFile {
    dim: usize,
    rank: usize,
    mu: Vec<f64>,
    /// Row-major `dim x rank`.
    #[serde(rename = "W")]
    w: Vec<f64>,
    b: f64,
}

pub fn prior_to_json(prior: &GaussianPrior) -> Result<String> {
    let (d, k) = (prior.dim(), prior.rank());
    let mut w = Vec::with_capacity(d * k);
    for r in 0..d {
        for c in 0..k {
            w.push(prior.factor[(r, c)]);
        }
    }
    to_json(&PriorFile {
        dim: d,
        rank: k,
        mu: prior.mean.clone(),
        w,
        b: prior.base,
    })
}

pub fn prior_from_json(text: &str) -> Result<GaussianPrior> {
    let f: PriorFile = from_json(text, "prior")?;
    if f.mu.len() != f.dim {
        return Err(Error::Parse(format!(
            "prior mu has {} entries, dim is {}",
            f.mu.len(),
            f.dim
        )));
    }
    if f.w.len() != f.dim * f.rank {
        return Err(Error::Parse(format!(
            "prior W has {} entries, expected {} x {}",
            f.w.len(),
            f.dim,
            f.rank
        )));
    }
    GaussianPrior::low_rank(f.mu, DMatrix::from_row_slice(f.dim, f.rank, &f.w), f.b)
}

pub fn save_prior(path: impl AsRef<Path>, prior: &GaussianPrior) -> Result<()> {
    write_text(path.as_ref(), &prior_to_json(prior)?)
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<GaussianPrior> {
    prior_from_json(&read_text(path.as_ref())?)
}
