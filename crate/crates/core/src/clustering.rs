//! Soft mechanism clustering and similarity-based batch allocation.
//!
//! A diagonal GMM is fitted to the extracted parameters; each agent's
//! responsibility vector is compared to every other agent's through an RBF
//! kernel, rows are normalized, and each row is apportioned into integer
//! per-buffer sample counts that add up to the batch size exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anm_mm::ThetaMatrix;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const EMPTY_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub rel_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 500,
            rel_tol: 1e-8,
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `C×Q`
    pub means: Matrix,
    /// `C×Q` per-dimension variances
    pub variances: Matrix,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `ln w_c + ln N(x | μ_c, diag σ²_c)` for every component.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        for c in 0..self.components() {
            let mut lp = self.weights[c].ln();
            for (q, &xq) in x.iter().enumerate() {
                let var = self.variances[(c, q)];
                let diff = xq - self.means[(c, q)];
                lp -= 0.5 * (ln2pi + var.ln() + diff * diff / var);
            }
            out[c] = lp;
        }
    }

    /// Posterior responsibilities and the total data log-likelihood.
    fn e_step(&self, theta: &Matrix) -> (Matrix, f64) {
        let c = self.components();
        let mut resp = Matrix::zeros(theta.rows(), c);
        let mut total = 0.0;
        let mut buf = vec![0.0; c];
        for n in 0..theta.rows() {
            self.log_joint(theta.row(n), &mut buf);
            let lse = log_sum_exp(&buf);
            total += lse;
            for (r, lp) in resp.row_mut(n).iter_mut().zip(&buf) {
                *r = (lp - lse).exp();
            }
        }
        (resp, total)
    }

    pub fn log_likelihood(&self, theta: &Matrix) -> f64 {
        self.e_step(theta).1
    }

    /// Free parameters of a diagonal GMM.
    pub fn free_params(&self) -> usize {
        let (c, q) = (self.components(), self.dim());
        (c - 1) + 2 * c * q
    }

    pub fn bic(&self, theta: &Matrix) -> f64 {
        -2.0 * self.log_likelihood(theta) + self.free_params() as f64 * (theta.rows() as f64).ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Data log-likelihood before each M-step, plus the final value.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    /// Iterations at which an empty component was re-seeded.
    pub reseeds: Vec<usize>,
}

fn column_variances(theta: &Matrix) -> Vec<f64> {
    let n = theta.rows() as f64;
    (0..theta.cols())
        .map(|q| {
            let col = theta.col_to_vec(q);
            let mu = col.iter().sum::<f64>() / n;
            (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR)
        })
        .collect()
}

/// k-means++ seeding of the component means.
fn seed_means<R: Rng>(theta: &Matrix, c: usize, rng: &mut R) -> Matrix {
    let n = theta.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let sqd = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    while chosen.len() < c {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&k| sqd(theta.row(i), theta.row(k)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
    }
    theta.select_rows(&chosen)
}

/// Fits a `c`-component diagonal GMM by EM.
pub fn fit_gmm_em(theta: &ThetaMatrix, c: usize, seed: u64) -> Result<GmmFit> {
    fit_gmm_em_with(theta.matrix(), c, seed, EmOptions::default())
}

pub fn fit_gmm_em_with(theta: &Matrix, c: usize, seed: u64, opts: EmOptions) -> Result<GmmFit> {
    let (n, q) = theta.shape();
    if c == 0 || n < c {
        return Err(Error::invalid(format!("GMM needs N >= C >= 1 (N = {n}, C = {c})")));
    }
    if q == 0 || !theta.is_finite() {
        return Err(Error::invalid("GMM input must be finite with at least one column"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data_var = column_variances(theta);
    let mut model = GmmModel {
        weights: vec![1.0 / c as f64; c],
        means: seed_means(theta, c, &mut rng),
        variances: Matrix::from_fn(c, q, |_, j| data_var[j]),
    };
    let mut lls = Vec::new();
    let mut reseeds = Vec::new();
    let mut iterations = 0;
    let (mut resp, mut ll) = model.e_step(theta);
    lls.push(ll);
    for it in 0..opts.max_iters {
        iterations = it + 1;
        // M-step
        let mass: Vec<f64> = (0..c).map(|k| (0..n).map(|i| resp[(i, k)]).sum()).collect();
        for k in 0..c {
            if mass[k] < EMPTY_MASS {
                let i = rng.gen_range(0..n);
                model.means.row_mut(k).copy_from_slice(theta.row(i));
                model.variances.row_mut(k).copy_from_slice(&data_var);
                model.weights[k] = 1.0 / n as f64;
                reseeds.push(it);
                continue;
            }
            model.weights[k] = mass[k] / n as f64;
            for j in 0..q {
                let mu = (0..n).map(|i| resp[(i, k)] * theta[(i, j)]).sum::<f64>() / mass[k];
                let var = (0..n)
                    .map(|i| resp[(i, k)] * (theta[(i, j)] - mu).powi(2))
                    .sum::<f64>()
                    / mass[k];
                model.means[(k, j)] = mu;
                model.variances[(k, j)] = var.max(VARIANCE_FLOOR);
            }
        }
        let wsum: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= wsum);

        let (r, new_ll) = model.e_step(theta);
        resp = r;
        let prev = ll;
        ll = new_ll;
        lls.push(ll);
        if reseeds.last() != Some(&it) && (ll - prev) <= opts.rel_tol * prev.abs().max(1e-12) {
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihoods: lls,
        iterations,
        reseeds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Number of mixture components: fixed, or chosen by BIC over 1..=8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentCount {
    Fixed(usize),
    Auto(Auto),
}

pub const BIC_MAX_COMPONENTS: usize = 8;

/// Fits GMMs with C = 1..=min(8, N) and keeps the lowest BIC.
pub fn select_components_bic(theta: &ThetaMatrix, seed: u64) -> Result<GmmFit> {
    let n = theta.agents();
    let mut best: Option<(f64, GmmFit)> = None;
    for c in 1..=BIC_MAX_COMPONENTS.min(n) {
        let fit = fit_gmm_em(theta, c, seed)?;
        let bic = fit.model.bic(theta.matrix());
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

pub fn fit_components(theta: &ThetaMatrix, count: ComponentCount, seed: u64) -> Result<GmmFit> {
    match count {
        ComponentCount::Fixed(c) => fit_gmm_em(theta, c, seed),
        ComponentCount::Auto(_) => select_components_bic(theta, seed),
    }
}

/// Per-agent posterior over components; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix(Matrix);

impl ResponsibilityMatrix {
    pub fn new(v: Matrix) -> Result<Self> {
        for i in 0..v.rows() {
            let row = v.row(i);
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} is not on the probability simplex")));
            }
        }
        Ok(ResponsibilityMatrix(v))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Most probable component per agent (lowest index on ties).
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.0.rows())
            .map(|i| {
                let row = self.0.row(i);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn responsibilities(model: &GmmModel, theta: &ThetaMatrix) -> Result<ResponsibilityMatrix> {
    if theta.latent_dim() != model.dim() {
        return Err(Error::shape("responsibilities", model.dim(), theta.latent_dim()));
    }
    let (r, _) = model.e_step(theta.matrix());
    // renormalize away rounding drift
    let r = Matrix::from_fn(r.rows(), r.cols(), |i, j| r[(i, j)] / r.row(i).iter().sum::<f64>());
    ResponsibilityMatrix::new(r)
}

/// `exp(−‖v_m − v_n‖² / 2)` between responsibility rows.
pub fn similarity(v: &ResponsibilityMatrix) -> Matrix {
    let m = v.matrix();
    Matrix::from_fn(m.rows(), m.rows(), |a, b| {
        let d2: f64 = m
            .row(a)
            .iter()
            .zip(m.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (-d2 / 2.0).exp()
    })
}

pub fn row_normalize(k: &Matrix) -> Result<Matrix> {
    let mut out = k.clone();
    for i in 0..k.rows() {
        let s: f64 = k.row(i).iter().sum();
        if !(s > 0.0) {
            return Err(Error::invalid(format!("row {i} has non-positive sum")));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    Ok(out)
}

/// Largest-remainder apportionment of `batch` slots over the shares in
/// `row`: floor every quota, then hand the leftover slots to the largest
/// fractional parts, lower index first on ties.
pub fn allocate_batch(row: &[f64], batch: usize) -> Result<Vec<usize>> {
    if row.is_empty() || row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("allocation row must be non-empty and non-negative"));
    }
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("allocation row sums to zero"));
    }
    let quotas: Vec<f64> = row.iter().map(|p| batch as f64 * p / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    let leftover = batch.saturating_sub(assigned);
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Everything needed to build similarity-weighted minibatches.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityAllocation {
    pub k: Matrix,
    pub k_hat: Matrix,
    /// `k_bar[n][q]`: samples agent `n` draws from agent `q`'s buffer.
    pub k_bar: Vec<Vec<usize>>,
    pub batch: usize,
}

impl SimilarityAllocation {
    pub fn from_responsibilities(v: &ResponsibilityMatrix, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        let k = similarity(v);
        let k_hat = row_normalize(&k)?;
        let k_bar = (0..k_hat.rows())
            .map(|i| allocate_batch(k_hat.row(i), batch))
            .collect::<Result<Vec<_>>>()?;
        Ok(SimilarityAllocation {
            k,
            k_hat,
            k_bar,
            batch,
        })
    }

    pub fn agents(&self) -> usize {
        self.k_bar.len()
    }
}

/// Random permutation helper for tests and diagnostics.
pub fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
