//! Latent mechanism extraction.
//!
//! Each agent contributes one row of causes `X` and one row of effects `Y`.
//! An MLP encoder maps `[X, Y]` to a latent parameter `θ` per agent; a GP over
//! `[X, Θ]` must reconstruct `Y`, and a log-HSIC penalty keeps `Θ` independent
//! of `X`. Encoder weights and GP hyperparameters are fitted jointly with
//! scaled conjugate gradients.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{optimize_scg, Activation, Cholesky, FeedForwardNet, Matrix, Objective, ScgOptions};
use crate::error::{Error, Result};
use crate::kernels::{self, double_center, median_pairwise, sq_dists, KernelParams};

/// HSIC values below this are clamped before taking the log.
pub const HSIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CauseEffectDataset {
    x: Matrix,
    y: Matrix,
}

impl CauseEffectDataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "CauseEffectDataset::new",
                format!("{:?}", x.shape()),
                format!("{:?}", y.shape()),
            ));
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::invalid("dataset must be non-empty"));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(CauseEffectDataset { x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    /// Number of agents.
    pub fn agents(&self) -> usize {
        self.x.rows()
    }

    /// Samples per agent.
    pub fn samples(&self) -> usize {
        self.x.cols()
    }

    /// Reorders agents.
    pub fn permuted(&self, order: &[usize]) -> Self {
        CauseEffectDataset {
            x: self.x.select_rows(order),
            y: self.y.select_rows(order),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnmMmConfig {
    /// Latent dimension Q.
    pub latent_dim: usize,
    /// Weight of the log-HSIC term.
    pub lambda: f64,
    pub encoder_hidden: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Standard deviation of the initial encoder weights.
    pub init_sd: f64,
    /// Center each effect column before the GP likelihood.
    pub center_effect: bool,
}

impl Default for AnmMmConfig {
    fn default() -> Self {
        AnmMmConfig {
            latent_dim: 1,
            lambda: 1.0,
            encoder_hidden: 20,
            max_iters: 500,
            seed: 0,
            init_sd: 0.1,
            center_effect: true,
        }
    }
}

impl AnmMmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be >= 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if self.encoder_hidden == 0 {
            return Err(Error::invalid("encoder_hidden must be >= 1"));
        }
        Ok(())
    }
}

/// GP decoder hyperparameters: RBF kernel plus white noise of precision β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub kernel: KernelParams,
    pub noise_precision: f64,
}

impl GpHyper {
    pub fn new(kernel: KernelParams, noise_precision: f64) -> Result<Self> {
        if !(noise_precision > 0.0 && noise_precision.is_finite()) {
            return Err(Error::invalid("noise precision must be positive"));
        }
        Ok(GpHyper {
            kernel,
            noise_precision,
        })
    }

    fn to_log(self) -> [f64; 3] {
        [
            self.kernel.lengthscale().ln(),
            self.kernel.variance().ln(),
            self.noise_precision.ln(),
        ]
    }

    fn from_log(p: &[f64]) -> Result<Self> {
        GpHyper::new(KernelParams::new(p[0].exp(), p[1].exp())?, p[2].exp())
    }
}

/// Affine standardization of the encoder input `[X, Y]`: every column is
/// centered on its mean over agents and each block is divided by one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub x_scale: f64,
    pub y_scale: f64,
}

impl InputScaling {
    pub fn identity(samples: usize) -> Self {
        InputScaling {
            x_mean: vec![0.0; samples],
            y_mean: vec![0.0; samples],
            x_scale: 1.0,
            y_scale: 1.0,
        }
    }

    /// Column means; block scale is the standard deviation of all entries of
    /// the block, so cross-agent variation keeps its size relative to the
    /// spread of the block.
    pub fn fit(dataset: &CauseEffectDataset) -> Self {
        fn block(m: &Matrix) -> (Vec<f64>, f64) {
            let n = m.rows() as f64;
            let means: Vec<f64> = (0..m.cols())
                .map(|j| (0..m.rows()).map(|i| m[(i, j)]).sum::<f64>() / n)
                .collect();
            let all = m.as_slice();
            let mu = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / all.len() as f64;
            let sd = var.sqrt();
            (means, if sd > 1e-12 { sd } else { 1.0 })
        }
        let (x_mean, x_scale) = block(dataset.x());
        let (y_mean, y_scale) = block(dataset.y());
        InputScaling {
            x_mean,
            y_mean,
            x_scale,
            y_scale,
        }
    }

    pub fn apply(&self, dataset: &CauseEffectDataset) -> Result<Matrix> {
        let p = dataset.samples();
        if self.x_mean.len() != p || self.y_mean.len() != p {
            return Err(Error::shape("InputScaling::apply", self.x_mean.len(), p));
        }
        let (x, y) = (dataset.x(), dataset.y());
        Ok(Matrix::from_fn(dataset.agents(), 2 * p, |i, j| {
            if j < p {
                (x[(i, j)] - self.x_mean[j]) / self.x_scale
            } else {
                let k = j - p;
                (y[(i, k)] - self.y_mean[k]) / self.y_scale
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnmMmModel {
    pub encoder: FeedForwardNet,
    pub gp_hyper: GpHyper,
    pub scaling: InputScaling,
}

impl AnmMmModel {
    /// Encoder `2P → hidden (tanh) → Q (linear)` with weights from
    /// `N(0, init_sd²)`.
    pub fn init(dataset: &CauseEffectDataset, config: &AnmMmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut encoder = FeedForwardNet::mlp(
            2 * dataset.samples(),
            &[config.encoder_hidden],
            config.latent_dim,
            Activation::Tanh,
            Activation::Linear,
        )?;
        encoder.init_normal(&mut rng, config.init_sd);
        let scaling = InputScaling::fit(dataset);
        let placeholder = GpHyper::new(KernelParams::new(1.0, 1.0)?, 1.0)?;
        let mut model = AnmMmModel {
            encoder,
            gp_hyper: placeholder,
            scaling,
        };
        model.gp_hyper = initial_hyper(&model, dataset, config.center_effect)?;
        Ok(model)
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.params().to_vec();
        p.extend_from_slice(&self.gp_hyper.to_log());
        p
    }

    fn with_flat_params(&self, p: &[f64]) -> Result<Self> {
        let e = self.encoder.param_count();
        let mut m = self.clone();
        m.encoder.set_params(&p[..e])?;
        m.gp_hyper = GpHyper::from_log(&p[e..e + 3])?;
        Ok(m)
    }
}

/// Extracted latent parameters, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix(Matrix);

impl ThetaMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::invalid("theta contains non-finite entries"));
        }
        Ok(ThetaMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn agents(&self) -> usize {
        self.0.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.0.cols()
    }
}

pub fn encode(model: &AnmMmModel, dataset: &CauseEffectDataset) -> Result<ThetaMatrix> {
    let z = model.scaling.apply(dataset)?;
    ThetaMatrix::new(model.encoder.forward(&z)?)
}

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// `(DN/2)·ln 2π + (D/2)·ln|K̃| + ½·Tr(K̃⁻¹·Y·Yᵀ)` with
/// `K̃ = rbf(X̃, X̃) + β⁻¹·I`.
pub fn gp_neg_log_likelihood(x_tilde: &Matrix, y: &Matrix, hyper: &GpHyper) -> Result<f64> {
    if x_tilde.rows() != y.rows() {
        return Err(Error::shape("gp_neg_log_likelihood", x_tilde.rows(), y.rows()));
    }
    let mut k = kernels::rbf_gram(x_tilde, x_tilde, hyper.kernel)?;
    k.add_diagonal(1.0 / hyper.noise_precision);
    nll_from_kernel(&k, y)
}

/// Negative log likelihood for an explicit covariance `K̃`.
pub fn nll_from_kernel(k: &Matrix, y: &Matrix) -> Result<f64> {
    let (n, d) = (y.rows() as f64, y.cols() as f64);
    let ch = Cholesky::with_jitter(k)?;
    let alpha = ch.solve(y)?;
    let quad: f64 = alpha
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(0.5 * d * n * ln_2pi() + 0.5 * d * ch.log_det() + 0.5 * quad)
}

/// Loss value with its gradient over the flat parameter vector
/// `[encoder params, ln ℓ, ln variance, ln β]`.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub nll: f64,
    pub hsic: f64,
    pub hsic_clamped: bool,
}

/// Precomputed pieces of the joint objective for one dataset.
pub struct JointObjective {
    template: AnmMmModel,
    lambda: f64,
    z: Matrix,
    y: Matrix,
    x_dists: Matrix,
    kx_centered: Matrix,
    /// Whether any evaluation so far had to clamp HSIC.
    pub clamped: bool,
}

fn centered_columns(y: &Matrix) -> Matrix {
    let n = y.rows() as f64;
    let means: Vec<f64> = (0..y.cols())
        .map(|j| (0..y.rows()).map(|i| y[(i, j)]).sum::<f64>() / n)
        .collect();
    Matrix::from_fn(y.rows(), y.cols(), |i, j| y[(i, j)] - means[j])
}

impl JointObjective {
    pub fn new(
        model: &AnmMmModel,
        dataset: &CauseEffectDataset,
        lambda: f64,
        center_effect: bool,
    ) -> Result<Self> {
        if dataset.agents() < 2 {
            return Err(Error::invalid("mechanism extraction needs at least 2 agents"));
        }
        let z = model.scaling.apply(dataset)?;
        if z.cols() != model.encoder.input_dim() {
            return Err(Error::shape("JointObjective::new", model.encoder.input_dim(), z.cols()));
        }
        let y = if center_effect {
            centered_columns(dataset.y())
        } else {
            dataset.y().clone()
        };
        let x_dists = sq_dists(dataset.x(), dataset.x())?;
        let kx = kernels::median_rbf_gram(dataset.x())?;
        Ok(JointObjective {
            template: model.clone(),
            lambda,
            z,
            y,
            x_dists,
            kx_centered: double_center(&kx),
            clamped: false,
        })
    }

    pub fn initial_params(&self) -> Vec<f64> {
        self.template.flat_params()
    }

    pub fn model_from(&self, params: &[f64]) -> Result<AnmMmModel> {
        self.template.with_flat_params(params)
    }

    /// Loss and gradient at `params`.
    pub fn compute(&self, params: &[f64]) -> Result<JointLoss> {
        let enc_n = self.template.encoder.param_count();
        if params.len() != enc_n + 3 {
            return Err(Error::shape("JointObjective::compute", enc_n + 3, params.len()));
        }
        let mut encoder = self.template.encoder.clone();
        encoder.set_params(&params[..enc_n])?;
        let (ln_ell, ln_var, ln_beta) = (params[enc_n], params[enc_n + 1], params[enc_n + 2]);
        let (ell2, var, noise) = ((2.0 * ln_ell).exp(), ln_var.exp(), (-ln_beta).exp());

        let trace = encoder.forward_trace(&self.z)?;
        let theta = trace.output();
        let n = theta.rows();
        let q = theta.cols();
        let theta_dists = sq_dists(theta, theta)?;

        // GP term
        let total = self.x_dists.add(&theta_dists)?;
        let kf = total.map(|d| var * (-d / (2.0 * ell2)).exp());
        let mut k = kf.clone();
        k.add_diagonal(noise);
        let ch = Cholesky::with_jitter(&k)?;
        let k_inv = ch.inverse();
        let d = self.y.cols() as f64;
        let alpha = ch.solve(&self.y)?;
        let quad: f64 = alpha
            .as_slice()
            .iter()
            .zip(self.y.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let nll = 0.5 * d * n as f64 * ln_2pi() + 0.5 * d * ch.log_det() + 0.5 * quad;
        // dNLL/dK = ½(D·K⁻¹ − K⁻¹YYᵀK⁻¹)
        let ayya = alpha.matmul_t(&alpha)?;
        let g = Matrix::from_fn(n, n, |i, j| 0.5 * (d * k_inv[(i, j)] - ayya[(i, j)]));

        // HSIC term with a median-heuristic bandwidth on Θ
        let med = median_pairwise(theta)?;
        let sigma = if med.value > 0.0 { med.value } else { 1.0 };
        let s2 = sigma * sigma;
        let l = theta_dists.map(|v| (-v / (2.0 * s2)).exp());
        let nn = (n * n) as f64;
        let raw_hsic: f64 = self
            .kx_centered
            .as_slice()
            .iter()
            .zip(l.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nn;
        let clamped = raw_hsic < HSIC_FLOOR;
        let hsic = raw_hsic.max(HSIC_FLOOR);
        let loss = nll + self.lambda * hsic.ln();

        // dLoss/dD_θ (entrywise, before symmetrization)
        let hsic_scale = if clamped { 0.0 } else { self.lambda / (hsic * nn) };
        let mut m = Matrix::zeros(n, n);
        let mut dsigma = 0.0;
        for i in 0..n {
            for j in 0..n {
                let gl = hsic_scale * self.kx_centered[(i, j)];
                m[(i, j)] = -g[(i, j)] * kf[(i, j)] / (2.0 * ell2) - gl * l[(i, j)] / (2.0 * s2);
                dsigma += gl * l[(i, j)] * theta_dists[(i, j)] / (s2 * sigma);
            }
        }
        let mut dtheta = Matrix::zeros(n, q);
        for i in 0..n {
            for j in 0..n {
                let w = 2.0 * (m[(i, j)] + m[(j, i)]);
                if w != 0.0 {
                    for c in 0..q {
                        dtheta[(i, c)] += w * (theta[(i, c)] - theta[(j, c)]);
                    }
                }
            }
        }
        if med.value > 0.0 && dsigma != 0.0 {
            for &(i, j, wgt) in &med.pairs {
                let dist = theta_dists[(i, j)].sqrt();
                if dist > 0.0 {
                    for c in 0..q {
                        let u = wgt * dsigma * (theta[(i, c)] - theta[(j, c)]) / dist;
                        dtheta[(i, c)] += u;
                        dtheta[(j, c)] -= u;
                    }
                }
            }
        }

        let (enc_grad, _) = encoder.backward(&trace, &dtheta)?;
        let mut grad = enc_grad;
        let mut d_ln_ell = 0.0;
        let mut d_ln_var = 0.0;
        for (idx, gv) in g.as_slice().iter().enumerate() {
            let kv = kf.as_slice()[idx];
            d_ln_var += gv * kv;
            d_ln_ell += gv * kv * total.as_slice()[idx] / ell2;
        }
        let d_ln_beta = -noise * g.trace();
        grad.extend_from_slice(&[d_ln_ell, d_ln_var, d_ln_beta]);

        Ok(JointLoss {
            loss,
            grad,
            nll,
            hsic,
            hsic_clamped: clamped,
        })
    }
}

impl Objective for JointObjective {
    fn evaluate(&mut self, params: &[f64]) -> (f64, Vec<f64>) {
        match self.compute(params) {
            Ok(r) => {
                self.clamped |= r.hsic_clamped;
                (r.loss, r.grad)
            }
            Err(_) => (f64::INFINITY, vec![f64::NAN; params.len()]),
        }
    }
}

/// `NLL([X, Θ], Y) + λ·log HSIC_b(X, Θ)` and its gradient for `model`.
pub fn joint_loss(
    model: &AnmMmModel,
    dataset: &CauseEffectDataset,
    lambda: f64,
    center_effect: bool,
) -> Result<JointLoss> {
    let obj = JointObjective::new(model, dataset, lambda, center_effect)?;
    obj.compute(&model.flat_params())
}

/// Lengthscale from the median distance of the initial `[X, Θ]`, signal
/// variance from the effect, noise at a tenth of the signal.
fn initial_hyper(model: &AnmMmModel, dataset: &CauseEffectDataset, center: bool) -> Result<GpHyper> {
    let theta = encode(model, dataset)?;
    let x_tilde = dataset.x().hcat(theta.matrix())?;
    let ell = kernels::median_heuristic(&x_tilde)?;
    let y = if center {
        centered_columns(dataset.y())
    } else {
        dataset.y().clone()
    };
    let ys = y.as_slice();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = (ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ys.len() as f64).max(1e-6);
    GpHyper::new(KernelParams::new(ell, var)?, 10.0 / var)
}

#[derive(Debug, Clone)]
pub struct AnmMmFit {
    pub model: AnmMmModel,
    pub theta: ThetaMatrix,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Some evaluation during the fit clamped HSIC at [`HSIC_FLOOR`].
    pub hsic_clamped: bool,
}

/// Fits encoder weights and GP hyperparameters to `dataset`.
pub fn fit(dataset: &CauseEffectDataset, config: &AnmMmConfig) -> Result<AnmMmFit> {
    if dataset.agents() < 2 {
        return Err(Error::invalid("mechanism extraction needs at least 2 agents"));
    }
    let model = AnmMmModel::init(dataset, config)?;
    let mut obj = JointObjective::new(&model, dataset, config.lambda, config.center_effect)?;
    let init = obj.initial_params();
    let opts = ScgOptions {
        max_iters: config.max_iters,
        grad_tol: 1e-6,
        step_tol: 1e-12,
    };
    let report = optimize_scg(&mut obj, &init, opts)?;
    let model = obj.model_from(&report.params)?;
    let theta = encode(&model, dataset)?;
    Ok(AnmMmFit {
        model,
        theta,
        initial_loss: report.initial_loss,
        final_loss: report.loss,
        iterations: report.iterations,
        hsic_clamped: obj.clamped,
    })
}
