use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected feedforward network with a flat parameter vector.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs. Its
/// parameters are stored as the `in×out` row-major weight block followed by the
/// `out` biases, layers in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer outputs recorded during a forward pass; `outputs[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    outputs: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("trace holds at least the input")
    }
}

impl FeedForwardNet {
    /// Zero-initialized network.
    pub fn new(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("a network needs at least an input and output size"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::shape(
                "FeedForwardNet::new",
                format!("{} activations", layer_sizes.len() - 1),
                activations.len(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let count = layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(FeedForwardNet {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// Builds a network whose hidden layers share one activation and whose
    /// output layer uses `output`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        Self::new(&sizes, &acts)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape("FeedForwardNet::set_params", self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Offsets of the weight block and bias block of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.layer_sizes[..=l]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum();
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (start, start + i * o)
    }

    fn weights(&self, l: usize) -> Matrix {
        let (w, b) = self.layer_offsets(l);
        Matrix::from_vec(
            self.layer_sizes[l],
            self.layer_sizes[l + 1],
            self.params[w..b].to_vec(),
        )
        .expect("layer block has in*out entries")
    }

    /// Fan-in uniform initialization `U(−1/√fan_in, 1/√fan_in)`; the output
    /// layer optionally uses `U(−final_scale, final_scale)` instead.
    pub fn init_fan_in<R: Rng + ?Sized>(&mut self, rng: &mut R, final_scale: Option<f64>) {
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let bound = match (l == last, final_scale) {
                (true, Some(s)) => s,
                _ => 1.0 / (self.layer_sizes[l] as f64).sqrt(),
            };
            let (w, _) = self.layer_offsets(l);
            let end = w + (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
            let dist = Uniform::new_inclusive(-bound, bound);
            for p in &mut self.params[w..end] {
                *p = dist.sample(rng);
            }
        }
    }

    /// Weights drawn from `N(0, sd²)`, biases zero.
    pub fn init_normal<R: Rng + ?Sized>(&mut self, rng: &mut R, sd: f64) {
        let dist = Normal::new(0.0, sd).expect("sd is finite and non-negative");
        for l in 0..self.num_layers() {
            let (w, b) = self.layer_offsets(l);
            for p in &mut self.params[w..b] {
                *p = dist.sample(rng);
            }
            let end = b + self.layer_sizes[l + 1];
            self.params[b..end].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("net_forward", self.input_dim(), input.cols()));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, h: &Matrix) -> Matrix {
        let mut z = h.matmul(&self.weights(l)).expect("checked shapes");
        let (_, b) = self.layer_offsets(l);
        let out = self.layer_sizes[l + 1];
        let bias = &self.params[b..b + out];
        let act = self.activations[l];
        for i in 0..z.rows() {
            for (v, bj) in z.row_mut(i).iter_mut().zip(bias) {
                *v = act.apply(*v + bj);
            }
        }
        z
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut h = input.clone();
        for l in 0..self.num_layers() {
            h = self.layer_forward(l, &h);
        }
        Ok(h)
    }

    pub fn forward_trace(&self, input: &Matrix) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(self.num_layers() + 1);
        outputs.push(input.clone());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, outputs.last().unwrap());
            outputs.push(next);
        }
        Ok(ForwardTrace { outputs })
    }

    /// Reverse pass: returns the gradient with respect to the flat parameters
    /// and with respect to the input, given the gradient at the output.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let out = trace.output();
        if output_grad.shape() != out.shape() {
            return Err(Error::shape(
                "net_backward",
                format!("{:?}", out.shape()),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut g = output_grad.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activations[l];
            let y = &trace.outputs[l + 1];
            if act != Activation::Linear {
                for (gv, yv) in g.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *gv *= act.derivative_from_output(*yv);
                }
            }
            let h = &trace.outputs[l];
            let dw = h.t_matmul(&g)?;
            let (w, b) = self.layer_offsets(l);
            grad[w..b].copy_from_slice(dw.as_slice());
            let width = self.layer_sizes[l + 1];
            let db = &mut grad[b..b + width];
            for i in 0..g.rows() {
                for (d, v) in db.iter_mut().zip(g.row(i)) {
                    *d += v;
                }
            }
            g = g.matmul_t(&self.weights(l))?;
        }
        Ok((grad, g))
    }

    /// `self ← tau·source + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, source: &FeedForwardNet, tau: f64) {
        debug_assert_eq!(self.params.len(), source.params.len());
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

pub fn net_forward(net: &FeedForwardNet, input: &Matrix) -> Result<Matrix> {
    net.forward(input)
}

pub fn net_backward(
    net: &FeedForwardNet,
    input: &Matrix,
    output_grad: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    let trace = net.forward_trace(input)?;
    net.backward(&trace, output_grad)
}
