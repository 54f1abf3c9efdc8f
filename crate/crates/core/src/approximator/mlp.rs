//! Fixed-architecture feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` occupies a contiguous
//! block: its `in x out` weight matrix (row-major) followed by its `out`
//! biases. Batched evaluation records the post-activation of every layer on a
//! [`Tape`], from which [`Mlp::backward`] recovers gradients with respect to
//! the parameters, the input, or both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl From<HiddenActivation> for Act {
    fn from(a: HiddenActivation) -> Self {
        match a {
            HiddenActivation::Relu => Act::Relu,
            HiddenActivation::Tanh => Act::Tanh,
        }
    }
}

impl From<OutputActivation> for Act {
    fn from(a: OutputActivation) -> Self {
        match a {
            OutputActivation::Identity => Act::Identity,
            OutputActivation::Tanh => Act::Tanh,
            OutputActivation::Softplus => Act::Softplus,
        }
    }
}

impl Act {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Act::Identity => z,
            Act::Relu => z.max(0.0),
            Act::Tanh => z.tanh(),
            Act::Softplus => softplus(z),
        }
    }

    /// Derivative expressed through the activation's own output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Tanh => 1.0 - a * a,
            // sigmoid(z) = 1 - exp(-softplus(z))
            Act::Softplus => -(-a).exp_m1(),
        }
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            layer_widths,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> 64 -> 64 -> output` with ReLU hidden units.
    pub fn two_hidden(input: usize, output: usize, head: OutputActivation) -> Result<Self> {
        Self::new(vec![input, 64, 64, output], HiddenActivation::Relu, head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least two layer widths, got {}",
                self.layer_widths.len()
            )));
        }
        if let Some(i) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("layer {i} has width 0")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_len(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation(&self, layer: usize) -> Act {
        if layer + 1 == self.num_layers() {
            self.output_activation.into()
        } else {
            self.hidden_activation.into()
        }
    }
}

/// Post-activations of every layer for one batch; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// Row-major `n x output_dim` network output.
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.acts.pop().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    /// Fan-in uniform weights, zero biases.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.param_len());
        for w in spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_dim("parameter vector", spec.param_len(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Offsets of (weights, biases) for each layer.
    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.spec.layer_widths.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_off = offset;
            let b_off = w_off + fan_in * fan_out;
            offset = b_off + fan_out;
            (fan_in, fan_out, w_off, b_off)
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.into_output())
    }

    /// Evaluates `n` row-major inputs at once.
    pub fn forward_batch(&self, input: &[f64], n: usize) -> Result<Tape> {
        check_dim("batched input", n * self.input_dim(), input.len())?;
        let mut acts = Vec::with_capacity(self.spec.num_layers() + 1);
        acts.push(input.to_vec());
        for (layer, (fan_in, fan_out, w_off, b_off)) in self.layer_offsets().enumerate() {
            let weights = &self.params[w_off..b_off];
            let bias = &self.params[b_off..b_off + fan_out];
            let mut out = Vec::with_capacity(n * fan_out);
            for _ in 0..n {
                out.extend_from_slice(bias);
            }
            let prev = acts.last().unwrap();
            gemm(n, fan_in, fan_out, prev, false, weights, false, &mut out, 1.0);
            let act = self.spec.activation(layer);
            if act != Act::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(out);
        }
        Ok(Tape { n, acts })
    }

    /// Reverse pass for `sum_i upstream_i . output_i`.
    ///
    /// Parameter gradients are accumulated into `param_grad` when given. The
    /// input gradient (row-major `n x input_dim`) is returned when
    /// `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let n = tape.n;
        check_dim("upstream gradient", n * self.output_dim(), upstream.len())?;
        if let Some(g) = param_grad.as_deref() {
            check_dim("parameter gradient buffer", self.params.len(), g.len())?;
        }
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut delta = upstream.to_vec();
        for layer in (0..offsets.len()).rev() {
            let (fan_in, fan_out, w_off, b_off) = offsets[layer];
            let act = self.spec.activation(layer);
            if act != Act::Identity {
                for (d, &a) in delta.iter_mut().zip(&tape.acts[layer + 1]) {
                    *d *= act.derivative_from_output(a);
                }
            }
            if let Some(g) = param_grad.as_deref_mut() {
                let prev = &tape.acts[layer];
                let (gw, gb) = g[w_off..b_off + fan_out].split_at_mut(fan_in * fan_out);
                // dW += prev^T . delta
                gemm(fan_in, n, fan_out, prev, true, &delta, false, gw, 1.0);
                for row in delta.chunks_exact(fan_out) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if layer == 0 && !want_input {
                return Ok(None);
            }
            let weights = &self.params[w_off..b_off];
            let mut next = vec![0.0; n * fan_in];
            // d_prev = delta . W^T
            gemm(n, fan_out, fan_in, &delta, false, weights, true, &mut next, 0.0);
            delta = next;
        }
        Ok(Some(delta))
    }

    pub fn grad_params(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_batch(input, 1)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&tape, upstream, Some(&mut grad), false)?;
        Ok(grad)
    }

    pub fn grad_input(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_batch(input, 1)?;
        Ok(self.backward(&tape, upstream, None, true)?.unwrap())
    }
}

/// `target <- (1 - tau) * target + tau * source`.
pub fn polyak(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if target.spec != source.spec {
        return Err(Error::InvalidSpec(
            "polyak averaging requires identical architectures".into(),
        ));
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = (1.0 - tau) * *t + tau * s;
    }
    Ok(())
}

/// `c = a . b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`, all
/// row-major. A `*_t` flag means the stored buffer holds the transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements whose presence is asserted on entry.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
