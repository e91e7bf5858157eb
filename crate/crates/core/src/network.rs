//! Feedforward networks with hand-written backpropagation, and the
//! encoder/decoder pair that makes up a single DGA.
//!
//! Layers store weights as `in x out` so a minibatch `X` (one example per
//! row) maps to `X W + b`.

use serde::{Deserialize, Serialize};

use crate::error::{check_binary, check_len, DgaError, Result};
use crate::numerics::{gemm, sigmoid, stable_log_sigmoid, Matrix, RngState, Trans};
use crate::prior::{FactorizedBernoulli, PriorCounter};

/// Decoder means are clamped into `[LOSS_CLAMP, 1 - LOSS_CLAMP]` whenever a
/// reconstruction likelihood is evaluated.
pub const LOSS_CLAMP: f64 = 1e-7;

/// Clamp applied to the means returned by [`DgaModel::decode_means`].
pub const MEAN_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediates of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of the top layer.
    pub top_pre: Matrix,
    /// Activated output of the top layer.
    pub output: Matrix,
}

/// Gradient buffers with the same shapes as an [`Mlp`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| Matrix::zeros(l.in_dim(), l.out_dim())).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
    }

    /// Element-wise sum. Order of merges is the caller's responsibility when
    /// bit-exact reproducibility matters.
    pub fn merge(&mut self, other: &MlpGrads) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.axpy(1.0, o);
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            b.iter_mut().zip(o).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().flat_map(|m| m.as_slice()).map(|v| v * v).sum();
        let b: f64 = self.biases.iter().flatten().map(|v| v * v).sum();
        (w + b).sqrt()
    }

    /// All gradient entries in a fixed order (layer by layer, weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(sizes: &[usize], activations: &[Activation], rng: &mut RngState) -> Result<Mlp> {
    if sizes.len() < 2 {
        return Err(DgaError::Config("an MLP needs at least one layer".into()));
    }
    if activations.len() != sizes.len() - 1 {
        return Err(DgaError::Config(format!("{} activations for {} layers", activations.len(), sizes.len() - 1)));
    }
    if let Some(pos) = sizes.iter().position(|&s| s == 0) {
        return Err(DgaError::Config(format!("layer size at position {pos} is zero")));
    }
    let layers = sizes
        .windows(2)
        .zip(activations)
        .map(|(pair, &activation)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-limit, limit)).collect();
            Layer {
                weights: Matrix::from_vec(fan_in, fan_out, data).expect("sizes match"),
                bias: vec![0.0; fan_out],
                activation,
            }
        })
        .collect();
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DgaError::Config("an MLP needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            check_len("layer bias", l.bias.len(), l.out_dim())?;
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(DgaError::Config(format!("layer {k} has a zero dimension")));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(DgaError::Shape(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer sizes from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(Layer::out_dim)).collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        check_len("network input width", x.cols(), self.in_dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = Matrix::zeros(current.rows(), layer.out_dim());
            gemm(1.0, &current, Trans::No, &layer.weights, Trans::No, 0.0, &mut pre)?;
            pre.add_row_broadcast(&layer.bias);
            inputs.push(current);
            if k == last {
                let output = pre.map(|v| layer.activation.apply(v));
                return Ok(ForwardCache { inputs, top_pre: pre, output });
            }
            current = pre.map(|v| layer.activation.apply(v));
        }
        unreachable!("loop returns at the last layer")
    }

    /// Top pre-activation only.
    pub fn forward_pre(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.top_pre)
    }

    /// Backpropagates `d_top_pre` (gradient with respect to the top layer's
    /// pre-activation) and accumulates into `grads`. Returns the gradient
    /// with respect to the network input when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_top_pre: Matrix,
        grads: &mut MlpGrads,
        want_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        if d_top_pre.shape() != cache.top_pre.shape() {
            return Err(DgaError::Shape(format!(
                "backward: upstream gradient {:?} vs pre-activation {:?}",
                d_top_pre.shape(),
                cache.top_pre.shape()
            )));
        }
        let mut delta = d_top_pre;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            gemm(1.0, input, Trans::Yes, &delta, Trans::No, 1.0, &mut grads.weights[k])?;
            for (g, s) in grads.biases[k].iter_mut().zip(delta.column_sums()) {
                *g += s;
            }
            if k == 0 && !want_input_grad {
                return Ok(None);
            }
            let mut d_input = Matrix::zeros(delta.rows(), layer.in_dim());
            gemm(1.0, &delta, Trans::No, &layer.weights, Trans::Yes, 0.0, &mut d_input)?;
            if k == 0 {
                return Ok(Some(d_input));
            }
            // `input` is the activated output of layer k - 1.
            let below = self.layers[k - 1].activation;
            for (d, y) in d_input.as_mut_slice().iter_mut().zip(input.as_slice()) {
                *d *= below.derivative_from_output(*y);
            }
            delta = d_input;
        }
        unreachable!("loop returns at layer 0")
    }

    /// Plain SGD step `θ -= lr * g`.
    pub fn apply_gradients(&mut self, grads: &MlpGrads, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            layer.weights.axpy(-lr, gw);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
        }
    }
}

/// Converts binary vectors to a `rows x width` matrix of 0.0/1.0.
pub fn bits_to_matrix(rows: &[&[u8]], width: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(rows.len(), width);
    for (r, bits) in rows.iter().enumerate() {
        check_len("binary row", bits.len(), width)?;
        check_binary("binary row", bits)?;
        for (v, &b) in m.row_mut(r).iter_mut().zip(*bits) {
            *v = f64::from(b);
        }
    }
    Ok(m)
}

/// `1` where the entry is strictly positive.
pub fn threshold_codes(pre: &Matrix) -> Matrix {
    pre.map(|a| if a > 0.0 { 1.0 } else { 0.0 })
}

fn clamp_logit(z: f64) -> f64 {
    // logit(LOSS_CLAMP); clamping the logit clamps the mean, and keeps
    // ln m and ln(1 - m) consistent with each other.
    let bound = (LOSS_CLAMP / (1.0 - LOSS_CLAMP)).ln().abs();
    z.clamp(-bound, bound)
}

/// `ln P(x_j | logit z)` for a Bernoulli with mean clamped to
/// `[LOSS_CLAMP, 1 - LOSS_CLAMP]`.
pub fn bernoulli_logit_log_prob(x: f64, z: f64) -> f64 {
    let z = clamp_logit(z);
    x * stable_log_sigmoid(z) + (1.0 - x) * stable_log_sigmoid(-z)
}

/// Sum of [`bernoulli_logit_log_prob`] over one row.
pub fn reconstruction_log_prob(x: &[f64], logits: &[f64]) -> f64 {
    x.iter().zip(logits).map(|(&xi, &zi)| bernoulli_logit_log_prob(xi, zi)).sum()
}

/// Layer widths of one DGA. Hidden widths exclude the input and the code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub code_dim: usize,
    #[serde(default)]
    pub encoder_hidden: Vec<usize>,
    #[serde(default)]
    pub decoder_hidden: Vec<usize>,
}

impl ModelShape {
    pub fn new(input_dim: usize, code_dim: usize) -> Self {
        Self { input_dim, code_dim, encoder_hidden: Vec::new(), decoder_hidden: Vec::new() }
    }

    pub fn with_hidden(mut self, encoder: Vec<usize>, decoder: Vec<usize>) -> Self {
        self.encoder_hidden = encoder;
        self.decoder_hidden = decoder;
        self
    }

    fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.encoder_hidden);
        s.push(self.code_dim);
        s
    }

    fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.code_dim];
        s.extend(&self.decoder_hidden);
        s.push(self.input_dim);
        s
    }
}

fn tanh_then(top: Activation, layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Tanh; layers - 1];
    acts.push(top);
    acts
}

/// Cached encoder pass for one input.
#[derive(Clone, Debug)]
pub struct EncoderActivations {
    pub cache: ForwardCache,
    /// Top pre-activation `a(x)`.
    pub pre_activation: Vec<f64>,
    /// `h_i = 1` exactly when `a_i(x) > 0`.
    pub code: Vec<u8>,
}

/// Decoder pass for one code, kept for [`DgaModel::decoder_backward`].
#[derive(Clone, Debug)]
pub struct DecoderPass {
    cache: ForwardCache,
}

impl DecoderPass {
    pub fn logits(&self) -> &[f64] {
        self.cache.top_pre.row(0)
    }

    pub fn means(&self) -> Vec<f64> {
        self.cache.output.row(0).iter().map(|m| m.clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP)).collect()
    }
}

/// One directed generative autoencoder: a thresholded encoder, a sigmoid
/// decoder and a factorized prior over codes.
#[derive(Clone, Debug, PartialEq)]
pub struct DgaModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prior: PriorCounter,
}

impl DgaModel {
    pub fn new(shape: &ModelShape, prior_alpha: f64, prior_decay: f64, rng: &mut RngState) -> Result<Self> {
        let enc_sizes = shape.encoder_sizes();
        let dec_sizes = shape.decoder_sizes();
        let encoder = init_params(&enc_sizes, &tanh_then(Activation::Identity, enc_sizes.len() - 1), rng)?;
        let decoder = init_params(&dec_sizes, &tanh_then(Activation::Sigmoid, dec_sizes.len() - 1), rng)?;
        let prior = PriorCounter::with_decay(shape.code_dim, prior_alpha, prior_decay)?;
        Self::from_parts(encoder, decoder, prior)
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, prior: PriorCounter) -> Result<Self> {
        let ok = encoder.in_dim() == decoder.out_dim()
            && encoder.out_dim() == decoder.in_dim()
            && prior.dim() == encoder.out_dim();
        if !ok {
            return Err(DgaError::Shape(format!(
                "encoder {:?}, decoder {:?} and prior of dim {} do not chain",
                encoder.sizes(),
                decoder.sizes(),
                prior.dim()
            )));
        }
        if encoder.layers().last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(DgaError::Config("encoder top layer must be linear".into()));
        }
        if decoder.layers().last().map(|l| l.activation) != Some(Activation::Sigmoid) {
            return Err(DgaError::Config("decoder top layer must be sigmoid".into()));
        }
        Ok(Self { encoder, decoder, prior })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn shape(&self) -> ModelShape {
        let enc = self.encoder.sizes();
        let dec = self.decoder.sizes();
        ModelShape {
            input_dim: self.input_dim(),
            code_dim: self.code_dim(),
            encoder_hidden: enc[1..enc.len() - 1].to_vec(),
            decoder_hidden: dec[1..dec.len() - 1].to_vec(),
        }
    }

    pub fn prior_snapshot(&self) -> Result<FactorizedBernoulli> {
        self.prior.snapshot()
    }

    pub fn encode(&self, x: &[u8]) -> Result<EncoderActivations> {
        let input = bits_to_matrix(&[x], self.input_dim())?;
        let cache = self.encoder.forward(&input)?;
        let pre_activation = cache.top_pre.row(0).to_vec();
        let code = pre_activation.iter().map(|&a| u8::from(a > 0.0)).collect();
        Ok(EncoderActivations { cache, pre_activation, code })
    }

    /// Binary codes for a batch of 0/1 rows, as a 0.0/1.0 matrix.
    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(threshold_codes(&self.encoder.forward_pre(x)?))
    }

    pub fn decoder_forward(&self, h: &[f64]) -> Result<DecoderPass> {
        check_len("decoder input", h.len(), self.code_dim())?;
        let input = Matrix::from_vec(1, h.len(), h.to_vec())?;
        Ok(DecoderPass { cache: self.decoder.forward(&input)? })
    }

    /// `P(x_j = 1 | h)`, clamped into `[1e-12, 1 - 1e-12]`.
    pub fn decode_means(&self, h: &[u8]) -> Result<Vec<f64>> {
        check_binary("decode_means", h)?;
        let h: Vec<f64> = h.iter().map(|&b| f64::from(b)).collect();
        Ok(self.decoder_forward(&h)?.means())
    }

    /// Decoder logits for a batch of codes.
    pub fn decode_logits_batch(&self, h: &Matrix) -> Result<Matrix> {
        self.decoder.forward_pre(h)
    }

    /// `ln P(x | h)` under the clamped decoder.
    pub fn decoder_log_prob(&self, x: &[u8], h: &[u8]) -> Result<f64> {
        check_len("decoder target", x.len(), self.input_dim())?;
        check_binary("decoder target", x)?;
        check_binary("decoder input", h)?;
        let hf: Vec<f64> = h.iter().map(|&b| f64::from(b)).collect();
        let pass = self.decoder_forward(&hf)?;
        let xf: Vec<f64> = x.iter().map(|&b| f64::from(b)).collect();
        Ok(reconstruction_log_prob(&xf, pass.logits()))
    }

    /// Gradients of the reconstruction cross-entropy
    /// `-Σ_j x_j ln m_j + (1 - x_j) ln(1 - m_j)` for one example, plus the
    /// gradient with respect to the (real-valued) decoder input.
    pub fn decoder_backward(&self, pass: &DecoderPass, x: &[u8]) -> Result<(MlpGrads, Vec<f64>)> {
        check_len("decoder target", x.len(), self.input_dim())?;
        check_binary("decoder target", x)?;
        let out = pass.cache.output.row(0);
        let delta: Vec<f64> = out.iter().zip(x).map(|(m, &t)| m - f64::from(t)).collect();
        let delta = Matrix::from_vec(1, delta.len(), delta)?;
        let mut grads = MlpGrads::zeros_like(&self.decoder);
        let d_h = self.decoder.backward(&pass.cache, delta, &mut grads, true)?.expect("input grad requested");
        Ok((grads, d_h.into_vec()))
    }

    /// Backpropagates a pseudo-gradient on `a(x)` through the encoder.
    pub fn encoder_backward(&self, enc: &EncoderActivations, delta_a: &[f64]) -> Result<MlpGrads> {
        check_len("encoder pseudo-gradient", delta_a.len(), self.code_dim())?;
        let delta = Matrix::from_vec(1, delta_a.len(), delta_a.to_vec())?;
        let mut grads = MlpGrads::zeros_like(&self.encoder);
        self.encoder.backward(&enc.cache, delta, &mut grads, false)?;
        Ok(grads)
    }
}
