//! Dense feed-forward networks with hand-written backpropagation.
//!
//! A network is a stack of affine layers `z = W x + b`. Every layer except
//! the last is followed by the hidden activation; the last layer's output
//! (the logits) goes through the output head.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`.
//!
//! # Gradient convention at the head
//!
//! [`Mlp::backward`] takes the gradient of the loss with respect to:
//!
//! - the logits when the head is [`OutputHead::Softmax`] (the loss layer folds
//!   the softmax Jacobian in itself, see `training`);
//! - the head output when the head is [`OutputHead::Tanh`] or
//!   [`OutputHead::Identity`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `max(0, x)`, with derivative 0 at `x = 0`.
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Softmax,
    Tanh,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "ReLU",
            Activation::Tanh => "Tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ReLU" => Ok(Activation::Relu),
            "Tanh" => Ok(Activation::Tanh),
            other => Err(Error::domain(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for OutputHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputHead::Softmax => "Softmax",
            OutputHead::Tanh => "Tanh",
            OutputHead::Identity => "Identity",
        })
    }
}

impl FromStr for OutputHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Softmax" => Ok(OutputHead::Softmax),
            "Tanh" => Ok(OutputHead::Tanh),
            "Identity" => Ok(OutputHead::Identity),
            other => Err(Error::domain(format!("unknown output head {other:?}"))),
        }
    }
}

/// Numerically stable softmax (the max logit is subtracted first).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(z_i)`, computed around the max logit.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Network parameters (`θ_D` or `θ_G`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden: Activation,
    head: OutputHead,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_sizes: Vec<usize>,
    input: Vec<f64>,
    /// Pre-activation of every layer; the last entry holds the logits.
    pre: Vec<Vec<f64>>,
    /// Hidden activations, one per hidden layer.
    hidden: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("a network has at least one layer")
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Per-parameter gradients; shape-mirrors the [`Mlp`] it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &Mlp) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flatten in the same order as [`Mlp::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|g| g == 0.0)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.biases).flatten().copied()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
    }

    fn same_shape(&self, params: &Mlp) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.len() == w.len())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}

impl Mlp {
    /// Build from explicit parts, validating shapes and finiteness.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden: Activation,
        head: OutputHead,
    ) -> Result<Self> {
        check_layer_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::shape(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.len() != fan_in * fan_out {
                return Err(Error::shape(format!(
                    "layer {l}: weight has {} entries, expected {fan_out}x{fan_in}",
                    w.len()
                )));
            }
            if b.len() != fan_out {
                return Err(Error::shape(format!(
                    "layer {l}: bias has {} entries, expected {fan_out}",
                    b.len()
                )));
            }
        }
        let params = Self {
            layer_sizes,
            weights,
            biases,
            hidden,
            head,
        };
        if !params.flat_params().iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite parameter"));
        }
        Ok(params)
    }

    /// All-zero weights and biases.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, head: OutputHead) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
            head,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(
        layer_sizes: &[usize],
        hidden: Activation,
        head: OutputHead,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, hidden, head)?;
        for (l, w) in params.weights.iter_mut().enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.uniform_range(-limit, limit);
            }
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_head(&self) -> OutputHead {
        self.head
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Layer by layer: row-major weights, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        fill_from_flat(&mut self.weights, &mut self.biases, flat);
        Ok(())
    }

    /// Forward pass returning the head output and the cache needed for backprop.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut hidden = Vec::with_capacity(layers - 1);
        let mut x = input.to_vec();
        for l in 0..layers {
            let z = self.affine(l, &x);
            if l + 1 < layers {
                let a: Vec<f64> = z.iter().map(|&v| self.activate(v)).collect();
                pre.push(z);
                hidden.push(a.clone());
                x = a;
            } else {
                pre.push(z);
            }
        }
        let output = self.apply_head(pre.last().expect("at least one layer"));
        let cache = ForwardCache {
            layer_sizes: self.layer_sizes.clone(),
            input: input.to_vec(),
            pre,
            hidden,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let layers = self.weights.len();
        let mut x = input.to_vec();
        for l in 0..layers {
            let mut z = self.affine(l, &x);
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = self.activate(*v));
            }
            x = z;
        }
        Ok(self.apply_head(&x))
    }

    /// Backpropagate `output_grad` (see the module docs for its convention).
    ///
    /// Returns the parameter gradients and the gradient with respect to the
    /// network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.accumulate_backward(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`], but adds the parameter gradients into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        self.backprop(cache, output_grad, Some(grads))
    }

    /// Gradient with respect to the input only; parameters are treated as frozen.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.backprop(cache, output_grad, None)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        if cache.layer_sizes != self.layer_sizes || cache.pre.len() != self.weights.len() {
            return Err(Error::Contract(
                "forward cache was produced by a network of different shape".into(),
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "output gradient has length {}, expected {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if grads.as_ref().is_some_and(|g| !g.same_shape(self)) {
            return Err(Error::shape(
                "gradient buffer does not mirror the parameters",
            ));
        }

        // delta = dL/dz for the current layer.
        let mut delta: Vec<f64> = match self.head {
            OutputHead::Softmax | OutputHead::Identity => output_grad.to_vec(),
            OutputHead::Tanh => output_grad
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };

        for l in (0..self.weights.len()).rev() {
            let fan_in = self.layer_sizes[l];
            let layer_input: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.hidden[l - 1]
            };
            let w = &self.weights[l];
            if let Some(grads) = grads.as_deref_mut() {
                let gw = &mut grads.weights[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, &x) in row.iter_mut().zip(layer_input) {
                        *g += d * x;
                    }
                }
                for (g, &d) in grads.biases[l].iter_mut().zip(&delta) {
                    *g += d;
                }
            }

            let mut upstream = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (u, &wv) in upstream.iter_mut().zip(row) {
                    *u += d * wv;
                }
            }
            if l > 0 {
                let z = &cache.pre[l - 1];
                let a = &cache.hidden[l - 1];
                for ((u, &zv), &av) in upstream.iter_mut().zip(z).zip(a) {
                    *u *= match self.hidden {
                        Activation::Relu => {
                            if zv > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Tanh => 1.0 - av * av,
                    };
                }
            }
            delta = upstream;
        }
        Ok(delta)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let fan_in = self.layer_sizes[layer];
        self.weights[layer]
            .chunks_exact(fan_in)
            .zip(&self.biases[layer])
            .map(|(row, &b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn activate(&self, z: f64) -> f64 {
        match self.hidden {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn apply_head(&self, logits: &[f64]) -> Vec<f64> {
        let mut out = logits.to_vec();
        match self.head {
            OutputHead::Softmax => softmax_in_place(&mut out),
            OutputHead::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
            OutputHead::Identity => {}
        }
        out
    }

    /// Serialize to the flat text format.
    ///
    /// ```text
    /// layers: 2 128 3; hidden: ReLU; head: Softmax
    /// <layer 0 weights, row-major>
    /// ...
    /// <layer 0 biases>
    /// ...
    /// ```
    ///
    /// Numbers are written with 17 significant digits, so parsing the text
    /// reproduces every parameter bit for bit.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(usize::to_string).collect();
        let mut out = format!(
            "layers: {}; hidden: {}; head: {}\n",
            sizes.join(" "),
            self.hidden,
            self.head
        );
        for row in self.weights.iter().chain(&self.biases) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty weight file"))?;

        let mut sizes = None;
        let mut hidden = None;
        let mut head = None;
        for field in header.split(';') {
            let (key, value) = field
                .split_once(':')
                .ok_or_else(|| Error::parse(1, format!("malformed header field {field:?}")))?;
            let value = value.trim();
            match key.trim() {
                "layers" => {
                    let parsed: std::result::Result<Vec<usize>, _> =
                        value.split_whitespace().map(str::parse).collect();
                    sizes = Some(parsed.map_err(|e| Error::parse(1, format!("layers: {e}")))?);
                }
                "hidden" => {
                    hidden = Some(
                        value
                            .parse()
                            .map_err(|e: Error| Error::parse(1, e.to_string()))?,
                    )
                }
                "head" => {
                    head = Some(
                        value
                            .parse()
                            .map_err(|e: Error| Error::parse(1, e.to_string()))?,
                    )
                }
                other => return Err(Error::parse(1, format!("unknown header key {other:?}"))),
            }
        }
        let sizes: Vec<usize> = sizes.ok_or_else(|| Error::parse(1, "missing layers"))?;
        let hidden = hidden.ok_or_else(|| Error::parse(1, "missing hidden"))?;
        let head = head.ok_or_else(|| Error::parse(1, "missing head"))?;
        check_layer_sizes(&sizes).map_err(|e| Error::parse(1, e.to_string()))?;

        let layers = sizes.len() - 1;
        let mut rows = Vec::with_capacity(2 * layers);
        for _ in 0..2 * layers {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(rows.len() + 2, "missing parameter line"))?;
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse).collect();
            rows.push(row.map_err(|e| Error::parse(idx + 1, e.to_string()))?);
        }
        if let Some((idx, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(
                idx + 1,
                format!("unexpected trailing content {extra:?}"),
            ));
        }
        let biases = rows.split_off(layers);
        Self::from_parts(sizes, rows, biases, hidden, head)
    }
}

fn fill_from_flat(weights: &mut [Vec<f64>], biases: &mut [Vec<f64>], flat: &[f64]) {
    let mut offset = 0;
    for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
        let (nw, nb) = (w.len(), b.len());
        w.copy_from_slice(&flat[offset..offset + nw]);
        offset += nw;
        b.copy_from_slice(&flat[offset..offset + nb]);
        offset += nb;
    }
}

fn check_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::shape(
            "a network needs at least input and output sizes",
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::shape("layer sizes must be positive"));
    }
    Ok(())
}

/// Adam optimizer state. `m` and `v` mirror the parameters they update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &Mlp, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::domain("Adam betas must lie in [0, 1)"));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::domain("Adam epsilon must be positive"));
        }
        Ok(Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
            beta1,
            beta2,
            epsilon,
        })
    }
}

/// One bias-corrected Adam descent step, `θ ← θ − lr · m̂ / (sqrt(v̂) + ε)`.
///
/// No weight decay. For ascent, pass negated gradients.
pub fn adam_step(
    params: &mut Mlp,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grads.same_shape(params) || !state.m.same_shape(params) || !state.v.same_shape(params) {
        return Err(Error::shape(
            "Adam: gradients/state do not mirror the parameters",
        ));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::domain("learning rate must be positive"));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correction1 = 1.0 - b1.powf(state.t as f64);
    let correction2 = 1.0 - b2.powf(state.t as f64);

    let param_rows = params.weights.iter_mut().chain(params.biases.iter_mut());
    let grad_rows = grads.weights.iter().chain(&grads.biases);
    let m_rows = state.m.weights.iter_mut().chain(state.m.biases.iter_mut());
    let v_rows = state.v.weights.iter_mut().chain(state.v.biases.iter_mut());
    for (((p, g), m), v) in param_rows.zip(grad_rows).zip(m_rows).zip(v_rows) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Central-difference gradient of `loss` at `params`; a test oracle.
pub fn finite_difference_gradient<F>(mut loss: F, params: &Mlp, step: f64) -> Result<Gradients>
where
    F: FnMut(&Mlp) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let base = params.flat_params();
    let mut probe = params.clone();
    let mut flat_grad = Vec::with_capacity(base.len());
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + step;
        probe.set_flat_params(&theta)?;
        let plus = loss(&probe);
        theta[i] = base[i] - step;
        probe.set_flat_params(&theta)?;
        let minus = loss(&probe);
        theta[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss probing parameter {i}"
            )));
        }
        flat_grad.push((plus - minus) / (2.0 * step));
    }
    let mut grads = Gradients::zeros_like(params);
    fill_from_flat(&mut grads.weights, &mut grads.biases, &flat_grad);
    Ok(grads)
}
