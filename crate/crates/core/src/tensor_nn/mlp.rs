use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};

use super::matrix::{argmax, softmax, Matrix};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Feed-forward classifier: ReLU hidden layers, identity output layer.
///
/// `capture_layers` indexes hidden layers (0 is the first hidden layer) whose
/// post-activation values are exposed through [`ForwardTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    capture_layers: Vec<usize>,
}

/// Everything a single forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Post-ReLU activations of every hidden layer.
    pub hidden: Vec<Vec<f64>>,
    pub capture_layers: Vec<usize>,
    pub logits: Vec<f64>,
    pub softmax: Vec<f64>,
}

impl ForwardTrace {
    pub fn captured(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.capture_layers.iter().map(|&j| self.hidden[j].as_slice())
    }

    pub fn captured_layer(&self, k: usize) -> &[f64] {
        &self.hidden[self.capture_layers[k]]
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mean training cross-entropy before the first epoch (index 0) and after
/// each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl MlpModel {
    /// He-uniform initialisation, biases zero.
    pub fn new(layer_dims: &[usize], capture_layers: &[usize], seed: u64) -> Result<Self> {
        validate_layout(layer_dims, capture_layers)?;
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            capture_layers: capture_layers.to_vec(),
        })
    }

    pub fn zeros(layer_dims: &[usize], capture_layers: &[usize]) -> Result<Self> {
        validate_layout(layer_dims, capture_layers)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            capture_layers: capture_layers.to_vec(),
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        capture_layers: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_layout(&layer_dims, &capture_layers)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Schema(format!(
                "expected {layers} weight/bias blocks, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            if w.rows() != fan_out || w.cols() != fan_in || b.len() != fan_out {
                return Err(Error::Schema(format!(
                    "layer {l}: expected W {fan_out}x{fan_in} and b {fan_out}, got W {}x{} and b {}",
                    w.rows(),
                    w.cols(),
                    b.len()
                )));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("layer {l}: non-finite parameter")));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            capture_layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated layout")
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn capture_layers(&self) -> &[usize] {
        &self.capture_layers
    }

    /// Widths of the captured layers, in capture order.
    pub fn capture_widths(&self) -> Vec<usize> {
        self.capture_layers
            .iter()
            .map(|&j| self.layer_dims[j + 1])
            .collect()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite input".into()));
        }
        let last = self.weights.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut current = x.to_vec();
        for l in 0..last {
            let mut a = self.weights[l].matvec(&current)?;
            for (v, b) in a.iter_mut().zip(&self.biases[l]) {
                *v = (*v + b).max(0.0);
            }
            hidden.push(a.clone());
            current = a;
        }
        let mut logits = self.weights[last].matvec(&current)?;
        for (v, b) in logits.iter_mut().zip(&self.biases[last]) {
            *v += b;
        }
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            input: x.to_vec(),
            hidden,
            capture_layers: self.capture_layers.clone(),
            logits,
            softmax: probs,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.predicted_class())
    }

    /// Fraction of rows whose argmax prediction equals the label.
    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptyPool("accuracy over zero samples".into()));
        }
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            if self.predict(features.row(i))? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Gradient of `D_KL(u ‖ softmax(f(x)))` with respect to every captured
    /// hidden activation, aligned with `trace.captured()`.
    ///
    /// At the logits the gradient is `p − u`; it is chained backwards through
    /// the output and hidden layers, masking units whose ReLU output is 0.
    pub fn grad_wrt_captured(&self, trace: &ForwardTrace) -> Result<Vec<Vec<f64>>> {
        self.check_trace(trace)?;
        let mut per_hidden = self.backprop_hidden(&trace.hidden, kl_uniform_logit_grad(&trace.softmax))?;
        Ok(self
            .capture_layers
            .iter()
            .map(|&j| std::mem::take(&mut per_hidden[j]))
            .collect())
    }

    /// Gradient w.r.t. the post-activation of every hidden layer, given the
    /// gradient at the logits.
    fn backprop_hidden(&self, hidden: &[Vec<f64>], logit_grad: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        let n_hidden = hidden.len();
        let mut grads = vec![Vec::new(); n_hidden];
        let mut upstream = logit_grad;
        for j in (0..n_hidden).rev() {
            let g_h = self.weights[j + 1].matvec_t(&upstream)?;
            // ReLU mask for the next step down; subgradient at 0 is 0.
            upstream = g_h
                .iter()
                .zip(&hidden[j])
                .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
                .collect();
            grads[j] = g_h;
        }
        Ok(grads)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.hidden.len() != self.num_hidden()
            || trace.capture_layers != self.capture_layers
            || trace.logits.len() != self.num_classes()
        {
            return Err(Error::Shape {
                expected: self.num_hidden(),
                actual: trace.hidden.len(),
            });
        }
        for (j, h) in trace.hidden.iter().enumerate() {
            if h.len() != self.layer_dims[j + 1] {
                return Err(Error::Shape {
                    expected: self.layer_dims[j + 1],
                    actual: h.len(),
                });
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over the given rows.
    pub fn cross_entropy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let trace = self.forward(features.row(i))?;
            total += cross_entropy_from_logits(&trace.logits, y);
        }
        Ok(total / labels.len() as f64)
    }

    /// Minibatch SGD on mean cross-entropy.
    ///
    /// The shuffle order comes from `hyper.seed` only, and all reductions run
    /// in a fixed order, so equal inputs give bit-identical weights. Full-batch
    /// training with `lr ≤ 0.1` on standardised inputs is the stable range in
    /// which the per-epoch loss is non-increasing.
    pub fn train(&self, features: &Matrix, labels: &[usize], hyper: &TrainHyper) -> Result<(MlpModel, TrainReport)> {
        if labels.is_empty() || features.rows() == 0 {
            return Err(Error::EmptyPool("training set is empty".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if features.cols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: features.cols(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {} classes",
                self.num_classes()
            )));
        }
        if hyper.batch_size == 0 || hyper.lr.is_nan() || hyper.lr <= 0.0 {
            return Err(Error::Config("batch_size must be ≥ 1 and lr > 0".into()));
        }

        let mut model = self.clone();
        let mut losses = vec![model.cross_entropy(features, labels)?];
        if hyper.epochs == 0 {
            return Ok((model, TrainReport { losses }));
        }
        let mut rng = rng_from_seed(hyper.seed);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for epoch in 1..=hyper.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                model.sgd_step(features, labels, batch, hyper.lr)?;
            }
            let loss = model.cross_entropy(features, labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            losses.push(loss);
        }
        Ok((model, TrainReport { losses }))
    }

    fn sgd_step(&mut self, features: &Matrix, labels: &[usize], batch: &[usize], lr: f64) -> Result<()> {
        let layers = self.weights.len();
        let mut grad_w: Vec<Matrix> = self
            .weights
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();

        for &i in batch {
            let x = features.row(i);
            let trace = self.forward(x)?;
            let mut delta = trace.softmax.clone();
            delta[labels[i]] -= 1.0;
            for l in (0..layers).rev() {
                let input: &[f64] = if l == 0 { x } else { &trace.hidden[l - 1] };
                let gw = &mut grad_w[l];
                for (r, &d) in delta.iter().enumerate() {
                    grad_b[l][r] += d;
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &v) in gw.row_mut(r).iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                if l > 0 {
                    let back = self.weights[l].matvec_t(&delta)?;
                    delta = back
                        .into_iter()
                        .zip(&trace.hidden[l - 1])
                        .map(|(g, &h)| if h > 0.0 { g } else { 0.0 })
                        .collect();
                }
            }
        }

        let scale = lr / batch.len() as f64;
        for l in 0..layers {
            for (w, g) in self.weights[l]
                .as_mut_slice()
                .iter_mut()
                .zip(grad_w[l].as_slice())
            {
                *w -= scale * g;
            }
            for (b, g) in self.biases[l].iter_mut().zip(&grad_b[l]) {
                *b -= scale * g;
            }
        }
        Ok(())
    }
}

/// `∂ D_KL(u ‖ softmax(z)) / ∂z = softmax(z) − u` for the uniform `u`.
pub fn kl_uniform_logit_grad(probs: &[f64]) -> Vec<f64> {
    let u = 1.0 / probs.len() as f64;
    probs.iter().map(|&p| p - u).collect()
}

/// `D_KL(u ‖ softmax(logits))` in nats.
pub fn kl_uniform_to_softmax(logits: &[f64]) -> f64 {
    let c = logits.len() as f64;
    let lse = super::matrix::log_sum_exp(logits);
    // Σ u_i (ln u_i − ln p_i) with ln p_i = l_i − lse
    let mean_logit = logits.iter().sum::<f64>() / c;
    -c.ln() - mean_logit + lse
}

fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    super::matrix::log_sum_exp(logits) - logits[label]
}

fn validate_layout(layer_dims: &[usize], capture_layers: &[usize]) -> Result<()> {
    if layer_dims.len() < 3 {
        return Err(Error::InvalidModel(
            "need an input, at least one hidden layer and an output layer".into(),
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidModel("layer widths must be ≥ 1".into()));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(Error::InvalidModel("need at least 2 output classes".into()));
    }
    let n_hidden = layer_dims.len() - 2;
    if capture_layers.is_empty() {
        return Err(Error::InvalidModel("capture set must be nonempty".into()));
    }
    if capture_layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidModel(
            "capture layers must be strictly increasing".into(),
        ));
    }
    if let Some(&bad) = capture_layers.iter().find(|&&j| j >= n_hidden) {
        return Err(Error::InvalidModel(format!(
            "capture layer {bad} out of range for {n_hidden} hidden layers"
        )));
    }
    Ok(())
}
