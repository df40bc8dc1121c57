use rand::Rng;

/// A fully connected layer, `y = act(W x + b)` with `W` stored row-major as
/// `fan_out x fan_in`. Hidden layers use tanh; the output layer is linear
/// and feeds a softmax cross-entropy head.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub output: bool,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize, output: bool) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            output,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, output: bool, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut l = Layer::zeros(fan_in, fan_out, output);
        for w in &mut l.weights {
            *w = rng.random_range(-limit..limit);
        }
        l
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Parameters in storage order: weights, then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.fan_out];
        for b in 0..batch {
            let x = &input[b * self.fan_in..(b + 1) * self.fan_in];
            for o in 0..self.fan_out {
                let row = &self.weights[o * self.fan_in..(o + 1) * self.fan_in];
                let z = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                out[b * self.fan_out + o] = if self.output { z } else { z.tanh() };
            }
        }
        out
    }

    /// Backpropagates `grad_out` (dL/d output) through the layer given its
    /// input and output. Accumulates parameter gradients into `grad` and
    /// returns dL/d input.
    pub fn backward(&self, input: &[f64], output: &[f64], grad_out: &[f64], batch: usize, grad: &mut Layer) -> Vec<f64> {
        let mut grad_in = vec![0.0; batch * self.fan_in];
        for b in 0..batch {
            let x = &input[b * self.fan_in..(b + 1) * self.fan_in];
            let gi = &mut grad_in[b * self.fan_in..(b + 1) * self.fan_in];
            for o in 0..self.fan_out {
                let idx = b * self.fan_out + o;
                let dz = if self.output {
                    grad_out[idx]
                } else {
                    grad_out[idx] * (1.0 - output[idx] * output[idx])
                };
                if dz == 0.0 {
                    continue;
                }
                grad.bias[o] += dz;
                let row = o * self.fan_in;
                for i in 0..self.fan_in {
                    grad.weights[row + i] += dz * x[i];
                    gi[i] += dz * self.weights[row + i];
                }
            }
        }
        grad_in
    }
}

/// A stack of layers seen as one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let m = widths.len() - 1;
        let layers = (0..m)
            .map(|i| Layer::xavier(widths[i], widths[i + 1], i + 1 == m, rng))
            .collect();
        Network { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Activations `a_0 = x, a_1, ..., a_M`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap(), batch);
            acts.push(next);
        }
        acts
    }

    /// Mean softmax cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, x: &[f64], y: &[usize]) -> (f64, Vec<Layer>) {
        let batch = y.len();
        let acts = self.forward(x, batch);
        let logits = acts.last().unwrap();
        let classes = self.layers.last().unwrap().fan_out;
        let (loss, mut g) = softmax_cross_entropy(logits, y, classes);
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.fan_in, l.fan_out, l.output))
            .collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&acts[i], &acts[i + 1], &g, batch, &mut grads[i]);
        }
        (loss, grads)
    }

    pub fn loss(&self, x: &[f64], y: &[usize]) -> f64 {
        let acts = self.forward(x, y.len());
        let classes = self.layers.last().unwrap().fan_out;
        softmax_cross_entropy(acts.last().unwrap(), y, classes).0
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, x: &[f64], y: &[usize]) -> f64 {
        self.loss_and_accuracy(x, y).1
    }

    /// Mean loss and accuracy from a single forward pass.
    pub fn loss_and_accuracy(&self, x: &[f64], y: &[usize]) -> (f64, f64) {
        if y.is_empty() {
            return (0.0, 0.0);
        }
        let acts = self.forward(x, y.len());
        let classes = self.layers.last().unwrap().fan_out;
        let logits = acts.last().unwrap();
        let hits = y
            .iter()
            .enumerate()
            .filter(|(b, &label)| {
                let row = &logits[b * classes..(b + 1) * classes];
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc });
                best.0 == label
            })
            .count();
        let loss = softmax_cross_entropy(logits, y, classes).0;
        (loss, hits as f64 / y.len() as f64)
    }

    pub fn sgd_step(&mut self, grads: &[Layer], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (w, dw) in layer.params_mut().zip(g.params()) {
                *w -= lr * dw;
            }
        }
    }
}

fn softmax_cross_entropy(logits: &[f64], y: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = y.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (b, &label) in y.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for c in 0..classes {
            let p = (row[c] - log_z).exp();
            grad[b * classes + c] = (p - f64::from(u8::from(c == label))) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}
