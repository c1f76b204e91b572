//! Small fully connected network with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear. Weights are stored
//! row-major, `outputs x inputs`.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Layer::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.gen_range(-limit..=limit);
        }
        layer
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &NeuralNet) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl NeuralNet {
    /// `sizes` = [input, hidden..., output].
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect();
        NeuralNet { layers }
    }

    /// Assemble from explicit layers; `None` if the dimensions do not chain.
    pub fn from_layers(layers: Vec<Layer>) -> Option<Self> {
        if layers.is_empty() {
            return None;
        }
        for l in &layers {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return None;
            }
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return None;
        }
        Some(NeuralNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_size(), "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> Activations {
        assert_eq!(x.len(), self.input_size(), "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&cur, &mut z);
            let a: Vec<f64> = if i < last { z.iter().map(|&v| relu(v)).collect() } else { z.clone() };
            inputs.push(std::mem::replace(&mut cur, a));
            pre.push(z);
        }
        Activations { inputs, pre, output: cur }
    }

    /// Gradients of `Σ output_gradient[k] · output[k]` w.r.t. every parameter.
    pub fn backward(&self, cache: &Activations, output_gradient: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, output_gradient, &mut grads);
        grads
    }

    /// Like [`NeuralNet::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, cache: &Activations, output_gradient: &[f64], grads: &mut Gradients) {
        assert_eq!(output_gradient.len(), self.output_size(), "output gradient dimension mismatch");
        let last = self.layers.len() - 1;
        let mut delta = output_gradient.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                for (d, z) in delta.iter_mut().zip(&cache.pre[i]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(w, v)| *w += d * v);
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                delta = prev;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &NeuralNet, learning_rate: f64) -> Self {
        let n = net.num_params();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut NeuralNet, grads: &Gradients) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
        for (((p, g), m), v) in net.params_mut().zip(grads.flat()).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_output() {
        let net = NeuralNet::from_layers(vec![Layer::zeros(3, 4), Layer::zeros(4, 2)]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_case_is_bias_plus_row_sums() {
        let layer = Layer {
            inputs: 3,
            outputs: 2,
            weights: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25],
            biases: vec![0.1, -0.2],
        };
        let net = NeuralNet::from_layers(vec![layer]).unwrap();
        let out = net.forward(&[1.0, 1.0, 1.0]);
        assert_eq!(out, vec![0.1 + 6.0, -0.2 + -0.25]);
    }

    #[test]
    fn bad_chain_rejected() {
        assert!(NeuralNet::from_layers(vec![Layer::zeros(3, 4), Layer::zeros(5, 2)]).is_none());
        assert!(NeuralNet::from_layers(vec![]).is_none());
    }

    #[test]
    #[should_panic(expected = "input dimension mismatch")]
    fn dimension_mismatch_panics() {
        let net = NeuralNet::from_layers(vec![Layer::zeros(3, 1)]).unwrap();
        net.forward(&[1.0]);
    }

    #[test]
    fn single_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NeuralNet::new(&[4, 3], &mut rng);
        let x = [0.5, -1.0, 2.0, 0.25];
        let g = [1.0, -2.0, 0.5];
        let grads = net.backward(&net.forward_cached(&x), &g);
        for o in 0..3 {
            for i in 0..4 {
                assert_eq!(grads.layers[0].weights[o * 4 + i], g[o] * x[i]);
            }
            assert_eq!(grads.layers[0].biases[o], g[o]);
        }
    }

    #[test]
    fn zero_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NeuralNet::new(&[5, 8, 8, 3], &mut rng);
        let grads = net.backward(&net.forward_cached(&[0.1; 5]), &[0.0; 3]);
        assert!(grads.flat().all(|g| g == 0.0));
    }

    #[test]
    fn bounded_output_for_bounded_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = NeuralNet::new(&[32, 64, 64, 11], &mut rng);
        for p in net.params_mut() {
            *p = rng.gen_range(-10.0..=10.0);
        }
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        assert!(net.forward(&x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cached_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = NeuralNet::new(&[7, 16, 5], &mut rng);
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.1 - 0.3).collect();
        assert_eq!(net.forward(&x), net.forward_cached(&x).output());
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        // fit y = 2x with a single linear unit
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = NeuralNet::new(&[1, 1], &mut rng);
        let mut opt = Adam::new(&net, 0.05);
        let loss = |net: &NeuralNet| -> f64 {
            (1..=4).map(|i| { let x = i as f64 / 4.0; (net.forward(&[x])[0] - 2.0 * x).powi(2) }).sum()
        };
        let before = loss(&net);
        for _ in 0..500 {
            let mut g = Gradients::zeros_like(&net);
            for i in 1..=4 {
                let x = i as f64 / 4.0;
                let cache = net.forward_cached(&[x]);
                let d = 2.0 * (cache.output()[0] - 2.0 * x);
                net.backward_into(&cache, &[d], &mut g);
            }
            opt.step(&mut net, &g);
        }
        assert!(loss(&net) < before * 1e-3);
    }
}
