use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{Jet, Tape, Tensor, Var};
use crate::{Error, Result};

/// Hidden-layer nonlinearity. Only smooth bounded activations are offered,
/// since the geometric losses differentiate networks up to third order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Architecture of one multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Layer sizes from input to output, e.g. `[4, 64, 64, 64, 9]`.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self {
            widths,
            activation: Activation::Tanh,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Flat storage of every trainable tensor of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: Tensor) -> usize {
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.values[slot]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Register every tensor as a parameter on `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| tape.param(i, v.clone()))
                .collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] live on one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, slot: usize) -> &Var {
        &self.vars[slot]
    }

    pub fn tape(&self) -> &Tape {
        self.vars[0].tape()
    }
}

/// A fully connected network `x ↦ W_L σ(⋯σ(W_1 x + b_1)⋯) + b_L` whose
/// last layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub name: String,
    pub spec: NetworkSpec,
    /// `(weight, bias)` slots per layer; weights are stored `fan_in x fan_out`.
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases drawn from `spec.seed`.
    pub fn new(name: &str, spec: NetworkSpec, store: &mut ParamStore) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network `{name}` needs at least two nonzero widths, got {:?}",
                spec.widths
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weight = Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound));
                (store.push(weight), store.push(Array2::zeros((1, w[1]))))
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            spec,
            layers,
        })
    }

    pub fn layer_slots(&self) -> &[(usize, usize)] {
        &self.layers
    }

    /// All parameter slots in layer order.
    pub fn slots(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_input(&self, cols: usize) {
        assert_eq!(cols, self.input_dim(), "network `{}` expects {} inputs", self.name, self.input_dim());
    }

    /// Row-batched forward pass on the tape.
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        self.check_input(x.cols());
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = &h.matmul(p.get(w)) + p.get(b);
            if k < last {
                h = match self.spec.activation {
                    Activation::Tanh => h.tanh(),
                };
            }
        }
        h
    }

    /// Forward pass propagating Taylor jets with respect to the jet inputs.
    pub fn forward_jet(&self, p: &Bound, x: &Jet) -> Jet {
        self.check_input(x.cols());
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = h.linear(p.get(w), Some(p.get(b)));
            if k < last {
                h = match self.spec.activation {
                    Activation::Tanh => h.tanh(),
                };
            }
        }
        h
    }

    /// Plain `f64` forward pass, no tape.
    pub fn forward_array(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        self.check_input(x.ncols());
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = h.dot(store.get(w)) + store.get(b);
            if k < last {
                let act = self.spec.activation;
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        h
    }

    /// Product of the spectral norms of the weights: a Lipschitz constant of
    /// the network since the activation is 1-Lipschitz.
    pub fn lipschitz_bound(&self, store: &ParamStore) -> f64 {
        self.layers.iter().map(|&(w, _)| spectral_norm(store.get(w))).product()
    }
}

/// Largest singular value by power iteration on `WᵀW`.
pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    let mut v = Array1::from_elem(w.ncols(), 1.0 / (w.ncols() as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..200 {
        let wv = w.dot(&v);
        let next = w.t().dot(&wv);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let s = wv.dot(&wv).sqrt();
        v = next / norm;
        if (s - sigma).abs() <= 1e-13 * s {
            return s;
        }
        sigma = s;
    }
    sigma
}

/// Adam with a fixed learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One update from per-slot gradients; slots without a gradient are
    /// treated as having zero gradient.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (slot, g) in grads.iter().enumerate() {
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            match g {
                Some(g) => {
                    ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| self.beta1 * x);
                    v.mapv_inplace(|x| self.beta2 * x);
                }
            }
            let (lr, eps) = (self.learning_rate, self.eps);
            ndarray::Zip::from(store.get_mut(slot)).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::JetSpec;
    use ndarray::array;

    fn toy() -> (ParamStore, Mlp) {
        let mut store = ParamStore::new();
        let net = Mlp::new("toy", NetworkSpec::new(2, &[5, 4], 3, 7), &mut store).unwrap();
        (store, net)
    }

    #[test]
    fn forward_paths_agree() {
        let (store, net) = toy();
        let x = array![[0.3, -0.2], [1.0, 0.5]];
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = net.forward(&p, &tape.constant(x.clone())).value();
        let z = net.forward_array(&store, &x);
        assert!((&y - &z).iter().all(|v| v.abs() < 1e-14));
        let spec = JetSpec::new(2, &[&[]]);
        let j = net.forward_jet(&p, &Jet::seed(&spec, &tape.constant(x)));
        assert!((&j.value().value() - &z).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_weights_give_bias() {
        let (mut store, net) = toy();
        for &(w, b) in net.layer_slots() {
            store.get_mut(w).fill(0.0);
            store.get_mut(b).fill(0.25);
        }
        let y = net.forward_array(&store, &array![[3.0, 4.0]]);
        assert!(y.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn same_seed_same_weights() {
        let (a, _) = toy();
        let (b, _) = toy();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_zero_rate_keeps_params() {
        let (mut store, _) = toy();
        let before = store.clone();
        let mut adam = Adam::new(&store, 0.0);
        let grads: Vec<Option<Tensor>> = store.tensors().iter().map(|t| Some(t.mapv(|_| 1.0))).collect();
        adam.update(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn adam_first_step_moves_by_rate() {
        let mut store = ParamStore::new();
        store.push(array![[1.0, -1.0]]);
        let mut adam = Adam::new(&store, 0.1);
        adam.update(&mut store, &[Some(array![[2.0, -3.0]])]);
        assert!((store.get(0)[[0, 0]] - 0.9).abs() < 1e-7);
        assert!((store.get(0)[[0, 1]] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        assert!((spectral_norm(&array![[3.0, 0.0], [0.0, -5.0]]) - 5.0).abs() < 1e-9);
    }
}
