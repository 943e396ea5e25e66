//! Layer forwards and their hand-derived backward passes. All layers are
//! batch-major: inputs are `N × d_in`, weights `d_in × d_out`.

use super::params::{GradientMap, ParameterSet};
use super::NnError;
use crate::graph::NormalizedAdjacency;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(&self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => pre.clone(),
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Tanh => pre.mapv(f64::tanh),
            Activation::Sigmoid => pre.mapv(sigmoid),
        }
    }

    /// Elementwise derivative given pre- and post-activation values.
    fn derivative(&self, pre: &Array2<f64>, post: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => Array2::ones(pre.raw_dim()),
            Activation::Relu => pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => post.mapv(|y| 1.0 - y * y),
            Activation::Sigmoid => post.mapv(|y| y * (1.0 - y)),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (1.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Multi-layer perceptron: affine layers with an elementwise nonlinearity
/// between them. `sizes` lists the widths from input to output.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    prefix: String,
    sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Forward intermediates needed by [`MlpSpec::backward`].
#[derive(Debug)]
pub struct MlpCache {
    layer_inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    posts: Vec<Array2<f64>>,
}

impl MlpSpec {
    pub fn new(prefix: &str, sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        Self {
            prefix: prefix.to_string(),
            sizes: sizes.to_vec(),
            hidden_activation: hidden,
            output_activation: output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn w_name(&self, l: usize) -> String {
        format!("{}.w{}", self.prefix, l)
    }

    fn b_name(&self, l: usize) -> String {
        format!("{}.b{}", self.prefix, l)
    }

    fn activation_at(&self, l: usize) -> Activation {
        if l + 2 == self.sizes.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Inserts freshly initialized weights (uniform ±√(1/fan_in)) and zero
    /// biases into `params`.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        for l in 0..self.sizes.len() - 1 {
            params.insert2(&self.w_name(l), uniform_fan_in(self.sizes[l], self.sizes[l + 1], rng));
            params.insert1(&self.b_name(l), Array1::zeros(self.sizes[l + 1]));
        }
    }

    pub fn forward(&self, params: &ParameterSet, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_cached(params, input)?.0)
    }

    pub fn forward_cached(
        &self,
        params: &ParameterSet,
        input: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, MlpCache), NnError> {
        if input.ncols() != self.sizes[0] {
            return Err(NnError::InputWidth {
                op: "mlp_forward",
                got: input.ncols(),
                want: self.sizes[0],
            });
        }
        let mut cache = MlpCache { layer_inputs: Vec::new(), preacts: Vec::new(), posts: Vec::new() };
        let mut h = input.to_owned();
        for l in 0..self.sizes.len() - 1 {
            let w = params.a2(&self.w_name(l));
            let b = params.a1(&self.b_name(l));
            let mut pre = h.dot(&w);
            pre += &b;
            let post = self.activation_at(l).apply(&pre);
            cache.layer_inputs.push(h);
            cache.preacts.push(pre);
            cache.posts.push(post.clone());
            h = post;
        }
        Ok((h, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        params: &ParameterSet,
        cache: &MlpCache,
        grad_out: ArrayView2<f64>,
        grads: &mut GradientMap,
    ) -> Array2<f64> {
        let last = self.sizes.len() - 2;
        let mut delta = &grad_out.to_owned()
            * &self.activation_at(last).derivative(&cache.preacts[last], &cache.posts[last]);
        for l in (0..=last).rev() {
            grads.accumulate2(&self.w_name(l), cache.layer_inputs[l].t().dot(&delta).view());
            grads.accumulate1(&self.b_name(l), delta.sum_axis(Axis(0)).view());
            let grad_h = delta.dot(&params.a2(&self.w_name(l)).t());
            if l == 0 {
                return grad_h;
            }
            delta = grad_h
                * self.activation_at(l - 1).derivative(&cache.preacts[l - 1], &cache.posts[l - 1]);
        }
        unreachable!()
    }
}

/// Gated recurrent unit cell over a batch of units:
/// `z = σ(x·Wz + h·Uz + bz)`, `r = σ(x·Wr + h·Ur + br)`,
/// `h̃ = tanh(x·Wh + (r ⊙ h)·Uh + bh)`, `h' = (1−z) ⊙ h + z ⊙ h̃`.
#[derive(Debug, Clone)]
pub struct GruSpec {
    prefix: String,
    in_dim: usize,
    hidden_dim: usize,
}

#[derive(Debug)]
pub struct GruCache {
    x: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    hcand: Array2<f64>,
}

impl GruSpec {
    pub fn new(prefix: &str, in_dim: usize, hidden_dim: usize) -> Self {
        Self { prefix: prefix.to_string(), in_dim, hidden_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        for gate in ["z", "r", "h"] {
            params.insert2(&self.name(&format!("w{gate}")), uniform_fan_in(self.in_dim, self.hidden_dim, rng));
            params.insert2(&self.name(&format!("u{gate}")), uniform_fan_in(self.hidden_dim, self.hidden_dim, rng));
            params.insert1(&self.name(&format!("b{gate}")), Array1::zeros(self.hidden_dim));
        }
    }

    pub fn step(
        &self,
        params: &ParameterSet,
        input: ArrayView2<f64>,
        state: ArrayView2<f64>,
    ) -> Result<Array2<f64>, NnError> {
        Ok(self.step_cached(params, input, state)?.0)
    }

    pub fn step_cached(
        &self,
        params: &ParameterSet,
        input: ArrayView2<f64>,
        state: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, GruCache), NnError> {
        if input.ncols() != self.in_dim {
            return Err(NnError::InputWidth { op: "gru_step", got: input.ncols(), want: self.in_dim });
        }
        if state.ncols() != self.hidden_dim || state.nrows() != input.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "gru_step",
                a: format!("{:?}", input.shape()),
                b: format!("{:?}", state.shape()),
            });
        }
        let gate = |w: &str, u: &str, b: &str| -> Array2<f64> {
            let mut a = input.dot(&params.a2(&self.name(w)));
            a += &state.dot(&params.a2(&self.name(u)));
            a += &params.a1(&self.name(b));
            a
        };
        let z = gate("wz", "uz", "bz").mapv(sigmoid);
        let r = gate("wr", "ur", "br").mapv(sigmoid);
        let mut a_h = input.dot(&params.a2(&self.name("wh")));
        a_h += &(&r * &state).dot(&params.a2(&self.name("uh")));
        a_h += &params.a1(&self.name("bh"));
        let hcand = a_h.mapv(f64::tanh);
        let new_state = (1.0 - &z) * &state + &z * &hcand;
        let cache =
            GruCache { x: input.to_owned(), h: state.to_owned(), z, r, hcand };
        Ok((new_state, cache))
    }

    /// Returns gradients with respect to the input and the previous state.
    pub fn backward(
        &self,
        params: &ParameterSet,
        cache: &GruCache,
        grad_new_state: ArrayView2<f64>,
        grads: &mut GradientMap,
    ) -> (Array2<f64>, Array2<f64>) {
        let g = grad_new_state;
        let GruCache { x, h, z, r, hcand } = cache;

        let dhcand = &g.to_owned() * z;
        let dz = &g.to_owned() * &(hcand - h);
        let mut dh = &g.to_owned() * &(1.0 - z);

        let da_h = dhcand * hcand.mapv(|y| 1.0 - y * y);
        grads.accumulate2(&self.name("wh"), x.t().dot(&da_h).view());
        grads.accumulate2(&self.name("uh"), (r * h).t().dot(&da_h).view());
        grads.accumulate1(&self.name("bh"), da_h.sum_axis(Axis(0)).view());
        let drh = da_h.dot(&params.a2(&self.name("uh")).t());
        let dr = &drh * h;
        dh += &(&drh * r);

        let da_r = dr * r.mapv(|y| y * (1.0 - y));
        grads.accumulate2(&self.name("wr"), x.t().dot(&da_r).view());
        grads.accumulate2(&self.name("ur"), h.t().dot(&da_r).view());
        grads.accumulate1(&self.name("br"), da_r.sum_axis(Axis(0)).view());

        let da_z = dz * z.mapv(|y| y * (1.0 - y));
        grads.accumulate2(&self.name("wz"), x.t().dot(&da_z).view());
        grads.accumulate2(&self.name("uz"), h.t().dot(&da_z).view());
        grads.accumulate1(&self.name("bz"), da_z.sum_axis(Axis(0)).view());

        let mut dx = da_h.dot(&params.a2(&self.name("wh")).t());
        dx += &da_r.dot(&params.a2(&self.name("wr")).t());
        dx += &da_z.dot(&params.a2(&self.name("wz")).t());
        dh += &da_r.dot(&params.a2(&self.name("ur")).t());
        dh += &da_z.dot(&params.a2(&self.name("uz")).t());

        (dx, dh)
    }
}

/// One graph convolution: propagate node inputs through the normalized
/// adjacency, then apply an affine map and activation.
#[derive(Debug, Clone)]
pub struct GcnSpec {
    prefix: String,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Debug)]
pub struct GcnCache {
    propagated: Array2<f64>,
    pre: Array2<f64>,
    post: Array2<f64>,
}

impl GcnSpec {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { prefix: prefix.to_string(), in_dim, out_dim, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn w_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    fn b_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        params.insert2(&self.w_name(), uniform_fan_in(self.in_dim, self.out_dim, rng));
        params.insert1(&self.b_name(), Array1::zeros(self.out_dim));
    }

    pub fn forward(
        &self,
        params: &ParameterSet,
        a_hat: &NormalizedAdjacency,
        inputs: ArrayView2<f64>,
    ) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_cached(params, a_hat, inputs)?.0)
    }

    pub fn forward_cached(
        &self,
        params: &ParameterSet,
        a_hat: &NormalizedAdjacency,
        inputs: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, GcnCache), NnError> {
        if inputs.ncols() != self.in_dim {
            return Err(NnError::InputWidth { op: "gcn_forward", got: inputs.ncols(), want: self.in_dim });
        }
        let propagated = a_hat.matmul(inputs)?;
        let mut pre = propagated.dot(&params.a2(&self.w_name()));
        pre += &params.a1(&self.b_name());
        let post = self.activation.apply(&pre);
        Ok((post.clone(), GcnCache { propagated, pre, post }))
    }

    /// Accumulates weight gradients and returns the gradient with respect
    /// to the node inputs. Uses the symmetry of the normalized adjacency.
    pub fn backward(
        &self,
        params: &ParameterSet,
        a_hat: &NormalizedAdjacency,
        cache: &GcnCache,
        grad_out: ArrayView2<f64>,
        grads: &mut GradientMap,
    ) -> Array2<f64> {
        let dpre = &grad_out.to_owned() * &self.activation.derivative(&cache.pre, &cache.post);
        grads.accumulate2(&self.w_name(), cache.propagated.t().dot(&dpre).view());
        grads.accumulate1(&self.b_name(), dpre.sum_axis(Axis(0)).view());
        let dprop = dpre.dot(&params.a2(&self.w_name()).t());
        a_hat.matmul(dprop.view()).expect("cache guarantees shape")
    }
}
