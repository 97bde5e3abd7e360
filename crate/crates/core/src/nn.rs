//! Multilayer perceptron with ReLU hidden layers and a linear output layer,
//! hand-written backpropagation, Adam, and action masking of outputs.
//!
//! Weight file layout (little endian): magic `JRLW`, `u32` version, `u32`
//! number of layer sizes, one `u64` per size, then for each layer the weight
//! matrix (row-major, `out x in`) followed by the bias vector, as `f64`.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::env::ActionMask;
use crate::error::{Error, Result};

/// Value written over invalid actions.
pub const MASK_SENTINEL: f64 = -1e9;

const WEIGHTS_MAGIC: &[u8; 4] = b"JRLW";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Layer inputs recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l]` the post-ReLU
    /// output of hidden layer `l`.
    activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Uniform fan-in initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for w in &mut net.weights {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.gen_range(-bound..=bound));
        }
        for (b, w) in net.biases.iter_mut().zip(&net.weights) {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            b.mapv_inplace(|_| rng.gen_range(-bound..=bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "network needs an input and an output size, all positive; got {sizes:?}"
            )));
        }
        let weights = sizes
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter at flat index `idx` (layer by layer, weights before biases).
    pub fn parameter(&self, idx: usize) -> f64 {
        let (layer, is_bias, offset) = self.locate(idx);
        if is_bias {
            self.biases[layer][offset]
        } else {
            self.weights[layer].as_slice().expect("standard layout")[offset]
        }
    }

    pub fn set_parameter(&mut self, idx: usize, value: f64) {
        let (layer, is_bias, offset) = self.locate(idx);
        if is_bias {
            self.biases[layer][offset] = value;
        } else {
            self.weights[layer].as_slice_mut().expect("standard layout")[offset] = value;
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, bool, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if idx < w.len() {
                return (l, false, idx);
            }
            idx -= w.len();
            if idx < b.len() {
                return (l, true, idx);
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = Array1::from(input.to_vec());
        let last = self.layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = w.dot(&x) + b;
            if l < last {
                x.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(x.to_vec())
    }

    /// Batched forward pass over the rows of `inputs`, keeping what backward needs.
    pub fn forward_batch(&self, inputs: Array2<f64>) -> Result<ForwardCache> {
        if inputs.ncols() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                actual: inputs.ncols(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let last = self.layers() - 1;
        let mut activations = Vec::with_capacity(self.layers());
        let mut x = inputs;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = x.dot(&w.t());
            z += b;
            activations.push(x);
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            x = z;
        }
        Ok(ForwardCache {
            activations,
            output: x,
        })
    }

    /// Gradients of `sum(grad_output * output)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Array2<f64>) -> Result<Gradients> {
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::Dimension {
                expected: cache.output.len(),
                actual: grad_output.len(),
            });
        }
        let n = self.layers();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_output.clone();
        for l in (0..n).rev() {
            let a = &cache.activations[l];
            gw.push(delta.t().dot(a));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut next = delta.dot(&self.weights[l]);
                // `a` is the post-ReLU activation of layer l - 1.
                ndarray::Zip::from(&mut next).and(a).for_each(|d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }

    /// Single-sample backward pass.
    pub fn backward_single(&self, input: &[f64], grad_output: &[f64]) -> Result<Gradients> {
        self.check_input(input)?;
        let cache = self.forward_batch(Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("shape"))?;
        let g = Array2::from_shape_vec((1, grad_output.len()), grad_output.to_vec()).map_err(|_| {
            Error::Dimension {
                expected: self.output_size(),
                actual: grad_output.len(),
            }
        })?;
        self.backward(&cache, &g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.parameter_count() * 8);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Weights("not a weight file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!(
                "unsupported weight file version {version}"
            )));
        }
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Weights(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if bytes.len() - r.pos != expected * 8 {
            return Err(Error::Weights(format!(
                "payload holds {} bytes, layer sizes {sizes:?} need {}",
                bytes.len() - r.pos,
                expected * 8
            )));
        }
        let mut net = Self::zeros(&sizes).map_err(|e| Error::Weights(e.to_string()))?;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(Error::Weights("non-finite parameter".into()));
                }
            }
        }
        Ok(net)
    }
}

struct ByteReader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> ByteReader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Weights("truncated weight data".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_weights(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Mlp::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Loads weights and checks them against the expected layer sizes.
pub fn load_weights_for(path: impl AsRef<Path>, sizes: &[usize]) -> Result<Mlp> {
    let net = load_weights(path)?;
    if net.sizes() != sizes {
        return Err(Error::Weights(format!(
            "weight file has layer sizes {:?}, expected {sizes:?}",
            net.sizes()
        )));
    }
    Ok(net)
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Gradient at flat parameter index `idx`, in [`Mlp::parameter`] order.
    pub fn get(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return w.as_slice().expect("standard layout")[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index out of range");
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .chain(self.biases.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()))
            .sum();
        sq.sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update. Zero gradients leave parameters unchanged.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        if grads.weights.len() != net.weights.len()
            || grads
                .weights
                .iter()
                .zip(&net.weights)
                .any(|(g, w)| g.dim() != w.dim())
        {
            return Err(Error::Dimension {
                expected: net.parameter_count(),
                actual: grads.weights.iter().map(|w| w.len()).sum(),
            });
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr / c1;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        };
        for l in 0..net.weights.len() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut net.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

/// How invalid outputs are suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingMode {
    /// Replace invalid entries with [`MASK_SENTINEL`].
    #[default]
    Sentinel,
    /// Multiply by the mask, setting invalid entries to zero. When valid
    /// values are all negative this makes argmax choose invalid actions.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedOutput {
    pub raw: Vec<f64>,
    pub masked: Vec<f64>,
}

impl MaskedOutput {
    /// First index of the maximum masked value.
    pub fn argmax(&self) -> usize {
        argmax(&self.masked)
    }
}

pub fn apply_mask(raw: &[f64], mask: &ActionMask, mode: MaskingMode) -> Result<MaskedOutput> {
    if raw.len() != mask.len() {
        return Err(Error::Dimension {
            expected: mask.len(),
            actual: raw.len(),
        });
    }
    if mask.valid_count() == 0 {
        return Err(Error::InvalidAction {
            action: usize::MAX,
            reason: "mask has no valid action".into(),
        });
    }
    let fill = match mode {
        MaskingMode::Sentinel => MASK_SENTINEL,
        MaskingMode::Zero => 0.0,
    };
    let masked = raw
        .iter()
        .zip(&mask.0)
        .map(|(&v, &ok)| if ok { v } else { fill })
        .collect();
    Ok(MaskedOutput {
        raw: raw.to_vec(),
        masked,
    })
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        net.weights_mut()[0] = Array2::eye(3);
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Mlp::new(&[5, 8, 3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = Mlp::new(&[5, 8, 3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 1.0];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert!(a.forward(&[1.0]).is_err());
        assert!(a.forward(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let net = Mlp::new(&[4, 6, 6, 3], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = array![[0.5, -1.0, 2.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
        let cache = net.forward_batch(x.clone()).unwrap();
        for r in 0..2 {
            let single = net.forward(x.row(r).as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(cache.output.row(r)) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    /// Linear layer with loss 0.5 * |y - t|^2: dW = residual ⊗ input, db = residual.
    #[test]
    fn linear_layer_gradient_closed_form() {
        let mut net = Mlp::zeros(&[2, 2]).unwrap();
        net.weights_mut()[0] = array![[1.0, 2.0], [3.0, 4.0]];
        net.biases_mut()[0] = array![0.5, -0.5];
        let x = [1.0, -1.0];
        let y = net.forward(&x).unwrap();
        assert_eq!(y, vec![-0.5, -1.5]);
        let t = [0.0, 1.0];
        let residual: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
        let g = net.backward_single(&x, &residual).unwrap();
        assert_eq!(g.weights[0], array![[-0.5, 0.5], [-2.5, 2.5]]);
        assert_eq!(g.biases[0], array![-0.5, -2.5]);
    }

    #[test]
    fn relu_blocks_gradient_for_negative_preactivation() {
        let mut net = Mlp::zeros(&[1, 1, 1]).unwrap();
        net.weights_mut()[0] = array![[1.0]];
        net.biases_mut()[0] = array![-5.0];
        net.weights_mut()[1] = array![[2.0]];
        let g = net.backward_single(&[1.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 0.0);
        assert_eq!(g.biases[0][0], 0.0);
        assert_eq!(g.weights[1][[0, 0]], 0.0);
        assert_eq!(g.biases[1][0], 1.0);
    }

    #[test]
    fn finite_difference_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::new(&[6, 10, 8, 4], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |n: &Mlp| -> f64 {
            n.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum()
        };
        let g = net.backward_single(&x, &c).unwrap();
        for _ in 0..20 {
            let idx = rng.gen_range(0..net.parameter_count());
            let p = net.parameter(idx);
            let h = 1e-5;
            net.set_parameter(idx, p + h);
            let up = loss(&net);
            net.set_parameter(idx, p - h);
            let down = loss(&net);
            net.set_parameter(idx, p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.get(idx);
            let err = (numeric - analytic).abs();
            assert!(
                err <= 1e-6 || err / numeric.abs().max(analytic.abs()) <= 1e-4,
                "param {idx}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut net = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        for _ in 0..3 {
            opt.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        // Loss 0.5 * (w - 3)^2 on the single weight of a 1x1 linear layer.
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let mut opt = Adam::new(&net, 0.05);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let w = net.weights()[0][[0, 0]];
            let loss = 0.5 * (w - 3.0) * (w - 3.0);
            assert!(loss < prev);
            prev = loss;
            let mut g = Gradients::zeros_like(&net);
            g.weights[0][[0, 0]] = w - 3.0;
            opt.step(&mut net, &g).unwrap();
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let mut opt = Adam::new(&net, 0.1);
        let mut g = Gradients::zeros_like(&net);
        g.biases[0][0] = f64::NAN;
        assert!(matches!(opt.step(&mut net, &g), Err(Error::NonFinite(_))));
    }

    #[test]
    fn masking() {
        let m = apply_mask(
            &[2.0, 1.0, 3.0],
            &ActionMask(vec![true, true, false]),
            MaskingMode::Sentinel,
        )
        .unwrap();
        assert_eq!(m.argmax(), 0);
        let neg = ActionMask(vec![true, false]);
        assert_eq!(apply_mask(&[-5.0, -5.0], &neg, MaskingMode::Sentinel).unwrap().argmax(), 0);
        let zeroed = apply_mask(&[-5.0, -4.0], &neg, MaskingMode::Zero).unwrap();
        assert_eq!(zeroed.argmax(), 1);
        assert!(apply_mask(&[1.0, 2.0], &ActionMask(vec![false, false]), MaskingMode::Sentinel).is_err());
        let p = softmax(&apply_mask(&[0.0, 50.0], &neg, MaskingMode::Sentinel).unwrap().masked);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn weights_round_trip() {
        let net = Mlp::new(&[4, 7, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        let x = [0.3, -0.1, 0.9, 2.0];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(load_weights_for(&path, &[4, 8, 2]).is_err());
        let mut bytes = net.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Mlp::from_bytes(&bytes).is_err());
        let mut bad = net.to_bytes();
        bad[0] = b'X';
        assert!(Mlp::from_bytes(&bad).is_err());
    }
}
