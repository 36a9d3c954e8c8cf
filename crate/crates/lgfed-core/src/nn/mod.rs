//! Dense feed-forward network engine with exact manual gradients.
//!
//! Networks are plain values: a stack of affine layers with per-layer
//! activation tags and dropout rates. Forward passes in `Eval` mode are pure
//! functions of `(net, batch)`; `Train` mode draws inverted-dropout masks
//! from a caller-supplied stream (scale `1/(1-p)` at train time, nothing at
//! inference). Backward consumes the cached activations of a matching
//! forward call and returns the gradient of the mean batch loss for every
//! parameter.

pub mod gradcheck;
pub mod loss;
pub mod optim;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::derive_rng;

/// Per-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. The ReLU subgradient
    /// at exactly zero is taken to be zero.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: weights are `fan_in x fan_out`, biases length `fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer {
    pub weights: Mat,
    pub biases: Vec<f64>,
    pub bias_enabled: bool,
}

impl ParamLayer {
    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        ParamLayer {
            weights: Mat::zeros(fan_in, fan_out),
            biases: vec![0.0; fan_out],
            bias_enabled: bias,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    /// Weight count plus bias count (when biases are enabled).
    pub fn param_count(&self) -> usize {
        let b = if self.bias_enabled {
            self.biases.len()
        } else {
            0
        };
        self.weights.rows() * self.weights.cols() + b
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.biases.iter().all(|v| v.is_finite())
    }
}

/// Architecture description: `dims = [input, hidden..., output]`, one
/// activation and dropout rate per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: Vec<f64>,
    pub bias: bool,
}

impl NetSpec {
    /// Standard MLP: ReLU on hidden layers, identity on the output layer, no
    /// dropout.
    pub fn mlp(dims: &[usize]) -> Self {
        let layers = dims.len().saturating_sub(1);
        let mut activations = vec![Activation::Relu; layers];
        if layers > 0 {
            activations[layers - 1] = Activation::Identity;
        }
        NetSpec {
            dims: dims.to_vec(),
            activations,
            dropout: vec![0.0; layers],
            bias: true,
        }
    }

    /// Same as [`NetSpec::mlp`] with a dropout rate on every hidden layer.
    pub fn mlp_dropout(dims: &[usize], rate: f64) -> Self {
        let mut spec = Self::mlp(dims);
        let layers = spec.dropout.len();
        for (i, d) in spec.dropout.iter_mut().enumerate() {
            if i + 1 < layers {
                *d = rate;
            }
        }
        spec
    }

    pub fn depth(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    /// Spec for the sub-network covering layers `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> NetSpec {
        NetSpec {
            dims: self.dims[from..=to].to_vec(),
            activations: self.activations[from..to].to_vec(),
            dropout: self.dropout[from..to].to_vec(),
            bias: self.bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("spec has at least one dim")
    }

    fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidArgument("network needs at least one layer"));
        }
        if self.activations.len() != self.depth() || self.dropout.len() != self.depth() {
            return Err(Error::InvalidArgument(
                "activations/dropout length must equal layer count",
            ));
        }
        if self.dropout.iter().any(|&p| !(0.0..=1.0).contains(&p) || p >= 1.0 && p != 0.0) {
            return Err(Error::InvalidArgument("dropout rate must be in [0, 1)"));
        }
        Ok(())
    }

    /// Weight-and-bias count of the full network.
    pub fn param_count(&self) -> usize {
        self.segment_param_count(0, self.depth())
    }

    /// Weight-and-bias count of layers `[from, to)`.
    pub fn segment_param_count(&self, from: usize, to: usize) -> usize {
        let mut total = 0;
        for l in from..to {
            let w = self.dims[l] * self.dims[l + 1];
            let b = if self.bias { self.dims[l + 1] } else { 0 };
            total += w + b;
        }
        total
    }

    /// Initializes weights uniformly in `±1/sqrt(fan_in)`, biases at zero.
    pub fn init(&self, seed: u64) -> Result<Network> {
        self.validate()?;
        let mut rng = derive_rng(seed, &[crate::rng::tag::INIT]);
        let mut layers = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let limit = 1.0 / libm::sqrt(fan_in as f64);
            let weights = Mat::from_fn(fan_in, fan_out, |_, _| {
                rng.random::<f64>() * 2.0 * limit - limit
            });
            layers.push(ParamLayer {
                weights,
                biases: vec![0.0; fan_out],
                bias_enabled: self.bias,
            });
        }
        Ok(Network {
            layers,
            activations: self.activations.clone(),
            dropout: self.dropout.clone(),
        })
    }

    /// Rebuilds a network from a split parameter set: `local` holds the
    /// bottom layers, `global_seg` the top ones.
    pub fn assemble(&self, local: &[ParamLayer], global_seg: &[ParamLayer]) -> Result<Network> {
        self.validate()?;
        if local.len() + global_seg.len() != self.depth() {
            return Err(Error::Protocol("segment layer counts do not match spec"));
        }
        let mut layers = Vec::with_capacity(self.depth());
        layers.extend(local.iter().cloned());
        layers.extend(global_seg.iter().cloned());
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in() != self.dims[l] || layer.fan_out() != self.dims[l + 1] {
                return Err(Error::Shape {
                    context: "NetSpec::assemble",
                    expected: (self.dims[l], self.dims[l + 1]),
                    got: (layer.fan_in(), layer.fan_out()),
                });
            }
        }
        Ok(Network {
            layers,
            activations: self.activations.clone(),
            dropout: self.dropout.clone(),
        })
    }
}

/// Forward/eval mode. Dropout only ever applies in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cached activations from one forward call, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    input: Mat,
    pre: Vec<Mat>,
    post: Vec<Mat>,
    masks: Vec<Option<Mat>>,
    net_sig: u64,
}

impl ForwardPass {
    pub fn logits(&self) -> &Mat {
        self.post.last().expect("forward pass has at least one layer")
    }

    /// Activations after layer `l` (post-activation, post-dropout).
    pub fn layer_output(&self, l: usize) -> &Mat {
        &self.post[l]
    }
}

/// Parameter-shaped gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

/// Gradient of one layer; `d_biases` is empty when the layer has no bias.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Mat,
    pub d_biases: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.d_weights.is_finite() && g.d_biases.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, used to compose objectives.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Protocol("gradient layer counts differ"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.d_weights.shape() != b.d_weights.shape() {
                return Err(Error::Shape {
                    context: "Gradients::add_scaled",
                    expected: a.d_weights.shape(),
                    got: b.d_weights.shape(),
                });
            }
            for (x, &y) in a
                .d_weights
                .as_mut_slice()
                .iter_mut()
                .zip(b.d_weights.as_slice())
            {
                *x += scale * y;
            }
            for (x, &y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += scale * y;
            }
        }
        Ok(())
    }
}

/// A dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<ParamLayer>,
    activations: Vec<Activation>,
    dropout: Vec<f64>,
}

impl Network {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[ParamLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ParamLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ParamLayer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(ParamLayer::is_finite)
    }

    /// Clones the bottom `k` layers and the remaining top layers.
    pub fn split_at(&self, k: usize) -> (Vec<ParamLayer>, Vec<ParamLayer>) {
        let local = self.layers[..k].to_vec();
        let global_seg = self.layers[k..].to_vec();
        (local, global_seg)
    }

    /// Overwrites layers `[from, from+params.len())`.
    pub fn set_segment(&mut self, from: usize, params: &[ParamLayer]) -> Result<()> {
        if from + params.len() > self.layers.len() {
            return Err(Error::Protocol("segment exceeds network depth"));
        }
        for (i, p) in params.iter().enumerate() {
            let target = &mut self.layers[from + i];
            if target.weights.shape() != p.weights.shape() {
                return Err(Error::Shape {
                    context: "Network::set_segment",
                    expected: target.weights.shape(),
                    got: p.weights.shape(),
                });
            }
            *target = p.clone();
        }
        Ok(())
    }

    fn signature(&self) -> u64 {
        let mut sig = 0xcbf2_9ce4_8422_2325u64;
        for layer in &self.layers {
            sig = sig
                .wrapping_mul(0x100_0000_01b3)
                .wrapping_add(layer.fan_in() as u64)
                .rotate_left(13)
                .wrapping_add(layer.fan_out() as u64);
        }
        sig
    }

    /// Runs the network on a batch (rows are samples).
    ///
    /// `rng` is required only for `Train` mode with nonzero dropout.
    pub fn forward(
        &self,
        batch: &Mat,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape {
                context: "forward",
                expected: (batch.rows(), self.input_dim()),
                got: batch.shape(),
            });
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut post = Vec::with_capacity(self.depth());
        let mut masks = Vec::with_capacity(self.depth());
        let mut current = batch;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&layer.weights)?;
            if layer.bias_enabled {
                for r in 0..z.rows() {
                    for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.biases) {
                        *v += b;
                    }
                }
            }
            let act = self.activations[l];
            let mut a = Mat::from_fn(z.rows(), z.cols(), |r, c| act.apply(z.get(r, c)));
            let p = self.dropout[l];
            let mask = if mode == Mode::Train && p > 0.0 {
                let rng = rng
                    .as_deref_mut()
                    .ok_or(Error::InvalidArgument("train-mode dropout needs an rng"))?;
                let keep = 1.0 / (1.0 - p);
                let mask = Mat::from_fn(a.rows(), a.cols(), |_, _| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                for (v, &m) in a.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *v *= m;
                }
                Some(mask)
            } else {
                None
            };
            pre.push(z);
            post.push(a);
            masks.push(mask);
            current = post.last().expect("just pushed");
        }
        Ok(ForwardPass {
            input: batch.clone(),
            pre,
            post,
            masks,
            net_sig: self.signature(),
        })
    }

    /// Gradient of the mean batch loss with respect to every parameter,
    /// given `d(loss)/d(logits)` and the cached activations of the matching
    /// forward call.
    pub fn backward(&self, pass: &ForwardPass, loss_grad: &Mat) -> Result<Gradients> {
        self.backward_with_input_grad(pass, loss_grad)
            .map(|(grads, _)| grads)
    }

    /// Like [`Network::backward`] but also returns the gradient with respect
    /// to the network input, so stacked networks can chain.
    pub fn backward_with_input_grad(
        &self,
        pass: &ForwardPass,
        loss_grad: &Mat,
    ) -> Result<(Gradients, Mat)> {
        if pass.net_sig != self.signature() || pass.pre.len() != self.depth() {
            return Err(Error::StaleCache("activations come from a different net"));
        }
        let logits = pass.logits();
        if loss_grad.shape() != logits.shape() {
            return Err(Error::StaleCache("loss gradient shape mismatch"));
        }
        let mut grads = Vec::with_capacity(self.depth());
        let mut g = loss_grad.clone();
        for l in (0..self.depth()).rev() {
            if let Some(mask) = &pass.masks[l] {
                for (v, &m) in g.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *v *= m;
                }
            }
            let act = self.activations[l];
            let z = &pass.pre[l];
            for (i, v) in g.as_mut_slice().iter_mut().enumerate() {
                let zr = z.as_slice()[i];
                *v *= act.derivative(zr);
            }
            let prev = if l == 0 { &pass.input } else { &pass.post[l - 1] };
            let d_weights = prev.t_matmul(&g)?;
            let d_biases = if self.layers[l].bias_enabled {
                g.col_sums()
            } else {
                Vec::new()
            };
            grads.push(LayerGrads {
                d_weights,
                d_biases,
            });
            g = g.matmul_t(&self.layers[l].weights)?;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }
}
