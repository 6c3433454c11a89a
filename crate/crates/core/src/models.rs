//! Network architectures, the forward/backward sequence through them, and
//! structural compaction of pruned networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use crate::ops::{
    conv2d, conv2d_backward, linear, linear_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, softmax_cross_entropy, ConvLayer, LinearLayer,
};
use crate::pruner::KernelMask;
use crate::tensor::Tensor;

pub const LENET_FILTERS: [usize; 2] = [20, 50];
pub const VGG11_FILTERS: [usize; 8] = [64, 128, 256, 256, 512, 512, 512, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchName {
    Lenet,
    Vgg11,
}

impl std::fmt::Display for ArchName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchName::Lenet => "lenet",
            ArchName::Vgg11 => "vgg11",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2,
    Relu,
    Flatten,
    Linear {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: ArchName,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ArchitectureSpec {
    /// conv(20, 5x5) -> pool -> conv(50, 5x5) -> pool -> fc(500) -> relu -> fc(10)
    pub fn lenet(input_shape: [usize; 3]) -> Result<Self> {
        let side = match input_shape {
            [1, 28, 28] => 4,
            [3, 32, 32] => 5,
            _ => return Err(Error::UnsupportedInput(input_shape.to_vec(), "lenet")),
        };
        let [c1, c2] = LENET_FILTERS;
        let spec = Self {
            name: ArchName::Lenet,
            input_shape,
            layers: vec![
                conv(input_shape[0], c1, 5, 0),
                LayerSpec::MaxPool2,
                conv(c1, c2, 5, 0),
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: c2 * side * side,
                    outputs: 500,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    inputs: 500,
                    outputs: 10,
                },
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Eight 3x3 convolutions (pad 1) with ReLU, five pools, linear(512 -> 10).
    pub fn vgg11(input_shape: [usize; 3]) -> Result<Self> {
        if input_shape != [3, 32, 32] {
            return Err(Error::UnsupportedInput(input_shape.to_vec(), "vgg11"));
        }
        let pool_after = [true, true, false, true, false, true, false, true];
        let mut layers = Vec::new();
        let mut channels = input_shape[0];
        for (&filters, &pool) in VGG11_FILTERS.iter().zip(&pool_after) {
            layers.push(conv(channels, filters, 3, 1));
            layers.push(LayerSpec::Relu);
            if pool {
                layers.push(LayerSpec::MaxPool2);
            }
            channels = filters;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Linear {
            inputs: channels,
            outputs: 10,
        });
        let spec = Self {
            name: ArchName::Vgg11,
            input_shape,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conv_filter_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect()
    }

    pub fn conv_count(&self) -> usize {
        self.conv_filter_counts().len()
    }

    /// Propagates the input shape through every layer; returns the output width.
    pub fn validate(&self) -> Result<usize> {
        let [c, h, w] = self.input_shape;
        let mut act = Activation::Map { c, h, w };
        for (i, layer) in self.layers.iter().enumerate() {
            act = step_shape(act, layer).map_err(|e| {
                Error::Config(format!("{} layer {i} ({layer:?}): {e}", self.name))
            })?;
        }
        match act {
            Activation::Flat(n) => Ok(n),
            Activation::Map { .. } => Err(Error::Config(format!(
                "{} does not end in a flat output",
                self.name
            ))),
        }
    }

    fn activations(&self) -> Vec<Activation> {
        let [c, h, w] = self.input_shape;
        let mut act = Activation::Map { c, h, w };
        let mut out = vec![act];
        for layer in &self.layers {
            act = step_shape(act, layer).expect("validated spec");
            out.push(act);
        }
        out
    }
}

fn conv(inputs: usize, outputs: usize, kernel: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: inputs,
        out_channels: outputs,
        kernel,
        stride: 1,
        padding,
    }
}

fn step_shape(act: Activation, layer: &LayerSpec) -> std::result::Result<Activation, String> {
    match (*layer, act) {
        (
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            Activation::Map { c, h, w },
        ) => {
            if in_channels != c {
                return Err(format!("expects {in_channels} channels, got {c}"));
            }
            if out_channels == 0 || kernel == 0 || stride == 0 {
                return Err("zero-sized conv".into());
            }
            let (ph, pw) = (h + 2 * padding, w + 2 * padding);
            if ph < kernel || pw < kernel {
                return Err(format!("input {h}x{w} smaller than kernel {kernel}"));
            }
            Ok(Activation::Map {
                c: out_channels,
                h: (ph - kernel) / stride + 1,
                w: (pw - kernel) / stride + 1,
            })
        }
        (LayerSpec::MaxPool2, Activation::Map { c, h, w }) => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(format!("pooling odd map {h}x{w}"));
            }
            Ok(Activation::Map {
                c,
                h: h / 2,
                w: w / 2,
            })
        }
        (LayerSpec::Relu, a) => Ok(a),
        (LayerSpec::Flatten, Activation::Map { c, h, w }) => Ok(Activation::Flat(c * h * w)),
        (LayerSpec::Linear { inputs, outputs }, Activation::Flat(n)) => {
            if inputs != n {
                return Err(format!("expects {inputs} features, got {n}"));
            }
            Ok(Activation::Flat(outputs))
        }
        (l, a) => Err(format!("{l:?} cannot follow activation {a:?}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool2,
    Relu,
    Flatten,
    Linear(LinearLayer),
}

/// A feed-forward network built from an [`ArchitectureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    layers: Vec<Layer>,
}

/// Per-layer inputs recorded by [`Network::forward_cached`].
#[derive(Debug)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    pub logits: Tensor,
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init for weights and biases,
/// rounded to `f32`.
/// Xavier filler: uniform in `±sqrt(3 / fan_in)`.
fn xavier_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32 as f64)
}

pub fn build_lenet(input_shape: [usize; 3], seed: u64) -> Result<Network> {
    Network::init(ArchitectureSpec::lenet(input_shape)?, seed)
}

pub fn build_vgg11(input_shape: [usize; 3], seed: u64) -> Result<Network> {
    Network::init(ArchitectureSpec::vgg11(input_shape)?, seed)
}

impl Network {
    /// Randomly initialized network, deterministic in `seed`. Weights use
    /// the xavier filler and biases start at zero.
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| -> Result<Layer> {
                Ok(match *l {
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    } => {
                        let fan_in = in_channels * kernel * kernel;
                        let w = xavier_init(
                            &mut rng,
                            &[out_channels, in_channels, kernel, kernel],
                            fan_in,
                        );
                        let b = Tensor::zeros(&[out_channels]);
                        Layer::Conv(ConvLayer::new(w, b, stride, padding)?)
                    }
                    LayerSpec::Linear { inputs, outputs } => {
                        let w = xavier_init(&mut rng, &[inputs, outputs], inputs);
                        let b = Tensor::zeros(&[outputs]);
                        Layer::Linear(LinearLayer::new(w, b)?)
                    }
                    LayerSpec::MaxPool2 => Layer::MaxPool2,
                    LayerSpec::Relu => Layer::Relu,
                    LayerSpec::Flatten => Layer::Flatten,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, layers })
    }

    /// Rebuilds a network from a spec and parameter tensors in
    /// [`Network::param_names`] order.
    pub fn from_params(spec: ArchitectureSpec, params: Vec<Tensor>) -> Result<Self> {
        let mut net = Self::init(spec, 0)?;
        if params.len() != net.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                net.param_count(),
                params.len()
            )));
        }
        for (slot, p) in net.params_mut().into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter shape {:?}, expected {:?}",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn conv_layer(&self, l: usize) -> Option<&ConvLayer> {
        self.conv_layers().nth(l)
    }

    pub fn conv_layer_mut(&mut self, l: usize) -> Option<&mut ConvLayer> {
        self.conv_layers_mut().nth(l)
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    pub fn conv_filter_counts(&self) -> Vec<usize> {
        self.conv_layers().map(ConvLayer::kernels).collect()
    }

    /// `conv1.weight`, `conv1.bias`, ..., `fc1.weight`, ... in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        let (mut nc, mut nf) = (0, 0);
        let mut names = Vec::new();
        for l in &self.layers {
            let prefix = match l {
                Layer::Conv(_) => {
                    nc += 1;
                    format!("conv{nc}")
                }
                Layer::Linear(_) => {
                    nf += 1;
                    format!("fc{nf}")
                }
                _ => continue,
            };
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => out.extend([&c.weights, &c.bias]),
                Layer::Linear(f) => out.extend([&f.weights, &f.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => out.extend([&mut c.weights, &mut c.bias]),
                Layer::Linear(f) => out.extend([&mut f.weights, &mut f.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Parameter indices `(weight, bias)` of each conv layer.
    pub fn conv_param_indices(&self) -> Vec<(usize, usize)> {
        let mut idx = 0;
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(_) => {
                    out.push((idx, idx + 1));
                    idx += 2;
                }
                Layer::Linear(_) => idx += 2,
                _ => {}
            }
        }
        out
    }

    /// Keeps every parameter on the `f32` grid used by checkpoints.
    pub fn round_params_to_f32(&mut self) {
        for p in self.params_mut() {
            p.round_to_f32();
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != self.spec.input_shape {
            return Err(crate::error::shape_err(
                "network",
                format!(
                    "input {:?}, expected (N, {:?})",
                    s, self.spec.input_shape
                ),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = apply(layer, &x)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = apply(layer, &x)?;
            inputs.push(x);
            x = y;
        }
        Ok(ForwardCache { inputs, logits: x })
    }

    /// Gradients of every parameter (in [`Network::params`] order) given the
    /// gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Tensor> = Vec::with_capacity(self.param_count());
        let mut up = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            match layer {
                Layer::Conv(c) => {
                    let g = conv2d_backward(x, c, &up, i > 0)?;
                    grads.push(g.bias);
                    grads.push(g.weights);
                    if let Some(gi) = g.input {
                        up = gi;
                    }
                }
                Layer::Linear(f) => {
                    let g = linear_backward(x, f, &up)?;
                    grads.push(g.bias);
                    grads.push(g.weights);
                    up = g.input;
                }
                Layer::MaxPool2 => up = maxpool2_backward(x, &up)?,
                Layer::Relu => up = relu_backward(x, &up)?,
                Layer::Flatten => up = up.reshape(x.shape())?,
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// Mean cross-entropy on a batch and its parameter gradients.
    pub fn loss_and_grads(&self, input: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let cache = self.forward_cached(input)?;
        let ce = softmax_cross_entropy(&cache.logits, labels)?;
        let grads = self.backward(&cache, &ce.grad)?;
        Ok((ce.loss, grads))
    }

    pub fn loss(&self, input: &Tensor, labels: &[usize]) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.forward(input)?, labels)?.loss)
    }
}

fn apply(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv(c) => conv2d(x, c),
        Layer::Linear(f) => linear(x, f),
        Layer::MaxPool2 => maxpool2(x),
        Layer::Relu => Ok(relu(x)),
        Layer::Flatten => {
            let n = x.dim(0);
            let features = x.len() / n;
            x.clone().reshape(&[n, features])
        }
    }
}

/// Finite-difference check of `loss(net)` against analytic gradients
/// `grads`, over every parameter tensor.
pub fn check_network_gradients(
    net: &Network,
    grads: &[Tensor],
    mut loss: impl FnMut(&Network) -> f64,
    tolerance: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut reports = Vec::new();
    let mut probe = net.clone();
    for (pi, g) in grads.iter().enumerate() {
        let point = net.params()[pi].clone();
        let opts = GradCheckOptions {
            seed: opts.seed.wrapping_add(pi as u64),
            ..opts
        };
        let r = gradient_check(
            &point,
            g,
            |p| {
                *probe.params_mut()[pi] = p.clone();
                loss(&probe)
            },
            tolerance,
            opts,
        )?;
        *probe.params_mut()[pi] = point;
        reports.push(r);
    }
    Ok(GradCheckReport::merge(&reports))
}

/// Per-layer active filter counts and conv-filter sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub active: Vec<usize>,
    pub original: Vec<usize>,
}

impl FilterCounts {
    pub fn layer_sparsity_pct(&self, l: usize) -> f64 {
        100.0 * (self.original[l] - self.active[l]) as f64 / self.original[l] as f64
    }

    /// Removed conv filters over original conv filters, in percent.
    pub fn total_sparsity_pct(&self) -> f64 {
        let orig: usize = self.original.iter().sum();
        let act: usize = self.active.iter().sum();
        100.0 * (orig - act) as f64 / orig as f64
    }
}

pub fn count_active_filters(net: &Network, mask: &KernelMask) -> Result<FilterCounts> {
    mask.check_against(net)?;
    Ok(FilterCounts {
        active: (0..net.conv_count()).map(|l| mask.active_count(l)).collect(),
        original: net.conv_filter_counts(),
    })
}

/// Deletes pruned filters and the input slices that consumed them, giving a
/// structurally smaller network with the same function as the masked one.
pub fn compact(net: &Network, mask: &KernelMask) -> Result<Network> {
    mask.check_against(net)?;
    for (l, conv) in net.conv_layers().enumerate() {
        for k in 0..conv.kernels() {
            if !mask.is_active(l, k)
                && (conv.kernel(k).iter().any(|&w| w != 0.0) || conv.bias.data()[k] != 0.0)
            {
                return Err(Error::Config(format!(
                    "inconsistent mask: pruned kernel ({l}, {k}) has non-zero parameters"
                )));
            }
        }
    }

    let acts = net.spec.activations();
    let mut spec = net.spec.clone();
    let mut layers = Vec::with_capacity(net.layers.len());
    // channels of the current activation that survive, when it is a map
    let mut kept: Option<Vec<usize>> = None;
    // surviving features of the current flat activation
    let mut kept_features: Option<Vec<usize>> = None;
    let mut conv_idx = 0;

    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                let outs = mask.active_indices(conv_idx);
                let ins: Vec<usize> = kept.clone().unwrap_or_else(|| (0..c.in_channels()).collect());
                let (kh, kw) = c.kernel_size();
                let area = kh * kw;
                let mut w = Vec::with_capacity(outs.len() * ins.len() * area);
                for &o in &outs {
                    let kernel = c.kernel(o);
                    for &ci in &ins {
                        w.extend_from_slice(&kernel[ci * area..(ci + 1) * area]);
                    }
                }
                let bias: Vec<f64> = outs.iter().map(|&o| c.bias.data()[o]).collect();
                layers.push(Layer::Conv(ConvLayer::new(
                    Tensor::new(vec![outs.len(), ins.len(), kh, kw], w)?,
                    Tensor::new(vec![outs.len()], bias)?,
                    c.stride,
                    c.padding,
                )?));
                if let LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    ..
                } = &mut spec.layers[i]
                {
                    *in_channels = ins.len();
                    *out_channels = outs.len();
                }
                kept = Some(outs);
                conv_idx += 1;
            }
            Layer::Flatten => {
                if let (Some(ch), Activation::Map { h, w, .. }) = (&kept, acts[i]) {
                    let hw = h * w;
                    kept_features = Some(ch.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect());
                }
                kept = None;
                layers.push(Layer::Flatten);
            }
            Layer::Linear(f) => {
                let layer = match kept_features.take() {
                    Some(rows) => {
                        let w = f.weights.gather_outer(&rows)?;
                        if let LayerSpec::Linear { inputs, .. } = &mut spec.layers[i] {
                            *inputs = rows.len();
                        }
                        LinearLayer::new(w, f.bias.clone())?
                    }
                    None => f.clone(),
                };
                layers.push(Layer::Linear(layer));
            }
            other => layers.push(other.clone()),
        }
    }
    spec.validate()?;
    Ok(Network { spec, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_shapes() {
        let net = build_lenet([1, 28, 28], 1).unwrap();
        assert_eq!(net.conv_filter_counts(), vec![20, 50]);
        let out = net.forward(&Tensor::zeros(&[3, 1, 28, 28])).unwrap();
        assert_eq!(out.shape(), &[3, 10]);
        let cifar = build_lenet([3, 32, 32], 1).unwrap();
        assert!(cifar
            .spec()
            .layers
            .contains(&LayerSpec::Linear { inputs: 1250, outputs: 500 }));
        assert!(net
            .spec()
            .layers
            .contains(&LayerSpec::Linear { inputs: 800, outputs: 500 }));
    }

    #[test]
    fn unsupported_inputs_rejected() {
        assert!(matches!(
            build_lenet([1, 32, 32], 0),
            Err(Error::UnsupportedInput(..))
        ));
        assert!(build_vgg11([1, 28, 28], 0).is_err());
    }

    #[test]
    fn vgg11_spec() {
        let spec = ArchitectureSpec::vgg11([3, 32, 32]).unwrap();
        assert_eq!(spec.conv_filter_counts(), VGG11_FILTERS.to_vec());
        assert_eq!(spec.conv_filter_counts().iter().sum::<usize>(), 2752);
        assert_eq!(spec.validate().unwrap(), 10);
        assert_eq!(
            spec.layers.last(),
            Some(&LayerSpec::Linear { inputs: 512, outputs: 10 })
        );
    }

    #[test]
    fn init_is_deterministic_and_on_f32_grid() {
        let a = build_lenet([1, 28, 28], 7).unwrap();
        let b = build_lenet([1, 28, 28], 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_lenet([1, 28, 28], 8).unwrap());
        for p in a.params() {
            assert!(p.data().iter().all(|&x| x as f32 as f64 == x));
        }
    }

    #[test]
    fn param_names_follow_layer_order() {
        let net = build_lenet([1, 28, 28], 0).unwrap();
        assert_eq!(
            net.param_names(),
            ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
        );
        assert_eq!(net.conv_param_indices(), vec![(0, 1), (2, 3)]);
    }
}
