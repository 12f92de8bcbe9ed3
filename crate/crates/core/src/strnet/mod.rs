//! The spatio-temporal residual network: a 3D convolutional stem, three
//! residual blocks with identity shortcuts, and a four-layer classifier
//! head over {unchanged, switch, transition}.

mod config;
mod io;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::tensor::{
    conv3d, conv3d_backward, conv3d_backward_params, linear, linear_backward, maxpool3d, maxpool3d_backward, relu,
    relu_backward, residual_add, residual_add_backward, softmax, softmax_cross_entropy, Pooled, Scalar, Tensor,
    TensorError,
};
use crate::Category;

pub use config::{
    BlockSpec, ConvSpec, InputNorm, InputShape, LayerInfo, LayerKind, NetworkConfig, PoolSpec, CONV_LAYERS, FC_LAYERS,
};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC};

#[derive(Debug, Error)]
pub enum StrnetError {
    #[error("layer shapes do not chain: {0}")]
    ShapeChain(String),
    #[error("expected {CONV_LAYERS} convolutional and {FC_LAYERS} fully connected layers, found {conv} and {fc}")]
    Topology { conv: usize, fc: usize },
    #[error("input batch has shape {actual:?}, network expects [B, {expected:?}]")]
    InputShape { expected: [usize; 4], actual: Vec<usize> },
    #[error("{0} targets do not match the batch size")]
    Targets(usize),
    #[error("weights do not conform to the configuration: {0}")]
    WeightShape(String),
    #[error("weights contain non-finite values in {0}")]
    NonFinite(String),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("weights header is malformed: {0}")]
    Header(String),
    #[error("weights payload holds {actual} bytes, header declares {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StrnetError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered parameter tensors. Gradients use the same type and order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub entries: Vec<NamedTensor<T>>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros_like(other: &Weights<T>) -> Self {
        Self {
            entries: other
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::zeros_like_shape(e.tensor.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Per-block activations from [`Network::trace`].
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    /// Shortcut input of the block.
    pub input: Tensor<T>,
    /// Output after the residual addition and ReLU, before pooling.
    pub output: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub stem: Tensor<T>,
    pub blocks: Vec<BlockTrace<T>>,
    pub logits: Tensor<T>,
}

struct ConvCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
}

struct BlockCache<T> {
    input: Tensor<T>,
    conv1: ConvCache<T>,
    conv2_input: Tensor<T>,
    sum: Tensor<T>,
    pooled: Pooled<T>,
}

struct SampleCache<T> {
    stem: ConvCache<T>,
    stem_pool: Pooled<T>,
    blocks: Vec<BlockCache<T>>,
    /// Inputs to each fully connected layer; `fc_inputs[0]` is the flattened
    /// feature map.
    fc_inputs: Vec<Tensor<T>>,
    fc_pre: Vec<Tensor<T>>,
    logits: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub gradients: Weights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    plan: Vec<LayerInfo>,
    weights: Weights<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-normal weights (std `sqrt(2 / fan_in)`) and
    /// zero biases, drawn in storage order from a SplitMix64 stream seeded
    /// with `config.init_seed`.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        let plan = config.plan()?;
        let mut rng = SplitMix64::seed_from_u64(config.init_seed);
        let mut entries = Vec::new();
        for (name, shape) in config.parameter_shapes()? {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)?
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::from_f64(z * std)
                })?
            };
            entries.push(NamedTensor { name, tensor });
        }
        Ok(Self {
            config,
            plan,
            weights: Weights { entries },
        })
    }

    /// Pairs a configuration with existing weights, checking names and shapes.
    pub fn from_parts(config: NetworkConfig, weights: Weights<T>) -> Result<Self> {
        let plan = config.plan()?;
        let expected = config.parameter_shapes()?;
        if expected.len() != weights.len() {
            return Err(StrnetError::WeightShape(format!(
                "{} tensors, configuration needs {}",
                weights.len(),
                expected.len()
            )));
        }
        for ((name, shape), entry) in expected.iter().zip(&weights.entries) {
            if *name != entry.name || shape.as_slice() != entry.tensor.shape() {
                return Err(StrnetError::WeightShape(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    entry.name,
                    entry.tensor.shape()
                )));
            }
            if !entry.tensor.is_finite() {
                return Err(StrnetError::NonFinite(entry.name.clone()));
            }
        }
        Ok(Self { config, plan, weights })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.plan
    }

    pub fn conv_layer_count(&self) -> usize {
        self.plan.iter().filter(|l| l.kind == LayerKind::Conv).count()
    }

    pub fn fc_layer_count(&self) -> usize {
        self.plan
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::FullyConnected { .. }))
            .count()
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights<T> {
        &mut self.weights
    }

    pub fn into_weights(self) -> Weights<T> {
        self.weights
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            plan: self.plan.clone(),
            weights: self.weights.cast(),
        }
    }

    fn param(&self, name: &str) -> &Tensor<T> {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated network"))
    }

    fn sample_dims(&self) -> [usize; 4] {
        self.config.input.dims()
    }

    /// Splits a `[B, C, N, H, W]` batch into per-sample tensors.
    fn samples(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let expected = self.sample_dims();
        if batch.rank() != 5 || batch.shape()[1..] != expected {
            return Err(StrnetError::InputShape {
                expected,
                actual: batch.shape().to_vec(),
            });
        }
        Ok((0..batch.shape()[0])
            .map(|i| batch.slice_outer(i).expect("index within batch"))
            .collect())
    }

    fn conv_forward(&self, name: &str, spec: &ConvSpec, x: Tensor<T>) -> Result<(ConvCache<T>, Tensor<T>)> {
        let pre = conv3d(
            &x,
            self.param(&format!("{name}.weight")),
            self.param(&format!("{name}.bias")),
            &spec.params,
        )?;
        let act = relu(&pre);
        Ok((ConvCache { input: x, pre }, act))
    }

    fn forward_sample(&self, x: Tensor<T>) -> Result<SampleCache<T>> {
        let cfg = &self.config;
        let x = cfg.input_norm.apply(x);
        let (stem, act) = self.conv_forward("stem", &cfg.stem, x)?;
        let stem_pool = maxpool3d(&act, cfg.pools[0].window, cfg.pools[0].stride)?;
        let mut current = stem_pool.output.clone();

        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for (i, spec) in cfg.blocks.iter().enumerate() {
            let prefix = format!("block{}", i + 1);
            let input = current;
            let (conv1, a1) = self.conv_forward(&format!("{prefix}.conv1"), &spec.convs[0], input.clone())?;
            let z2 = conv3d(
                &a1,
                self.param(&format!("{prefix}.conv2.weight")),
                self.param(&format!("{prefix}.conv2.bias")),
                &spec.convs[1].params,
            )?;
            let sum = residual_add(&input, &z2)?;
            let out = relu(&sum);
            let pool = &cfg.pools[i + 1];
            let pooled = maxpool3d(&out, pool.window, pool.stride)?;
            current = pooled.output.clone();
            blocks.push(BlockCache {
                input,
                conv1,
                conv2_input: a1,
                sum,
                pooled,
            });
        }

        let width = current.len();
        let mut h = current.reshape(&[1, width])?;
        let mut fc_inputs = Vec::with_capacity(cfg.fc.len());
        let mut fc_pre = Vec::with_capacity(cfg.fc.len());
        let last = cfg.fc.len() - 1;
        for i in 0..cfg.fc.len() {
            let name = format!("fc{}", i + 1);
            let z = linear(
                &h,
                self.param(&format!("{name}.weight")),
                self.param(&format!("{name}.bias")),
            )?;
            fc_inputs.push(h);
            h = if i == last { z.clone() } else { relu(&z) };
            fc_pre.push(z);
        }
        Ok(SampleCache {
            stem,
            stem_pool,
            blocks,
            fc_inputs,
            fc_pre,
            logits: h,
        })
    }

    /// Accumulates this sample's parameter gradients into `grads`, given the
    /// gradient of the loss with respect to its logits.
    fn backward_sample(&self, cache: &SampleCache<T>, dlogits: Tensor<T>, grads: &mut Weights<T>) -> Result<()> {
        let cfg = &self.config;
        let mut add = |name: String, g: &Tensor<T>| {
            let t = grads.get_mut(&name).expect("gradient slot exists");
            for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        };

        let mut dz = dlogits;
        let mut dh = None;
        for i in (0..cfg.fc.len()).rev() {
            let name = format!("fc{}", i + 1);
            let g = linear_backward(&cache.fc_inputs[i], self.param(&format!("{name}.weight")), &dz)?;
            add(format!("{name}.weight"), &g.dw);
            add(format!("{name}.bias"), &g.db);
            if i > 0 {
                dz = relu_backward(&cache.fc_pre[i - 1], &g.dx)?;
            } else {
                dh = Some(g.dx);
            }
        }
        let flat = dh.expect("at least one fully connected layer");

        let last_shape = match cache.blocks.last() {
            Some(b) => b.pooled.output.shape().to_vec(),
            None => cache.stem_pool.output.shape().to_vec(),
        };
        let mut dcur = flat.reshape(&last_shape)?;

        for (i, (spec, block)) in cfg.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let prefix = format!("block{}", i + 1);
            let dout = maxpool3d_backward(&block.pooled, &dcur)?;
            let dsum = relu_backward(&block.sum, &dout)?;
            let split = residual_add_backward(block.input.shape()[0], &dsum)?;
            let g2 = conv3d_backward(
                &block.conv2_input,
                self.param(&format!("{prefix}.conv2.weight")),
                &split.dbranch,
                &spec.convs[1].params,
            )?;
            add(format!("{prefix}.conv2.weight"), &g2.dw);
            add(format!("{prefix}.conv2.bias"), &g2.db);
            let dz1 = relu_backward(&block.conv1.pre, &g2.dx)?;
            let g1 = conv3d_backward(
                &block.conv1.input,
                self.param(&format!("{prefix}.conv1.weight")),
                &dz1,
                &spec.convs[0].params,
            )?;
            add(format!("{prefix}.conv1.weight"), &g1.dw);
            add(format!("{prefix}.conv1.bias"), &g1.db);
            let mut dinput = g1.dx;
            for (a, &b) in dinput.data_mut().iter_mut().zip(split.dshortcut.data()) {
                *a += b;
            }
            dcur = dinput;
        }

        let dact = maxpool3d_backward(&cache.stem_pool, &dcur)?;
        let dpre = relu_backward(&cache.stem.pre, &dact)?;
        let g = conv3d_backward_params(&cache.stem.input, self.param("stem.weight"), &dpre, &cfg.stem.params)?;
        add("stem.weight".into(), &g.dw);
        add("stem.bias".into(), &g.db);
        Ok(())
    }

    /// Raw class scores `[B, 3]` for a `[B, C, N, H, W]` batch.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = self
            .samples(batch)?
            .into_iter()
            .map(|x| Ok(self.forward_sample(x)?.logits))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(rows.len() * Category::COUNT);
        for r in &rows {
            data.extend_from_slice(r.data());
        }
        Ok(Tensor::from_vec(&[rows.len(), Category::COUNT], data)?)
    }

    /// Category probabilities `[B, 3]`, ordered unchanged, switch, transition.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax(&self.logits(batch)?)?)
    }

    /// Intermediate activations for one `[C, N, H, W]` sample.
    pub fn trace(&self, sample: &Tensor<T>) -> Result<Trace<T>> {
        if sample.shape() != self.sample_dims() {
            return Err(StrnetError::InputShape {
                expected: self.sample_dims(),
                actual: sample.shape().to_vec(),
            });
        }
        let cache = self.forward_sample(sample.clone())?;
        Ok(Trace {
            stem: cache.stem_pool.output.clone(),
            blocks: cache
                .blocks
                .iter()
                .map(|b| BlockTrace {
                    input: b.input.clone(),
                    output: relu(&b.sum),
                })
                .collect(),
            logits: cache.logits,
        })
    }

    /// Weighted cross-entropy loss (mean over the batch) and its exact
    /// gradient with respect to every parameter.
    pub fn backward(
        &self,
        batch: &Tensor<T>,
        targets: &[Category],
        category_weights: &[T; 3],
    ) -> Result<BackwardOutput<T>> {
        let samples = self.samples(batch)?;
        if targets.len() != samples.len() {
            return Err(StrnetError::Targets(targets.len()));
        }
        let weights = Tensor::from_vec(&[Category::COUNT], category_weights.to_vec())?;
        let scale = T::one() / T::from_f64(samples.len() as f64);
        let mut gradients = Weights::zeros_like(&self.weights);
        let mut loss = T::zero();
        let mut probs = Vec::with_capacity(samples.len() * Category::COUNT);
        // Per-sample terms are separable, so each sample's forward cache can
        // be dropped as soon as its backward pass is done. Accumulation order
        // is the batch order.
        for (x, &target) in samples.into_iter().zip(targets) {
            let cache = self.forward_sample(x)?;
            let ce = softmax_cross_entropy(&cache.logits, &[target.index()], &weights)?;
            loss += ce.loss * scale;
            probs.extend_from_slice(ce.probs.data());
            let dlogits = ce.dlogits.map(|g| g * scale);
            self.backward_sample(&cache, dlogits, &mut gradients)?;
        }
        Ok(BackwardOutput {
            loss,
            probs: Tensor::from_vec(&[targets.len(), Category::COUNT], probs)?,
            gradients,
        })
    }
}

impl InputNorm {
    pub fn apply<T: Scalar>(self, mut x: Tensor<T>) -> Tensor<T> {
        match self {
            InputNorm::None => x,
            InputNorm::Standardize => {
                let n = x.len() as f64;
                let mean = x.data().iter().map(|v| Scalar::to_f64(*v)).sum::<f64>() / n;
                let var = x.data().iter().map(|v| (Scalar::to_f64(*v) - mean).powi(2)).sum::<f64>() / n;
                let scale = 1.0 / var.sqrt().max(1e-3);
                for v in x.data_mut() {
                    *v = T::from_f64((Scalar::to_f64(*v) - mean) * scale);
                }
                x
            }
        }
    }
}

/// Builds a network from its configuration.
pub fn build_network<T: Scalar>(config: NetworkConfig) -> Result<Network<T>> {
    Network::build(config)
}
