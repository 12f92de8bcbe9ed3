use serde::{Deserialize, Serialize};

use super::StrnetError;
use crate::tensor::ConvParams;
use crate::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub params: ConvParams,
}

impl ConvSpec {
    /// 3×3×3 kernel, stride 1, padding 1.
    pub fn cube3(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: [3; 3],
            params: ConvParams::same(1),
        }
    }
}

/// Two convolutions around an identity shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub convs: [ConvSpec; 2],
}

impl BlockSpec {
    pub fn cube3(channels: usize) -> Self {
        Self {
            convs: [ConvSpec::cube3(channels), ConvSpec::cube3(channels)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: [usize; 3],
    pub stride: [usize; 3],
}

impl PoolSpec {
    pub fn cube(n: usize) -> Self {
        Self {
            window: [n; 3],
            stride: [n; 3],
        }
    }
}

/// Fixed preprocessing applied to each input volume before the stem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    #[default]
    None,
    /// Zero mean and unit variance per sample; the standard deviation is
    /// floored at 1e-3 so flat volumes stay finite.
    Standardize,
}

/// Architecture of the spatio-temporal residual network.
///
/// `pools` holds one entry after the stem and one after each block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub preset: String,
    pub input: InputShape,
    pub stem: ConvSpec,
    pub blocks: Vec<BlockSpec>,
    pub pools: Vec<PoolSpec>,
    pub fc: Vec<usize>,
    #[serde(default)]
    pub input_norm: InputNorm,
    pub init_seed: u64,
    /// Require the 7-conv / 4-fc topology.
    pub enforce_topology: bool,
}

pub const CONV_LAYERS: usize = 7;
pub const FC_LAYERS: usize = 4;

impl NetworkConfig {
    /// Full-size preset: 16 frames of 112×112, channels 16/32/64/64,
    /// fully connected 512-128-32-3.
    pub fn paper(init_seed: u64) -> Self {
        Self {
            preset: "paper".into(),
            input: InputShape {
                channels: 1,
                frames: 16,
                height: 112,
                width: 112,
            },
            stem: ConvSpec::cube3(16),
            blocks: vec![BlockSpec::cube3(32), BlockSpec::cube3(64), BlockSpec::cube3(64)],
            pools: vec![PoolSpec::cube(2); 4],
            fc: vec![512, 128, 32, Category::COUNT],
            input_norm: InputNorm::Standardize,
            init_seed,
            enforce_topology: true,
        }
    }

    /// Reduced preset with the same topology: 8 frames of 32×32, channels
    /// 4/8/8/8, fully connected 64-32-16-3. The last pool keeps the single
    /// remaining frame.
    pub fn tiny(init_seed: u64) -> Self {
        let spatial = PoolSpec {
            window: [1, 2, 2],
            stride: [1, 2, 2],
        };
        Self {
            preset: "tiny".into(),
            input: InputShape {
                channels: 1,
                frames: 8,
                height: 32,
                width: 32,
            },
            stem: ConvSpec::cube3(4),
            blocks: vec![BlockSpec::cube3(8), BlockSpec::cube3(8), BlockSpec::cube3(8)],
            pools: vec![PoolSpec::cube(2), PoolSpec::cube(2), PoolSpec::cube(2), spatial],
            fc: vec![64, 32, 16, Category::COUNT],
            input_norm: InputNorm::Standardize,
            init_seed,
            enforce_topology: true,
        }
    }

    pub fn preset(name: &str, init_seed: u64) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper(init_seed)),
            "tiny" => Some(Self::tiny(init_seed)),
            _ => None,
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + 2 * self.blocks.len()
    }

    pub fn fc_layer_count(&self) -> usize {
        self.fc.len()
    }

    /// Checks that every layer shape chains into the next and returns the
    /// resolved layer plan.
    pub fn plan(&self) -> Result<Vec<LayerInfo>, StrnetError> {
        if self.enforce_topology
            && (self.conv_layer_count() != CONV_LAYERS || self.fc_layer_count() != FC_LAYERS)
        {
            return Err(StrnetError::Topology {
                conv: self.conv_layer_count(),
                fc: self.fc_layer_count(),
            });
        }
        if self.fc.last() != Some(&Category::COUNT) {
            return Err(StrnetError::ShapeChain(format!(
                "final fully connected width must be {}, got {:?}",
                Category::COUNT,
                self.fc.last()
            )));
        }
        if self.pools.len() != self.blocks.len() + 1 {
            return Err(StrnetError::ShapeChain(format!(
                "{} pools for {} stages",
                self.pools.len(),
                self.blocks.len() + 1
            )));
        }
        if self.input.dims().contains(&0) {
            return Err(StrnetError::ShapeChain(format!("empty input {:?}", self.input)));
        }

        let mut plan = Vec::new();
        let [c, d, h, w] = self.input.dims();
        let mut shape = [c, d, h, w];

        let conv = |name: String, spec: &ConvSpec, shape: [usize; 4]| -> Result<LayerInfo, StrnetError> {
            if spec.out_channels == 0 {
                return Err(StrnetError::ShapeChain(format!("{name}: zero output channels")));
            }
            let out = spec
                .params
                .output_dims([shape[1], shape[2], shape[3]], spec.kernel)
                .map_err(|e| StrnetError::ShapeChain(format!("{name}: {e}")))?;
            Ok(LayerInfo {
                name,
                kind: LayerKind::Conv,
                output_shape: vec![spec.out_channels, out[0], out[1], out[2]],
            })
        };
        let pool = |name: String, spec: &PoolSpec, shape: [usize; 4]| -> Result<LayerInfo, StrnetError> {
            let mut out = vec![shape[0]];
            for axis in 0..3 {
                let (n, k, s) = (shape[axis + 1], spec.window[axis], spec.stride[axis]);
                if s == 0 || k == 0 || k > n {
                    return Err(StrnetError::ShapeChain(format!(
                        "{name}: window {k} stride {s} does not fit axis of length {n}"
                    )));
                }
                out.push((n - k) / s + 1);
            }
            Ok(LayerInfo {
                name,
                kind: LayerKind::Pool,
                output_shape: out,
            })
        };
        let as4 = |info: &LayerInfo| [info.output_shape[0], info.output_shape[1], info.output_shape[2], info.output_shape[3]];

        let stem = conv("stem".into(), &self.stem, shape)?;
        shape = as4(&stem);
        plan.push(stem);
        let p = pool("pool0".into(), &self.pools[0], shape)?;
        shape = as4(&p);
        plan.push(p);

        for (i, block) in self.blocks.iter().enumerate() {
            let prefix = format!("block{}", i + 1);
            let input = shape;
            let c1 = conv(format!("{prefix}.conv1"), &block.convs[0], input)?;
            let c2 = conv(format!("{prefix}.conv2"), &block.convs[1], as4(&c1))?;
            let out = as4(&c2);
            if out[1..] != input[1..] {
                return Err(StrnetError::ShapeChain(format!(
                    "{prefix}: branch output {:?} does not match shortcut {:?} spatially",
                    out, input
                )));
            }
            if input[0] > out[0] {
                return Err(StrnetError::ShapeChain(format!(
                    "{prefix}: shortcut has {} channels but branch only {}",
                    input[0], out[0]
                )));
            }
            plan.push(c1);
            plan.push(c2);
            plan.push(LayerInfo {
                name: format!("{prefix}.add"),
                kind: LayerKind::Residual,
                output_shape: out.to_vec(),
            });
            let p = pool(format!("pool{}", i + 1), &self.pools[i + 1], out)?;
            shape = as4(&p);
            plan.push(p);
        }

        let mut width: usize = shape.iter().product();
        for (i, &out) in self.fc.iter().enumerate() {
            if out == 0 {
                return Err(StrnetError::ShapeChain(format!("fc{}: zero width", i + 1)));
            }
            plan.push(LayerInfo {
                name: format!("fc{}", i + 1),
                kind: LayerKind::FullyConnected { inputs: width },
                output_shape: vec![out],
            });
            width = out;
        }
        Ok(plan)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, StrnetError> {
        let plan = self.plan()?;
        let mut cin = self.input.channels;
        let mut shapes = Vec::new();
        let mut conv_specs = std::iter::once(&self.stem).chain(self.blocks.iter().flat_map(|b| b.convs.iter()));
        for layer in &plan {
            match layer.kind {
                LayerKind::Conv => {
                    let spec = conv_specs.next().expect("plan and specs agree");
                    let [kd, kh, kw] = spec.kernel;
                    shapes.push((format!("{}.weight", layer.name), vec![spec.out_channels, cin, kd, kh, kw]));
                    shapes.push((format!("{}.bias", layer.name), vec![spec.out_channels]));
                    cin = spec.out_channels;
                }
                LayerKind::FullyConnected { inputs } => {
                    let out = layer.output_shape[0];
                    shapes.push((format!("{}.weight", layer.name), vec![out, inputs]));
                    shapes.push((format!("{}.bias", layer.name), vec![out]));
                }
                LayerKind::Pool | LayerKind::Residual => {}
            }
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    Residual,
    FullyConnected { inputs: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
}
