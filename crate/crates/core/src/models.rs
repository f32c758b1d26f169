//! Small classifiers whose weights can be flattened, cloned and perturbed.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{softmax_row, Graph, NodeId};
use crate::seed;
use crate::tensor::Tensor;

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected relu network.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        num_classes: usize,
    },
    /// conv(16,3×3)-relu-pool-conv(32,3×3)-relu-pool-fc, same-padded convs, 2×2 pools.
    SmallCnn {
        in_channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
    },
}

const CNN_FILTERS: [usize; 2] = [16, 32];
const CNN_KERNEL: usize = 3;
const CNN_POOL: usize = 2;

impl Architecture {
    pub fn num_classes(&self) -> usize {
        match self {
            Architecture::Mlp { num_classes, .. } | Architecture::SmallCnn { num_classes, .. } => {
                *num_classes
            }
        }
    }

    /// Shapes of every trainable tensor in enumeration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => {
                let mut fan_in = *input_dim;
                for (i, &h) in hidden.iter().chain(std::iter::once(num_classes)).enumerate() {
                    out.push((format!("fc{i}.weight"), vec![fan_in, h]));
                    out.push((format!("fc{i}.bias"), vec![h]));
                    fan_in = h;
                }
            }
            Architecture::SmallCnn {
                in_channels,
                height,
                width,
                num_classes,
            } => {
                let mut c = *in_channels;
                for (i, &f) in CNN_FILTERS.iter().enumerate() {
                    out.push((format!("conv{i}.weight"), vec![f, c, CNN_KERNEL, CNN_KERNEL]));
                    out.push((format!("conv{i}.bias"), vec![f]));
                    c = f;
                }
                let (h, w) = self.cnn_final_spatial(*height, *width);
                out.push(("fc.weight".into(), vec![c * h * w, *num_classes]));
                out.push(("fc.bias".into(), vec![*num_classes]));
            }
        }
        out
    }

    fn cnn_final_spatial(&self, height: usize, width: usize) -> (usize, usize) {
        CNN_FILTERS
            .iter()
            .fold((height, width), |(h, w), _| (h / CNN_POOL, w / CNN_POOL))
    }

    /// Total trainable scalar count `D`.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => *input_dim > 0 && *num_classes > 0 && hidden.iter().all(|&h| h > 0),
            Architecture::SmallCnn {
                in_channels,
                height,
                width,
                num_classes,
            } => {
                let min = CNN_POOL.pow(CNN_FILTERS.len() as u32);
                *in_channels > 0 && *num_classes > 0 && *height >= min && *width >= min
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid architecture {self:?}")))
        }
    }
}

/// One named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// A classifier `f_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<Param>,
}

/// Location of one parameter tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// All trainable weights of a model as one flat vector `θ ∈ R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<Segment>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::dim(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: NodeId,
    /// Graph leaves of the parameters, in enumeration order.
    pub params: Vec<NodeId>,
}

pub fn build_mlp(input_dim: usize, hidden_dims: &[usize], num_classes: usize, init_seed: u64) -> Result<Model> {
    Model::new(
        Architecture::Mlp {
            input_dim,
            hidden: hidden_dims.to_vec(),
            num_classes,
        },
        init_seed,
    )
}

/// Small CNN for 32×32 inputs.
pub fn build_small_cnn(in_channels: usize, num_classes: usize, init_seed: u64) -> Result<Model> {
    build_small_cnn_for(in_channels, (32, 32), num_classes, init_seed)
}

pub fn build_small_cnn_for(
    in_channels: usize,
    (height, width): (usize, usize),
    num_classes: usize,
    init_seed: u64,
) -> Result<Model> {
    Model::new(
        Architecture::SmallCnn {
            in_channels,
            height,
            width,
            num_classes,
        },
        init_seed,
    )
}

const PREDICT_CHUNK: usize = 256;

impl Model {
    /// He-uniform weights, zero biases.
    pub fn new(arch: Architecture, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed::derive(init_seed, seed::stream::INIT, 0));
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let numel = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0; numel]
                } else {
                    let fan_in: usize = match shape.len() {
                        2 => shape[0],
                        _ => shape[1..].iter().product(),
                    };
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..numel).map(|_| dist.sample(&mut rng)).collect()
                };
                Ok(Param {
                    name,
                    tensor: Tensor::new(shape, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut offset = 0;
        self.params
            .iter()
            .map(|p| {
                let seg = Segment {
                    name: p.name.clone(),
                    offset,
                    len: p.tensor.numel(),
                };
                offset += seg.len;
                seg
            })
            .collect()
    }

    pub fn flatten(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params());
        for p in &self.params {
            values.extend_from_slice(p.tensor.data());
        }
        ParamVector {
            values,
            layout: self.layout(),
        }
    }

    /// Overwrites every trainable weight from `v`.
    pub fn unflatten(&mut self, v: &ParamVector) -> Result<()> {
        self.load_values(&v.values)
    }

    pub fn load_values(&mut self, values: &[f64]) -> Result<()> {
        let d = self.num_params();
        if values.len() != d {
            return Err(Error::dim(format!(
                "parameter vector has {} entries, model has {d}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.tensor.numel();
            p.tensor.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = match &self.arch {
            Architecture::Mlp { input_dim, .. } => {
                shape.len() >= 2 && shape[1..].iter().product::<usize>() == *input_dim
            }
            Architecture::SmallCnn {
                in_channels,
                height,
                width,
                ..
            } => shape.len() == 4 && shape[1..] == [*in_channels, *height, *width],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "input of shape {shape:?} does not fit {:?}",
                self.arch
            )))
        }
    }

    /// Records the forward pass for a batch already in the graph.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<Forward> {
        self.forward_with(g, x, true)
    }

    fn forward_with(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<Forward> {
        self.check_input(g.value(x).shape())?;
        let params: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone().with_requires_grad(trainable)))
            .collect();
        let logits = match &self.arch {
            Architecture::Mlp { .. } => {
                let mut h = g.flatten_batch(x)?;
                let layers = params.len() / 2;
                for (i, wb) in params.chunks(2).enumerate() {
                    h = g.matmul(h, wb[0])?;
                    h = g.add_bias(h, wb[1])?;
                    if i + 1 < layers {
                        h = g.relu(h);
                    }
                }
                h
            }
            Architecture::SmallCnn { .. } => {
                let mut h = x;
                for wb in params[..2 * CNN_FILTERS.len()].chunks(2) {
                    h = g.conv2d(h, wb[0], 1, CNN_KERNEL / 2)?;
                    h = g.add_bias(h, wb[1])?;
                    h = g.relu(h);
                    h = g.max_pool2d(h, CNN_POOL)?;
                }
                h = g.flatten_batch(h)?;
                let n = params.len();
                h = g.matmul(h, params[n - 2])?;
                g.add_bias(h, params[n - 1])?
            }
        };
        Ok(Forward { logits, params })
    }

    /// Logits for a batch, without recording gradients.
    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_input(inputs.shape())?;
        let n = inputs.shape()[0];
        let per = inputs.numel() / n;
        let c = self.num_classes();
        let mut out = Vec::with_capacity(n * c);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let mut shape = inputs.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, inputs.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let x = g.input(chunk);
            let fwd = self.forward_with(&mut g, x, false)?;
            out.extend_from_slice(g.value(fwd.logits).data());
            start = end;
        }
        Tensor::new([n, c], out)
    }

    /// Softmax class probabilities `f_θ(x)` for a batch, `[B×C]`.
    pub fn predict_proba(&self, inputs: &Tensor) -> Result<Tensor> {
        let logits = self.logits(inputs)?;
        let c = self.num_classes();
        let mut probs = vec![0.0; logits.numel()];
        for (row, dst) in logits.data().chunks(c).zip(probs.chunks_mut(c)) {
            softmax_row(row, dst);
        }
        Tensor::new(logits.shape(), probs)
    }

    /// Serializes to the checkpoint format.
    ///
    /// Layout: 8-byte magic `NDEMODEL`, little-endian `u32` version, `u32`
    /// header length, JSON header (architecture, parameter count, segment
    /// layout), little-endian `u64` D, then D little-endian `f64` in flatten order.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            architecture: self.arch.clone(),
            param_count: self.num_params(),
            layout: self.layout(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + json.len() + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.num_params() as u64).to_le_bytes());
        for p in &self.params {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        if r.len() < hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&r[..hlen])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        r = &r[hlen..];
        let mut d = [0u8; 8];
        r.read_exact(&mut d)
            .map_err(|_| Error::Checkpoint("truncated parameter count".into()))?;
        let d = u64::from_le_bytes(d) as usize;
        if d != header.param_count || d != header.architecture.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {d} disagrees with architecture"
            )));
        }
        if r.len() != 8 * d {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                8 * d,
                r.len()
            )));
        }
        let values: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut model = Model::new(header.architecture, 0)?;
        model.load_values(&values)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NDEMODEL";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    param_count: usize,
    layout: Vec<Segment>,
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}
