//! The full network: joint embedding, a stack of unified attention blocks,
//! global average pooling, and a linear classifier head.

mod checkpoint;

pub use checkpoint::{load_params, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Phase, PoolingVariant};
use crate::block::{block_forward, BlockConfig, BlockParams};
use crate::data::GraphRef;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{add_joint_bias, avg_pool_axes, linear, pointwise_conv2d, Tensor};

/// Default channel schedule: ten blocks, widening twice. Sized to land near
/// half a million parameters with the 25-joint graph and hidden width 128.
pub const DEFAULT_CHANNEL_SCHEDULE: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];

fn default_in_channels() -> usize {
    3
}
fn default_kernel() -> (usize, usize) {
    (3, 3)
}
fn default_mlp_hidden() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.1
}
fn default_eca_kernel() -> usize {
    3
}
fn default_variant() -> PoolingVariant {
    PoolingVariant::Combined
}
fn default_joint_embedding() -> bool {
    true
}

/// Architecture description; serializes to the JSON config format used by
/// the CLI and embedded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub graph: GraphRef,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub channel_schedule: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: (usize, usize),
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_eca_kernel")]
    pub eca_kernel: usize,
    #[serde(default = "default_variant")]
    pub variant: PoolingVariant,
    #[serde(default = "default_joint_embedding")]
    pub joint_embedding: bool,
}

impl ModelConfig {
    /// The full ten-block configuration on the builtin 25-joint graph.
    pub fn default_full(num_classes: usize) -> Self {
        ModelConfig {
            graph: GraphRef::ntu25(),
            in_channels: 3,
            num_classes,
            embed_dim: 64,
            channel_schedule: DEFAULT_CHANNEL_SCHEDULE.to_vec(),
            kernel: default_kernel(),
            mlp_hidden: default_mlp_hidden(),
            dropout: default_dropout(),
            eca_kernel: default_eca_kernel(),
            variant: default_variant(),
            joint_embedding: default_joint_embedding(),
        }
    }

    /// Two blocks of width 16: the desk-scale training configuration.
    pub fn default_tiny(num_classes: usize) -> Self {
        ModelConfig {
            graph: GraphRef::ntu25(),
            in_channels: 3,
            num_classes,
            embed_dim: 16,
            channel_schedule: vec![16, 16],
            kernel: default_kernel(),
            mlp_hidden: 64,
            dropout: default_dropout(),
            eca_kernel: default_eca_kernel(),
            variant: default_variant(),
            joint_embedding: default_joint_embedding(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 {
            return Err(Error::Config(format!(
                "input channels must be 3 coordinates, got {}",
                self.in_channels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".to_string()));
        }
        self.graph.resolve()?;
        for config in self.block_configs() {
            config.validate()?;
        }
        Ok(())
    }

    pub fn joints(&self) -> Result<usize> {
        Ok(self.graph.resolve()?.num_joints())
    }

    /// Channel width feeding the classifier head.
    pub fn last_width(&self) -> usize {
        self.channel_schedule.last().copied().unwrap_or(self.embed_dim)
    }

    /// Per-block configs: block 0 consumes the embedding width, each later
    /// block consumes its predecessor's output width.
    pub fn block_configs(&self) -> Vec<BlockConfig> {
        let mut configs = Vec::with_capacity(self.channel_schedule.len());
        let mut in_channels = self.embed_dim;
        for &out_channels in &self.channel_schedule {
            configs.push(BlockConfig {
                in_channels,
                out_channels,
                kernel: self.kernel,
                mlp_hidden: self.mlp_hidden,
                dropout: self.dropout,
                eca_kernel: self.eca_kernel,
                variant: self.variant,
            });
            in_channels = out_channels;
        }
        configs
    }
}

#[derive(Debug, Clone)]
pub struct EmbedParams<S: Scalar> {
    /// Pointwise lift from the 3 coordinates to the embedding width.
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    /// Additive per-joint embedding, broadcast over batch and frames.
    pub joint: Option<Tensor<S>>,
}

#[derive(Debug, Clone)]
pub struct HeadParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// One named learnable tensor plus its weight-decay eligibility.
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub weight_decay: bool,
}

/// All learnable state of the network.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub embedding: EmbedParams<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub head: HeadParams<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded initialization; the same seed always produces the same tensors.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = config.graph.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.embed_dim;
        let limit = 1.0 / (config.in_channels as f64).sqrt();
        let embedding = EmbedParams {
            weight: Tensor::uniform_param(&[e, config.in_channels], limit, &mut rng)?,
            bias: Tensor::uniform_param(&[e], limit, &mut rng)?,
            joint: if config.joint_embedding {
                Some(Tensor::uniform_param(
                    &[e, graph.num_joints()],
                    limit,
                    &mut rng,
                )?)
            } else {
                None
            },
        };
        let blocks = config
            .block_configs()
            .iter()
            .map(|bc| BlockParams::init(bc, &graph, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_limit = 1.0 / (config.last_width() as f64).sqrt();
        let head = HeadParams {
            weight: Tensor::uniform_param(
                &[config.num_classes, config.last_width()],
                head_limit,
                &mut rng,
            )?,
            bias: Tensor::uniform_param(&[config.num_classes], head_limit, &mut rng)?,
        };
        Ok(ModelParams {
            embedding,
            blocks,
            head,
        })
    }

    /// Learnable tensors in declaration order. The blend weight, topology
    /// prior, and batchnorm affine parameters are flagged out of weight decay.
    pub fn learnable(&self) -> Vec<ParamEntry<S>> {
        let mut out = Vec::new();
        let mut push = |name: String, tensor: &Tensor<S>, weight_decay: bool| {
            out.push(ParamEntry {
                name,
                tensor: tensor.clone(),
                weight_decay,
            });
        };
        push("embed.weight".into(), &self.embedding.weight, true);
        push("embed.bias".into(), &self.embedding.bias, true);
        if let Some(joint) = &self.embedding.joint {
            push("embed.joint".into(), joint, true);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |field: &str| format!("blocks.{i}.{field}");
            push(p("conv.depthwise"), &b.conv.depthwise, true);
            push(p("conv.pointwise"), &b.conv.pointwise, true);
            push(p("conv.bias"), &b.conv.bias, true);
            for (branch, mlp) in [("mlp_q", &b.attn.mlp_q), ("mlp_k", &b.attn.mlp_k)] {
                for (field, tensor) in mlp.tensors() {
                    push(p(&format!("attn.{branch}.{field}")), tensor, true);
                }
            }
            push(p("alpha"), &b.alpha, false);
            push(p("a_init"), &b.a_init, false);
            push(p("eca_kernel"), &b.eca_kernel, true);
            push(p("bn.gamma"), &b.bn.gamma, false);
            push(p("bn.beta"), &b.bn.beta, false);
            if let Some(proj) = &b.residual_proj {
                push(p("residual.weight"), &proj.weight, true);
                push(p("residual.bias"), &proj.bias, true);
            }
        }
        push("head.weight".into(), &self.head.weight, true);
        push("head.bias".into(), &self.head.bias, true);
        out
    }

    /// Every tensor a checkpoint stores, in declaration order: the learnable
    /// set plus batchnorm running statistics.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("embed.weight".to_string(), self.embedding.weight.clone()));
        out.push(("embed.bias".to_string(), self.embedding.bias.clone()));
        if let Some(joint) = &self.embedding.joint {
            out.push(("embed.joint".to_string(), joint.clone()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |field: &str| format!("blocks.{i}.{field}");
            out.push((p("conv.depthwise"), b.conv.depthwise.clone()));
            out.push((p("conv.pointwise"), b.conv.pointwise.clone()));
            out.push((p("conv.bias"), b.conv.bias.clone()));
            for (branch, mlp) in [("mlp_q", &b.attn.mlp_q), ("mlp_k", &b.attn.mlp_k)] {
                for (field, tensor) in mlp.tensors() {
                    out.push((p(&format!("attn.{branch}.{field}")), tensor.clone()));
                }
            }
            out.push((p("alpha"), b.alpha.clone()));
            out.push((p("a_init"), b.a_init.clone()));
            out.push((p("eca_kernel"), b.eca_kernel.clone()));
            out.push((p("bn.gamma"), b.bn.gamma.clone()));
            out.push((p("bn.beta"), b.bn.beta.clone()));
            out.push((p("bn.running_mean"), b.bn.running_mean.clone()));
            out.push((p("bn.running_var"), b.bn.running_var.clone()));
            if let Some(proj) = &b.residual_proj {
                out.push((p("residual.weight"), proj.weight.clone()));
                out.push((p("residual.bias"), proj.bias.clone()));
            }
        }
        out.push(("head.weight".to_string(), self.head.weight.clone()));
        out.push(("head.bias".to_string(), self.head.bias.clone()));
        out
    }

    pub fn zero_grads(&self) {
        for entry in self.learnable() {
            entry.tensor.zero_grad();
        }
    }
}

/// Pointwise channel lift plus the additive per-joint embedding.
pub fn embed<S: Scalar>(x: &Tensor<S>, params: &EmbedParams<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 || x.shape()[1] != params.weight.shape()[1] {
        return Err(Error::Shape(format!(
            "embed: expected [N, {}, T, V] input, got {:?}",
            params.weight.shape()[1],
            x.shape()
        )));
    }
    let lifted = pointwise_conv2d(x, &params.weight, Some(&params.bias))?;
    match &params.joint {
        Some(joint) => add_joint_bias(&lifted, joint),
        None => Ok(lifted),
    }
}

/// Full forward pass to class logits (softmax is folded into the loss).
pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    params: &ModelParams<S>,
    phase: &mut Phase<'_>,
) -> Result<Tensor<S>> {
    let mut features = embed(x, &params.embedding)?;
    for block in &params.blocks {
        features = block_forward(&features, block, &mut phase.reborrow())?;
    }
    let pooled = avg_pool_axes(&features, &[2, 3])?;
    linear(&pooled, &params.head.weight, &params.head.bias)
}

/// Eval-mode class predictions: argmax over logits, ties broken toward the
/// lowest class index.
pub fn predict<S: Scalar>(x: &Tensor<S>, params: &ModelParams<S>) -> Result<Vec<usize>> {
    let logits = forward(x, params, &mut Phase::Eval)?;
    Ok(argmax_rows(&logits))
}

/// Row-wise argmax with lowest-index tie breaking.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let k = *logits.shape().last().expect("rank >= 1");
    let data = logits.data();
    data.chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SkeletonGraph;

    fn micro_config() -> ModelConfig {
        ModelConfig {
            graph: GraphRef::Inline {
                num_joints: 5,
                edges: vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            },
            in_channels: 3,
            num_classes: 3,
            embed_dim: 4,
            channel_schedule: vec![4, 4],
            kernel: (3, 3),
            mlp_hidden: 8,
            dropout: 0.0,
            eca_kernel: 3,
            variant: PoolingVariant::Combined,
            joint_embedding: true,
        }
    }

    fn seeded_input(shape: &[usize], seed: u64) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| ((i as f32 * 0.31) + seed as f32).sin() * 0.5)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn embed_decomposes_into_lift_plus_joint_bias() {
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        let x = seeded_input(&[2, 3, 4, 5], 1);

        // Zero conv weights: output equals the joint embedding broadcast.
        params.embedding.weight.update_data(|d| d.fill(0.0));
        params.embedding.bias.update_data(|d| d.fill(0.0));
        let out = embed(&x, &params.embedding).unwrap();
        let joint = params.embedding.joint.as_ref().unwrap().to_vec();
        let (e, t, v) = (4, 4, 5);
        for b in 0..2 {
            for c in 0..e {
                for f in 0..t {
                    for j in 0..v {
                        let got = out.to_vec()[((b * e + c) * t + f) * v + j];
                        assert_eq!(got, joint[c * v + j]);
                    }
                }
            }
        }

        // Zero embedding too: output is zero regardless of input.
        params
            .embedding
            .joint
            .as_ref()
            .unwrap()
            .update_data(|d| d.fill(0.0));
        let out = embed(&x, &params.embedding).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_matches_hand_composition() {
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 7).unwrap();
        let x = seeded_input(&[1, 3, 2, 5], 4);
        let out = embed(&x, &params.embedding).unwrap().to_vec();
        let w = params.embedding.weight.to_vec();
        let bias = params.embedding.bias.to_vec();
        let joint = params.embedding.joint.as_ref().unwrap().to_vec();
        let xd = x.to_vec();
        let (e, t, v) = (4, 2, 5);
        for c in 0..e {
            for f in 0..t {
                for j in 0..v {
                    let mut expected = bias[c] + joint[c * v + j];
                    for ci in 0..3 {
                        expected += w[c * 3 + ci] * xd[(ci * t + f) * v + j];
                    }
                    let got = out[(c * t + f) * v + j];
                    assert!((got - expected).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn forward_logits_shape_grid() {
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        for n in [1, 2] {
            for t in [8, 64] {
                let x = seeded_input(&[n, 3, t, 5], 2);
                let logits = forward(&x, &params, &mut Phase::Eval).unwrap();
                assert_eq!(logits.shape(), &[n, 3]);
            }
        }
    }

    #[test]
    fn eval_forward_is_batch_equivariant() {
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 3).unwrap();
        let a = seeded_input(&[1, 3, 6, 5], 10);
        let b = seeded_input(&[1, 3, 6, 5], 20);
        let mut ab = a.to_vec();
        ab.extend_from_slice(&b.to_vec());
        let mut ba = b.to_vec();
        ba.extend_from_slice(&a.to_vec());
        let logits_ab = forward(
            &Tensor::from_vec(&[2, 3, 6, 5], ab).unwrap(),
            &params,
            &mut Phase::Eval,
        )
        .unwrap()
        .to_vec();
        let logits_ba = forward(
            &Tensor::from_vec(&[2, 3, 6, 5], ba).unwrap(),
            &params,
            &mut Phase::Eval,
        )
        .unwrap()
        .to_vec();
        assert_eq!(&logits_ab[0..3], &logits_ba[3..6]);
        assert_eq!(&logits_ab[3..6], &logits_ba[0..3]);
    }

    #[test]
    fn predict_argmax_and_tie_rule() {
        let logits = Tensor::<f32>::from_vec(&[1, 3], vec![0.1, 2.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1]);
        let tie = Tensor::<f32>::from_vec(&[1, 3], vec![2.0, 2.0, 1.0]).unwrap();
        assert_eq!(argmax_rows(&tie), vec![0]);
        let shifted = Tensor::<f32>::from_vec(&[1, 3], vec![100.1, 102.0, 99.0]).unwrap();
        assert_eq!(argmax_rows(&shifted), vec![1]);
    }

    #[test]
    fn learnable_registry_flags_weight_decay_exclusions() {
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        for entry in params.learnable() {
            let excluded = entry.name.ends_with("alpha")
                || entry.name.ends_with("a_init")
                || entry.name.contains("bn.");
            assert_eq!(
                entry.weight_decay, !excluded,
                "{} has wrong decay flag",
                entry.name
            );
        }
    }

    #[test]
    fn config_validation_catches_bad_schedules() {
        let mut config = micro_config();
        config.channel_schedule = vec![4, 5];
        assert!(config.validate().is_err());
        let mut config = micro_config();
        config.num_classes = 1;
        assert!(config.validate().is_err());
        let mut config = micro_config();
        config.graph = GraphRef::Inline {
            num_joints: 3,
            edges: vec![(0, 7)],
        };
        assert!(config.validate().is_err());
        // A graph type error also surfaces through SkeletonGraph directly.
        assert!(SkeletonGraph::new(3, vec![(0, 7)]).is_err());
    }
}
