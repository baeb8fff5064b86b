//! Multi-scale pooling attention: a per-sample joint-joint attention map
//! built from pooled query/key descriptors.
//!
//! The feature tensor is split channel-wise into query and key halves. Each
//! half is reduced to one descriptor per joint along two routes: a global
//! mean over all channels and frames, and a local route that adaptively
//! pools the (channel, frame) plane to a 4x4 grid before averaging. The
//! concatenated descriptors pass through per-branch MLPs, a batched outer
//! product, and a row softmax.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    adaptive_avg_pool, avg_pool_axes, batched_outer, hconcat, linear, slice_channels,
    softmax_lastdim, Tensor,
};

/// Forward mode: training carries the RNG stream that drives dropout masks,
/// evaluation is deterministic.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }

    /// Reborrow so the phase can be passed down a call chain.
    pub fn reborrow(&mut self) -> Phase<'_> {
        match self {
            Phase::Train(rng) => Phase::Train(rng),
            Phase::Eval => Phase::Eval,
        }
    }
}

/// Which pooled descriptors feed the attention MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingVariant {
    GlobalOnly,
    LocalOnly,
    Combined,
}

impl PoolingVariant {
    /// MLP input width: the combined variant concatenates both descriptors.
    pub fn mlp_input_width(self, joints: usize) -> usize {
        match self {
            PoolingVariant::Combined => 2 * joints,
            _ => joints,
        }
    }
}

/// One two-layer MLP branch.
#[derive(Debug, Clone)]
pub struct MlpParams<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn init(in_width: usize, hidden: usize, out_width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let l1 = 1.0 / (in_width as f64).sqrt();
        let l2 = 1.0 / (hidden as f64).sqrt();
        Ok(MlpParams {
            w1: Tensor::uniform_param(&[hidden, in_width], l1, rng)?,
            b1: Tensor::uniform_param(&[hidden], l1, rng)?,
            w2: Tensor::uniform_param(&[out_width, hidden], l2, rng)?,
            b2: Tensor::uniform_param(&[out_width], l2, rng)?,
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<S>); 4] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }
}

/// Parameters of the attention module: separate query and key MLP branches.
#[derive(Debug, Clone)]
pub struct MspAttentionParams<S: Scalar> {
    pub mlp_q: MlpParams<S>,
    pub mlp_k: MlpParams<S>,
    pub hidden: usize,
    pub dropout_p: f64,
    pub variant: PoolingVariant,
}

impl<S: Scalar> MspAttentionParams<S> {
    pub fn init(
        joints: usize,
        hidden: usize,
        dropout_p: f64,
        variant: PoolingVariant,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("attention hidden width must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0,1), got {dropout_p}"
            )));
        }
        let in_width = variant.mlp_input_width(joints);
        Ok(MspAttentionParams {
            mlp_q: MlpParams::init(in_width, hidden, joints, rng)?,
            mlp_k: MlpParams::init(in_width, hidden, joints, rng)?,
            hidden,
            dropout_p,
            variant,
        })
    }
}

/// Row-stochastic per-sample joint-joint map, `[N, V, V]`.
#[derive(Debug, Clone)]
pub struct AttentionMap<S: Scalar> {
    values: Tensor<S>,
}

impl<S: Scalar> AttentionMap<S> {
    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<S> {
        self.values
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Split channels into the query half (first C/2) and key half (rest).
pub fn split_qk<S: Scalar>(f: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    if f.rank() != 4 {
        return Err(Error::Shape(format!(
            "split_qk: expected [N, C, T, V], got {:?}",
            f.shape()
        )));
    }
    let c = f.shape()[1];
    if c % 2 != 0 {
        return Err(Error::Shape(format!(
            "split_qk: channel count must be even, got {c}"
        )));
    }
    let q = slice_channels(f, 0, c / 2)?;
    let k = slice_channels(f, c / 2, c)?;
    Ok((q, k))
}

/// Global descriptor: mean over channels and frames, one value per joint.
pub fn pool_global<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    avg_pool_axes(x, &[1, 2])
}

/// Local descriptor: adaptive 4x4 pooling over the (channel, frame) plane —
/// the joint axis is preserved — then the mean over the 16 bins.
pub fn pool_local<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let binned = adaptive_avg_pool(x, (1, 2), (4, 4))?;
    avg_pool_axes(&binned, &[1, 2])
}

/// Concatenate global and local descriptors along the feature axis, global first.
pub fn multi_scale_concat<S: Scalar>(global: &Tensor<S>, local: &Tensor<S>) -> Result<Tensor<S>> {
    if global.shape() != local.shape() {
        return Err(Error::Shape(format!(
            "multi_scale_concat: descriptor shapes differ: {:?} vs {:?}",
            global.shape(),
            local.shape()
        )));
    }
    hconcat(global, local)
}

/// One MLP branch: `w2 * dropout(relu(w1 * x + b1)) + b2`. Dropout draws from
/// the training RNG stream and is inactive in eval mode.
pub fn mlp_project<S: Scalar>(
    x: &Tensor<S>,
    branch: &MlpParams<S>,
    dropout_p: f64,
    phase: &mut Phase<'_>,
) -> Result<Tensor<S>> {
    let hidden = linear(x, &branch.w1, &branch.b1)?.relu();
    let hidden = match phase {
        Phase::Train(rng) => hidden.dropout(dropout_p, *rng)?,
        Phase::Eval => hidden,
    };
    linear(&hidden, &branch.w2, &branch.b2)
}

/// Pooled per-joint descriptor for one branch under the given variant.
fn branch_descriptor<S: Scalar>(half: &Tensor<S>, variant: PoolingVariant) -> Result<Tensor<S>> {
    match variant {
        PoolingVariant::GlobalOnly => pool_global(half),
        PoolingVariant::LocalOnly => pool_local(half),
        PoolingVariant::Combined => {
            let g = pool_global(half)?;
            let l = pool_local(half)?;
            multi_scale_concat(&g, &l)
        }
    }
}

/// Full attention pipeline. One `V x V` map per sample, shared by all frames.
pub fn attention_map<S: Scalar>(
    f: &Tensor<S>,
    params: &MspAttentionParams<S>,
    phase: &mut Phase<'_>,
) -> Result<AttentionMap<S>> {
    let (q, k) = split_qk(f)?;
    let qd = branch_descriptor(&q, params.variant)?;
    let kd = branch_descriptor(&k, params.variant)?;
    let qp = mlp_project(&qd, &params.mlp_q, params.dropout_p, &mut phase.reborrow())?;
    let kp = mlp_project(&kd, &params.mlp_k, params.dropout_p, &mut phase.reborrow())?;
    let scores = batched_outer(&qp, &kp)?;
    let values = softmax_lastdim(&scores)?;
    Ok(AttentionMap { values })
}

/// Explicit-variant entry point; the parameters must have been built for the
/// same variant because the MLP input width depends on it.
pub fn variant_attention<S: Scalar>(
    f: &Tensor<S>,
    params: &MspAttentionParams<S>,
    variant: PoolingVariant,
    phase: &mut Phase<'_>,
) -> Result<AttentionMap<S>> {
    if params.variant != variant {
        return Err(Error::Config(format!(
            "variant_attention: parameters were built for {:?}, requested {:?}",
            params.variant, variant
        )));
    }
    attention_map(f, params, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| ((i as f64 + 1.3) * (seed as f64 + 0.7)).sin())
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn split_assigns_channel_halves() {
        let f = Tensor::<f32>::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (q, k) = split_qk(&f).unwrap();
        assert_eq!(q.to_vec(), vec![1.0, 2.0]);
        assert_eq!(k.to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn split_rejects_odd_channels() {
        let f = Tensor::<f32>::zeros(&[1, 3, 2, 2]).unwrap();
        assert!(split_qk(&f).is_err());
    }

    #[test]
    fn concat_of_split_reconstructs_descriptors() {
        let g = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let l = Tensor::<f32>::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let cat = multi_scale_concat(&g, &l).unwrap();
        assert_eq!(cat.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pool_global_constant_and_locality() {
        let x = Tensor::<f64>::full(&[2, 3, 4, 5], 2.5).unwrap();
        let g = pool_global(&x).unwrap();
        assert_eq!(g.shape(), &[2, 5]);
        assert!(g.to_vec().iter().all(|&v| (v - 2.5).abs() < 1e-12));

        // Perturb a single joint; only that joint's descriptor moves.
        let mut data = x.to_vec();
        for c in 0..3 {
            for t in 0..4 {
                data[((0 * 3 + c) * 4 + t) * 5 + 2] += 1.0;
            }
        }
        let y = Tensor::from_vec(&[2, 3, 4, 5], data).unwrap();
        let gy = pool_global(&y).unwrap().to_vec();
        let gx = g.to_vec();
        for j in 0..5 {
            if j == 2 {
                assert!((gy[j] - gx[j] - 1.0).abs() < 1e-12);
            } else {
                assert!((gy[j] - gx[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_local_degenerates_to_global_on_4x4() {
        let x = seeded_tensor(&[2, 4, 4, 3], 5);
        let g = pool_global(&x).unwrap().to_vec();
        let l = pool_local(&x).unwrap().to_vec();
        for (a, b) in g.iter().zip(&l) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_eval_is_deterministic_and_zero_params_give_zero() {
        let x = seeded_tensor(&[2, 6], 1);
        let zero = MlpParams {
            w1: Tensor::<f64>::zeros(&[4, 6]).unwrap(),
            b1: Tensor::zeros(&[4]).unwrap(),
            w2: Tensor::zeros(&[3, 4]).unwrap(),
            b2: Tensor::zeros(&[3]).unwrap(),
        };
        let mut phase = Phase::Eval;
        let a = mlp_project(&x, &zero, 0.5, &mut phase).unwrap();
        let b = mlp_project(&x, &zero, 0.5, &mut phase).unwrap();
        assert_eq!(a.to_vec(), vec![0.0; 6]);
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn train_dropout_matches_replayed_mask() {
        let x = Tensor::<f64>::ones(&[1, 4]).unwrap();
        let branch = MlpParams {
            w1: Tensor::<f64>::from_vec(&[4, 4], {
                let mut id = vec![0.0; 16];
                for i in 0..4 {
                    id[i * 4 + i] = 1.0;
                }
                id
            })
            .unwrap(),
            b1: Tensor::zeros(&[4]).unwrap(),
            w2: Tensor::from_vec(&[4, 4], {
                let mut id = vec![0.0; 16];
                for i in 0..4 {
                    id[i * 4 + i] = 1.0;
                }
                id
            })
            .unwrap(),
            b2: Tensor::zeros(&[4]).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut phase = Phase::Train(&mut rng);
        let y = mlp_project(&x, &branch, 0.5, &mut phase).unwrap();
        // Oracle: replay the identical stream to regenerate the mask.
        let mut replay = ChaCha8Rng::seed_from_u64(99);
        let expected: Vec<f64> = (0..4)
            .map(|_| {
                if rand::Rng::random::<f64>(&mut replay) >= 0.5 {
                    2.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(y.to_vec(), expected);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MspAttentionParams::<f64>::init(5, 8, 0.1, PoolingVariant::Combined, &mut rng)
            .unwrap();
        let f = seeded_tensor(&[2, 4, 8, 5], 9);
        let map = attention_map(&f, &params, &mut Phase::Eval).unwrap();
        let data = map.values().to_vec();
        for r in 0..2 * 5 {
            let row = &data[r * 5..(r + 1) * 5];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_mlp_weights_give_uniform_map() {
        let zero_branch = || MlpParams {
            w1: Tensor::<f64>::zeros(&[8, 10]).unwrap(),
            b1: Tensor::zeros(&[8]).unwrap(),
            w2: Tensor::zeros(&[5, 8]).unwrap(),
            b2: Tensor::zeros(&[5]).unwrap(),
        };
        let params = MspAttentionParams {
            mlp_q: zero_branch(),
            mlp_k: zero_branch(),
            hidden: 8,
            dropout_p: 0.0,
            variant: PoolingVariant::Combined,
        };
        let f = seeded_tensor(&[1, 4, 6, 5], 3);
        let map = attention_map(&f, &params, &mut Phase::Eval).unwrap();
        for &v in map.values().to_vec().iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn variant_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params =
            MspAttentionParams::<f64>::init(5, 8, 0.0, PoolingVariant::GlobalOnly, &mut rng)
                .unwrap();
        let f = seeded_tensor(&[1, 4, 6, 5], 3);
        assert!(
            variant_attention(&f, &params, PoolingVariant::Combined, &mut Phase::Eval).is_err()
        );
        assert!(
            variant_attention(&f, &params, PoolingVariant::GlobalOnly, &mut Phase::Eval).is_ok()
        );
    }

    #[test]
    fn constant_input_gives_uniform_map_for_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Tensor::<f64>::full(&[2, 4, 8, 5], 0.3).unwrap();
        for variant in [
            PoolingVariant::GlobalOnly,
            PoolingVariant::LocalOnly,
            PoolingVariant::Combined,
        ] {
            let params = MspAttentionParams::<f64>::init(5, 8, 0.0, variant, &mut rng).unwrap();
            let map = attention_map(&f, &params, &mut Phase::Eval).unwrap();
            let data = map.values().to_vec();
            // Constant input makes every joint descriptor equal, so every
            // score row is constant and softmax is uniform.
            for row in data.chunks(5) {
                for &v in row {
                    assert!((v - 0.2).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn combined_width_is_twice_single_for_builtin_graph() {
        assert_eq!(PoolingVariant::Combined.mlp_input_width(25), 50);
        assert_eq!(PoolingVariant::GlobalOnly.mlp_input_width(25), 25);
        assert_eq!(PoolingVariant::LocalOnly.mlp_input_width(25), 25);
    }
}
