//! Deterministic synthetic dataset: each class is a parametric sinusoidal
//! motion family, separable but not trivially so.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use super::{DatasetManifest, GraphRef, SkeletonGraph, SkeletonSequence};
use crate::error::{Error, Result};

const NOISE_SIGMA: f64 = 0.02;

/// Generate `classes * samples_per_class` sequences of `frames` frames.
///
/// Class `k` oscillates the joints `v` with `v % classes == k` at frequency
/// `1 + k` cycles per sequence with amplitude `0.3 + 0.08 k` around a fixed
/// rest pose, with a class-anchored phase, small per-sample phase/amplitude
/// jitter, and Gaussian coordinate noise (sigma 0.02). The result is a pure
/// function of the arguments.
pub fn synth_dataset(
    seed: u64,
    classes: usize,
    samples_per_class: usize,
    frames: usize,
    graph: &SkeletonGraph,
) -> Result<(DatasetManifest, Vec<SkeletonSequence>)> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 classes, got {classes}"
        )));
    }
    if frames < 8 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 8 frames, got {frames}"
        )));
    }
    if samples_per_class == 0 {
        return Err(Error::Config("samples_per_class must be >= 1".to_string()));
    }
    let joints = graph.num_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(classes * samples_per_class);
    let mut files = Vec::with_capacity(classes * samples_per_class);

    for class in 0..classes {
        let freq = 1.0 + class as f64;
        let amp = 0.3 + 0.08 * class as f64;
        let base_phase = 2.0 * PI * class as f64 / classes as f64;
        for sample in 0..samples_per_class {
            let phase = base_phase + (rng.random::<f64>() - 0.5) * PI / 4.0;
            let amp_jitter = 0.9 + 0.2 * rng.random::<f64>();
            let mut values = vec![0.0f32; 3 * frames * joints];
            for c in 0..3 {
                for t in 0..frames {
                    for v in 0..joints {
                        let mut x = rest_pose(c, v);
                        if v % classes == class {
                            let angle = 2.0 * PI * freq * t as f64 / frames as f64
                                + phase
                                + 0.4 * v as f64
                                + 1.1 * c as f64;
                            x += amp * amp_jitter * angle.sin();
                        }
                        let noise: f64 = rng.sample(StandardNormal);
                        x += NOISE_SIGMA * noise;
                        values[(c * frames + t) * joints + v] = x as f32;
                    }
                }
            }
            sequences.push(SkeletonSequence::new(frames, joints, values, class)?);
            files.push(format!("class{class:02}_{sample:03}.skel"));
        }
    }

    let manifest = DatasetManifest {
        num_classes: classes,
        class_names: (0..classes).map(|k| format!("class_{k}")).collect(),
        files,
        graph: GraphRef::from(graph),
    };
    Ok((manifest, sequences))
}

/// Fixed rest position per (channel, joint); independent of seed and class.
fn rest_pose(channel: usize, joint: usize) -> f64 {
    let v = joint as f64;
    match channel {
        0 => 0.5 * (0.7 * v).sin(),
        1 => 0.5 * (0.9 * v).cos(),
        _ => 0.5 * (1.3 * v + 1.0).sin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ntu_graph;

    #[test]
    fn same_seed_is_bit_identical() {
        let g = ntu_graph();
        let (ma, sa) = synth_dataset(42, 3, 4, 16, &g).unwrap();
        let (mb, sb) = synth_dataset(42, 3, 4, 16, &g).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(sa, sb);
        let (_, sc) = synth_dataset(43, 3, 4, 16, &g).unwrap();
        assert_ne!(sa, sc);
    }

    #[test]
    fn counts_and_labels_are_balanced() {
        let g = ntu_graph();
        let (manifest, seqs) = synth_dataset(0, 4, 32, 16, &g).unwrap();
        assert_eq!(seqs.len(), 128);
        assert_eq!(manifest.files.len(), 128);
        for class in 0..4 {
            assert_eq!(seqs.iter().filter(|s| s.label == class).count(), 32);
        }
    }

    #[test]
    fn preconditions_enforced() {
        let g = ntu_graph();
        assert!(synth_dataset(0, 1, 4, 16, &g).is_err());
        assert!(synth_dataset(0, 2, 4, 7, &g).is_err());
    }

    #[test]
    fn classes_separate_in_trajectory_space() {
        let g = ntu_graph();
        let classes = 4;
        let per_class = 8;
        let (_, seqs) = synth_dataset(7, classes, per_class, 16, &g).unwrap();
        let dim = seqs[0].values.len();
        // Per-class mean trajectories by direct accumulation.
        let mut means = vec![vec![0.0f64; dim]; classes];
        for s in &seqs {
            for (m, &v) in means[s.label].iter_mut().zip(&s.values) {
                *m += v as f64 / per_class as f64;
            }
        }
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut max_intra = 0.0f64;
        for s in &seqs {
            let as_f64: Vec<f64> = s.values.iter().map(|&v| v as f64).collect();
            max_intra = max_intra.max(dist(&as_f64, &means[s.label]));
        }
        let mut min_inter = f64::INFINITY;
        for a in 0..classes {
            for b in a + 1..classes {
                min_inter = min_inter.min(dist(&means[a], &means[b]));
            }
        }
        assert!(
            min_inter > max_intra,
            "classes overlap: min inter {min_inter} <= max intra {max_intra}"
        );
    }
}
