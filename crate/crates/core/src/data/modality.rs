//! Derived modalities (bone and motion streams) and frame-count normalization.

use super::{SkeletonGraph, SkeletonSequence};
use crate::error::{Error, Result};

/// Bone stream: each joint becomes its offset from the tree parent,
/// `bone[child] = joint[child] - joint[parent]`; the root bone is zero.
/// The tree is rooted at joint 0.
pub fn to_bone(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<SkeletonSequence> {
    if seq.joints != graph.num_joints() {
        return Err(Error::Data(format!(
            "sequence has {} joints, graph has {}",
            seq.joints,
            graph.num_joints()
        )));
    }
    let parents = graph.tree_parents(0)?;
    let mut out = seq.clone();
    for c in 0..seq.channels {
        for t in 0..seq.frames {
            for v in 0..seq.joints {
                *out.at_mut(c, t, v) = match parents[v] {
                    Some(p) => seq.at(c, t, v) - seq.at(c, t, p),
                    None => 0.0,
                };
            }
        }
    }
    Ok(out)
}

/// Motion stream: frame-to-frame differences, `motion[t] = x[t+1] - x[t]`,
/// with the final frame zeroed so the length is preserved.
pub fn to_motion(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.frames < 2 {
        return Err(Error::Data(format!(
            "motion stream needs at least 2 frames, got {}",
            seq.frames
        )));
    }
    let mut out = seq.clone();
    for c in 0..seq.channels {
        for t in 0..seq.frames {
            for v in 0..seq.joints {
                *out.at_mut(c, t, v) = if t + 1 < seq.frames {
                    seq.at(c, t + 1, v) - seq.at(c, t, v)
                } else {
                    0.0
                };
            }
        }
    }
    Ok(out)
}

/// Normalize a sequence to `target` frames: shorter sequences are zero-padded
/// at the end, longer ones uniformly subsampled at indices `floor(i*T/target)`.
pub fn resample_frames(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Data("target frame count must be >= 1".to_string()));
    }
    if target == seq.frames {
        return Ok(seq.clone());
    }
    let mut values = vec![0.0f32; seq.channels * target * seq.joints];
    let source_of = |t: usize| -> Option<usize> {
        if seq.frames >= target {
            Some(t * seq.frames / target)
        } else if t < seq.frames {
            Some(t)
        } else {
            None
        }
    };
    for c in 0..seq.channels {
        for t in 0..target {
            if let Some(src) = source_of(t) {
                for v in 0..seq.joints {
                    values[(c * target + t) * seq.joints + v] = seq.at(c, src, v);
                }
            }
        }
    }
    SkeletonSequence::new(target, seq.joints, values, seq.label)
}
