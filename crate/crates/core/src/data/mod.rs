//! Skeleton graphs, sequence containers, derived modalities, synthetic data,
//! and the on-disk dataset format.

mod graph;
mod io;
mod modality;
mod synth;

pub use graph::{build_adjacency, ntu_graph, SkeletonGraph, NTU25_EDGES, NTU25_JOINTS};
pub use io::{load_dataset, read_manifest, read_skel, write_manifest, write_skel};
pub use modality::{resample_frames, to_bone, to_motion};
pub use synth::synth_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One skeleton sample: `values` is a dense `[C, T, V]` array in row-major
/// order (channel-major, then frame, then joint) holding normalized
/// coordinates, plus a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub values: Vec<f32>,
    pub label: usize,
}

impl SkeletonSequence {
    pub const COORD_CHANNELS: usize = 3;

    pub fn new(frames: usize, joints: usize, values: Vec<f32>, label: usize) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Data(format!(
                "sequence needs at least one frame and joint, got T={frames}, V={joints}"
            )));
        }
        let expected = Self::COORD_CHANNELS * frames * joints;
        if values.len() != expected {
            return Err(Error::Data(format!(
                "sequence payload has {} values, expected {expected} (3 x {frames} x {joints})",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(
                "sequence payload contains non-finite values".to_string(),
            ));
        }
        Ok(SkeletonSequence {
            channels: Self::COORD_CHANNELS,
            frames,
            joints,
            values,
            label,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, v: usize) -> f32 {
        self.values[(c * self.frames + t) * self.joints + v]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, t: usize, v: usize) -> &mut f32 {
        &mut self.values[(c * self.frames + t) * self.joints + v]
    }
}

/// Graph field of a dataset manifest: the builtin 25-joint skeleton by name,
/// or an inline edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphRef {
    Named(String),
    Inline {
        num_joints: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl GraphRef {
    pub fn ntu25() -> Self {
        GraphRef::Named("ntu25".to_string())
    }

    pub fn resolve(&self) -> Result<SkeletonGraph> {
        match self {
            GraphRef::Named(name) if name == "ntu25" => Ok(ntu_graph()),
            GraphRef::Named(name) => Err(Error::Config(format!("unknown graph name '{name}'"))),
            GraphRef::Inline { num_joints, edges } => SkeletonGraph::new(*num_joints, edges.clone()),
        }
    }
}

impl From<&SkeletonGraph> for GraphRef {
    fn from(graph: &SkeletonGraph) -> Self {
        if graph == &ntu_graph() {
            GraphRef::ntu25()
        } else {
            GraphRef::Inline {
                num_joints: graph.num_joints(),
                edges: graph.edges().to_vec(),
            }
        }
    }
}

/// Dataset index: class inventory, sample files, and the graph they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub files: Vec<String>,
    pub graph: GraphRef,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(Error::Data("manifest: num_classes must be >= 1".to_string()));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Data(format!(
                "manifest: {} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        self.graph.resolve()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_rejects_bad_payload() {
        assert!(SkeletonSequence::new(2, 2, vec![0.0; 11], 0).is_err());
        assert!(SkeletonSequence::new(0, 2, vec![], 0).is_err());
        assert!(SkeletonSequence::new(1, 1, vec![0.0, f32::NAN, 0.0], 0).is_err());
        assert!(SkeletonSequence::new(2, 2, vec![0.0; 12], 0).is_ok());
    }

    #[test]
    fn graph_ref_json_shapes() {
        let named = serde_json::to_string(&GraphRef::ntu25()).unwrap();
        assert_eq!(named, "\"ntu25\"");
        let inline = GraphRef::Inline {
            num_joints: 2,
            edges: vec![(0, 1)],
        };
        let round: GraphRef = serde_json::from_str(&serde_json::to_string(&inline).unwrap()).unwrap();
        assert_eq!(round, inline);
    }
}
