//! On-disk formats: the SKEL binary sequence file and the JSON manifest.
//!
//! SKEL layout (little-endian): magic `SKL1` | u32 C | u32 T | u32 V |
//! u32 label | C*T*V f32 payload in channel-major, then frame, then joint
//! order. Writes are whole-file atomic (temp file + rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatasetManifest, SkeletonGraph, SkeletonSequence};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKL1";
const HEADER_LEN: usize = 4 + 4 * 4;
/// Upper bound on payload elements; anything bigger is a corrupt header.
const MAX_ELEMENTS: u64 = 1 << 28;

pub fn write_skel(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * seq.values.len());
    bytes.extend_from_slice(MAGIC);
    for dim in [seq.channels, seq.frames, seq.joints, seq.label] {
        let v = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} overflows the u32 header")))?;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in &seq.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_skel(path: &Path) -> Result<SkeletonSequence> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{}: file shorter than the fixed header",
            path.display()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a SKEL file",
            path.display()
        )));
    }
    let field = |i: usize| -> u32 {
        let off = 4 + 4 * i;
        u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
    };
    let (c, t, v, label) = (field(0), field(1), field(2), field(3));
    if c as usize != SkeletonSequence::COORD_CHANNELS {
        return Err(Error::Format(format!(
            "{}: expected 3 coordinate channels, header says {c}",
            path.display()
        )));
    }
    if t == 0 || v == 0 {
        return Err(Error::Format(format!(
            "{}: zero frame or joint count in header",
            path.display()
        )));
    }
    let elements = c as u64 * t as u64 * v as u64;
    if elements > MAX_ELEMENTS {
        return Err(Error::Format(format!(
            "{}: dimension overflow, header implies {elements} elements",
            path.display()
        )));
    }
    let expected = HEADER_LEN + 4 * elements as usize;
    if bytes.len() < expected {
        return Err(Error::Format(format!(
            "{}: truncated payload, need {expected} bytes, have {}",
            path.display(),
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - expected
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]))
        .collect();
    SkeletonSequence::new(t as usize, v as usize, values, label as usize)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    write_atomic(path, json.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: invalid manifest JSON: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Read a dataset directory: `manifest.json` plus every listed SKEL file.
/// Labels are validated against the class count and joints against the graph.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SkeletonSequence>, SkeletonGraph)> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let graph = manifest.graph.resolve()?;
    let mut sequences = Vec::with_capacity(manifest.files.len());
    for file in &manifest.files {
        let seq = read_skel(&dir.join(file))?;
        if seq.label >= manifest.num_classes {
            return Err(Error::Data(format!(
                "{file}: label {} out of range for {} classes",
                seq.label, manifest.num_classes
            )));
        }
        if seq.joints != graph.num_joints() {
            return Err(Error::Data(format!(
                "{file}: {} joints but the dataset graph has {}",
                seq.joints,
                graph.num_joints()
            )));
        }
        sequences.push(seq);
    }
    Ok((manifest, sequences, graph))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))
        .map(|_| ())
}
