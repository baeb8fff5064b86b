//! Checkpoint format (little-endian): magic `USTF` | u32 version |
//! u32 config length | UTF-8 JSON config | parameter tensors in declaration
//! order, each as u32 rank, u32 dims, then the f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"USTF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_params(path: &Path, config: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    config.validate()?;
    let json = serde_json::to_vec(config)
        .map_err(|e| Error::Format(format!("config serialization failed: {e}")))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (name, tensor) in params.state_tensors() {
        if !tensor.all_finite() {
            return Err(Error::Numeric(format!(
                "refusing to checkpoint non-finite tensor '{name}'"
            )));
        }
        bytes.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data().iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(&bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))
        .map(|_| ())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint while reading {what}",
                self.path
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_params(path: &Path) -> Result<(ModelConfig, ModelParams<f32>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a checkpoint",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let json_len = r.u32("config length")? as usize;
    let json = r.take(json_len, "config block")?;
    let config: ModelConfig = serde_json::from_slice(json)
        .map_err(|e| Error::Config(format!("{}: invalid embedded config: {e}", path.display())))?;
    config.validate()?;

    // Shapes come from the embedded config; any disagreement with the stored
    // tensors is a config mismatch.
    let params = ModelParams::<f32>::init(&config, 0)?;
    for (name, tensor) in params.state_tensors() {
        let rank = r.u32(&format!("rank of {name}"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        if dims != tensor.shape() {
            return Err(Error::Config(format!(
                "{}: tensor '{name}' has shape {dims:?}, config implies {:?}",
                path.display(),
                tensor.shape()
            )));
        }
        let count = tensor.elem_count();
        let payload = r.take(4 * count, &format!("payload of {name}"))?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{}: tensor '{name}' contains non-finite values",
                path.display()
            )));
        }
        tensor.set_data(&values)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Phase;
    use crate::model::forward;
    use crate::tensor::Tensor;

    fn micro_config() -> ModelConfig {
        let mut config = ModelConfig::default_tiny(3);
        config.graph = crate::data::GraphRef::Inline {
            num_joints: 4,
            edges: vec![(0, 1), (1, 2), (2, 3)],
        };
        config.embed_dim = 4;
        config.channel_schedule = vec![4, 6];
        config.mlp_hidden = 8;
        config
    }

    #[test]
    fn round_trip_gives_bit_identical_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ustf");
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 42).unwrap();
        let x = Tensor::<f32>::from_vec(
            &[1, 3, 8, 4],
            (0..96).map(|i| (i as f32 * 0.17).sin()).collect(),
        )
        .unwrap();
        let before = forward(&x, &params, &mut Phase::Eval).unwrap().to_vec();
        save_params(&path, &config, &params).unwrap();
        let (loaded_config, loaded) = load_params(&path).unwrap();
        assert_eq!(loaded_config, config);
        let after = forward(&x, &loaded, &mut Phase::Eval).unwrap().to_vec();
        let before_bits: Vec<u32> = before.iter().map(|v| v.to_bits()).collect();
        let after_bits: Vec<u32> = after.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_bits, after_bits);
    }

    #[test]
    fn mismatched_schedule_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ustf");
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        save_params(&path, &config, &params).unwrap();

        // Tamper the embedded schedule: stored tensor shapes no longer agree.
        let bytes = fs::read(&path).unwrap();
        let json_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + json_len]).unwrap();
        let tampered_json = json.replace("[4,6]", "[6,4]");
        assert_ne!(json, tampered_json, "schedule must appear in the config");
        let mut tampered = bytes[..8].to_vec();
        tampered.extend_from_slice(&(tampered_json.len() as u32).to_le_bytes());
        tampered.extend_from_slice(tampered_json.as_bytes());
        tampered.extend_from_slice(&bytes[12 + json_len..]);
        fs::write(&path, &tampered).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Config(_))));
    }

    #[test]
    fn truncation_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ustf");
        let config = micro_config();
        let params = ModelParams::<f32>::init(&config, 0).unwrap();
        save_params(&path, &config, &params).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format(_))));
    }
}
