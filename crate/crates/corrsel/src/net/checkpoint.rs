//! Model checkpoint files.
//!
//! Line 1 is a JSON header: format version, architecture string, k, lambda,
//! mining mode, seed, and the per-block layout (name, shape, offset, length)
//! into the flat payloads. Line 2 is the flat parameter payload, line 3 the
//! flat buffer payload (batch-norm running statistics). Numbers round-trip
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::compile;
use super::params::ModelParams;
use super::train::Mining;
use super::{Architecture, Model, NetError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferEntry {
    layer: usize,
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: String,
    k: usize,
    lambda: f64,
    mining: Mining,
    seed: u64,
    blocks: Vec<BlockEntry>,
    buffers: Vec<BufferEntry>,
}

/// A loaded checkpoint: the rebuilt model plus its training identity.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub params: ModelParams,
    pub k: usize,
    pub lambda: f64,
    pub mining: Mining,
    pub seed: u64,
}

/// Writes a checkpoint. The header records everything needed to mine graphs
/// the same way at inference time.
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    model: &Model,
    params: &ModelParams,
    k: usize,
    lambda: f64,
    mining: Mining,
    seed: u64,
) -> Result<(), NetError> {
    params.validate_against(model.plan())?;
    let mut blocks = Vec::with_capacity(params.block_count());
    let mut offset = 0usize;
    for i in 0..params.block_count() {
        let spec = params.spec(i);
        blocks.push(BlockEntry {
            layer: spec.layer,
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            offset,
            len: spec.len(),
        });
        offset += spec.len();
    }
    let mut buffers = Vec::new();
    let mut buf_offset = 0usize;
    for (i, spec) in params.buffer_specs.iter().enumerate() {
        buffers.push(BufferEntry {
            layer: spec.layer,
            name: spec.name.clone(),
            offset: buf_offset,
            len: spec.len,
        });
        buf_offset += params.buffer(i).len();
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        arch: model.architecture().to_string(),
        k,
        lambda,
        mining,
        seed,
        blocks,
        buffers,
    };

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header_line = serde_json::to_string(&header)
        .map_err(|e| NetError::Checkpoint(format!("serialize header: {e}")))?;
    w.write_all(header_line.as_bytes())?;
    w.write_all(b"\n")?;

    let flat_params: Vec<f64> = params.blocks.iter().flatten().copied().collect();
    let params_line = serde_json::to_string(&flat_params)
        .map_err(|e| NetError::Checkpoint(format!("serialize params: {e}")))?;
    w.write_all(params_line.as_bytes())?;
    w.write_all(b"\n")?;

    let flat_buffers: Vec<f64> = params.buffers.iter().flatten().copied().collect();
    let buffers_line = serde_json::to_string(&flat_buffers)
        .map_err(|e| NetError::Checkpoint(format!("serialize buffers: {e}")))?;
    w.write_all(buffers_line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back; the parameter layout is validated against the
/// architecture recorded in the header.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint, NetError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut next_line = |what: &str| -> Result<String, NetError> {
        lines
            .next()
            .ok_or_else(|| NetError::Checkpoint(format!("missing {what} line")))?
            .map_err(NetError::Io)
    };

    let header: Header = serde_json::from_str(&next_line("header")?)
        .map_err(|e| NetError::Checkpoint(format!("header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let flat_params: Vec<f64> = serde_json::from_str(&next_line("parameter payload")?)
        .map_err(|e| NetError::Checkpoint(format!("parameter payload: {e}")))?;
    let flat_buffers: Vec<f64> = serde_json::from_str(&next_line("buffer payload")?)
        .map_err(|e| NetError::Checkpoint(format!("buffer payload: {e}")))?;

    let arch = Architecture::parse(&header.arch)?;
    let plan = compile(&arch, 1)?;
    let model = Model::new(arch)?;

    if header.blocks.len() != plan.params.len() {
        return Err(NetError::Checkpoint(format!(
            "{} blocks in header, architecture has {}",
            header.blocks.len(),
            plan.params.len()
        )));
    }
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for (entry, spec) in header.blocks.iter().zip(&plan.params) {
        if entry.layer != spec.layer || entry.name != spec.name || entry.shape != spec.shape {
            return Err(NetError::Checkpoint(format!(
                "block {}.{} does not match the architecture layout",
                entry.layer, entry.name
            )));
        }
        let end = entry.offset + entry.len;
        if end > flat_params.len() {
            return Err(NetError::Checkpoint(format!(
                "block {}.{} overruns the parameter payload",
                entry.layer, entry.name
            )));
        }
        blocks.push(flat_params[entry.offset..end].to_vec());
    }
    let mut buffers = Vec::with_capacity(header.buffers.len());
    for (entry, spec) in header.buffers.iter().zip(&plan.buffers) {
        if entry.layer != spec.layer || entry.name != spec.name || entry.len != spec.len {
            return Err(NetError::Checkpoint(format!(
                "buffer {}.{} does not match the architecture layout",
                entry.layer, entry.name
            )));
        }
        let end = entry.offset + entry.len;
        if end > flat_buffers.len() {
            return Err(NetError::Checkpoint(format!(
                "buffer {}.{} overruns the buffer payload",
                entry.layer, entry.name
            )));
        }
        buffers.push(flat_buffers[entry.offset..end].to_vec());
    }

    let params = ModelParams {
        specs: plan.params.clone(),
        blocks,
        buffer_specs: plan.buffers.clone(),
        buffers,
    };
    params.validate_against(model.plan())?;

    Ok(Checkpoint {
        model,
        params,
        k: header.k,
        lambda: header.lambda,
        mining: header.mining,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_exact() {
        let model = Model::new(Architecture::parse("C(4, 1, 4)-GP-R(8, 1, 3)-C(1, 1, 1)").unwrap())
            .unwrap();
        let params = model.init_params(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &params, 8, 1e-3, Mining::Compatibility, 3).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.k, 8);
        assert_eq!(loaded.lambda, 1e-3);
        assert_eq!(loaded.mining, Mining::Compatibility);
        assert_eq!(loaded.seed, 3);
        assert_eq!(
            loaded.model.architecture().to_string(),
            model.architecture().to_string()
        );
    }

    #[test]
    fn rewrite_is_byte_stable() {
        let model = Model::new(Architecture::tiny()).unwrap();
        let params = model.init_params(9);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &model, &params, 4, 1e-3, Mining::Spatial, 9).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(
            &p2,
            &loaded.model,
            &loaded.params,
            loaded.k,
            loaded.lambda,
            loaded.mining,
            loaded.seed,
        )
        .unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_rejected() {
        let model = Model::new(Architecture::parse("C(2, 1, 4)-C(1, 1, 1)").unwrap()).unwrap();
        let params = model.init_params(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &params, 8, 1e-3, Mining::Compatibility, 0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            NetError::Checkpoint(_)
        ));
    }
}
