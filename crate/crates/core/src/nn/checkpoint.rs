//! JSON checkpoints with a version, per-layer shapes and a SHA-256 digest
//! over the parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::szn::{SznArch, SznModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    arch: SznArch,
    shapes: Vec<Vec<usize>>,
    sha256: String,
    params: Vec<f64>,
}

fn digest(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn to_json(model: &SznModel) -> Result<String> {
    let params = model.flat_params();
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        shapes: model.shapes(),
        sha256: digest(&params),
        params,
    };
    Ok(serde_json::to_string(&ck)?)
}

pub fn from_json(text: &str) -> Result<SznModel> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!("version {} (expected {CHECKPOINT_VERSION})", ck.version)));
    }
    if digest(&ck.params) != ck.sha256 {
        return Err(Error::Integrity("parameter digest mismatch".into()));
    }
    ck.arch.validate()?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut model = SznModel::new(ck.arch, &mut rng)?;
    if model.shapes() != ck.shapes {
        return Err(Error::Integrity("layer shapes disagree with architecture".into()));
    }
    model.set_flat_params(&ck.params).map_err(|e| Error::Integrity(e.to_string()))?;
    Ok(model)
}

pub fn save(path: &Path, model: &SznModel) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SznModel> {
    from_json(&fs::read_to_string(path)?)
}
