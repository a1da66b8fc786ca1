//! A checkpoint is the binary parameter file plus the network spec as JSON
//! beside it (`<path>.spec.json`).

use std::fs;
use std::path::{Path, PathBuf};

use super::TrainError;
use crate::arch::{assemble_network, ModelState, NetworkSpec};
use crate::nn::{read_checkpoint, restore_params, write_checkpoint};

pub fn spec_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spec.json");
    PathBuf::from(s)
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<(), TrainError> {
    write_checkpoint(&model.params, path)?;
    let spec = serde_json::to_string_pretty(&model.spec).map_err(|e| TrainError::Spec(e.to_string()))?;
    fs::write(spec_path(path), spec + "\n")?;
    Ok(())
}

/// Loads parameters into a network built from `spec`; every parameter path
/// of the `NetworkSpec` must be present with its declared shape.
pub fn load_checkpoint_as(spec: &NetworkSpec, path: &Path) -> Result<ModelState, TrainError> {
    let records = read_checkpoint(path)?;
    let mut model = assemble_network(spec, 0)?;
    restore_params(&mut model.params, records)?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, TrainError> {
    let text = fs::read_to_string(spec_path(path))?;
    let spec: NetworkSpec = serde_json::from_str(&text).map_err(|e| TrainError::Spec(e.to_string()))?;
    load_checkpoint_as(&spec, path)
}
