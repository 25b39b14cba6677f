//! Weights and checkpoint files on disk.

use std::path::Path;

use deocc_core::model::weights::{decode, encode, WeightFile};
use deocc_core::model::DeOccNet;
use deocc_core::train::{checkpoint_file, TrainConfig, TrainState};

use crate::error::{CliError, Result};

pub fn read_file(path: &Path) -> Result<WeightFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::data(path, e))
}

/// Network weights from a weights or checkpoint file.
pub fn read_net(path: &Path) -> Result<DeOccNet<f32>> {
    DeOccNet::from_weight_file(&read_file(path)?).map_err(|e| CliError::data(path, e))
}

pub fn write_weights(path: &Path, net: &DeOccNet<f32>) -> Result<()> {
    std::fs::write(path, net.to_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_checkpoint(
    path: &Path,
    net: &DeOccNet<f32>,
    state: &TrainState,
    cfg: &TrainConfig,
) -> Result<()> {
    std::fs::write(path, encode(&checkpoint_file(net, state, cfg)))
        .map_err(|e| CliError::io(path, e))
}
