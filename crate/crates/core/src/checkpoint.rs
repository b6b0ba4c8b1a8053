//! Versioned JSON checkpoints of the network bundle and optimizer state.
//! Serde writes floats with the shortest representation that parses back to
//! the identical bits, so save/load round-trips are exact.

use crate::error::{Error, Result};
use crate::graph::write_atomic;
use crate::nn::{BundleOptimizer, NetworkBundle};
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub bundle: NetworkBundle,
    pub optimizer: BundleOptimizer,
}

pub fn save_checkpoint(
    path: &Path,
    bundle: &NetworkBundle,
    optimizer: &BundleOptimizer,
) -> Result<()> {
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        bundle: bundle.clone(),
        optimizer: optimizer.clone(),
    };
    let mut text = serde_json::to_string(&checkpoint)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::arg(format!(
            "unsupported checkpoint version {}",
            checkpoint.version
        )));
    }
    Ok(checkpoint)
}
