//! External file formats: model config, weight manifest, crossbar netlists and raw images.

pub mod netlist;
pub mod weights;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::tensor::Tensor;

/// Loads a JSON model config mirroring [`NetworkSpec`].
pub fn load_network_spec(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network_spec(&text)
}

pub fn parse_network_spec(text: &str) -> Result<NetworkSpec> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a raw little-endian `f32` row-major image as a flat tensor.
pub fn read_raw_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Input(format!(
            "{}: {} bytes is not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(Tensor::vector(
        bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect(),
    ))
}

pub fn write_raw_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
