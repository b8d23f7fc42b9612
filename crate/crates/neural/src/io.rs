//! Weight persistence: a JSON manifest (layer specs and shapes) next to a
//! flat little-endian `f32` blob holding every parameter in declaration order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::layer::LayerSpec;
use crate::network::Network;
use crate::real::Real;

pub const FORMAT: &str = "utgpose-weights/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub param_shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
    pub blob: String,
    pub dtype: String,
    pub n_values: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn blob_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

pub fn manifest_for<T: Real>(net: &Network<T>, name: &str, metadata: serde_json::Value) -> Manifest {
    Manifest {
        format: FORMAT.into(),
        input_shape: net.input_shape().to_vec(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerEntry {
                spec: l.spec.clone(),
                in_shape: l.in_shape.clone(),
                out_shape: l.out_shape.clone(),
                param_shapes: l.params.iter().map(|p| p.shape().to_vec()).collect(),
            })
            .collect(),
        blob: format!("{name}.bin"),
        dtype: "f32-le".into(),
        n_values: net.num_params(),
        metadata,
    }
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.bin`.
pub fn save_network<T: Real>(net: &Network<T>, dir: &Path, name: &str, metadata: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = manifest_for(net, name, metadata);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(manifest_path(dir, name), json)?;

    let params = net.flat_params();
    let mut blob = Vec::with_capacity(params.len() * 4);
    for v in params {
        blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(blob_path(dir, name), blob)?;
    Ok(())
}

/// Rebuilds the network from its manifest and fills in the stored weights.
pub fn load_network<T: Real>(dir: &Path, name: &str) -> Result<(Network<T>, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(dir, name))?)?;
    if manifest.format != FORMAT || manifest.dtype != "f32-le" {
        return Err(NeuralError::Format(format!("unsupported format {} / {}", manifest.format, manifest.dtype)));
    }
    let specs: Vec<LayerSpec> = manifest.layers.iter().map(|l| l.spec.clone()).collect();
    let mut net = Network::<T>::build(&manifest.input_shape, &specs, 0)?;
    for (layer, entry) in net.layers().iter().zip(&manifest.layers) {
        let shapes: Vec<Vec<usize>> = layer.params.iter().map(|p| p.shape().to_vec()).collect();
        if shapes != entry.param_shapes || layer.out_shape != entry.out_shape {
            return Err(NeuralError::Format(format!("layer {} shapes disagree with manifest", layer.spec.name())));
        }
    }
    let bytes = fs::read(dir.join(&manifest.blob))?;
    if bytes.len() != manifest.n_values * 4 || manifest.n_values != net.num_params() {
        return Err(NeuralError::Format(format!(
            "blob has {} bytes, manifest declares {} values, network has {}",
            bytes.len(),
            manifest.n_values,
            net.num_params()
        )));
    }
    let values: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    net.set_flat_params(&values)?;
    Ok((net, manifest))
}

/// Loss curve as `epoch,mean_loss` CSV (epochs numbered from 1).
pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,mean_loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{l}", i + 1)?;
    }
    Ok(())
}
