//! `lipcert-ckpt-v1`: a TOML manifest plus a blob of little-endian `f64`
//! parameters in manifest order.

use std::fs;
use std::path::Path;

use lipcert::layers::{Architecture, LayerSpec, Network, Refresh};
use lipcert::train::TrainConfig;
use lipcert::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "lipcert-ckpt-v1";
pub const MANIFEST: &str = "manifest.toml";
pub const WEIGHTS: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub mechanism: String,
    /// Scalars in the weight blob.
    pub param_count: usize,
    /// `[rows, cols]` of every parameter tensor, in blob order.
    pub param_shapes: Vec<[usize; 2]>,
    pub architecture: Architecture,
    pub layers: Vec<LayerSpec>,
    pub train: Option<TrainConfig>,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub network: Network,
}

pub fn manifest_for(net: &Network, arch: &Architecture, seed: u64, train: Option<&TrainConfig>) -> Manifest {
    Manifest {
        format: FORMAT.into(),
        seed,
        mechanism: arch.mechanism.to_string(),
        param_count: net.param_count(),
        param_shapes: net.params().iter().map(|p| [p.rows(), p.cols()]).collect(),
        architecture: arch.clone(),
        layers: net.specs(),
        train: train.cloned(),
    }
}

pub fn save(dir: &Path, net: &Network, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = toml::to_string(manifest).map_err(|e| Error::Format(e.to_string()))?;
    let mut blob = Vec::with_capacity(manifest.param_count * 8);
    for p in net.params() {
        for v in p.as_slice() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST), text)?;
    fs::write(dir.join(WEIGHTS), blob)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format '{}'", m.format)));
    }
    let declared: usize = m.param_shapes.iter().map(|[r, c]| r * c).sum();
    if declared != m.param_count {
        return Err(Error::Format(format!("manifest declares {} scalars but its shapes hold {declared}", m.param_count)));
    }
    Ok(m)
}

/// Loads a checkpoint and re-converges every bound. The blob length and
/// the manifest are checked before the network is touched.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let blob = fs::read(dir.join(WEIGHTS))?;
    if blob.len() != manifest.param_count * 8 {
        return Err(Error::Format(format!(
            "weight blob has {} bytes, manifest declares {} parameters ({} bytes)",
            blob.len(),
            manifest.param_count,
            manifest.param_count * 8
        )));
    }
    let mut network = manifest.architecture.build(&mut ChaCha8Rng::seed_from_u64(manifest.seed))?;
    if network.specs() != manifest.layers {
        return Err(Error::Format("layer list does not match the architecture".into()));
    }
    let shapes: Vec<[usize; 2]> = network.params().iter().map(|p| [p.rows(), p.cols()]).collect();
    if shapes != manifest.param_shapes {
        return Err(Error::Format("parameter shapes do not match the architecture".into()));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for p in network.params_mut() {
        for v in p.as_mut_slice() {
            *v = values.next().expect("length checked above");
        }
    }
    network.refresh(Refresh::Full)?;
    Ok(Checkpoint { manifest, network })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lipcert::layers::{DenseMechanism, InputShape};

    fn net() -> (Network, Architecture) {
        let arch = Architecture { dense_depth: 1, dense_width: 6, ..Architecture::vector(3, 2, DenseMechanism::Aol) };
        (arch.build(&mut ChaCha8Rng::seed_from_u64(1)).unwrap(), arch)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (mut n, arch) = net();
        n.params_mut()[0].as_mut_slice()[0] = 0.1 + 0.2;
        let m = manifest_for(&n, &arch, 1, None);
        save(dir.path(), &n, &m).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.manifest, m);
        for (a, b) in n.params().iter().zip(back.network.params()) {
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.network.input(), InputShape::Vector { dim: 3 });
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (n, arch) = net();
        save(dir.path(), &n, &manifest_for(&n, &arch, 1, None)).unwrap();
        let blob = fs::read(dir.path().join(WEIGHTS)).unwrap();
        fs::write(dir.path().join(WEIGHTS), &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (n, arch) = net();
        let mut m = manifest_for(&n, &arch, 1, None);
        m.param_count += 1;
        save(dir.path(), &n, &m).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format(_))));
    }
}
