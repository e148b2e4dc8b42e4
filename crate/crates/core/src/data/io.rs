//! On-disk formats.
//!
//! A dataset directory holds `dataset.toml` (input shape, classes, value
//! range), one little-endian `f64` blob per split (`<split>.bin`) and an
//! `index.csv` with columns `path,offset,label,origin,score`, where `offset`
//! is the byte offset of the sample inside `path`.
//!
//! The flat binary format starts with the magic `LCDS`, then little-endian
//! `u32` sample count, class count, number of dimensions and the dimension
//! sizes; each sample follows as a `u32` label and its `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Origin, Sample};
use crate::error::{Error, Result};
use crate::layers::InputShape;

const LCDS_MAGIC: &[u8; 4] = b"LCDS";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    dims: Vec<usize>,
    classes: usize,
    range: Option<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    path: String,
    offset: u64,
    label: usize,
    origin: Origin,
    score: Option<f64>,
}

/// Named splits sharing one shape, as stored in a dataset directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitSet {
    pub splits: BTreeMap<String, Dataset>,
}

impl SplitSet {
    pub fn get(&self, name: &str) -> Result<&Dataset> {
        self.splits.get(name).ok_or_else(|| Error::Format(format!("dataset has no '{name}' split")))
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn save_dataset_dir(dir: &Path, splits: &[(&str, &Dataset)]) -> Result<()> {
    let first = splits.first().ok_or(Error::EmptyDataset)?.1;
    if splits.iter().any(|(_, d)| d.shape != first.shape || d.classes != first.classes || d.range != first.range) {
        return Err(Error::shape("all splits must share shape, classes and range"));
    }
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta { dims: first.shape.dims(), classes: first.classes, range: first.range.map(|(a, b)| [a, b]) };
    fs::write(dir.join("dataset.toml"), toml::to_string(&meta).map_err(|e| format_err(e.to_string()))?)?;
    let mut index = csv::Writer::from_path(dir.join("index.csv")).map_err(|e| format_err(e.to_string()))?;
    for (name, data) in splits {
        if name.is_empty() || name.contains(['/', '\\', '.']) {
            return Err(Error::invalid(format!("bad split name '{name}'")));
        }
        data.validate()?;
        let path = format!("{name}.bin");
        let mut blob = BufWriter::new(fs::File::create(dir.join(&path))?);
        let mut offset = 0u64;
        for s in &data.samples {
            for v in &s.input {
                blob.write_all(&v.to_le_bytes())?;
            }
            index
                .serialize(IndexRow { path: path.clone(), offset, label: s.label, origin: s.origin, score: s.score })
                .map_err(|e| format_err(e.to_string()))?;
            offset += 8 * s.input.len() as u64;
        }
        blob.flush()?;
    }
    index.flush()?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<SplitSet> {
    let meta: DatasetMeta = toml::from_str(&fs::read_to_string(dir.join("dataset.toml"))?)
        .map_err(|e| format_err(format!("dataset.toml: {e}")))?;
    let shape = InputShape::from_dims(&meta.dims)?;
    let width = shape.len();
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut out = SplitSet::default();
    let mut reader = csv::Reader::from_path(dir.join("index.csv")).map_err(|e| format_err(e.to_string()))?;
    for row in reader.deserialize::<IndexRow>() {
        let row = row.map_err(|e| format_err(format!("index.csv: {e}")))?;
        let split = row
            .path
            .strip_suffix(".bin")
            .filter(|s| !s.is_empty() && !s.contains(['/', '\\']))
            .ok_or_else(|| format_err(format!("index.csv: bad blob path '{}'", row.path)))?
            .to_string();
        if !blobs.contains_key(&row.path) {
            blobs.insert(row.path.clone(), fs::read(dir.join(&row.path))?);
        }
        let blob = &blobs[&row.path];
        let start = usize::try_from(row.offset).map_err(|_| format_err("offset too large"))?;
        let bytes = blob
            .get(start..start + 8 * width)
            .ok_or_else(|| format_err(format!("{}: sample at offset {start} runs past the end", row.path)))?;
        let input = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let ds = out.splits.entry(split).or_insert_with(|| Dataset {
            shape,
            classes: meta.classes,
            range: meta.range.map(|[a, b]| (a, b)),
            samples: Vec::new(),
        });
        ds.samples.push(Sample { input, label: row.label, origin: row.origin, score: row.score });
    }
    for ds in out.splits.values() {
        ds.validate()?;
    }
    Ok(out)
}

pub fn write_lcds(path: &Path, data: &Dataset) -> Result<()> {
    data.validate()?;
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the LCDS header")));
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(LCDS_MAGIC)?;
    let dims = data.shape.dims();
    for v in [data.len(), data.classes, dims.len()].into_iter().chain(dims) {
        w.write_all(&to_u32(v)?.to_le_bytes())?;
    }
    for s in &data.samples {
        w.write_all(&to_u32(s.label)?.to_le_bytes())?;
        for v in &s.input {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an `LCDS` file. All samples are real and inputs are taken to lie in
/// `[0, 1]`.
pub fn read_lcds(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| format_err("truncated LCDS header"))?;
    if &magic != LCDS_MAGIC {
        return Err(format_err("not an LCDS file (bad magic)"));
    }
    let read_u32 = |r: &mut BufReader<fs::File>| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| format_err("truncated LCDS file"))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let count = read_u32(&mut r)?;
    let classes = read_u32(&mut r)?;
    let ndim = read_u32(&mut r)?;
    let dims = (0..ndim).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
    let shape = InputShape::from_dims(&dims)?;
    let width = shape.len();
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; 8 * width];
    for _ in 0..count {
        let label = read_u32(&mut r)?;
        r.read_exact(&mut buf).map_err(|_| format_err("truncated LCDS sample"))?;
        let input = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        samples.push(Sample::real(input, label));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(format_err("trailing bytes after the last LCDS sample"));
    }
    Dataset::new(shape, classes, Some((0.0, 1.0)), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_images, two_moons};

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let train = two_moons(20, 1);
        let mut test = two_moons(6, 2);
        test.samples[0] = Sample { score: Some(0.25), ..Sample::generated(vec![0.1, 0.2], 1) };
        save_dataset_dir(dir.path(), &[("train", &train), ("test", &test)]).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.get("train").unwrap(), &train);
        assert_eq!(back.get("test").unwrap(), &test);
        assert!(back.get("val").is_err());
    }

    #[test]
    fn lcds_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.lcds");
        let data = synthetic_images(12, 3, 4, 0).unwrap();
        write_lcds(&path, &data).unwrap();
        assert_eq!(read_lcds(&path).unwrap(), data);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_lcds(&path).is_err());
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_lcds(&path), Err(Error::Format(_))));
    }
}
