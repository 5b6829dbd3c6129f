//! On-disk dataset layout.
//!
//! A dataset directory holds `dataset.json` (spec, class table and the hidden
//! generator state) and one `<split>.omds` file per split:
//!
//! ```text
//! "OMDS" | version: u32 | header_len: u32 | header JSON
//! inputs: rows * d_x f64 | labels: rows u32 | sample_ids: rows u64
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetSpec, Split, SyntheticDataset};
use crate::error::{Error, Result};

pub const SPLIT_MAGIC: &[u8; 4] = b"OMDS";
const SPLIT_VERSION: u32 = 1;
const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitHeader {
    pub split: String,
    pub rows: usize,
    pub d_x: usize,
    pub d_motion: usize,
    pub d_static: usize,
    pub d_embed: usize,
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    spec: DatasetSpec,
    class_embeddings: Vec<Vec<f64>>,
    class_context: Vec<usize>,
    motion_map: Vec<Vec<f64>>,
    context_prototypes: Vec<Vec<f64>>,
    splits: Vec<String>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Format(format!("{what} has ragged rows")));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn write_split(path: &Path, split: &Split, header: &SplitHeader) -> Result<()> {
    if header.rows != split.len() || header.d_x != split.inputs.ncols() {
        return Err(Error::shape("split header disagrees with split contents"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let json = serde_json::to_vec(header)?;
    w.write_all(SPLIT_MAGIC)?;
    w.write_all(&SPLIT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in split.inputs.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in &split.labels {
        let l = u32::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds u32")))?;
        w.write_all(&l.to_le_bytes())?;
    }
    for id in &split.sample_ids {
        w.write_all(&id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_split(path: &Path) -> Result<(Split, SplitHeader)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, "magic")?;
    if &magic != SPLIT_MAGIC {
        return Err(Error::Format(format!("{} is not an OMDS file", path.display())));
    }
    let version = read_u32(&mut r, "version")?;
    if version != SPLIT_VERSION {
        return Err(Error::Format(format!("unsupported split version {version}")));
    }
    let len = read_u32(&mut r, "header length")? as usize;
    let mut json = vec![0u8; len];
    read_exact_or_truncated(&mut r, &mut json, "header")?;
    let header: SplitHeader = serde_json::from_slice(&json)?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let n_in = header.rows * header.d_x;
    let expected = n_in * 8 + header.rows * 4 + header.rows * 8;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let (xs, rest) = payload.split_at(n_in * 8);
    let (ls, ids) = rest.split_at(header.rows * 4);
    let inputs: Vec<f64> = xs
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = ls
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let sample_ids = ids
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let inputs = Array2::from_shape_vec((header.rows, header.d_x), inputs).map_err(|e| Error::Format(e.to_string()))?;
    Ok((
        Split {
            name: header.split.clone(),
            inputs,
            labels,
            sample_ids,
            contexts: None,
        },
        header,
    ))
}

pub fn save_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        spec: ds.spec.clone(),
        class_embeddings: rows_of(&ds.class_embeddings),
        class_context: ds.class_context.clone(),
        motion_map: rows_of(&ds.motion_map),
        context_prototypes: rows_of(&ds.context_prototypes),
        splits: ds.splits.keys().cloned().collect(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    for (name, split) in &ds.splits {
        let header = SplitHeader {
            split: name.clone(),
            rows: split.len(),
            d_x: ds.spec.input_dim(),
            d_motion: ds.spec.d_motion,
            d_static: ds.spec.d_static,
            d_embed: ds.spec.d_embed,
            num_classes: ds.spec.num_classes(),
            seed: ds.spec.seed,
        };
        write_split(&dir.join(format!("{name}.omds")), split, &header)?;
    }
    Ok(())
}

/// Loads a directory written by [`save_dataset`]. Per-sample contexts are
/// not stored, so loaded splits have `contexts == None`.
pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    manifest.spec.validate()?;
    let mut splits = BTreeMap::new();
    for name in &manifest.splits {
        let (split, header) = read_split(&dir.join(format!("{name}.omds")))?;
        if header.d_x != manifest.spec.input_dim() || header.split != *name {
            return Err(Error::Format(format!("split file {name} disagrees with manifest")));
        }
        splits.insert(name.clone(), split);
    }
    Ok(SyntheticDataset {
        spec: manifest.spec,
        class_embeddings: matrix_from_rows(manifest.class_embeddings, "class_embeddings")?,
        class_context: manifest.class_context,
        motion_map: matrix_from_rows(manifest.motion_map, "motion_map")?,
        context_prototypes: matrix_from_rows(manifest.context_prototypes, "context_prototypes")?,
        splits,
    })
}
