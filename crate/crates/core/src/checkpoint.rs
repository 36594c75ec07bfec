//! Checkpoint file: the Gaussian cloud plus the semantic decoder in one
//! little-endian binary blob.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic            5 bytes  "SSPL1"
//! n                u64      point count
//! feature_dim      u32
//! sh_degree        u32
//! positions        n*3 f32
//! rotations        n*4 f32
//! log_scales       n*3 f32
//! opacity_logits   n   f32
//! sh_coeffs        n*3*(sh_degree+1)^2 f32
//! features         n*feature_dim f32
//! layer_count      u32      decoder section
//! per layer: in_dim u32, out_dim u32, weight out*in f32, bias out f32
//! ```
//!
//! Attributes are stored as `f32` regardless of the in-memory scalar type;
//! an `f32` cloud round-trips bit-exactly.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::cloud::{GaussianCloud, MAX_POINTS};
use crate::decoder::{DenseLayer, SemanticDecoder};
use crate::Scalar;

const MAGIC: &[u8; 5] = b"SSPL1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Writes cloud and decoder; the write is atomic (temp file + rename).
pub fn save<T: Scalar>(
    path: &Path,
    cloud: &GaussianCloud<T>,
    decoder: &SemanticDecoder<T>,
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(cloud.len() as u64)?;
        w.write_u32::<LittleEndian>(cloud.feature_dim as u32)?;
        w.write_u32::<LittleEndian>(cloud.sh_degree as u32)?;
        for p in &cloud.positions {
            for v in p {
                w.write_f32::<LittleEndian>(v.as_f32())?;
            }
        }
        for q in &cloud.rotations {
            for v in q {
                w.write_f32::<LittleEndian>(v.as_f32())?;
            }
        }
        for s in &cloud.log_scales {
            for v in s {
                w.write_f32::<LittleEndian>(v.as_f32())?;
            }
        }
        for v in &cloud.opacity_logits {
            w.write_f32::<LittleEndian>(v.as_f32())?;
        }
        for v in &cloud.sh_coeffs {
            w.write_f32::<LittleEndian>(v.as_f32())?;
        }
        for v in &cloud.features {
            w.write_f32::<LittleEndian>(v.as_f32())?;
        }
        w.write_u32::<LittleEndian>(decoder.layers.len() as u32)?;
        for layer in &decoder.layers {
            w.write_u32::<LittleEndian>(layer.in_dim as u32)?;
            w.write_u32::<LittleEndian>(layer.out_dim as u32)?;
            for v in &layer.weight {
                w.write_f32::<LittleEndian>(v.as_f32())?;
            }
            for v in &layer.bias {
                w.write_f32::<LittleEndian>(v.as_f32())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(GaussianCloud<f32>, SemanticDecoder<f32>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::Corrupt(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let n = read_u64(&mut r, "point count")? as usize;
    if n > MAX_POINTS {
        return Err(CheckpointError::Corrupt(format!(
            "point count {n} exceeds the {MAX_POINTS} cap"
        )));
    }
    let feature_dim = read_u32(&mut r, "feature_dim")? as usize;
    let sh_degree = read_u32(&mut r, "sh_degree")? as usize;
    if sh_degree > 3 {
        return Err(CheckpointError::Corrupt(format!(
            "sh degree {sh_degree} out of range"
        )));
    }

    let mut cloud = GaussianCloud::<f32>::empty(sh_degree, feature_dim);
    for _ in 0..n {
        cloud.positions.push(read_arr3(&mut r, "positions")?);
    }
    for _ in 0..n {
        cloud.rotations.push([
            read_f32(&mut r, "rotations")?,
            read_f32(&mut r, "rotations")?,
            read_f32(&mut r, "rotations")?,
            read_f32(&mut r, "rotations")?,
        ]);
    }
    for _ in 0..n {
        cloud.log_scales.push(read_arr3(&mut r, "log_scales")?);
    }
    for _ in 0..n {
        cloud.opacity_logits.push(read_f32(&mut r, "opacity_logits")?);
    }
    for _ in 0..n * cloud.sh_coeffs_per_point() {
        cloud.sh_coeffs.push(read_f32(&mut r, "sh_coeffs")?);
    }
    for _ in 0..n * feature_dim {
        cloud.features.push(read_f32(&mut r, "features")?);
    }

    let layer_count = read_u32(&mut r, "layer count")? as usize;
    if layer_count > 16 {
        return Err(CheckpointError::Corrupt(format!(
            "implausible decoder layer count {layer_count}"
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = read_u32(&mut r, "layer in_dim")? as usize;
        let out_dim = read_u32(&mut r, "layer out_dim")? as usize;
        if in_dim == 0 || out_dim == 0 || in_dim > 4096 || out_dim > 4096 {
            return Err(CheckpointError::Corrupt(format!(
                "implausible layer shape {in_dim}x{out_dim}"
            )));
        }
        let mut weight = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weight.push(read_f32(&mut r, "layer weight")?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(read_f32(&mut r, "layer bias")?);
        }
        layers.push(DenseLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt(
            "trailing bytes after decoder section".into(),
        ));
    }
    Ok((cloud, SemanticDecoder { layers }))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Corrupt(format!("unexpected EOF reading {what}")))
}

fn read_f32<R: Read>(r: &mut R, what: &str) -> Result<f32, CheckpointError> {
    r.read_f32::<LittleEndian>()
        .map_err(|_| CheckpointError::Corrupt(format!("unexpected EOF reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, CheckpointError> {
    r.read_u32::<LittleEndian>()
        .map_err(|_| CheckpointError::Corrupt(format!("unexpected EOF reading {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, CheckpointError> {
    r.read_u64::<LittleEndian>()
        .map_err(|_| CheckpointError::Corrupt(format!("unexpected EOF reading {what}")))
}

fn read_arr3<R: Read>(r: &mut R, what: &str) -> Result<[f32; 3], CheckpointError> {
    Ok([
        read_f32(r, what)?,
        read_f32(r, what)?,
        read_f32(r, what)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::SparsePoint;
    use crate::cloud::init_from_points;

    fn sample() -> (GaussianCloud<f32>, SemanticDecoder<f32>) {
        let pts: Vec<SparsePoint> = (0..7)
            .map(|i| SparsePoint {
                position: [i as f64 * 0.3, (i % 3) as f64, 2.0],
                color: [0.1 * i as f64 % 1.0, 0.5, 0.9],
            })
            .collect();
        let cloud = init_from_points(&pts, 2, 16, 11).unwrap();
        let decoder = SemanticDecoder::new(16, Some(32), 5, 3);
        (cloud, decoder)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cloud, decoder) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &cloud, &decoder).unwrap();
        let (cloud2, decoder2) = load(&path).unwrap();
        assert_eq!(cloud, cloud2);
        assert_eq!(decoder, decoder2);

        // Saving the reloaded state produces identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save(&path2, &cloud2, &decoder2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (cloud, decoder) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &cloud, &decoder).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        fs::write(&path, b"NOPE!aaaaaaaaaaaaaaaaaaaa").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }
}
