//! On-disk formats: the versioned binary container for model checkpoints
//! and feature matrices, and a minimal RIFF float WAV codec.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DPKC"
//! 4       4     format version, u32 (currently 1)
//! 8       4     kind, u32: 1 = model checkpoint, 2 = matrix
//! ```
//!
//! Checkpoint body (kind 1):
//!
//! ```text
//! u32 x 4        architecture: input_dim, hidden_width, hidden_layers, n_classes
//! f64 x 2        bn_eps, bn_momentum
//! per hidden block, in order:
//!   f64 x (out*in)  weight, row-major
//!   f64 x out       bias
//!   f64 x out       gain
//!   f64 x out       shift
//!   f64 x out       running_mean
//!   f64 x out       running_var
//! f64 x (K*width)   output weight, row-major
//! f64 x K           output bias
//! ```
//!
//! Matrix body (kind 2): `u32 rows, u32 cols`, then `rows*cols` f64
//! row-major. Hyperparameters travel in a JSON sidecar next to the
//! checkpoint (same path with `.json` appended).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::net::{AcousticModel, ArchDescriptor, DenseBlock};

const MAGIC: &[u8; 4] = b"DPKC";
const FORMAT_VERSION: u32 = 1;
const KIND_CHECKPOINT: u32 = 1;
const KIND_MATRIX: u32 = 2;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for &v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_header<W: Write>(w: &mut W, kind: u32) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, kind)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, expected_kind: u32) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Container(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(CoreError::Container(format!(
            "unsupported version {version}"
        )));
    }
    let kind = read_u32(r)?;
    if kind != expected_kind {
        return Err(CoreError::Container(format!(
            "wrong container kind {kind}, expected {expected_kind}"
        )));
    }
    Ok(())
}

/// Conventional sidecar path: `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

pub fn save_checkpoint(path: &Path, model: &AcousticModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_CHECKPOINT)?;
    write_u32(&mut w, model.arch.input_dim as u32)?;
    write_u32(&mut w, model.arch.hidden_width as u32)?;
    write_u32(&mut w, model.arch.hidden_layers as u32)?;
    write_u32(&mut w, model.arch.n_classes as u32)?;
    write_f64_slice(&mut w, &[model.bn_eps, model.bn_momentum])?;
    for b in &model.blocks {
        write_f64_slice(&mut w, b.weight.as_slice().expect("contiguous"))?;
        write_f64_slice(&mut w, b.bias.as_slice().expect("contiguous"))?;
        write_f64_slice(&mut w, b.gain.as_slice().expect("contiguous"))?;
        write_f64_slice(&mut w, b.shift.as_slice().expect("contiguous"))?;
        write_f64_slice(&mut w, b.running_mean.as_slice().expect("contiguous"))?;
        write_f64_slice(&mut w, b.running_var.as_slice().expect("contiguous"))?;
    }
    write_f64_slice(&mut w, model.out_weight.as_slice().expect("contiguous"))?;
    write_f64_slice(&mut w, model.out_bias.as_slice().expect("contiguous"))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AcousticModel> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, KIND_CHECKPOINT)?;
    let arch = ArchDescriptor {
        input_dim: read_u32(&mut r)? as usize,
        hidden_width: read_u32(&mut r)? as usize,
        hidden_layers: read_u32(&mut r)? as usize,
        n_classes: read_u32(&mut r)? as usize,
    };
    let hyper = read_f64_vec(&mut r, 2)?;
    let mut blocks = Vec::with_capacity(arch.hidden_layers);
    let mut fan_in = arch.input_dim;
    for _ in 0..arch.hidden_layers {
        let out = arch.hidden_width;
        let weight = Array2::from_shape_vec((out, fan_in), read_f64_vec(&mut r, out * fan_in)?)
            .map_err(|e| CoreError::Container(e.to_string()))?;
        blocks.push(DenseBlock {
            weight,
            bias: Array1::from_vec(read_f64_vec(&mut r, out)?),
            gain: Array1::from_vec(read_f64_vec(&mut r, out)?),
            shift: Array1::from_vec(read_f64_vec(&mut r, out)?),
            running_mean: Array1::from_vec(read_f64_vec(&mut r, out)?),
            running_var: Array1::from_vec(read_f64_vec(&mut r, out)?),
        });
        fan_in = out;
    }
    let out_weight = Array2::from_shape_vec(
        (arch.n_classes, fan_in),
        read_f64_vec(&mut r, arch.n_classes * fan_in)?,
    )
    .map_err(|e| CoreError::Container(e.to_string()))?;
    let out_bias = Array1::from_vec(read_f64_vec(&mut r, arch.n_classes)?);

    Ok(AcousticModel::from_parts(
        arch, blocks, out_weight, out_bias, hyper[0], hyper[1],
    ))
}

pub fn write_matrix(path: &Path, matrix: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_MATRIX)?;
    write_u32(&mut w, matrix.nrows() as u32)?;
    write_u32(&mut w, matrix.ncols() as u32)?;
    for row in matrix.rows() {
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, KIND_MATRIX)?;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let data = read_f64_vec(&mut r, rows * cols)?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| CoreError::Container(e.to_string()))
}

/// Write a mono 32-bit float PCM RIFF file.
pub fn write_wav_f32_mono(path: &Path, sample_rate: u32, samples: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_bytes = (samples.len() * 4) as u32;
    // RIFF size: 4 ("WAVE") + (8+16) fmt + (8+4) fact + (8+data)
    let riff_size = 4 + 24 + 12 + 8 + data_bytes;
    w.write_all(b"RIFF")?;
    write_u32(&mut w, riff_size)?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    write_u32(&mut w, 16)?;
    w.write_all(&3u16.to_le_bytes())?; // IEEE float
    w.write_all(&1u16.to_le_bytes())?; // mono
    write_u32(&mut w, sample_rate)?;
    write_u32(&mut w, sample_rate * 4)?; // byte rate
    w.write_all(&4u16.to_le_bytes())?; // block align
    w.write_all(&32u16.to_le_bytes())?; // bits per sample

    w.write_all(b"fact")?;
    write_u32(&mut w, 4)?;
    write_u32(&mut w, samples.len() as u32)?;

    w.write_all(b"data")?;
    write_u32(&mut w, data_bytes)?;
    for &s in samples {
        w.write_all(&s.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a mono 32-bit float PCM RIFF file; unknown chunks are skipped.
pub fn read_wav_f32_mono(path: &Path) -> Result<(u32, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut four = [0u8; 4];
    r.read_exact(&mut four)?;
    if &four != b"RIFF" {
        return Err(CoreError::Container("not a RIFF file".into()));
    }
    let _riff_size = read_u32(&mut r)?;
    r.read_exact(&mut four)?;
    if &four != b"WAVE" {
        return Err(CoreError::Container("not a WAVE file".into()));
    }

    let mut sample_rate = None;
    let mut samples = None;
    loop {
        if r.read_exact(&mut four).is_err() {
            break; // end of chunks
        }
        let chunk_size = read_u32(&mut r)? as usize;
        match &four {
            b"fmt " => {
                let mut fmt = vec![0u8; chunk_size];
                r.read_exact(&mut fmt)?;
                let format = u16::from_le_bytes([fmt[0], fmt[1]]);
                let channels = u16::from_le_bytes([fmt[2], fmt[3]]);
                let bits = u16::from_le_bytes([fmt[14], fmt[15]]);
                if format != 3 || channels != 1 || bits != 32 {
                    return Err(CoreError::Container(format!(
                        "expected mono float32 wav, got format {format}, {channels} ch, {bits} bits"
                    )));
                }
                sample_rate = Some(u32::from_le_bytes([fmt[4], fmt[5], fmt[6], fmt[7]]));
            }
            b"data" => {
                let mut bytes = vec![0u8; chunk_size];
                r.read_exact(&mut bytes)?;
                samples = Some(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                        .collect(),
                );
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let skip = chunk_size + (chunk_size & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
    }

    match (sample_rate, samples) {
        (Some(sr), Some(s)) => Ok((sr, s)),
        _ => Err(CoreError::Container("missing fmt or data chunk".into())),
    }
}
