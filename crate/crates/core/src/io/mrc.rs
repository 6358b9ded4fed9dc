//! MRC2014 reader and writer for mode-2 (float32, little-endian) maps and stacks.

use std::path::Path;

use ndarray::Array3;

use crate::error::{HetemError, Result};
use crate::model::checkpoint::write_atomic;
use crate::numerics::Volume;

pub const HEADER_LEN: usize = 1024;
const MODE_F32: i32 = 2;

/// Raw float32 map: `data[[z, y, x]]` with x fastest on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcMap {
    pub data: Array3<f32>,
    /// Å per voxel along x.
    pub apix: f64,
    /// Image stacks use space group 0, volumes 1.
    pub is_stack: bool,
}

fn put_i32(buf: &mut [u8], word: usize, v: i32) {
    buf[4 * word..4 * word + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], word: usize, v: f32) {
    buf[4 * word..4 * word + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i32(buf: &[u8], word: usize) -> i32 {
    i32::from_le_bytes(buf[4 * word..4 * word + 4].try_into().expect("4 bytes"))
}

fn get_f32(buf: &[u8], word: usize) -> f32 {
    f32::from_le_bytes(buf[4 * word..4 * word + 4].try_into().expect("4 bytes"))
}

impl MrcMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (nz, ny, nx) = self.data.dim();
        let mut h = vec![0u8; HEADER_LEN];
        for (w, v) in [nx, ny, nz].iter().enumerate() {
            put_i32(&mut h, w, *v as i32);
        }
        put_i32(&mut h, 3, MODE_F32);
        // Sampling (mx, my, mz) and cell lengths.
        let mz = if self.is_stack { 1 } else { nz };
        for (w, v) in [nx, ny, mz].iter().enumerate() {
            put_i32(&mut h, 7 + w, *v as i32);
            put_f32(&mut h, 10 + w, (*v as f64 * self.apix) as f32);
        }
        for w in 13..16 {
            put_f32(&mut h, w, 90.0);
        }
        for (w, v) in [1, 2, 3].iter().enumerate() {
            put_i32(&mut h, 16 + w, *v);
        }
        let n = self.data.len().max(1) as f64;
        let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
        for &v in self.data.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v as f64;
        }
        let mean = sum / n;
        let rms = (self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        put_f32(&mut h, 19, lo);
        put_f32(&mut h, 20, hi);
        put_f32(&mut h, 21, mean as f32);
        put_i32(&mut h, 22, if self.is_stack { 0 } else { 1 });
        // EXTTYP blank, NVERSION 20140.
        put_i32(&mut h, 27, 20140);
        h[208..212].copy_from_slice(b"MAP ");
        h[212..216].copy_from_slice(&[0x44, 0x44, 0x00, 0x00]);
        put_f32(&mut h, 54, rms as f32);
        put_i32(&mut h, 55, 1);
        let label = b"hetem";
        h[224..224 + label.len()].copy_from_slice(label);

        let mut out = h;
        out.reserve(self.data.len() * 4);
        for &v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(HetemError::parse(
                path,
                bytes.len() as u64,
                format!("file ends inside the {HEADER_LEN}-byte header"),
            ));
        }
        if bytes[212] == 0x11 {
            return Err(HetemError::parse(path, 212, "big-endian MRC files are not supported"));
        }
        let dims: Vec<i32> = (0..3).map(|w| get_i32(bytes, w)).collect();
        if let Some(w) = dims.iter().position(|&d| d <= 0) {
            return Err(HetemError::parse(path, 4 * w as u64, format!("non-positive dimension {}", dims[w])));
        }
        let mode = get_i32(bytes, 3);
        if mode != MODE_F32 {
            return Err(HetemError::parse(path, 12, format!("mode {mode} is not supported (expected 2, float32)")));
        }
        let nsymbt = get_i32(bytes, 23);
        if nsymbt < 0 {
            return Err(HetemError::parse(path, 92, format!("negative extended header size {nsymbt}")));
        }
        let start = HEADER_LEN + nsymbt as usize;
        let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        let expected = nx * ny * nz * 4;
        if bytes.len() < start || bytes.len() - start != expected {
            return Err(HetemError::parse(
                path,
                start.min(bytes.len()) as u64,
                format!(
                    "payload is {} bytes but the header implies {nx}·{ny}·{nz}·4 = {expected}",
                    bytes.len().saturating_sub(start)
                ),
            ));
        }
        let values: Vec<f32> = bytes[start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let data = Array3::from_shape_vec((nz, ny, nx), values).expect("length checked");
        let mx = get_i32(bytes, 7);
        let cella = get_f32(bytes, 10) as f64;
        let apix = if mx > 0 && cella > 0.0 { cella / mx as f64 } else { 1.0 };
        Ok(MrcMap {
            data,
            apix,
            is_stack: get_i32(bytes, 22) == 0 && nz > 1,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HetemError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn mrc_write(path: &Path, vol: &Volume) -> Result<()> {
    MrcMap {
        data: vol.data().mapv(|v| v as f32),
        apix: vol.apix(),
        is_stack: false,
    }
    .write(path)
}

pub fn mrc_read(path: &Path) -> Result<Volume> {
    let map = MrcMap::read(path)?;
    let (nz, ny, nx) = map.data.dim();
    if nz != ny || ny != nx {
        return Err(HetemError::parse(path, 0, format!("volume is {nx}×{ny}×{nz}, expected a cube")));
    }
    Volume::new(map.data.mapv(|v| v as f64), map.apix)
}

pub fn mrcs_write(path: &Path, images: &Array3<f32>, apix: f64) -> Result<()> {
    MrcMap {
        data: images.clone(),
        apix,
        is_stack: true,
    }
    .write(path)
}

/// Returns the `n×L×L` stack and its pixel size.
pub fn mrcs_read(path: &Path) -> Result<(Array3<f32>, f64)> {
    let map = MrcMap::read(path)?;
    let (_, ny, nx) = map.data.dim();
    if ny != nx {
        return Err(HetemError::parse(path, 0, format!("images are {nx}×{ny}, expected square")));
    }
    Ok((map.data, map.apix))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MrcMap {
        MrcMap {
            data: Array3::from_shape_fn((4, 6, 6), |(z, y, x)| (z as f32 - 1.5) * 0.37 + (x * y) as f32 / 7.0 + f32::EPSILON),
            apix: 1.25,
            is_stack: false,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 144);
        let back = MrcMap::from_bytes(&bytes, Path::new("x.mrc")).unwrap();
        assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!((back.apix - 1.25).abs() < 1e-6);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = MrcMap::from_bytes(&bytes, Path::new("t.mrc")).unwrap_err();
        assert!(matches!(err, HetemError::Parse { offset: 1024, .. }), "{err}");
    }

    #[test]
    fn wrong_mode_and_endianness_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[12] = 1;
        assert!(matches!(MrcMap::from_bytes(&bytes, Path::new("m")), Err(HetemError::Parse { offset: 12, .. })));
        let mut bytes = sample().to_bytes();
        bytes[212] = 0x11;
        assert!(matches!(MrcMap::from_bytes(&bytes, Path::new("m")), Err(HetemError::Parse { offset: 212, .. })));
        assert!(matches!(MrcMap::from_bytes(&[0u8; 100], Path::new("m")), Err(HetemError::Parse { offset: 100, .. })));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::new(Array3::from_shape_fn((8, 8, 8), |(z, y, x)| (x + 2 * y) as f64 - z as f64 * 0.5), 2.0).unwrap();
        let p = dir.path().join("v.mrc");
        mrc_write(&p, &vol).unwrap();
        let back = mrc_read(&p).unwrap();
        assert_eq!(back.data(), vol.data());
        let stack = Array3::from_shape_fn((3, 8, 8), |(n, y, x)| (n * 64 + y * 8 + x) as f32);
        let ps = dir.path().join("s.mrcs");
        mrcs_write(&ps, &stack, 3.0).unwrap();
        let (s2, apix) = mrcs_read(&ps).unwrap();
        assert_eq!(s2, stack);
        assert!((apix - 3.0).abs() < 1e-6);
    }
}
