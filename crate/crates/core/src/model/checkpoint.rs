//! Self-describing archive of named `f64` arrays plus a JSON metadata block.
//!
//! Layout: 8-byte magic `HETEMCKP`, `u32` version, `u64` header length, UTF-8
//! JSON header, then the array payloads as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::nn::{cast, Adam, AdamState, Module, Param, Real, Visitor};

const MAGIC: &[u8; 8] = b"HETEMCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.insert(name.into(), (shape, data));
    }

    pub fn insert_matrix<T: Real>(&mut self, name: impl Into<String>, a: &Array2<T>) {
        let data = a.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        self.insert(name, vec![a.nrows(), a.ncols()], data);
    }

    pub fn matrix<T: Real>(&self, name: &str) -> Result<Array2<T>> {
        let (shape, data) = self
            .arrays
            .get(name)
            .ok_or_else(|| HetemError::Validation(format!("checkpoint lacks array {name}")))?;
        if shape.len() != 2 {
            return Err(HetemError::Validation(format!("array {name} is not 2-D")));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.iter().map(|&v| cast(v)).collect())
            .map_err(|e| HetemError::Validation(format!("array {name}: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(k, (s, _))| Entry {
                    name: k.clone(),
                    shape: s.clone(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)?;
        let payload: usize = self.arrays.values().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + hjson.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, data) in self.arrays.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, msg: &str| HetemError::parse(path, offset as u64, msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err(0, "not a checkpoint archive (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(err(8, &format!("unsupported archive version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(12, "header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[20..hend])
            .map_err(|e| err(20 + e.column(), &format!("malformed header: {e}")))?;
        let mut pos = hend;
        let mut arrays = BTreeMap::new();
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let end = pos
                .checked_add(n * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| err(pos, &format!("truncated payload for {}", entry.name)))?;
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(entry.name, (entry.shape, data));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(err(pos, "trailing bytes after payload"));
        }
        Ok(Archive {
            meta: header.meta,
            arrays,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HetemError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| HetemError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| HetemError::io(&tmp, e))?;
        f.sync_all().map_err(|e| HetemError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| HetemError::io(path, e))
}

/// Stores every parameter and buffer of `module` under its full name.
pub fn store_module<T: Real>(archive: &mut Archive, module: &mut dyn Module<T>, prefix: &str) {
    struct S<'a>(&'a mut Archive);
    impl<T: Real> Visitor<T> for S<'_> {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            self.0.insert_matrix(name, &p.value);
        }
        fn buffer(&mut self, name: &str, b: &mut Array2<T>) {
            self.0.insert_matrix(name, b);
        }
    }
    module.visit(prefix, &mut S(archive));
}

/// Loads every parameter and buffer of `module`; shapes must match exactly.
pub fn load_module<T: Real>(archive: &Archive, module: &mut dyn Module<T>, prefix: &str) -> Result<()> {
    struct L<'a> {
        a: &'a Archive,
        err: Option<HetemError>,
    }
    impl L<'_> {
        fn fill<T: Real>(&mut self, name: &str, dst: &mut Array2<T>) {
            if self.err.is_some() {
                return;
            }
            match self.a.matrix::<T>(name) {
                Ok(m) if m.dim() == dst.dim() => dst.assign(&m),
                Ok(m) => {
                    self.err = Some(HetemError::Validation(format!(
                        "{name}: shape {:?} in checkpoint, {:?} expected",
                        m.dim(),
                        dst.dim()
                    )))
                }
                Err(e) => self.err = Some(e),
            }
        }
    }
    impl<T: Real> Visitor<T> for L<'_> {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            self.fill(name, &mut p.value);
        }
        fn buffer(&mut self, name: &str, b: &mut Array2<T>) {
            self.fill(name, b);
        }
    }
    let mut l = L { a: archive, err: None };
    module.visit(prefix, &mut l);
    l.err.map_or(Ok(()), Err)
}

pub fn store_adam<T: Real>(archive: &mut Archive, adam: &Adam<T>, tag: &str) -> serde_json::Value {
    let mut steps = serde_json::Map::new();
    for (name, st) in &adam.state {
        archive.insert_matrix(format!("{tag}.{name}.m"), &st.m);
        archive.insert_matrix(format!("{tag}.{name}.v"), &st.v);
        steps.insert(name.clone(), serde_json::Value::from(st.step));
    }
    serde_json::json!({ "config": adam.cfg, "steps": steps })
}

pub fn load_adam<T: Real>(archive: &Archive, meta: &serde_json::Value, tag: &str) -> Result<Adam<T>> {
    let cfg = serde_json::from_value(meta["config"].clone())?;
    let mut adam = Adam::new(cfg);
    if let Some(steps) = meta["steps"].as_object() {
        for (name, step) in steps {
            let step = step
                .as_u64()
                .ok_or_else(|| HetemError::Validation(format!("bad step count for {name}")))?;
            adam.state.insert(
                name.clone(),
                AdamState {
                    m: archive.matrix(&format!("{tag}.{name}.m"))?,
                    v: archive.matrix(&format!("{tag}.{name}.v"))?,
                    step,
                },
            );
        }
    }
    Ok(adam)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut a = Archive::new(serde_json::json!({"epoch": 3}));
        a.insert("x", vec![2, 2], vec![1.0, -2.0, 3.5, f64::MIN_POSITIVE]);
        a.insert("y", vec![1], vec![7.0]);
        let bytes = a.to_bytes().unwrap();
        let p = Path::new("mem");
        assert_eq!(Archive::from_bytes(&bytes, p).unwrap(), a);
        assert!(matches!(
            Archive::from_bytes(&bytes[..bytes.len() - 3], p),
            Err(HetemError::Parse { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Archive::from_bytes(&bad, p), Err(HetemError::Parse { offset: 0, .. })));
    }
}
