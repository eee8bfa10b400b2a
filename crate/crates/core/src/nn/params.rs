use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named flat tensors; gradients are stored in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    pub entries: Vec<ParamEntry>,
    pub values: Vec<Vec<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<S>) -> usize {
        let entry = ParamEntry { name: name.into(), shape };
        assert_eq!(entry.len(), values.len(), "parameter {} shape mismatch", entry.name);
        self.entries.push(entry);
        self.values.push(values);
        self.values.len() - 1
    }

    pub fn zeros_like(&self) -> Vec<Vec<S>> {
        self.values.iter().map(|v| vec![S::zero(); v.len()]).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self.entries.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| T::lit(x.as_f64())).collect()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// Serialize as `magic`, `u32` LE header length, JSON header, then every
    /// tensor as little-endian `f32` in header order.
    pub fn to_bytes<H: Serialize>(&self, magic: &[u8; 4], header: &H) -> Vec<u8> {
        #[derive(Serialize)]
        struct Envelope<'a, H> {
            #[serde(flatten)]
            header: &'a H,
            tensors: &'a [ParamEntry],
        }
        let json = serde_json::to_vec(&Envelope {
            header,
            tensors: &self.entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + self.num_scalars() * 4);
        out.extend_from_slice(magic);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.values.iter().flatten() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes<H: serde::de::DeserializeOwned>(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(H, Self)> {
        #[derive(Deserialize)]
        struct Tensors {
            tensors: Vec<ParamEntry>,
        }
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(Error::format(path, format!("missing {} magic", String::from_utf8_lossy(magic))));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = bytes.get(8..8 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: H = serde_json::from_slice(json).map_err(|e| Error::format(path, e.to_string()))?;
        let Tensors { tensors } = serde_json::from_slice(json).map_err(|e| Error::format(path, e.to_string()))?;
        let mut body = &bytes[8 + hlen..];
        let mut store = ParamStore::default();
        for entry in tensors {
            let n = entry.len();
            if body.len() < n * 4 {
                return Err(Error::format(path, format!("tensor {} truncated", entry.name)));
            }
            let values: Vec<S> = body[..n * 4]
                .chunks_exact(4)
                .map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            body = &body[n * 4..];
            store.entries.push(entry);
            store.values.push(values);
        }
        if !body.is_empty() {
            return Err(Error::format(path, "trailing bytes after tensors"));
        }
        if !store.all_finite() {
            return Err(Error::format(path, "non-finite parameter"));
        }
        Ok((header, store))
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Header {
        input: usize,
    }

    #[test]
    fn bytes_round_trip() {
        let mut p = ParamStore::<f32>::default();
        p.push("a", vec![2, 2], vec![1.0, 2.0, -3.0, 0.5]);
        p.push("b", vec![3], vec![0.0, 1.0, 2.0]);
        let bytes = p.to_bytes(b"TEST", &Header { input: 7 });
        assert_eq!(&bytes[..4], b"TEST");
        let (h, q) = ParamStore::<f32>::from_bytes::<Header>(&bytes, b"TEST", Path::new("x")).unwrap();
        assert_eq!(h, Header { input: 7 });
        assert_eq!(q, p);
        assert!(ParamStore::<f32>::from_bytes::<Header>(&bytes, b"NOPE", Path::new("x")).is_err());
        assert!(ParamStore::<f32>::from_bytes::<Header>(&bytes[..bytes.len() - 1], b"TEST", Path::new("x")).is_err());
    }
}
