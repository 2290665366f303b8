//! On-disk parameter checkpoints.
//!
//! A checkpoint is a directory holding `manifest.txt` plus one raw
//! little-endian `f64` file per tensor. The manifest is UTF-8 `key=value`
//! text:
//!
//! ```text
//! format_version=1
//! meta.domain=drug
//! tensor name=layer0.w shape=8x4 file=layer0.w.f64 offset=0 length=256
//! ```
//!
//! Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(store: &ParamStore) -> Self {
        let mut ck = Self::new();
        for (_, p) in store.iter() {
            ck.tensors.push((p.name.clone(), p.value.clone()));
        }
        ck
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Copies every parameter of `store` out of this checkpoint.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        let mut src = ParamStore::new();
        for (name, t) in &self.tensors {
            src.add(name.clone(), t.clone(), false);
        }
        store.load_from(&src)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut manifest = format!("format_version={FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.contains('\n') || v.contains('\n') || k.contains('=') {
                return Err(Error::Checkpoint(format!("metadata `{k}` is not single-line")));
            }
            manifest.push_str(&format!("meta.{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("invalid tensor name `{name}`")));
            }
            let file = format!("{}.f64", file_stem(name));
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let shape = t.shape().iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
            manifest.push_str(&format!(
                "tensor name={name} shape={shape} file={file} offset=0 length={}\n",
                bytes.len()
            ));
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut ck = Self::new();
        let mut version = None;
        for (lineno, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Checkpoint(format!("{}:{}: {msg}", path.display(), lineno + 1));
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(v) = line.strip_prefix("format_version=") {
                version = Some(v.parse::<u32>().map_err(|_| bad("bad format_version"))?);
            } else if let Some(kv) = line.strip_prefix("meta.") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad("metadata without `=`"))?;
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: BTreeMap<&str, &str> = rest.split_whitespace().filter_map(|f| f.split_once('=')).collect();
                let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
                let name = get("name")?.to_string();
                let shape = get("shape")?
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad shape"))?;
                let offset: usize = get("offset")?.parse().map_err(|_| bad("bad offset"))?;
                let length: usize = get("length")?.parse().map_err(|_| bad("bad length"))?;
                let fpath = dir.join(get("file")?);
                let bytes = fs::read(&fpath).map_err(|e| Error::io(format!("reading {}", fpath.display()), e))?;
                let end = offset.checked_add(length).ok_or_else(|| bad("bad byte range"))?;
                if end > bytes.len() || !length.is_multiple_of(8) {
                    return Err(bad("byte range outside file"));
                }
                let data = bytes[offset..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
                ck.tensors.push((name, t));
            } else {
                return Err(bad("unrecognized line"));
            }
        }
        match version {
            Some(FORMAT_VERSION) => Ok(ck),
            Some(v) => Err(Error::Checkpoint(format!(
                "unsupported format_version {v} (expected {FORMAT_VERSION})"
            ))),
            None => Err(Error::Checkpoint("manifest lacks format_version".into())),
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 1..40),
            tag in "[a-z]{1,8}",
        ) {
            let dir = tempfile::tempdir().unwrap();
            let mut ck = Checkpoint::new();
            ck.set_meta("tag", &tag);
            let n = values.len();
            ck.push("w", Tensor::new(vec![n], values.clone()).unwrap());
            ck.push("m", Tensor::new(vec![1, n], values.clone()).unwrap());
            ck.save(dir.path()).unwrap();
            let back = Checkpoint::load(dir.path()).unwrap();
            prop_assert_eq!(back.meta("tag").unwrap(), tag.as_str());
            for (name, _) in &ck.tensors {
                let a = ck.tensor(name).unwrap();
                let b = back.tensor(name).unwrap();
                prop_assert_eq!(a.shape(), b.shape());
                let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST), "format_version=9\n").unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
