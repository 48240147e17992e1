//! Self-describing binary container shared by checkpoints and classifier
//! files:
//!
//! ```text
//! magic (4 bytes) | version u32 LE | manifest length u64 LE | manifest
//! (UTF-8 `key = value` lines) | f64 LE arrays | CRC32 of all prior bytes
//! ```
//!
//! Array entries in the manifest read `array.<name> = <shape> @ <offset>`
//! with the shape written as `AxB` and the offset in bytes from the start
//! of the array section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    /// Scalar entries, in insertion order.
    pub entries: Vec<(String, String)>,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn put_array(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64]) {
        self.arrays.push((name.into(), shape.to_vec(), data.to_vec()));
    }

    pub fn encode(&self, magic: &[u8; 4], version: u32) -> Vec<u8> {
        let mut manifest = String::new();
        for (k, v) in &self.entries {
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        let mut offset = 0usize;
        for (name, shape, data) in &self.arrays {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            manifest.push_str(&format!("array.{name} = {} @ {offset}\n", dims.join("x")));
            offset += data.len() * 8;
        }
        let mut out = Vec::with_capacity(16 + manifest.len() + offset + 4);
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, _, data) in &self.arrays {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Verifies magic, version and checksum before parsing anything.
    pub fn decode(bytes: &[u8], magic: &[u8; 4], version: u32, what: &'static str) -> Result<Self> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(Error::Truncated {
                    needed: n,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if &bytes[..4] != magic {
            return Err(Error::BadMagic { expected: what });
        }
        need(20)?;
        let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if found != version {
            return Err(Error::Version {
                found,
                supported: version,
            });
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        need(16usize.saturating_add(manifest_len).saturating_add(4))?;
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let manifest = std::str::from_utf8(&body[16..16 + manifest_len])
            .map_err(|_| Error::malformed(what, "manifest is not UTF-8"))?;
        let data = &body[16 + manifest_len..];
        let mut out = Container::default();
        let mut expected_offset = 0usize;
        for line in manifest.lines() {
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| Error::malformed(what, format!("manifest line {line:?}")))?;
            let Some(name) = key.strip_prefix("array.") else {
                out.entries.push((key.to_string(), value.to_string()));
                continue;
            };
            let (shape, offset) = value
                .split_once(" @ ")
                .ok_or_else(|| Error::malformed(what, format!("array entry {line:?}")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::malformed(what, format!("shape in {line:?}"))))
                .collect::<Result<_>>()?;
            let offset: usize = offset
                .parse()
                .map_err(|_| Error::malformed(what, format!("offset in {line:?}")))?;
            if offset != expected_offset {
                return Err(Error::malformed(what, format!("array {name} at offset {offset}, expected {expected_offset}")));
            }
            let len: usize = shape.iter().product();
            let end = offset + len * 8;
            if end > data.len() {
                return Err(Error::Truncated {
                    needed: 16 + manifest_len + end + 4,
                    found: bytes.len(),
                });
            }
            let values = data[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.arrays.push((name.to_string(), shape, values));
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(Error::malformed(what, format!("{} trailing bytes after arrays", data.len() - expected_offset)));
        }
        Ok(out)
    }

    pub fn reader(&self, what: &'static str) -> Reader<'_> {
        Reader {
            what,
            entries: self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, s, d)| (n.as_str(), (s.as_slice(), d.as_slice())))
                .collect(),
        }
    }
}

/// Keyed lookup with uniform error messages.
pub struct Reader<'a> {
    what: &'static str,
    pub entries: BTreeMap<&'a str, &'a str>,
    arrays: BTreeMap<&'a str, (&'a [usize], &'a [f64])>,
}

impl<'a> Reader<'a> {
    pub fn raw(&self, key: &str) -> Result<&'a str> {
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| Error::malformed(self.what, format!("missing key {key}")))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::malformed(self.what, format!("bad value {raw:?} for {key}")))
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| Error::malformed(self.what, format!("bad list {raw:?} for {key}"))))
            .collect()
    }

    pub fn array(&self, name: &str, shape: &[usize]) -> Result<&'a [f64]> {
        let (s, d) = self
            .arrays
            .get(name)
            .copied()
            .ok_or_else(|| Error::malformed(self.what, format!("missing array {name}")))?;
        if s != shape {
            return Err(Error::malformed(self.what, format!("array {name} has shape {s:?}, expected {shape:?}")));
        }
        Ok(d)
    }
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
