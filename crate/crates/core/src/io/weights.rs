//! Weight manifest and binary tensor blobs.
//!
//! ```text
//! VERSION 1
//! # comment
//! TENSOR stem.weight SHAPE 8,3,3,3 DTYPE f32 FILE weights.bin OFFSET 0
//! ```
//!
//! `FILE` is resolved relative to the manifest. Data is little-endian `f32`,
//! row-major, `product(SHAPE) * 4` bytes starting at `OFFSET`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, ManifestError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, WeightEntry>,
    source: Option<PathBuf>,
}

impl WeightStore {
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Geometry(format!(
                "tensor `{name}` shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                values.len()
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate tensor `{name}`")));
        }
        self.entries.insert(name, WeightEntry { shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.get(name)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().flat_map(|e| e.values.iter().copied())
    }
}

struct ManifestLine {
    line: usize,
    name: String,
    shape: Vec<usize>,
    file: String,
    offset: u64,
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestLine>, ManifestError> {
    let mut out = Vec::new();
    let mut seen_version = false;
    let mut names = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let syntax = |message: String| ManifestError::Syntax { line, message };
        if !seen_version {
            match tokens.as_slice() {
                ["VERSION", "1"] => {
                    seen_version = true;
                    continue;
                }
                ["VERSION", v] => {
                    return Err(ManifestError::Version {
                        line,
                        found: (*v).to_owned(),
                    });
                }
                _ => return Err(syntax("expected `VERSION 1` header".into())),
            }
        }
        if tokens.first() != Some(&"TENSOR") || tokens.len() != 10 {
            return Err(syntax(format!(
                "expected `TENSOR <name> SHAPE <d,..> DTYPE f32 FILE <path> OFFSET <n>`, got `{trimmed}`"
            )));
        }
        let name = tokens[1].to_owned();
        let mut fields = HashMap::new();
        for pair in tokens[2..].chunks(2) {
            if fields.insert(pair[0], pair[1]).is_some() {
                return Err(syntax(format!("repeated key `{}`", pair[0])));
            }
        }
        let field = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| syntax(format!("missing `{key}`")))
        };
        let dtype = field("DTYPE")?;
        if dtype != "f32" {
            return Err(ManifestError::Dtype {
                name,
                dtype: dtype.to_owned(),
            });
        }
        let shape = field("SHAPE")?
            .split(',')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| syntax(format!("bad dimension `{d}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let offset = field("OFFSET")?
            .parse::<u64>()
            .map_err(|_| syntax("bad OFFSET".into()))?;
        let file = field("FILE")?.to_owned();
        if names.insert(name.clone(), line).is_some() {
            return Err(ManifestError::Duplicate { name, line });
        }
        out.push(ManifestLine {
            line,
            name,
            shape,
            file,
            offset,
        });
    }
    if !seen_version && !out.is_empty() {
        return Err(ManifestError::Syntax {
            line: 1,
            message: "missing `VERSION 1` header".into(),
        });
    }
    Ok(out)
}

/// Reads a manifest and every tensor it lists. Only the declared byte ranges are read.
pub fn import_weights(manifest_path: impl AsRef<Path>) -> Result<WeightStore> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let lines = parse_manifest(&text)?;

    let mut files: HashMap<PathBuf, (File, u64)> = HashMap::new();
    let mut store = WeightStore {
        entries: BTreeMap::new(),
        source: Some(manifest_path.to_path_buf()),
    };
    for entry in lines {
        let path = base.join(&entry.file);
        if !files.contains_key(&path) {
            let file = File::open(&path).map_err(|_| ManifestError::MissingFile {
                name: entry.name.clone(),
                path: path.clone(),
            })?;
            let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
            files.insert(path.clone(), (file, len));
        }
        let (file, file_len) = files.get_mut(&path).expect("inserted above");
        let count: usize = entry.shape.iter().product();
        let bytes = count as u64 * 4;
        let end = entry.offset.saturating_add(bytes);
        if end > *file_len {
            return Err(ManifestError::Overrun {
                name: entry.name,
                offset: entry.offset,
                end,
                file_len: *file_len,
            }
            .into());
        }
        let mut buf = vec![0u8; bytes as usize];
        file.seek(SeekFrom::Start(entry.offset))
            .map_err(|e| Error::io(&path, e))?;
        file.read_exact(&mut buf).map_err(|e| Error::io(&path, e))?;
        let values = buf
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        log::debug!(
            "manifest line {}: loaded `{}` {:?}",
            entry.line,
            entry.name,
            entry.shape
        );
        store.entries.insert(
            entry.name,
            WeightEntry {
                shape: entry.shape,
                values,
            },
        );
    }
    Ok(store)
}

/// Writes `store` as `<dir>/<manifest_name>` plus one contiguous blob `<dir>/<blob_name>`.
/// Values are narrowed to `f32`.
pub fn export_weights(
    store: &WeightStore,
    dir: impl AsRef<Path>,
    manifest_name: &str,
    blob_name: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut manifest = String::from("VERSION 1\n");
    let mut blob = Vec::new();
    for (name, entry) in store.iter() {
        let shape: Vec<String> = entry.shape.iter().map(ToString::to_string).collect();
        manifest.push_str(&format!(
            "TENSOR {name} SHAPE {} DTYPE f32 FILE {blob_name} OFFSET {}\n",
            shape.join(","),
            blob.len()
        ));
        for &v in &entry.values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let blob_path = dir.join(blob_name);
    File::create(&blob_path)
        .and_then(|mut f| f.write_all(&blob))
        .map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(manifest_name);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) {
        fs::write(dir.join(name), bytes).unwrap();
    }

    fn f32_bytes(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn decodes_single_tensor() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "w.bin", &f32_bytes(&[1.0, 2.0, 3.0, 4.0]));
        write(
            dir.path(),
            "m.txt",
            b"VERSION 1\nTENSOR a SHAPE 2,2 DTYPE f32 FILE w.bin OFFSET 0\n",
        );
        let store = import_weights(dir.path().join("m.txt")).unwrap();
        let a = store.get("a").unwrap();
        assert_eq!(a.shape, vec![2, 2]);
        assert_eq!(a.values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_manifest_gives_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.txt", b"VERSION 1\n");
        assert!(import_weights(dir.path().join("m.txt")).unwrap().is_empty());
        write(dir.path(), "blank.txt", b"");
        assert!(import_weights(dir.path().join("blank.txt"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn overrun_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "w.bin", &f32_bytes(&[1.0, 2.0]));
        write(
            dir.path(),
            "m.txt",
            b"VERSION 1\nTENSOR late SHAPE 2 DTYPE f32 FILE w.bin OFFSET 4\n",
        );
        match import_weights(dir.path().join("m.txt")) {
            Err(Error::Manifest(ManifestError::Overrun { name, .. })) => assert_eq!(name, "late"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn distinct_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "w.bin", &f32_bytes(&[1.0; 8]));
        type Check = fn(&ManifestError) -> bool;
        let cases: [(&str, Check); 4] = [
            ("VERSION 1\nTENSOR a SHAPE 1 DTYPE f16 FILE w.bin OFFSET 0\n", |e| matches!(e, ManifestError::Dtype { .. })),
            (
                "VERSION 1\nTENSOR a SHAPE 1 DTYPE f32 FILE w.bin OFFSET 0\nTENSOR a SHAPE 1 DTYPE f32 FILE w.bin OFFSET 4\n",
                |e| matches!(e, ManifestError::Duplicate { line: 3, .. }),
            ),
            ("VERSION 1\nTENSOR a SHAPE 1 DTYPE f32 FILE nope.bin OFFSET 0\n", |e| matches!(e, ManifestError::MissingFile { .. })),
            ("VERSION 2\n", |e| matches!(e, ManifestError::Version { .. })),
        ];
        for (text, check) in cases {
            write(dir.path(), "m.txt", text.as_bytes());
            match import_weights(dir.path().join("m.txt")) {
                Err(Error::Manifest(e)) => assert!(check(&e), "{text}: {e}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn export_then_import() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = WeightStore::default();
        store.insert("b", vec![3], vec![0.5, -0.25, 8.0]).unwrap();
        store.insert("a", vec![1, 2], vec![1.0, 2.0]).unwrap();
        let path = export_weights(&store, dir.path(), "m.txt", "w.bin").unwrap();
        let back = import_weights(&path).unwrap();
        assert_eq!(back.get("a"), store.get("a"));
        assert_eq!(back.get("b"), store.get("b"));
    }
}
