// Record file layout (all integers and floats little-endian):
//
//   magic        8 bytes  "SCANREC\0"
//   version      u32
//   count        u64
//   count × record:
//     len        u32      payload byte length
//     pair_id    u64
//     class      u32
//     n_tokens   u32, then n_tokens × u32
//     m          u32      sentence count
//     d_s        u32, then m·d_s × f32 (row-major)
//     d_img      u32, then d_img × f32
//
// The manifest is a JSON sidecar next to the record file with the same stem.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetManifest, FoodPairRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_MAGIC: &[u8; 8] = b"SCANREC\0";
pub const FORMAT_VERSION: u32 = 1;

/// Manifest sidecar path for a record file (`x.bin` → `x.json`).
pub fn manifest_path(records: &Path) -> PathBuf {
    records.with_extension("json")
}

fn encode_record(r: &FoodPairRecord, out: &mut Vec<u8>) {
    let mut p = Vec::new();
    p.extend_from_slice(&r.pair_id.to_le_bytes());
    p.extend_from_slice(&(r.class_label as u32).to_le_bytes());
    p.extend_from_slice(&(r.ingredients.len() as u32).to_le_bytes());
    for t in &r.ingredients {
        p.extend_from_slice(&t.to_le_bytes());
    }
    let (m, ds) = r.instructions.dims2();
    p.extend_from_slice(&(m as u32).to_le_bytes());
    p.extend_from_slice(&(ds as u32).to_le_bytes());
    for &v in r.instructions.data() {
        p.extend_from_slice(&(v as f32).to_le_bytes());
    }
    p.extend_from_slice(&(r.image_features.len() as u32).to_le_bytes());
    for &v in &r.image_features {
        p.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    out.extend_from_slice(&p);
}

/// Writes `records` to `path` and the manifest to its `.json` sidecar.
/// Feature values are narrowed to f32.
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(RECORD_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    for r in &dataset.records {
        encode_record(r, &mut bytes);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;

    let mut manifest = dataset.manifest.clone();
    manifest.format_version = FORMAT_VERSION;
    manifest.record_count = dataset.records.len();
    manifest.records_file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = manifest_path(path);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                detail: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn error(&self, offset: usize, detail: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            detail,
        }
    }
}

fn decode_record(cur: &mut Cursor<'_>, index: usize) -> Result<FoodPairRecord> {
    let start = cur.pos;
    let len = cur.u32("record length")? as usize;
    let body_start = cur.pos;
    let pair_id = cur.u64("pair id")?;
    let class_label = cur.u32("class label")? as usize;
    let n_tokens = cur.u32("token count")? as usize;
    let raw = cur.take(n_tokens.saturating_mul(4), "token ids")?;
    let ingredients = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = cur.u32("sentence count")? as usize;
    let ds = cur.u32("sentence dim")? as usize;
    let shape_at = cur.pos;
    let sentences = cur.f32s(m.saturating_mul(ds), "sentence vectors")?;
    let d_img = cur.u32("image dim")? as usize;
    let image_features = cur.f32s(d_img, "image features")?;
    if cur.pos - body_start != len {
        return Err(cur.error(
            start,
            format!(
                "record {index}: declared length {len} but payload spans {}",
                cur.pos - body_start
            ),
        ));
    }
    let instructions = Tensor::matrix(m, ds, sentences)
        .map_err(|_| cur.error(shape_at, format!("record {index}: empty instruction block {m}x{ds}")))?;
    Ok(FoodPairRecord {
        pair_id,
        class_label,
        ingredients,
        instructions,
        image_features,
    })
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        detail: format!("manifest: {e}"),
    })
}

/// Loads a dataset given either its record file or its manifest, then
/// validates every record.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (records_path, mpath) = if path.extension().is_some_and(|e| e == "json") {
        let manifest = read_manifest(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        (dir.join(&manifest.records_file), path.to_path_buf())
    } else {
        (path.to_path_buf(), manifest_path(path))
    };
    let manifest = read_manifest(&mpath)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            path: mpath,
            found: manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let bytes = fs::read(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut cur = Cursor {
        path: &records_path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8, "magic")? != RECORD_MAGIC {
        return Err(cur.error(0, "bad magic; not a record file".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: records_path,
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let count = cur.u64("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for index in 0..count {
        records.push(decode_record(&mut cur, index)?);
    }
    if cur.pos != bytes.len() {
        return Err(cur.error(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let dataset = Dataset { manifest, records };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_generate, SyntheticConfig};

    fn tiny() -> Dataset {
        synthetic_generate(&SyntheticConfig {
            num_classes: 3,
            pairs_per_class: 2,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("all.bin");
        let ds = tiny();
        save_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.records, ds.records);
        let via_manifest = load_dataset(&manifest_path(&path)).unwrap();
        assert_eq!(via_manifest.records, ds.records);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("all.bin");
        save_dataset(&path, &tiny()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 20),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_class_names_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("all.bin");
        let mut ds = tiny();
        ds.records[1].class_label = 99;
        save_dataset(&path, &ds).unwrap();
        match load_dataset(&path) {
            Err(Error::Validation { pair_id, .. }) => assert_eq!(pair_id, ds.records[1].pair_id),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_version_mismatch_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.bin");
        assert!(matches!(load_dataset(&path), Err(Error::Io { .. })));

        let path = dir.path().join("all.bin");
        save_dataset(&path, &tiny()).unwrap();
        let mpath = manifest_path(&path);
        let text = fs::read_to_string(&mpath).unwrap();
        fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Version { found: 7, .. })));
    }
}
