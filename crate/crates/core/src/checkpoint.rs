// Checkpoint layout (little-endian):
//
//   magic     8 bytes  "SCANCKPT"
//   version   u32
//   sections, each:
//     tag     4 bytes  HEAD | PARM | ADAM | BEST
//     len     u64      payload bytes
//     payload
//     crc32   u32      over the payload
//
// HEAD is JSON (config, parameter names and shapes, progress counters,
// shuffle seed, history). PARM and BEST hold every parameter as f64 in
// HEAD's order. ADAM holds all first moments, then all second moments
// (f64), then one u64 step count per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoders::{ModelParams, ParamSpec};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::retrieval::SubsetMetrics;
use crate::tensor::Tensor;
use crate::trainer::{BestModel, EpochRecord, StepRecord, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    params: Vec<ParamSpec>,
    epoch: usize,
    batch_cursor: usize,
    global_batch: u64,
    /// Epoch orders are derived from this seed; no other RNG state persists.
    shuffle_seed: u64,
    layer_norm_eps: f64,
    history: Vec<EpochRecord>,
    pending: Vec<StepRecord>,
    best: Option<BestHeader>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BestHeader {
    epoch: usize,
    val: SubsetMetrics,
}

fn put_f64s<'a>(out: &mut Vec<u8>, ts: impl IntoIterator<Item = &'a Tensor>) {
    for t in ts {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

pub fn checkpoint_bytes(config: &RunConfig, state: &TrainState) -> Vec<u8> {
    let header = Header {
        config: config.clone(),
        params: state.params.specs().to_vec(),
        epoch: state.epoch,
        batch_cursor: state.batch_cursor,
        global_batch: state.global_batch,
        shuffle_seed: config.train.seed,
        layer_norm_eps: config.model.layer_norm_eps,
        history: state.history.clone(),
        pending: state.pending.clone(),
        best: state.best.as_ref().map(|b| BestHeader {
            epoch: b.epoch,
            val: b.val,
        }),
    };
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(&header).expect("header serializes");
    section(&mut out, b"HEAD", &json);

    let mut p = Vec::new();
    put_f64s(&mut p, state.params.tensors());
    section(&mut out, b"PARM", &p);

    let mut a = Vec::new();
    put_f64s(&mut a, &state.adam.m);
    put_f64s(&mut a, &state.adam.v);
    for t in &state.adam.t {
        a.extend_from_slice(&t.to_le_bytes());
    }
    section(&mut out, b"ADAM", &a);

    if let Some(best) = &state.best {
        let mut b = Vec::new();
        put_f64s(&mut b, &best.params);
        section(&mut out, b"BEST", &b);
    }
    out
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint_bytes(config, state)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn section(&mut self) -> Result<([u8; 4], &'a [u8])> {
        let tag: [u8; 4] = self.take(4)?.try_into().unwrap();
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| self.fail("section length overflows"))?;
        let start = self.pos;
        let payload = self.take(len)?;
        let crc = u32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: start as u64,
                detail: format!("CRC mismatch in section {}", String::from_utf8_lossy(&tag)),
            });
        }
        Ok((tag, payload))
    }
}

fn read_tensors(payload: &[u8], specs: &[ParamSpec], path: &Path, what: &str) -> Result<(Vec<Tensor>, usize)> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let end = pos + n * 8;
        if end > payload.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 0,
                detail: format!("{what} section too short for {}", spec.name),
            });
        }
        let data = payload[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Tensor::new(spec.shape.clone(), data)?);
        pos = end;
    }
    Ok((out, pos))
}

/// Loads a checkpoint, verifying magic, version and every section CRC.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, TrainState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            detail: "bad magic; not a checkpoint".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let (tag, head) = r.section()?;
    if &tag != b"HEAD" {
        return Err(r.fail("first section must be HEAD"));
    }
    let header: Header = serde_json::from_slice(head).map_err(|e| r.fail(format!("header: {e}")))?;

    let (tag, parm) = r.section()?;
    if &tag != b"PARM" {
        return Err(r.fail("expected PARM section"));
    }
    let (tensors, used) = read_tensors(parm, &header.params, path, "PARM")?;
    if used != parm.len() {
        return Err(r.fail("PARM section has trailing bytes"));
    }
    let params = ModelParams::from_tensors(&header.config.model, tensors)?;
    if params.specs() != header.params.as_slice() {
        return Err(r.fail("parameter layout does not match the stored config"));
    }

    let (tag, adam) = r.section()?;
    if &tag != b"ADAM" {
        return Err(r.fail("expected ADAM section"));
    }
    let (m, a) = read_tensors(adam, &header.params, path, "ADAM")?;
    let (v, b) = read_tensors(&adam[a..], &header.params, path, "ADAM")?;
    let rest = &adam[a + b..];
    if rest.len() != 8 * header.params.len() {
        return Err(r.fail("ADAM step counters have the wrong length"));
    }
    let t = rest
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let best = match header.best {
        Some(bh) => {
            let (tag, payload) = r.section()?;
            if &tag != b"BEST" {
                return Err(r.fail("expected BEST section"));
            }
            let (params, _) = read_tensors(payload, &header.params, path, "BEST")?;
            Some(BestModel {
                epoch: bh.epoch,
                params,
                val: bh.val,
            })
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after last section"));
    }
    let state = TrainState {
        params,
        adam: AdamState { m, v, t },
        epoch: header.epoch,
        batch_cursor: header.batch_cursor,
        global_batch: header.global_batch,
        history: header.history,
        pending: header.pending,
        best,
    };
    Ok((header.config, state))
}
