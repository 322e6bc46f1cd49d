//! Checkpoint I/O.
//!
//! Little-endian binary layout:
//!
//! ```text
//! "IDQN"                        4-byte magic
//! u32 version                   currently 1
//! u32 blob_len, blob bytes      UTF-8 `key = value` lines: the full run
//!                               configuration plus `state.*` entries
//!                               (global step, counters, RNG states)
//! u32 record_count
//! per record:
//!   u32 name_len, name bytes
//!   u32 ndim, ndim x u64 dims
//!   numel x f64 data
//! ```
//!
//! Records appear in a fixed order: online parameters (canonical model
//! order), `store.values`, `target.`-prefixed target parameters, then
//! `adam.m.` / `adam.v.` moment pairs. Loading rebuilds the model, target,
//! and optimizer state; inference from a loaded checkpoint is bit-identical
//! to the saved trainer's.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Parameter;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::IDQNModel;
use crate::tensor::Tensor;
use crate::trainer::Trainer;

pub const MAGIC: [u8; 4] = *b"IDQN";
pub const VERSION: u32 = 1;

/// Everything a checkpoint holds after loading.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub obs_shape: (usize, usize, usize),
    pub root_seed: u64,
    pub global_step: u64,
    pub adam_t: u64,
    pub model: IDQNModel,
    pub target: IDQNModel,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    /// All `state.*` blob entries, for tooling and forensics.
    pub state: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

fn unhex32(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::checkpoint("malformed RNG seed in checkpoint"));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16).unwrap() as u8;
        let lo = (chunk[1] as char).to_digit(16).unwrap() as u8;
        out[i] = hi << 4 | lo;
    }
    Ok(out)
}

pub fn save(path: &Path, trainer: &Trainer, config: &RunConfig) -> Result<()> {
    let model = trainer.model();
    let target = trainer.target();
    let optimizer = trainer.optimizer();
    let (k, h, w) = model.config().obs_shape;
    let (episode_index, eval_episode_index, train_updates) = trainer.counters();
    let [(replay_seed, replay_pos), (eps_seed, eps_pos)] = trainer.rng_states();

    let mut blob = config.to_text();
    let mut push = |key: &str, value: String| {
        blob.push_str(key);
        blob.push_str(" = ");
        blob.push_str(&value);
        blob.push('\n');
    };
    push("state.obs_k", k.to_string());
    push("state.obs_h", h.to_string());
    push("state.obs_w", w.to_string());
    push("state.root_seed", trainer.root_seed().to_string());
    push("state.global_step", trainer.global_step().to_string());
    push("state.episode_index", episode_index.to_string());
    push("state.eval_episode_index", eval_episode_index.to_string());
    push("state.train_updates", train_updates.to_string());
    push("state.adam_t", optimizer.step_count().to_string());
    push("state.replay_rng_seed", hex(&replay_seed));
    push("state.replay_rng_pos", replay_pos.to_string());
    push("state.eps_rng_seed", hex(&eps_seed));
    push("state.eps_rng_pos", eps_pos.to_string());

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let blob = blob.into_bytes();
    out.write_all(&(blob.len() as u32).to_le_bytes())?;
    out.write_all(&blob)?;

    let (m, v) = optimizer.moments();
    let n_records = model.params().len() + 1 + target.params().len() + m.len() + v.len();
    out.write_all(&(n_records as u32).to_le_bytes())?;

    let mut write_record = |name: &str, shape: &[usize], data: &[f64]| -> Result<()> {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in data {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };

    for p in model.params() {
        write_record(&p.name, p.tensor.shape(), p.tensor.data())?;
    }
    write_record("store.values", &[model.values().len()], model.values())?;
    for p in target.params() {
        write_record(
            &format!("target.{}", p.name),
            p.tensor.shape(),
            p.tensor.data(),
        )?;
    }
    for (p, mi) in model.params().iter().zip(m) {
        write_record(&format!("adam.m.{}", p.name), &[mi.len()], mi)?;
    }
    for (p, vi) in model.params().iter().zip(v) {
        write_record(&format!("adam.v.{}", p.name), &[vi.len()], vi)?;
    }
    Ok(())
}

/// Byte reader that reports *what* was being read when the file ran short.
struct Rd<R: Read> {
    inner: R,
}

impl<R: Read> Rd<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::checkpoint(format!("file truncated while reading {}", what))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn state_num<T: std::str::FromStr>(state: &BTreeMap<String, String>, key: &str) -> Result<T> {
    state
        .get(key)
        .ok_or_else(|| Error::checkpoint(format!("missing {} in checkpoint", key)))?
        .parse()
        .map_err(|_| Error::checkpoint(format!("malformed {} in checkpoint", key)))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut rd = Rd {
        inner: BufReader::new(File::open(path)?),
    };
    let magic = rd.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::checkpoint(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }

    let blob_len = rd.u32("config length")? as usize;
    let blob = String::from_utf8(rd.bytes(blob_len, "config blob")?)
        .map_err(|_| Error::checkpoint("config blob is not UTF-8"))?;
    let mut config = RunConfig::default();
    let mut state = BTreeMap::new();
    for (lineno, raw) in blob.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::checkpoint(format!("config blob line {} is malformed", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(skey) = key.strip_prefix("state.") {
            state.insert(skey.to_string(), value.to_string());
        } else {
            config.apply(key, value)?;
        }
    }

    let obs_shape = (
        state_num::<usize>(&state, "obs_k")?,
        state_num::<usize>(&state, "obs_h")?,
        state_num::<usize>(&state, "obs_w")?,
    );
    let model_config = config.model_config(obs_shape);

    let n_records = rd.u32("record count")? as usize;
    let mut records: Vec<(String, Tensor)> = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let what = format!("record {}", i);
        let name_len = rd.u32(&what)? as usize;
        let name = String::from_utf8(rd.bytes(name_len, &what)?)
            .map_err(|_| Error::checkpoint(format!("record {} name is not UTF-8", i)))?;
        let ndim = rd.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(rd.u64(&name)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = rd.f64s(numel, &name)?;
        records.push((name, Tensor::new(shape, data)?));
    }

    let mut it = records.into_iter().peekable();
    let mut params = Vec::new();
    while let Some((name, _)) = it.peek() {
        if name == "store.values" {
            break;
        }
        let (name, tensor) = it.next().unwrap();
        params.push(Parameter::new(name, tensor));
    }
    let values = match it.next() {
        Some((name, t)) if name == "store.values" => t.data().to_vec(),
        _ => return Err(Error::checkpoint("missing store.values record")),
    };

    let mut target_params = Vec::new();
    while let Some((name, _)) = it.peek() {
        match name.strip_prefix("target.") {
            Some(stripped) => {
                let stripped = stripped.to_string();
                let (_, tensor) = it.next().unwrap();
                target_params.push(Parameter::new(stripped, tensor));
            }
            None => break,
        }
    }

    let n_params = params.len();
    let mut adam_m = Vec::with_capacity(n_params);
    let mut adam_v = Vec::with_capacity(n_params);
    for (name, tensor) in it {
        if name.starts_with("adam.m.") {
            adam_m.push(tensor.data().to_vec());
        } else if name.starts_with("adam.v.") {
            adam_v.push(tensor.data().to_vec());
        } else {
            return Err(Error::checkpoint(format!("unexpected record {}", name)));
        }
    }
    if adam_m.len() != n_params || adam_v.len() != n_params {
        return Err(Error::checkpoint(
            "optimizer moment records do not cover every parameter",
        ));
    }

    let model = IDQNModel::from_parts(model_config.clone(), params, values.clone())?;
    let target = IDQNModel::from_parts(model_config, target_params, values)?;

    Ok(Checkpoint {
        root_seed: state_num(&state, "root_seed")?,
        global_step: state_num(&state, "global_step")?,
        adam_t: state_num(&state, "adam_t")?,
        config,
        obs_shape,
        model,
        target,
        adam_m,
        adam_v,
        state,
    })
}

impl Checkpoint {
    /// Replay-sampler RNG state recorded at save time.
    pub fn replay_rng(&self) -> Result<([u8; 32], u128)> {
        Ok((
            unhex32(
                self.state
                    .get("replay_rng_seed")
                    .ok_or_else(|| Error::checkpoint("missing replay_rng_seed"))?,
            )?,
            state_num(&self.state, "replay_rng_pos")?,
        ))
    }
}
