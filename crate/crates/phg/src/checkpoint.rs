//! `PHGCKPT v1`: a text manifest followed by raw little-endian `f64` data.
//!
//! ```text
//! PHGCKPT v1
//! phase 2
//! step 340
//! seed 7
//! tensors 31
//! user.embedding xi 412 16
//! ...
//! data
//! <f64 LE bytes of every tensor, manifest order, row-major>
//! ```

use std::fs;
use std::path::Path;

use phg_core::numeric::{Group, ParamEntry, Tensor};
use phg_core::training::TrainState;

use crate::error::{CliError, Result};

const MAGIC: &str = "PHGCKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub params: Vec<ParamEntry>,
}

fn group_from_str(s: &str) -> Option<Group> {
    Group::ALL.into_iter().find(|g| g.as_str() == s)
}

pub fn encode(state: &TrainState, params: &[ParamEntry]) -> Vec<u8> {
    let mut head = format!(
        "{MAGIC}\nphase {}\nstep {}\nseed {}\ntensors {}\n",
        state.phase,
        state.step,
        state.seed,
        params.len()
    );
    for p in params {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        head.push_str(&format!("{} {} {}\n", p.name, p.group.as_str(), dims.join(" ")));
    }
    head.push_str("data\n");
    let mut out = head.into_bytes();
    for p in params {
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| CliError::format(path, m);
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated manifest".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not UTF-8".into()))
    };
    if next_line()? != MAGIC {
        return Err(bad(format!("missing {MAGIC:?} header")));
    }
    fn field<T: std::str::FromStr>(line: &str, key: &str) -> Option<T> {
        line.strip_prefix(key)?.strip_prefix(' ')?.parse().ok()
    }
    let phase: u8 = field(next_line()?, "phase").ok_or_else(|| bad("bad phase line".into()))?;
    let step: u64 = field(next_line()?, "step").ok_or_else(|| bad("bad step line".into()))?;
    let seed: u64 = field(next_line()?, "seed").ok_or_else(|| bad("bad seed line".into()))?;
    let count: usize = field(next_line()?, "tensors").ok_or_else(|| bad("bad tensors line".into()))?;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let mut parts = line.split(' ');
        let name = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad(format!("bad tensor line {line:?}")))?;
        let group = parts
            .next()
            .and_then(group_from_str)
            .ok_or_else(|| bad(format!("bad group in {line:?}")))?;
        let shape: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| bad(format!("bad dimension in {line:?}"))))
            .collect::<Result<_>>()?;
        manifest.push((name.to_string(), group, shape));
    }
    if next_line()? != "data" {
        return Err(bad("missing data marker".into()));
    }
    let mut params = Vec::with_capacity(count);
    for (name, group, shape) in manifest {
        let n: usize = shape.iter().product();
        let end = pos + 8 * n;
        if end > bytes.len() {
            return Err(bad(format!("data ends inside tensor {name}")));
        }
        let data = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos = end;
        let value = Tensor::new(shape, data)?;
        params.push(ParamEntry { name, group, value });
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint {
        state: TrainState { phase, step, seed },
        params,
    })
}

pub fn save(path: &Path, state: &TrainState, params: &[ParamEntry]) -> Result<()> {
    fs::write(path, encode(state, params)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}
