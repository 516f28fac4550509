//! Parameter checkpoints.
//!
//! Layout: the magic `OM2PNN1\n`, a little-endian `u64` byte length followed
//! by a UTF-8 `key=value` metadata record (one pair per line), then every
//! parameter array as raw little-endian `f64` in layer order (weight, bias,
//! norm gain, norm offset).

use std::io::{Read, Write};

use super::{Activation, MlpParams, MlpSpec};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OM2PNN1\n";

/// Metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub spec: MlpSpec,
    pub seed: u64,
    /// Free-form role tag, e.g. `policy`, `q1`, `q2_target`.
    pub role: String,
}

fn meta_text(meta: &CheckpointMeta) -> String {
    let hidden: Vec<String> = meta
        .spec
        .hidden_dims
        .iter()
        .map(|h| h.to_string())
        .collect();
    format!(
        "input_dim={}\nhidden_dims={}\noutput_dim={}\nactivation={}\npost_activation_norm={}\nseed={}\nrole={}\n",
        meta.spec.input_dim,
        hidden.join(","),
        meta.spec.output_dim,
        meta.spec.activation.name(),
        meta.spec.post_activation_norm,
        meta.seed,
        meta.role
    )
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &MlpParams,
    seed: u64,
    role: &str,
) -> Result<()> {
    let meta = meta_text(&CheckpointMeta {
        spec: params.spec().clone(),
        seed,
        role: role.to_string(),
    });
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    for t in params.tensors() {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn encode_checkpoint(params: &MlpParams, seed: u64, role: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, seed, role).expect("writing to memory");
    buf
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn parse_meta(text: &str, base: usize) -> Result<CheckpointMeta> {
    let mut input_dim = None;
    let mut hidden = None;
    let mut output_dim = None;
    let mut norm = None;
    let mut seed = None;
    let mut role = None;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(base, format!("metadata line without '=': {line}")))?;
        let bad = |_: ()| format_err(base, format!("bad metadata value for {k}: {v}"));
        match k {
            "input_dim" => input_dim = Some(v.parse::<usize>().map_err(|_| bad(()))?),
            "output_dim" => output_dim = Some(v.parse::<usize>().map_err(|_| bad(()))?),
            "hidden_dims" => {
                hidden = Some(
                    v.split(',')
                        .map(|h| h.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(()))?,
                )
            }
            "activation" if v == "gelu" => {}
            "activation" => return Err(format_err(base, format!("unknown activation {v}"))),
            "post_activation_norm" => norm = Some(v.parse::<bool>().map_err(|_| bad(()))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad(()))?),
            "role" => role = Some(v.to_string()),
            _ => return Err(format_err(base, format!("unknown metadata key {k}"))),
        }
    }
    let missing = |k: &str| format_err(base, format!("metadata missing {k}"));
    let spec = MlpSpec {
        input_dim: input_dim.ok_or_else(|| missing("input_dim"))?,
        hidden_dims: hidden.ok_or_else(|| missing("hidden_dims"))?,
        output_dim: output_dim.ok_or_else(|| missing("output_dim"))?,
        activation: Activation::Gelu,
        post_activation_norm: norm.ok_or_else(|| missing("post_activation_norm"))?,
    };
    spec.validate()
        .map_err(|e| format_err(base, format!("invalid spec: {e}")))?;
    Ok(CheckpointMeta {
        spec,
        seed: seed.ok_or_else(|| missing("seed"))?,
        role: role.unwrap_or_default(),
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlpParams, CheckpointMeta)> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad magic, expected OM2PNN1"));
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .ok_or_else(|| format_err(8, "truncated metadata length"))?
        .try_into()
        .expect("8 bytes");
    let meta_len = u64::from_le_bytes(len_bytes) as usize;
    let meta_end = 16usize
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err(16, "truncated metadata record"))?;
    let text = std::str::from_utf8(&bytes[16..meta_end])
        .map_err(|_| format_err(16, "metadata is not UTF-8"))?;
    let meta = parse_meta(text, 16)?;
    let mut params = MlpParams::zeros(&meta.spec)?;
    let mut off = meta_end;
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            let chunk = bytes
                .get(off..off + 8)
                .ok_or_else(|| format_err(off, "truncated parameter data"))?;
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(format_err(off, "non-finite parameter"));
            }
            *x = v;
            off += 8;
        }
    }
    if off != bytes.len() {
        return Err(format_err(off, "trailing bytes after parameters"));
    }
    Ok((params, meta))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(MlpParams, CheckpointMeta)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
