//! Plain-text network checkpoints.
//!
//! ```text
//! ctrlpath-mlp 1
//! dims 5 10 10 21
//! params 401
//! 0.123
//! ...
//! ```
//!
//! One parameter per line in [`Mlp::params`] order, written with the
//! shortest decimal form that parses back to the identical `f64`.

use std::io::Write;

use crate::error::{validation, Error, Result};
use crate::nn::Mlp;

pub const CHECKPOINT_MAGIC: &str = "ctrlpath-mlp 1";

pub fn write_mlp<W: Write>(net: &Mlp, out: &mut W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    let dims: Vec<String> = net.layer_dims().iter().map(usize::to_string).collect();
    writeln!(out, "dims {}", dims.join(" "))?;
    let params = net.params();
    writeln!(out, "params {}", params.len())?;
    for p in params {
        writeln!(out, "{p}")?;
    }
    Ok(())
}

/// Reads one network from `lines`, consuming exactly its lines.
pub fn read_mlp<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<Mlp> {
    let mut next = |what: &str| -> Result<&'a str> {
        lines.next().map(str::trim).ok_or_else(|| validation(format!("checkpoint ended while reading {what}")))
    };
    let magic = next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(validation(format!("unsupported checkpoint header {magic:?}")));
    }
    let dims: Vec<usize> = next("dims")?
        .strip_prefix("dims ")
        .ok_or_else(|| validation("missing dims line"))?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| validation(format!("bad layer dim {s:?}: {e}"))))
        .collect::<Result<_>>()?;
    let count: usize = next("params")?
        .strip_prefix("params ")
        .ok_or_else(|| validation("missing params line"))?
        .parse()
        .map_err(|e| validation(format!("bad parameter count: {e}")))?;
    let mut net = Mlp::zeros(&dims)?;
    if count != net.n_params() {
        return Err(validation(format!("dims {dims:?} need {} parameters, header says {count}", net.n_params())));
    }
    let params = (0..count)
        .map(|i| {
            let s = next("parameters")?;
            s.parse::<f64>().map_err(|e| validation(format!("parameter {i}: {e}"))).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Validation(format!("parameter {i} is not finite")))
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    net.set_params(&params)?;
    Ok(net)
}
