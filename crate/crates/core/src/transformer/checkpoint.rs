//! Versioned plain-text parameter checkpoints.
//!
//! ```text
//! akit-set-transformer v1
//! config <TransformerConfig as JSON>
//! standardizer <Standardizer as JSON>
//! tensors <count>
//! <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! ```
//!
//! Values are written in shortest round-trip form, so save/load is exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{layout, SetTransformer, Standardizer, TransformerConfig, TransformerParams};
use crate::{Error, Result};

pub const HEADER: &str = "akit-set-transformer v1";

pub fn to_string(net: &SetTransformer) -> Result<String> {
    let mut s = String::new();
    let p = &net.params;
    writeln!(s, "{HEADER}").ok();
    writeln!(s, "config {}", serde_json::to_string(&net.config)?).ok();
    writeln!(
        s,
        "standardizer {}",
        serde_json::to_string(&net.standardizer)?
    )
    .ok();
    writeln!(s, "tensors {}", p.tensors.len()).ok();
    for (name, t) in p.names.iter().zip(&p.tensors) {
        writeln!(s, "{name} {} {}", t.nrows(), t.ncols()).ok();
        for r in 0..t.nrows() {
            let row: Vec<String> = t.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(s, "{}", row.join(" ")).ok();
        }
    }
    Ok(s)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_str(text: &str) -> Result<SetTransformer> {
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| bad(format!("truncated before {what}")))
    };
    let header = next("header")?;
    if header != HEADER {
        return Err(bad(format!("unsupported header `{header}`")));
    }
    let config: TransformerConfig = serde_json::from_str(
        next("config")?
            .strip_prefix("config ")
            .ok_or_else(|| bad("missing config line"))?,
    )?;
    config.validate()?;
    let standardizer: Standardizer = serde_json::from_str(
        next("standardizer")?
            .strip_prefix("standardizer ")
            .ok_or_else(|| bad("missing standardizer line"))?,
    )?;
    let count: usize = next("tensor count")?
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("missing tensor count"))?;

    let (_, expected) = layout(&config);
    if count != expected.names.len() {
        return Err(bad(format!(
            "{count} tensors, configuration needs {}",
            expected.names.len()
        )));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let head = next("tensor header")?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        let [name, r, c] = parts[..] else {
            return Err(bad(format!("bad tensor header `{head}`")));
        };
        let (r, c): (usize, usize) = (
            r.parse()
                .map_err(|_| bad(format!("bad rows in `{head}`")))?,
            c.parse()
                .map_err(|_| bad(format!("bad cols in `{head}`")))?,
        );
        let (er, ec, _) = expected.shapes[i];
        if name != expected.names[i] || (r, c) != (er, ec) {
            return Err(bad(format!(
                "tensor {i}: found {name} {r}x{c}, expected {} {er}x{ec}",
                expected.names[i]
            )));
        }
        let mut values = Vec::with_capacity(r * c);
        for _ in 0..r {
            let row = next("tensor values")?;
            for v in row.split_whitespace() {
                values.push(
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("bad value `{v}` in {name}")))?,
                );
            }
        }
        if values.len() != r * c {
            return Err(bad(format!("{name}: {} values for {r}x{c}", values.len())));
        }
        names.push(name.to_string());
        tensors.push(DMatrix::from_row_slice(r, c, &values));
    }
    Ok(SetTransformer {
        config,
        params: TransformerParams { names, tensors },
        standardizer,
    })
}

pub fn save(net: &SetTransformer, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SetTransformer> {
    from_str(&std::fs::read_to_string(path)?)
}
