//! Checkpoint directory: one CTEN file per parameter plus `manifest.txt`.
//!
//! The manifest holds the experiment config in its `key=value` form, the
//! network geometry, and one `param=<name> <file> <d0>x<d1>...` line per
//! parameter, in model order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::net::{NetShape, Param, TinyConvNet};
use crate::config::ExperimentConfig;
use crate::data::{read_cten, write_cten};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

const EXTRA_KEYS: [&str; 5] = ["in_channels", "side", "k", "best_epoch", "param"];

pub fn save_checkpoint(dir: impl AsRef<Path>, model: &TinyConvNet, config: &ExperimentConfig, best_epoch: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if config.head != *model.head() {
        return Err(Error::invalid("config head differs from the model's head"));
    }
    let shape = model.shape();
    let mut manifest = String::from("# cauzen checkpoint\n");
    manifest.push_str(&config.to_text());
    let _ = writeln!(manifest, "in_channels={}", shape.in_channels);
    let _ = writeln!(manifest, "side={}", shape.side);
    let _ = writeln!(manifest, "k={}", shape.k);
    let _ = writeln!(manifest, "best_epoch={best_epoch}");
    for p in model.params() {
        let file = format!("{}.cten", p.name);
        write_cten(&p.tensor, dir.join(&file))?;
        let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "param={} {} {}", p.name, file, dims.join("x"));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TinyConvNet,
    pub config: ExperimentConfig,
    pub best_epoch: usize,
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config = ExperimentConfig::parse_with(&text, |k| EXTRA_KEYS.contains(&k))?;

    let bad = |line: usize, detail: String| Error::Config { line, detail };
    let mut shape = NetShape::default();
    let mut best_epoch = 0;
    let mut params = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| v.parse::<usize>().map_err(|e| bad(n + 1, format!("{key}: {e}")));
        match key {
            "in_channels" => shape.in_channels = num(value)?,
            "side" => shape.side = num(value)?,
            "k" => shape.k = num(value)?,
            "best_epoch" => best_epoch = num(value)?,
            "param" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [name, file, dims] = parts[..] else {
                    return Err(bad(n + 1, format!("param line needs name, file, dims: {value:?}")));
                };
                let dims: Vec<usize> = if dims.is_empty() {
                    Vec::new()
                } else {
                    dims.split('x').map(num).collect::<Result<_>>()?
                };
                let tensor = read_cten(dir.join(file))?;
                if tensor.shape() != dims {
                    return Err(bad(
                        n + 1,
                        format!("{file} has shape {:?}, manifest says {dims:?}", tensor.shape()),
                    ));
                }
                params.push(Param {
                    name: name.to_string(),
                    tensor,
                });
            }
            _ => {}
        }
    }
    let model = TinyConvNet::from_params(shape, config.head, config.seed, params)?;
    Ok(Checkpoint {
        model,
        config,
        best_epoch,
    })
}
