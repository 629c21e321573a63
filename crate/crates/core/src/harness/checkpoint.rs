//! Checkpoint container: a text header followed by little-endian `f32` blobs.
//!
//! ```text
//! hea-checkpoint 1
//! [config]
//! key=value ...
//! [norm]
//! mean=...
//! std=...
//! [meta]
//! key=value ...
//! [tensors]
//! <name> <rows> <cols> <offset>
//! [end]
//! <blob bytes>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::preprocess::NormStats;
use crate::psv::N_NUMERIC;
use crate::seq::Model;

pub const MAGIC: &str = "hea-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
const END_MARKER: &str = "[end]\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub norm: NormStats,
    /// Training metadata such as epochs run and final losses.
    pub meta: Vec<(String, String)>,
    pub model: Model,
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_floats(s: &str) -> Result<[f64; N_NUMERIC]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.parse().map_err(|_| Error::Checkpoint(format!("bad number `{x}`"))))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Checkpoint(format!("expected {N_NUMERIC} statistics, got {}", v.len())))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\n[config]\n");
        header.push_str(&self.config.to_text());
        writeln!(header, "[norm]\nmean={}\nstd={}", join_floats(&self.norm.mean), join_floats(&self.norm.std)).unwrap();
        header.push_str("[meta]\n");
        for (k, v) in &self.meta {
            writeln!(header, "{k}={v}").unwrap();
        }
        header.push_str("[tensors]\n");
        let store = &self.model.store;
        let mut offset = 0usize;
        for id in store.ids() {
            let t = store.value(id);
            writeln!(header, "{} {} {} {}", store.name(id), t.rows(), t.cols(), offset).unwrap();
            offset += t.len();
        }
        header.push_str(END_MARKER);

        let mut bytes = header.into_bytes();
        bytes.reserve(offset * 4);
        for id in store.ids() {
            for &x in store.value(id).data() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = bytes
            .windows(END_MARKER.len())
            .position(|w| w == END_MARKER.as_bytes())
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let blob = &bytes[end + END_MARKER.len()..];

        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Checkpoint("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }

        let mut section = "";
        let mut config_text = String::new();
        let mut mean = None;
        let mut std = None;
        let mut meta = Vec::new();
        let mut tensors = Vec::new();
        for line in lines {
            if line.starts_with('[') {
                section = match line {
                    "[config]" | "[norm]" | "[meta]" | "[tensors]" => line,
                    other => return Err(Error::Checkpoint(format!("unknown section {other}"))),
                };
                continue;
            }
            match section {
                "[config]" => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                "[norm]" => match line.split_once('=') {
                    Some(("mean", v)) => mean = Some(parse_floats(v)?),
                    Some(("std", v)) => std = Some(parse_floats(v)?),
                    _ => return Err(Error::Checkpoint(format!("bad norm line `{line}`"))),
                },
                "[meta]" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Checkpoint(format!("bad meta line `{line}`")))?;
                    meta.push((k.to_string(), v.to_string()));
                }
                "[tensors]" => {
                    let f: Vec<&str> = line.split(' ').collect();
                    let [name, rows, cols, offset] = f.as_slice() else {
                        return Err(Error::Checkpoint(format!("bad tensor line `{line}`")));
                    };
                    let num = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| Error::Checkpoint(format!("bad tensor line `{line}`")))
                    };
                    tensors.push((name.to_string(), num(rows)?, num(cols)?, num(offset)?));
                }
                _ => return Err(Error::Checkpoint(format!("line outside a section: `{line}`"))),
            }
        }
        let config = ModelConfig::from_text(&config_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let norm = NormStats {
            mean: mean.ok_or_else(|| Error::Checkpoint("missing norm means".into()))?,
            std: std.ok_or_else(|| Error::Checkpoint("missing norm deviations".into()))?,
        };

        // Build the layout from the config, then fill every tensor by name.
        let mut model = Model::new(config.architecture(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if tensors.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                tensors.len(),
                model.store.len()
            )));
        }
        let total: usize = tensors.iter().map(|(_, r, c, _)| r * c).sum();
        if blob.len() != total * 4 {
            return Err(Error::Checkpoint(format!(
                "blob holds {} bytes, directory expects {}",
                blob.len(),
                total * 4
            )));
        }
        for (name, rows, cols, offset) in tensors {
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            let n = rows * cols;
            let bytes = blob
                .get(offset * 4..(offset + n) * 4)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` runs past the blob")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            model
                .store
                .set_value(id, Tensor::new(rows, cols, data)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(Checkpoint {
            config,
            norm,
            meta,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
