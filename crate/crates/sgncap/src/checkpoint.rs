//! Binary checkpoints.
//!
//! ```text
//! SGNCKPT v1
//! config <n>
//! <n lines of key=value>
//! params <m>
//! <m lines of "name d1xd2">
//! <little-endian f64 payload, manifest order>
//! ```

use std::io::Write;
use std::path::Path;

use sgncap_core::model::{Model, ModelConfig};
use sgncap_core::params::ParamTree;
use sgncap_core::Tensor;

use crate::error::{io_err, parse_err, Error, Result};
use crate::kv::{self, KvConfig};

pub const MAGIC: &str = "SGNCKPT v1";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let pairs = model.config.to_pairs();
    let named = model.params.named();
    let mut header = format!("{MAGIC}\nconfig {}\n", pairs.len());
    header.push_str(&kv::render(&pairs));
    header.push_str(&format!("params {}\n", named.len()));
    for (name, t) in &named {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("{name} {}\n", dims.join("x")));
    }
    out.extend_from_slice(header.as_bytes());
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits off the next `\n`-terminated line.
fn next_line<'a>(bytes: &mut &'a [u8], name: &str, line: &mut usize) -> Result<&'a str> {
    *line += 1;
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(name, *line, "truncated header"))?;
    let (head, rest) = bytes.split_at(end);
    *bytes = &rest[1..];
    std::str::from_utf8(head).map_err(|_| parse_err(name, *line, "header is not UTF-8"))
}

fn counted(text: &str, key: &str, name: &str, line: usize) -> Result<usize> {
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| parse_err(name, line, format!("expected \"{key} <count>\", got {text:?}")))
}

pub fn from_bytes(mut bytes: &[u8], name: &str) -> Result<Model> {
    let mut line = 0;
    if next_line(&mut bytes, name, &mut line)? != MAGIC {
        return Err(parse_err(name, 1, format!("not a checkpoint (expected {MAGIC:?})")));
    }
    let n = counted(next_line(&mut bytes, name, &mut line)?, "config", name, line)?;
    let mut text = String::new();
    for _ in 0..n {
        text.push_str(next_line(&mut bytes, name, &mut line)?);
        text.push('\n');
    }
    let config: ModelConfig = kv::from_map(&kv::parse(&text, name)?)?;
    config.validate()?;
    let m = counted(next_line(&mut bytes, name, &mut line)?, "params", name, line)?;
    let mut manifest = Vec::with_capacity(m);
    for _ in 0..m {
        let l = next_line(&mut bytes, name, &mut line)?;
        let (pname, dims) = l
            .split_once(' ')
            .ok_or_else(|| parse_err(name, line, format!("bad manifest entry {l:?}")))?;
        let shape = dims
            .split('x')
            .map(str::parse)
            .collect::<Result<Vec<usize>, _>>()
            .map_err(|_| parse_err(name, line, format!("bad shape {dims:?}")))?;
        manifest.push((pname.to_string(), shape));
    }
    let expected: Vec<(String, Vec<usize>)> =
        config.param_shapes().named().into_iter().map(|(n, s)| (n, s.clone())).collect();
    if manifest != expected {
        return Err(Error::Config(format!(
            "{name}: parameter manifest does not match the stored configuration"
        )));
    }
    let total: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Config(format!(
            "{name}: payload has {} bytes, manifest needs {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut failure = None;
    let params = config.param_shapes().map("", &mut |_, shape| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        Tensor::new(shape.clone(), data).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            Tensor::zeros(shape)
        })
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(Model::from_params(config, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes, &path.display().to_string())
}
