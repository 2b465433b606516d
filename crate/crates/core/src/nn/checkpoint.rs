//! Text checkpoint format.
//!
//! ```text
//! looprl-checkpoint v1
//! mlp input=7 hidden=32,32 output=2 activation=tanh params=1378
//! meta <key> <value>          (zero or more)
//! data
//! <one f64 per line, in ParamVector order>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

use super::{MlpSpec, ParamVector};

const MAGIC: &str = "looprl-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> std::io::Result<()> {
    let spec = &ckpt.spec;
    let hidden: Vec<String> = spec.hidden_dims().iter().map(|h| h.to_string()).collect();
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "mlp input={} hidden={} output={} activation={} params={}",
        spec.input_dim(),
        hidden.join(","),
        spec.output_dim(),
        spec.activation().name(),
        ckpt.params.len()
    )?;
    for (k, v) in &ckpt.meta {
        writeln!(w, "meta {k} {v}")?;
    }
    writeln!(w, "data")?;
    for v in ckpt.params.as_slice() {
        writeln!(w, "{v}")?;
    }
    w.flush()
}

pub fn read_checkpoint<R: BufRead>(r: R, source: &str) -> Result<Checkpoint> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(line))) => Ok((i + 1, line)),
            Some((i, Err(e))) => Err(Error::parse(format!("{source}:{}", i + 1), e.to_string())),
            None => Err(Error::parse(
                source,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    };

    let (_, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(Error::parse(
            format!("{source}:1"),
            format!("expected `{MAGIC}`"),
        ));
    }
    let (lineno, mlp_line) = next("mlp line")?;
    let spec =
        parse_mlp_line(&mlp_line).map_err(|m| Error::parse(format!("{source}:{lineno}"), m))?;

    let mut meta = Vec::new();
    loop {
        let (lineno, line) = next("`data`")?;
        let line = line.trim();
        if line == "data" {
            break;
        }
        let rest = line.strip_prefix("meta ").ok_or_else(|| {
            Error::parse(format!("{source}:{lineno}"), "expected `meta` or `data`")
        })?;
        let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
        meta.push((k.to_string(), v.to_string()));
    }

    let n = spec.param_count();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let (lineno, line) = next("parameter value")?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| Error::parse(format!("{source}:{lineno}"), format!("bad float: {e}")))?;
        values.push(v);
    }
    Ok(Checkpoint {
        spec,
        params: ParamVector(values),
        meta,
    })
}

fn parse_mlp_line(line: &str) -> std::result::Result<MlpSpec, String> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("mlp") {
        return Err("expected `mlp` line".into());
    }
    let (mut input, mut hidden, mut output, mut count) = (None, None, None, None);
    for field in fields {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed field `{field}`"))?;
        let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{k}: {e}"));
        match k {
            "input" => input = Some(num(v)?),
            "output" => output = Some(num(v)?),
            "params" => count = Some(num(v)?),
            "hidden" if v.is_empty() => hidden = Some(vec![]),
            "hidden" => {
                hidden = Some(
                    v.split(',')
                        .map(num)
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
            "activation" if v == "tanh" => {}
            "activation" => return Err(format!("unsupported activation `{v}`")),
            _ => return Err(format!("unknown field `{k}`")),
        }
    }
    let spec = MlpSpec::new(
        input.ok_or("missing input")?,
        hidden.ok_or("missing hidden")?,
        output.ok_or("missing output")?,
    )
    .map_err(|e| e.to_string())?;
    if let Some(c) = count {
        if c != spec.param_count() {
            return Err(format!(
                "params={c} disagrees with architecture ({})",
                spec.param_count()
            ));
        }
    }
    Ok(spec)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), ckpt).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};
    use rand::Rng;

    #[test]
    fn round_trip_is_lossless() {
        let spec = MlpSpec::new(7, vec![5, 3], 2).unwrap();
        let mut rng = StreamKey::new(3, Purpose::Check, 0).rng(0);
        let mut params = spec.init_params(&mut rng);
        params.0[0] = 1e-300;
        params.0[1] = -std::f64::consts::PI;
        params.0[2] = rng.random::<f64>() * 1e17;
        let ckpt = Checkpoint {
            spec,
            params,
            meta: vec![
                ("steps".into(), "20".into()),
                ("note".into(), "two words".into()),
            ],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(&buf[..], "mem").unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.meta("note"), Some("two words"));
    }

    #[test]
    fn no_hidden_layers() {
        let ckpt = Checkpoint {
            spec: MlpSpec::new(2, vec![], 2).unwrap(),
            params: ParamVector(vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5]),
            meta: vec![],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&buf[..], "mem").unwrap(), ckpt);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let text = "looprl-checkpoint v1\nmlp input=1 hidden= output=1 activation=tanh params=2\ndata\n0.5\n";
        let err = read_checkpoint(text.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("unexpected end of file"), "{err}");
    }

    #[test]
    fn wrong_count_is_an_error() {
        let text =
            "looprl-checkpoint v1\nmlp input=1 hidden= output=1 activation=tanh params=3\ndata\n";
        assert!(read_checkpoint(text.as_bytes(), "mem").is_err());
    }
}
