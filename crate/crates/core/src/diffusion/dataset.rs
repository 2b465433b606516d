//! Synthetic prompt-labelled 2-D datasets.
//!
//! File format: plain text, one sample per line, `context_id x y`.
//! Blank lines and lines starting with `#` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::rewards::DEFAULT_CENTERS;
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

use super::policy::standard_normal;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub context: usize,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
    /// Probability that a sample's label names its own mode. At 0 the
    /// labels carry no information and the pretrained model ignores them.
    pub binding: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            centers: DEFAULT_CENTERS.to_vec(),
            std: 0.3,
            binding: 0.0,
        }
    }
}

pub fn mixture_dataset(n: usize, seed: u64, cfg: &MixtureConfig) -> Vec<Sample> {
    let c = cfg.centers.len();
    let mut rng = StreamKey::new(seed, Purpose::Dataset, 0).rng(0);
    (0..n)
        .map(|_| {
            let mode = rng.random_range(0..c);
            let noise = standard_normal(2, &mut rng);
            let x0 = vec![
                cfg.centers[mode][0] + cfg.std * noise[0],
                cfg.centers[mode][1] + cfg.std * noise[1],
            ];
            let context = if rng.random::<f64>() < cfg.binding {
                mode
            } else {
                rng.random_range(0..c)
            };
            Sample { context, x0 }
        })
        .collect()
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let coords: Vec<String> = s.x0.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{} {}", s.context, coords.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), i + 1);
        let mut fields = line.split_whitespace();
        let context = fields
            .next()
            .unwrap()
            .parse::<usize>()
            .map_err(|e| Error::parse(ctx(), format!("context id: {e}")))?;
        let x0 = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(ctx(), format!("coordinate: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if x0.len() != 2 {
            return Err(Error::parse(
                ctx(),
                format!("expected 2 coordinates, got {}", x0.len()),
            ));
        }
        samples.push(Sample { context, x0 });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let data = mixture_dataset(50, 4, &MixtureConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0 1.0 2.0\n1 oops 2.0\n").unwrap();
        let err = read_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("bad.txt:2"), "{err}");
    }

    #[test]
    fn binding_controls_labels() {
        let cfg = MixtureConfig {
            binding: 1.0,
            ..MixtureConfig::default()
        };
        for s in mixture_dataset(200, 1, &cfg) {
            let c = DEFAULT_CENTERS[s.context];
            assert!((s.x0[0] - c[0]).abs() < 2.0 && (s.x0[1] - c[1]).abs() < 2.0);
        }
    }
}
