//! On-disk artifact formats.
//!
//! Binary files (datasets, checkpoints) share one layout: a single compact
//! JSON header line terminated by `\n`, followed by a raw little-endian
//! 64-bit-float payload. The header carries everything needed to interpret
//! the payload, so files are self-describing; `head -1 file` shows the
//! metadata.
//!
//! CSV output is UTF-8, comma-separated with a header row. Floats print in
//! Rust's shortest round-trip form, which is byte-stable for a given value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use bce_core::datagen::DatasetNM;
use bce_core::neuralnet::{MlpParams, MlpSpec};
use bce_core::statmodels::ObservationBatch;
use bce_core::training::{CovNetSpec, FeatureMap, TrainedEstimator};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PriorConfig};
use crate::error::{CliError, Result};

/// Dataset header: generation provenance plus the payload dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub records: usize,
    pub obs_per_record: usize,
    pub seed: u64,
    /// Parameter dimension per record.
    pub param_dim: usize,
    /// Rows of each observation matrix.
    pub obs_dim: usize,
    /// Columns of each observation matrix.
    pub obs_count: usize,
}

fn write_header<H: Serialize>(w: &mut impl Write, header: &H) -> std::io::Result<()> {
    let line = serde_json::to_string(header).expect("header serializes");
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}

fn write_f64s(w: &mut impl Write, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header_line(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(CliError::io(path))?;
        if n == 0 {
            return Err(CliError::Format {
                path: path.into(),
                reason: "missing header line".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(CliError::Format {
                path: path.into(),
                reason: "header line exceeds 1 MiB".into(),
            });
        }
    }
    String::from_utf8(line).map_err(|_| CliError::Format {
        path: path.into(),
        reason: "header is not utf-8".into(),
    })
}

fn read_f64s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| CliError::Format {
        path: path.into(),
        reason: format!("payload truncated (wanted {n} floats)"),
    })?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes a dataset: per record the parameter block then the M observation
/// blocks (column-major), all f64 little-endian.
pub fn write_dataset(path: &Path, header: &DatasetHeader, ds: &DatasetNM) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, header).map_err(CliError::io(path))?;
    for i in 0..ds.records() {
        write_f64s(&mut w, ds.params(i).iter().cloned()).map_err(CliError::io(path))?;
        for j in 0..ds.obs_per_record() {
            write_f64s(&mut w, ds.observation(i, j).values().iter().cloned())
                .map_err(CliError::io(path))?;
        }
    }
    w.flush().map_err(CliError::io(path))
}

/// One dataset record: the parameter draw and its grouped observations.
pub type DatasetRecord = (DVector<f64>, Vec<ObservationBatch>);

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut r = BufReader::new(file);
    let header_line = read_header_line(&mut r, path)?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| CliError::Format {
            path: path.into(),
            reason: format!("bad dataset header: {e}"),
        })?;
    let mut records = Vec::with_capacity(header.records);
    for _ in 0..header.records {
        let y = DVector::from_vec(read_f64s(&mut r, header.param_dim, path)?);
        let mut obs = Vec::with_capacity(header.obs_per_record);
        for _ in 0..header.obs_per_record {
            let vals = read_f64s(&mut r, header.obs_dim * header.obs_count, path)?;
            let m = DMatrix::from_column_slice(header.obs_dim, header.obs_count, &vals);
            obs.push(ObservationBatch::new(m).map_err(|e| CliError::Format {
                path: path.into(),
                reason: e.to_string(),
            })?);
        }
        records.push((y, obs));
    }
    Ok((header, records))
}

/// Checkpoint header: the architecture and training provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum CheckpointArch {
    Mlp {
        spec: MlpSpec,
        features: FeatureMap,
        output_clip: Option<(f64, f64)>,
    },
    CovNet { spec: CovNetSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    #[serde(flatten)]
    pub arch: CheckpointArch,
    pub seed: u64,
    /// Opaque training provenance (config echo).
    pub train: serde_json::Value,
    pub param_count: usize,
}

pub fn write_checkpoint(
    path: &Path,
    estimator: &TrainedEstimator,
    seed: u64,
    train: serde_json::Value,
) -> Result<()> {
    let (arch, params) = match estimator {
        TrainedEstimator::Mlp {
            params,
            features,
            output_clip,
        } => (
            CheckpointArch::Mlp {
                spec: params.spec().clone(),
                features: *features,
                output_clip: *output_clip,
            },
            params,
        ),
        TrainedEstimator::CovNet { spec, params } => {
            (CheckpointArch::CovNet { spec: *spec }, params)
        }
    };
    let flat = params.flatten();
    let header = CheckpointHeader {
        arch,
        seed,
        train,
        param_count: flat.len(),
    };
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, &header).map_err(CliError::io(path))?;
    write_f64s(&mut w, flat.into_iter()).map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, TrainedEstimator)> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut r = BufReader::new(file);
    let header_line = read_header_line(&mut r, path)?;
    let header: CheckpointHeader =
        serde_json::from_str(&header_line).map_err(|e| CliError::Format {
            path: path.into(),
            reason: format!("bad checkpoint header: {e}"),
        })?;
    let flat = read_f64s(&mut r, header.param_count, path)?;
    let bad = |e: bce_core::Error| CliError::Format {
        path: path.into(),
        reason: e.to_string(),
    };
    let estimator = match &header.arch {
        CheckpointArch::Mlp {
            spec,
            features,
            output_clip,
        } => TrainedEstimator::Mlp {
            params: MlpParams::from_flat(spec.clone(), &flat).map_err(bad)?,
            features: *features,
            output_clip: *output_clip,
        },
        CheckpointArch::CovNet { spec } => TrainedEstimator::CovNet {
            spec: *spec,
            params: MlpParams::from_flat(spec.mlp_spec().map_err(bad)?, &flat).map_err(bad)?,
        },
    };
    Ok((header, estimator))
}

/// A CSV table in memory; kept tiny on purpose.
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "csv row width");
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(CliError::io(path))?;
        let mut w = BufWriter::new(file);
        let emit = |w: &mut BufWriter<File>, fields: &[String]| -> std::io::Result<()> {
            writeln!(w, "{}", fields.join(","))
        };
        emit(&mut w, &self.header).map_err(CliError::io(path))?;
        for row in &self.rows {
            emit(&mut w, row).map_err(CliError::io(path))?;
        }
        w.flush().map_err(CliError::io(path))
    }
}

/// Shortest-round-trip float formatting (deterministic for a given value).
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}
