//! Config files: JSON with comments, dot-path overrides, and the matrix /
//! prior / model descriptors shared by every subcommand.

use bce_core::datagen::{self, FictitiousPrior};
use bce_core::rng;
use bce_core::statmodels::{LinearGaussianModel, SnrModel, StatModel, StructuredCovModel};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CliError, Result};

/// Strips // line comments and /* */ block comments, preserving string
/// literals. Comment bytes are replaced by spaces so JSON error positions
/// stay meaningful.
pub fn strip_json_comments(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    let mut in_string = false;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            out.push(b);
            if b == b'\\' && i + 1 < bytes.len() {
                out.push(bytes[i + 1]);
                i += 2;
                continue;
            }
            if b == b'"' {
                in_string = false;
            }
            i += 1;
        } else if b == b'"' {
            in_string = true;
            out.push(b);
            i += 1;
        } else if b == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
            while i < bytes.len() && bytes[i] != b'\n' {
                out.push(b' ');
                i += 1;
            }
        } else if b == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'*' {
            while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                out.push(if bytes[i] == b'\n' { b'\n' } else { b' ' });
                i += 1;
            }
            out.push(b' ');
            out.push(b' ');
            i = (i + 2).min(bytes.len());
        } else {
            out.push(b);
            i += 1;
        }
    }
    String::from_utf8(out).expect("comment stripping preserves utf-8")
}

/// Sets `value` at a dot path like `train.lambda`, creating objects along
/// the way. The override string is parsed as JSON when possible, else kept
/// as a string.
pub fn apply_override(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let new_value = serde_json::from_str::<serde_json::Value>(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override path '{path}'")));
    }
    for part in &parts[..parts.len() - 1] {
        if !cursor.is_object() {
            return Err(CliError::Config(format!(
                "override path '{path}' walks through a non-object at '{part}'"
            )));
        }
        cursor = cursor
            .as_object_mut()
            .expect("checked object")
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match cursor {
        serde_json::Value::Object(map) => {
            map.insert(parts[parts.len() - 1].to_string(), new_value);
            Ok(())
        }
        _ => Err(CliError::Config(format!(
            "override path '{path}' does not end inside an object"
        ))),
    }
}

/// Loads a config: `path` when given, otherwise the embedded default text.
/// `--set` overrides are applied to the JSON tree before deserialization.
/// Returns the typed config together with the effective JSON it came from.
pub fn load_config<T: DeserializeOwned>(
    path: Option<&Path>,
    default_text: &str,
    overrides: &[(String, String)],
) -> Result<(T, serde_json::Value)> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(CliError::io(p))?,
        None => default_text.to_string(),
    };
    let stripped = strip_json_comments(&text);
    let mut value: serde_json::Value = serde_json::from_str(&stripped)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let typed: T = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Config(format!("config did not validate: {e}")))?;
    Ok((typed, value))
}

fn default_scale() -> f64 {
    1.0
}

/// How a matrix is specified in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MatrixSpec {
    /// scale * I.
    Identity {
        size: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Explicit rows.
    Dense { rows: Vec<Vec<f64>> },
    /// Q diag(eigs) Q^T with a seeded random orthogonal Q.
    Spectrum { eigs: Vec<f64>, seed: u64 },
    /// Seeded i.i.d. N(0, scale^2) entries.
    RandomGaussian {
        rows: usize,
        cols: usize,
        seed: u64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

impl MatrixSpec {
    pub fn build(&self) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Identity { size, scale } => {
                Ok(DMatrix::<f64>::identity(*size, *size) * *scale)
            }
            MatrixSpec::Dense { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
                    return Err(CliError::Config("dense matrix rows are ragged".into()));
                }
                let r = rows.len();
                let c = rows[0].len();
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            }
            MatrixSpec::Spectrum { eigs, seed } => {
                if eigs.is_empty() {
                    return Err(CliError::Config("spectrum needs at least one eigenvalue".into()));
                }
                let mut stream = rng::master(*seed);
                Ok(datagen::symmetric_with_spectrum(eigs, &mut stream))
            }
            MatrixSpec::RandomGaussian {
                rows,
                cols,
                seed,
                scale,
            } => {
                let mut stream = rng::master(*seed);
                Ok(datagen::gaussian_matrix(*rows, *cols, &mut stream) * *scale)
            }
        }
    }
}

/// Observation model descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    LinearGaussian { h: MatrixSpec, sigma_n: MatrixSpec },
    Snr { p: usize },
    StructuredCov { p_samples: usize },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn StatModel>> {
        Ok(match self {
            ModelConfig::LinearGaussian { h, sigma_n } => Box::new(LinearGaussianModel::new(
                h.build()?,
                sigma_n.build()?,
            )?),
            ModelConfig::Snr { p } => Box::new(SnrModel::new(*p)?),
            ModelConfig::StructuredCov { p_samples } => {
                Box::new(StructuredCovModel::new(*p_samples)?)
            }
        })
    }
}

/// Fictitious prior descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorConfig {
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: MatrixSpec,
    },
    SnrComposite {
        h_range: (f64, f64),
        snr_range: (f64, f64),
    },
}

impl PriorConfig {
    pub fn build(&self) -> Result<FictitiousPrior> {
        Ok(match self {
            PriorConfig::UniformBox { lower, upper } => FictitiousPrior::uniform_box(
                DVector::from_column_slice(lower),
                DVector::from_column_slice(upper),
            )?,
            PriorConfig::Gaussian { mean, cov } => {
                FictitiousPrior::gaussian(DVector::from_column_slice(mean), cov.build()?)?
            }
            PriorConfig::SnrComposite { h_range, snr_range } => {
                FictitiousPrior::snr_composite(*h_range, *snr_range)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_line_and_block_comments() {
        let src = r#"{
            // a comment
            "a": 1, /* block "quoted" */ "b": "keep // this",
            "c": 2
        }"#;
        let v: serde_json::Value = serde_json::from_str(&strip_json_comments(src)).unwrap();
        assert_eq!(v["a"], 1);
        assert_eq!(v["b"], "keep // this");
        assert_eq!(v["c"], 2);
    }

    #[test]
    fn overrides_walk_dot_paths() {
        let mut v: serde_json::Value = serde_json::json!({"train": {"lambda": 1.0}});
        apply_override(&mut v, "train.lambda", "1000").unwrap();
        apply_override(&mut v, "train.steps", "50").unwrap();
        assert_eq!(v["train"]["lambda"], 1000);
        assert_eq!(v["train"]["steps"], 50);
    }

    #[test]
    fn matrix_specs_build() {
        let i = MatrixSpec::Identity { size: 3, scale: 2.0 }.build().unwrap();
        assert_eq!(i[(1, 1)], 2.0);
        let d = MatrixSpec::Dense {
            rows: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        }
        .build()
        .unwrap();
        assert_eq!(d[(1, 0)], 3.0);
        let s = MatrixSpec::Spectrum {
            eigs: vec![1.0, 2.0],
            seed: 5,
        }
        .build()
        .unwrap();
        let eigs = nalgebra::SymmetricEigen::new(s).eigenvalues;
        let mut e: Vec<f64> = eigs.iter().cloned().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-10 && (e[1] - 2.0).abs() < 1e-10);
    }
}
