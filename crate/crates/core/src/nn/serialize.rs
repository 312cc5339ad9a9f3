//! Text parameter dump for [`MlpModel`].
//!
//! ```text
//! cfur-mlp 1
//! head softmax-logits
//! layers <count>
//! layer <fan_in> <fan_out> <activation> <bn|plain>
//! weights <fan_in*fan_out values, row-major>
//! bias <fan_out values>
//! gamma|beta|running_mean|running_var <fan_out values>   (bn layers only)
//! ```
//!
//! Values are written with `{:e}`, which is the shortest representation that
//! parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, BatchNorm, DenseLayer, Head, MlpModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MLP_FORMAT_TAG: &str = "cfur-mlp";
pub const MLP_FORMAT_VERSION: u32 = 1;

fn write_values(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

impl MlpModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MLP_FORMAT_TAG} {MLP_FORMAT_VERSION}");
        let _ = writeln!(out, "head {}", self.head.name());
        let _ = writeln!(out, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(
                out,
                "layer {} {} {} {}",
                l.fan_in(),
                l.fan_out(),
                l.activation.name(),
                if l.batch_norm.is_some() { "bn" } else { "plain" }
            );
            write_values(&mut out, "weights", l.weights.as_slice());
            write_values(&mut out, "bias", &l.bias);
            if let Some(bn) = &l.batch_norm {
                write_values(&mut out, "gamma", &bn.gamma);
                write_values(&mut out, "beta", &bn.beta);
                write_values(&mut out, "running_mean", &bn.running_mean);
                write_values(&mut out, "running_var", &bn.running_var);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<Vec<&str>> {
            lines
                .next()
                .map(|l| l.split_whitespace().collect())
                .ok_or_else(|| Error::Format(format!("unexpected end of model file, expected {what}")))
        };
        let header = next("header")?;
        if header.len() != 2 || header[0] != MLP_FORMAT_TAG {
            return Err(Error::Format("not a cfur-mlp model file".into()));
        }
        let version: u32 = header[1].parse().map_err(|_| Error::Format("bad version".into()))?;
        if version != MLP_FORMAT_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                expected: MLP_FORMAT_VERSION.to_string(),
            });
        }
        let head = match next("head")?.as_slice() {
            ["head", "softmax-logits"] => Head::SoftmaxLogits,
            ["head", "linear"] => Head::Linear,
            other => return Err(Error::Format(format!("bad head line {other:?}"))),
        };
        let count = match next("layers")?.as_slice() {
            ["layers", n] => parse_usize(n)?,
            other => return Err(Error::Format(format!("bad layers line {other:?}"))),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (fan_in, fan_out, activation, bn) = match next("layer")?.as_slice() {
                ["layer", i, o, a, b] => (parse_usize(i)?, parse_usize(o)?, Activation::from_name(a)?, *b == "bn"),
                other => return Err(Error::Format(format!("bad layer line {other:?}"))),
            };
            let weights = parse_values(&next("weights")?, "weights", fan_in * fan_out)?;
            let bias = parse_values(&next("bias")?, "bias", fan_out)?;
            let batch_norm = if bn {
                Some(BatchNorm {
                    gamma: parse_values(&next("gamma")?, "gamma", fan_out)?,
                    beta: parse_values(&next("beta")?, "beta", fan_out)?,
                    running_mean: parse_values(&next("running_mean")?, "running_mean", fan_out)?,
                    running_var: parse_values(&next("running_var")?, "running_var", fan_out)?,
                })
            } else {
                None
            };
            layers.push(DenseLayer {
                weights: Matrix::from_vec(fan_in, fan_out, weights)?,
                bias,
                activation,
                batch_norm,
            });
        }
        MlpModel::from_layers(layers, head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Format(format!("expected an integer, got {s:?}")))
}

fn parse_values(tokens: &[&str], key: &str, expected: usize) -> Result<Vec<f64>> {
    if tokens.first() != Some(&key) {
        return Err(Error::Format(format!("expected {key} line, got {:?}", tokens.first())));
    }
    let values = tokens[1..]
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number {t:?} in {key}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Dimension {
            context: "model file block",
            expected,
            got: values.len(),
        });
    }
    Ok(values)
}
