//! Randomized encoders `X_r = g(X, Z)` (optionally `g(S, X, Z)`).
//!
//! Noise is always drawn explicitly with [`EncoderModel::sample_noise`] and
//! passed to [`EncoderModel::forward`], so a pass is a deterministic function
//! of its inputs and can be differentiated and replayed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::AffineMechanism;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ForwardCache, Head, MlpModel, MlpSpec};
use crate::numerics::{sigmoid, softplus, softplus_inverse, RngState};

/// Raw noise parameter whose softplus is exactly zero in double precision.
pub const ZERO_NOISE_RAW_SIGMA: f64 = -1000.0;

/// Which variables the encoder sees besides its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderInput {
    #[default]
    X,
    /// One-hot `S` concatenated with `X`.
    SX,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderModel {
    /// `X̂_k = X_k + β_k + softplus(raw_σ_k)·Z_k`.
    AffineGaussian { raw_beta: Vec<f64>, raw_sigma: Vec<f64> },
    /// A network on `[onehot(S)?, X, Z]` emitting a representation of the
    /// same dimension as `X`.
    Feedforward {
        net: MlpModel,
        noise_dim: usize,
        input: EncoderInput,
        s_classes: usize,
    },
}

/// Cached state of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    pub output: Matrix,
    noise: Matrix,
    net_cache: Option<ForwardCache>,
}

impl EncoderModel {
    /// Affine encoder with `β = 0` and every `σ_p` set to `sigma`.
    pub fn affine(dim: usize, sigma: f64) -> Self {
        let raw = if sigma > 0.0 {
            softplus_inverse(sigma)
        } else {
            ZERO_NOISE_RAW_SIGMA
        };
        EncoderModel::AffineGaussian {
            raw_beta: vec![0.0; dim],
            raw_sigma: vec![raw; dim],
        }
    }

    /// Affine encoder whose noise spreads `budget` evenly: `σ_p² = budget/m`.
    pub fn affine_for_budget(dim: usize, budget: f64) -> Self {
        Self::affine(dim, (budget / dim as f64).sqrt())
    }

    /// Exact identity map (no shift, no noise).
    pub fn affine_identity(dim: usize) -> Self {
        Self::affine(dim, 0.0)
    }

    /// Feedforward encoder with a linear output of width `x_dim`.
    pub fn feedforward(
        x_dim: usize,
        s_classes: usize,
        noise_dim: usize,
        hidden: &[usize],
        input: EncoderInput,
        rng: &mut RngState,
    ) -> Result<Self> {
        let in_dim = x_dim + noise_dim + if input == EncoderInput::SX { s_classes } else { 0 };
        let spec = MlpSpec {
            head: Head::Linear,
            ..MlpSpec::classifier(in_dim, hidden, x_dim)
        };
        Ok(EncoderModel::Feedforward {
            net: MlpModel::new(&spec, rng)?,
            noise_dim,
            input,
            s_classes,
        })
    }

    pub fn from_mechanism(mech: &AffineMechanism) -> Result<Self> {
        mech.validate()?;
        let raw_sigma = mech
            .sigma_p_sq
            .iter()
            .map(|&v| if v > 0.0 { softplus_inverse(v.sqrt()) } else { ZERO_NOISE_RAW_SIGMA })
            .collect();
        Ok(EncoderModel::AffineGaussian {
            raw_beta: mech.beta.clone(),
            raw_sigma,
        })
    }

    /// Dimension of `X` (and of the representation).
    pub fn dim(&self) -> usize {
        match self {
            EncoderModel::AffineGaussian { raw_beta, .. } => raw_beta.len(),
            EncoderModel::Feedforward { net, .. } => net.output_dim(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            EncoderModel::AffineGaussian { raw_beta, .. } => raw_beta.len(),
            EncoderModel::Feedforward { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, EncoderModel::AffineGaussian { .. })
    }

    /// `(β, σ_p²)` of an affine encoder.
    pub fn affine_mechanism(&self) -> Option<AffineMechanism> {
        match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => Some(AffineMechanism {
                beta: raw_beta.clone(),
                sigma_p_sq: raw_sigma.iter().map(|&r| softplus(r).powi(2)).collect(),
            }),
            EncoderModel::Feedforward { .. } => None,
        }
    }

    pub fn sample_noise(&self, n: usize, rng: &mut RngState) -> Matrix {
        let d = self.noise_dim();
        let data = (0..n * d).map(|_| rng.standard_normal()).collect();
        Matrix::from_vec(n, d, data).expect("noise shape")
    }

    fn check_inputs(&self, x: &Matrix, s: &[usize], noise: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension {
                context: "encoder input",
                expected: self.dim(),
                got: x.cols(),
            });
        }
        if noise.shape() != (x.rows(), self.noise_dim()) {
            return Err(Error::Dimension {
                context: "encoder noise",
                expected: x.rows() * self.noise_dim(),
                got: noise.rows() * noise.cols(),
            });
        }
        if let EncoderModel::Feedforward {
            input: EncoderInput::SX,
            s_classes,
            ..
        } = self
        {
            if s.len() != x.rows() {
                return Err(Error::Dimension {
                    context: "encoder sensitive labels",
                    expected: x.rows(),
                    got: s.len(),
                });
            }
            if let Some(&bad) = s.iter().find(|&&v| v >= *s_classes) {
                return Err(invalid(format!("sensitive label {bad} outside 0..{s_classes}")));
            }
        }
        Ok(())
    }

    /// Encodes `x` with the given noise. `s` is read only by `(S, X)` encoders.
    pub fn forward(&self, x: &Matrix, s: &[usize], noise: &Matrix, training: bool) -> Result<EncoderPass> {
        self.check_inputs(x, s, noise)?;
        match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => {
                let sd: Vec<f64> = raw_sigma.iter().map(|&r| softplus(r)).collect();
                let mut out = x.clone();
                for r in 0..out.rows() {
                    let z = noise.row(r);
                    for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v += raw_beta[k] + sd[k] * z[k];
                    }
                }
                Ok(EncoderPass {
                    output: out,
                    noise: noise.clone(),
                    net_cache: None,
                })
            }
            EncoderModel::Feedforward {
                net, input, s_classes, ..
            } => {
                let inp = match input {
                    EncoderInput::X => Matrix::hconcat(&[x, noise])?,
                    EncoderInput::SX => Matrix::hconcat(&[&Matrix::one_hot(s, *s_classes)?, x, noise])?,
                };
                let cache = net.forward(&inp, training)?;
                Ok(EncoderPass {
                    output: cache.output().clone(),
                    noise: noise.clone(),
                    net_cache: Some(cache),
                })
            }
        }
    }

    /// Inference-mode encoding with fresh noise from `rng`.
    pub fn encode(&self, x: &Matrix, s: &[usize], rng: &mut RngState) -> Result<Matrix> {
        let noise = self.sample_noise(x.rows(), rng);
        Ok(self.forward(x, s, &noise, false)?.output)
    }

    /// Parameter gradients given `∂L/∂X_r`, in [`parameter_blocks`](Self::parameter_blocks) order.
    /// Closed-form `E‖X_r − X‖² = Σ β² + σ_p²` of an affine encoder, with its
    /// gradient in parameter-block layout.
    pub fn expected_distortion(&self) -> Option<(f64, Vec<Vec<f64>>)> {
        match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => {
                let sig: Vec<f64> = raw_sigma.iter().map(|&r| softplus(r)).collect();
                let value = raw_beta.iter().map(|b| b * b).sum::<f64>() + sig.iter().map(|v| v * v).sum::<f64>();
                let d_beta = raw_beta.iter().map(|b| 2.0 * b).collect();
                let d_raw = sig.iter().zip(raw_sigma).map(|(v, &r)| 2.0 * v * sigmoid(r)).collect();
                Some((value, vec![d_beta, d_raw]))
            }
            EncoderModel::Feedforward { .. } => None,
        }
    }

    pub fn backward(&self, pass: &EncoderPass, grad_output: &Matrix) -> Result<Vec<Vec<f64>>> {
        if grad_output.shape() != pass.output.shape() {
            return Err(Error::Dimension {
                context: "encoder output gradient",
                expected: pass.output.rows() * pass.output.cols(),
                got: grad_output.rows() * grad_output.cols(),
            });
        }
        match self {
            EncoderModel::AffineGaussian { raw_sigma, .. } => {
                let m = raw_sigma.len();
                let mut d_beta = vec![0.0; m];
                let mut d_raw = vec![0.0; m];
                for r in 0..grad_output.rows() {
                    let g = grad_output.row(r);
                    let z = pass.noise.row(r);
                    for k in 0..m {
                        d_beta[k] += g[k];
                        d_raw[k] += g[k] * z[k];
                    }
                }
                for (d, &raw) in d_raw.iter_mut().zip(raw_sigma) {
                    *d *= sigmoid(raw);
                }
                Ok(vec![d_beta, d_raw])
            }
            EncoderModel::Feedforward { net, .. } => {
                let cache = pass
                    .net_cache
                    .as_ref()
                    .ok_or_else(|| invalid("encoder pass does not belong to a feedforward encoder"))?;
                Ok(net.backward(cache, grad_output)?.gradients.blocks)
            }
        }
    }

    /// Folds batch-norm statistics of a training pass into the network.
    pub fn commit_batch_statistics(&mut self, pass: &EncoderPass) {
        if let (EncoderModel::Feedforward { net, .. }, Some(cache)) = (self, &pass.net_cache) {
            net.commit_batch_statistics(cache);
        }
    }

    pub fn parameter_blocks(&self) -> Vec<&[f64]> {
        match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => vec![raw_beta.as_slice(), raw_sigma.as_slice()],
            EncoderModel::Feedforward { net, .. } => net.parameter_blocks(),
        }
    }

    pub fn parameter_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => {
                vec![raw_beta.as_mut_slice(), raw_sigma.as_mut_slice()]
            }
            EncoderModel::Feedforward { net, .. } => net.parameter_blocks_mut(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = match self {
            EncoderModel::AffineGaussian { raw_beta, raw_sigma } => EncoderFile::AffineGaussian {
                raw_beta: raw_beta.clone(),
                raw_sigma: raw_sigma.clone(),
            },
            EncoderModel::Feedforward {
                net,
                noise_dim,
                input,
                s_classes,
            } => EncoderFile::Feedforward {
                noise_dim: *noise_dim,
                input: *input,
                s_classes: *s_classes,
                net: net.to_text(),
            },
        };
        let tagged = TaggedEncoder {
            format: ENCODER_FORMAT_TAG.into(),
            version: ENCODER_FORMAT_VERSION,
            encoder: file,
        };
        std::fs::write(path, serde_json::to_string_pretty(&tagged)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tagged: TaggedEncoder = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if tagged.format != ENCODER_FORMAT_TAG || tagged.version != ENCODER_FORMAT_VERSION {
            return Err(Error::Version {
                found: format!("{} {}", tagged.format, tagged.version),
                expected: format!("{ENCODER_FORMAT_TAG} {ENCODER_FORMAT_VERSION}"),
            });
        }
        match tagged.encoder {
            EncoderFile::AffineGaussian { raw_beta, raw_sigma } => {
                if raw_beta.len() != raw_sigma.len() || raw_beta.is_empty() {
                    return Err(Error::Format("affine encoder needs equal, non-empty β and σ vectors".into()));
                }
                Ok(EncoderModel::AffineGaussian { raw_beta, raw_sigma })
            }
            EncoderFile::Feedforward {
                noise_dim,
                input,
                s_classes,
                net,
            } => {
                let net = MlpModel::from_text(&net)?;
                let expected = net.output_dim() + noise_dim + if input == EncoderInput::SX { s_classes } else { 0 };
                if net.input_dim() != expected {
                    return Err(Error::Dimension {
                        context: "feedforward encoder input width",
                        expected,
                        got: net.input_dim(),
                    });
                }
                Ok(EncoderModel::Feedforward {
                    net,
                    noise_dim,
                    input,
                    s_classes,
                })
            }
        }
    }
}

pub const ENCODER_FORMAT_TAG: &str = "cfur-encoder";
pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TaggedEncoder {
    format: String,
    version: u32,
    encoder: EncoderFile,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum EncoderFile {
    AffineGaussian {
        raw_beta: Vec<f64>,
        raw_sigma: Vec<f64>,
    },
    Feedforward {
        noise_dim: usize,
        input: EncoderInput,
        s_classes: usize,
        net: String,
    },
}
