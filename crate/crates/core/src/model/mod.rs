//! The four-branch occupancy network: a shared residual encoder with
//! intermediate-layer taps feeding side branches I/II, a separate half-width
//! encoder for the DoG-concatenated input of branch III, per-branch
//! conditional-batch-norm decoders, and a learned gate that fuses the branch
//! probabilities into one prediction.

mod net;

pub use net::{
    load_model, BatchInput, BranchOutputs, DmifNet, ForwardNodes, ForwardOpts, ForwardPass,
    LoadedModel,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Model reductions used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Main branch only.
    #[serde(rename = "b0")]
    MainOnly,
    /// Main + side branches I/II, fused by a fixed uniform average.
    #[serde(rename = "b0+b1+b2")]
    MeanFusion,
    /// Main + side branches I/II with the learned probability mixture.
    #[serde(rename = "b0+b1+b2+pmm")]
    Pmm,
    /// All four branches with the learned probability mixture.
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub fn branches(self) -> usize {
        match self {
            Variant::MainOnly => 1,
            Variant::MeanFusion | Variant::Pmm => 3,
            Variant::Full => 4,
        }
    }

    /// Whether the mixture weights come from the learned gate.
    pub fn gated(self) -> bool {
        matches!(self, Variant::Pmm | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::MainOnly => "b0",
            Variant::MeanFusion => "b0+b1+b2",
            Variant::Pmm => "b0+b1+b2+pmm",
            Variant::Full => "full",
        }
    }

    pub fn all() -> [Variant; 4] {
        [
            Variant::MainOnly,
            Variant::MeanFusion,
            Variant::Pmm,
            Variant::Full,
        ]
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b0" => Ok(Variant::MainOnly),
            "b0+b1+b2" => Ok(Variant::MeanFusion),
            "b0+b1+b2+pmm" => Ok(Variant::Pmm),
            "full" => Ok(Variant::Full),
            other => Err(Error::config(format!(
                "unknown variant {other}; expected b0, b0+b1+b2, b0+b1+b2+pmm or full"
            ))),
        }
    }
}

fn d_image_size() -> usize {
    64
}
fn d_feat_dim() -> usize {
    128
}
fn d_enc_stem() -> usize {
    16
}
fn d_enc_stages() -> [usize; 4] {
    [16, 32, 64, 128]
}
fn d_b3_stem() -> usize {
    8
}
fn d_b3_stages() -> [usize; 4] {
    [8, 16, 32, 64]
}
fn d_dec_width() -> usize {
    128
}
fn d_dec_blocks() -> usize {
    5
}
fn d_gate_hidden() -> usize {
    64
}
fn d_sigmas() -> Vec<f64> {
    vec![1.0, 1.6]
}
fn d_variant() -> Variant {
    Variant::Full
}
fn d_precision() -> String {
    "f32".to_string()
}

/// Architecture hyperparameters; serialized into the checkpoint header so
/// reconstruction and evaluation need no extra flags.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelHyper {
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    #[serde(default = "d_feat_dim")]
    pub feat_dim: usize,
    #[serde(default = "d_enc_stem")]
    pub enc_stem: usize,
    #[serde(default = "d_enc_stages")]
    pub enc_stages: [usize; 4],
    #[serde(default = "d_b3_stem")]
    pub b3_stem: usize,
    #[serde(default = "d_b3_stages")]
    pub b3_stages: [usize; 4],
    #[serde(default = "d_dec_width")]
    pub dec_width: usize,
    #[serde(default = "d_dec_blocks")]
    pub dec_blocks: usize,
    #[serde(default = "d_gate_hidden")]
    pub gate_hidden: usize,
    /// Blur scales for the branch III difference map.
    #[serde(default = "d_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "d_variant")]
    pub variant: Variant,
    /// "f32" or "f64".
    #[serde(default = "d_precision")]
    pub precision: String,
}

impl Default for ModelHyper {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return Err(Error::config(
                "image_size must be a multiple of 16 (four stride-2 stages)",
            ));
        }
        if self.enc_stages[3] != self.feat_dim {
            return Err(Error::config(
                "last encoder stage width must equal feat_dim so pooling yields the embedding",
            ));
        }
        if self.dec_blocks == 0 || self.dec_width == 0 {
            return Err(Error::config("decoder needs at least one block and nonzero width"));
        }
        if self.precision != "f32" && self.precision != "f64" {
            return Err(Error::config("precision must be f32 or f64"));
        }
        crate::dogfilter::GaussianScaleSpec {
            sigmas: self.sigmas.clone(),
            truncation: 3.0,
        }
        .validate()
    }

    pub fn scale_spec(&self) -> crate::dogfilter::GaussianScaleSpec {
        crate::dogfilter::GaussianScaleSpec {
            sigmas: self.sigmas.clone(),
            truncation: 3.0,
        }
    }

    /// Small hyperparameters for fast tests.
    pub fn tiny(variant: Variant) -> ModelHyper {
        ModelHyper {
            image_size: 16,
            feat_dim: 16,
            enc_stem: 4,
            enc_stages: [4, 8, 8, 16],
            b3_stem: 4,
            b3_stages: [4, 4, 8, 8],
            dec_width: 16,
            dec_blocks: 2,
            gate_hidden: 8,
            sigmas: vec![1.0, 1.6],
            variant,
            precision: "f64".to_string(),
        }
    }
}
