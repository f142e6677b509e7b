use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural variants: the full model plus its ablation family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "MSCMHMST")]
    Mscmhmst,
    #[serde(rename = "MSCMHMST_4")]
    Mscmhmst4,
    #[serde(rename = "MSCMHMST_8")]
    Mscmhmst8,
    #[serde(rename = "MSCMHMST_16")]
    Mscmhmst16,
    #[serde(rename = "CNN1D_Transformer")]
    Cnn1dTransformer,
    #[serde(rename = "CNN1D_MHMST")]
    Cnn1dMhmst,
    #[serde(rename = "MSC_Transformer")]
    MscTransformer,
    #[serde(rename = "MSC1R_MHMST1L")]
    Msc1rMhmst1l,
    #[serde(rename = "MSC2R_MHMST2L")]
    Msc2rMhmst2l,
    #[serde(rename = "MSC3R_MHMST3L")]
    Msc3rMhmst3l,
}

pub const ALL_VARIANTS: [Variant; 10] = [
    Variant::Mscmhmst,
    Variant::Mscmhmst4,
    Variant::Mscmhmst8,
    Variant::Mscmhmst16,
    Variant::Cnn1dTransformer,
    Variant::Cnn1dMhmst,
    Variant::MscTransformer,
    Variant::Msc1rMhmst1l,
    Variant::Msc2rMhmst2l,
    Variant::Msc3rMhmst3l,
];

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Mscmhmst => "MSCMHMST",
            Variant::Mscmhmst4 => "MSCMHMST_4",
            Variant::Mscmhmst8 => "MSCMHMST_8",
            Variant::Mscmhmst16 => "MSCMHMST_16",
            Variant::Cnn1dTransformer => "CNN1D_Transformer",
            Variant::Cnn1dMhmst => "CNN1D_MHMST",
            Variant::MscTransformer => "MSC_Transformer",
            Variant::Msc1rMhmst1l => "MSC1R_MHMST1L",
            Variant::Msc2rMhmst2l => "MSC2R_MHMST2L",
            Variant::Msc3rMhmst3l => "MSC3R_MHMST3L",
        }
    }

    /// Head-count limit for the pruned variants; `None` keeps the whole list.
    pub fn head_limit(&self) -> Option<usize> {
        match self {
            Variant::Mscmhmst4 => Some(4),
            Variant::Mscmhmst8 => Some(8),
            Variant::Mscmhmst16 => Some(16),
            _ => None,
        }
    }

    /// Extra residual conv blocks and extra encoder layers for the
    /// depth-series variants.
    pub fn extra_depth(&self) -> usize {
        match self {
            Variant::Msc1rMhmst1l => 1,
            Variant::Msc2rMhmst2l => 2,
            Variant::Msc3rMhmst3l => 3,
            _ => 0,
        }
    }

    /// Single-scale (k=3) front end instead of the multi-scale block.
    pub fn single_scale_conv(&self) -> bool {
        matches!(self, Variant::Cnn1dTransformer | Variant::Cnn1dMhmst)
    }

    /// Whether the gated multi-head multi-scale attention stage is present.
    pub fn has_mhms(&self) -> bool {
        !matches!(self, Variant::Cnn1dTransformer | Variant::MscTransformer)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase();
        let canon = match norm.as_str() {
            // "1DCNN_*" spellings are accepted as aliases.
            "1DCNN_TRANSFORMER" => "CNN1D_TRANSFORMER",
            "1DCNN_MHMST" => "CNN1D_MHMST",
            other => other,
        }
        .to_string();
        ALL_VARIANTS
            .iter()
            .find(|v| v.name().to_ascii_uppercase() == canon)
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant '{s}' (expected one of {})",
                    ALL_VARIANTS.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// One attention head's kernel-scale set, e.g. {1, 3}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeadSpec {
    scales: Vec<usize>,
}

impl HeadSpec {
    /// Strict constructor: scales must be odd, positive, and distinct.
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::config("head spec needs at least one scale".to_string()));
        }
        for &k in &scales {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(format!(
                    "head scales must be odd and positive, got {k}"
                )));
            }
        }
        let mut seen = scales.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != scales.len() {
            return Err(Error::config(format!("head scales must be distinct, got {scales:?}")));
        }
        Ok(HeadSpec { scales })
    }

    /// Constructor that rounds even scales up to the next odd size, so the
    /// centered same-length convolution stays exact. Logs each adjustment.
    pub fn rounding(raw: Vec<usize>) -> Result<Self> {
        let adjusted: Vec<usize> = raw
            .iter()
            .map(|&k| {
                if k > 0 && k % 2 == 0 {
                    log::warn!("head scale {} rounded up to odd size {}", k, k + 1);
                    k + 1
                } else {
                    k
                }
            })
            .collect();
        HeadSpec::new(adjusted)
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }
}

/// The 16 default head scale pairs. Even sizes in the published list are
/// rounded up to the next odd size (2->3, 4->5, 6->7, 8->9, 10->11).
pub fn default_head_specs() -> Vec<HeadSpec> {
    const RAW: [[usize; 2]; 16] = [
        [1, 3],
        [3, 5],
        [5, 7],
        [7, 9],
        [1, 5],
        [3, 7],
        [5, 9],
        [1, 7],
        [1, 9],
        [2, 6],
        [4, 8],
        [3, 9],
        [2, 4],
        [4, 6],
        [6, 8],
        [8, 10],
    ];
    RAW.iter()
        .map(|pair| HeadSpec::rounding(pair.to_vec()).expect("default specs are valid"))
        .collect()
}

/// Full architectural configuration. Together with the seed it uniquely
/// determines a variant, its initial parameters, and its parameter count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub msc_kernels: Vec<usize>,
    pub branch_channels: usize,
    pub head_specs: Vec<HeadSpec>,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub prune_threshold: f64,
    pub residual: bool,
    pub history: usize,
    pub horizon: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Mscmhmst,
            msc_kernels: vec![3, 5, 7, 9],
            branch_channels: 8,
            head_specs: default_head_specs(),
            d_model: 8,
            encoder_layers: 2,
            encoder_heads: 2,
            prune_threshold: 0.0,
            residual: false,
            history: 12,
            horizon: 12,
            input_channels: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.msc_kernels.is_empty() {
            return Err(Error::config("msc_kernels must be nonempty".to_string()));
        }
        for &k in &self.msc_kernels {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(format!(
                    "msc kernel sizes must be odd and positive, got {k}"
                )));
            }
        }
        let mut ks = self.msc_kernels.clone();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() != self.msc_kernels.len() {
            return Err(Error::config(format!(
                "msc kernel sizes must be distinct, got {:?}",
                self.msc_kernels
            )));
        }
        if self.branch_channels == 0 {
            return Err(Error::config("branch_channels must be at least 1".to_string()));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config(format!(
                "d_model must be even for the sinusoidal positional encoding, got {}",
                self.d_model
            )));
        }
        if self.encoder_heads == 0 || self.d_model % self.encoder_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be divisible by encoder_heads {}",
                self.d_model, self.encoder_heads
            )));
        }
        if self.encoder_layers == 0 {
            return Err(Error::config("encoder_layers must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::config(format!(
                "prune_threshold must lie in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        if self.history == 0 || self.horizon == 0 || self.input_channels == 0 {
            return Err(Error::config(
                "history, horizon and input_channels must be at least 1".to_string(),
            ));
        }
        if let Some(limit) = self.variant.head_limit() {
            if self.head_specs.len() < limit {
                return Err(Error::config(format!(
                    "variant {} needs at least {limit} head specs, got {}",
                    self.variant,
                    self.head_specs.len()
                )));
            }
        }
        if self.variant.has_mhms() && self.head_specs.is_empty() {
            return Err(Error::config(format!(
                "variant {} needs a nonempty head spec list",
                self.variant
            )));
        }
        Ok(())
    }

    /// Head specs actually used by the configured variant: the pruned
    /// variants statically select the first 4/8/16 entries.
    pub fn active_head_specs(&self) -> Vec<HeadSpec> {
        if !self.variant.has_mhms() {
            return Vec::new();
        }
        match self.variant.head_limit() {
            Some(limit) => self.head_specs.iter().take(limit).cloned().collect(),
            None => self.head_specs.clone(),
        }
    }

    /// Encoder depth after the variant's extra layers.
    pub fn effective_encoder_layers(&self) -> usize {
        self.encoder_layers + self.variant.extra_depth()
    }

    /// Residual projection on the conv block; forced on for the
    /// residual-series variants.
    pub fn effective_residual(&self) -> bool {
        self.residual || self.variant.extra_depth() > 0
    }

    /// Kernel list for the convolutional front end.
    pub fn conv_kernels(&self) -> Vec<usize> {
        if self.variant.single_scale_conv() {
            vec![3]
        } else {
            self.msc_kernels.clone()
        }
    }
}
