use super::{ModelError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Self::V1 => 1,
            Self::V2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::V1),
            2 => Some(Self::V2),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "1" => Some(Self::V1),
            "v2" | "2" => Some(Self::V2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
        })
    }
}

/// Architecture hyper-parameters. One encoder branch per entry of `temporal_kernels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub f1: usize,
    pub depth_mult: usize,
    pub f2: usize,
    pub temporal_kernels: Vec<usize>,
    pub separable_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub channels: usize,
    pub samples: usize,
    pub latent_dim: usize,
    pub decoder_temporal_kernel: usize,
    /// Hidden width of the classifier; `None` maps the latent straight to logits.
    pub classifier_hidden: Option<usize>,
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn v1() -> Self {
        Self {
            variant: Variant::V1,
            f1: 8,
            depth_mult: 2,
            f2: 16,
            temporal_kernels: vec![64],
            separable_kernel: 16,
            pool1: 4,
            pool2: 8,
            dropout: 0.25,
            channels: 22,
            samples: 512,
            latent_dim: 64,
            decoder_temporal_kernel: 64,
            classifier_hidden: Some(64),
            n_classes: 4,
        }
    }

    pub fn v2() -> Self {
        Self {
            variant: Variant::V2,
            temporal_kernels: vec![64, 16, 4],
            classifier_hidden: None,
            ..Self::v1()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::V1 => Self::v1(),
            Variant::V2 => Self::v2(),
        }
    }

    /// Small geometry for finite-difference checks: 4 channels, 64 samples, d = 8.
    pub fn tiny(variant: Variant) -> Self {
        let base = Self::for_variant(variant);
        Self {
            f1: 2,
            depth_mult: 2,
            f2: 4,
            temporal_kernels: match variant {
                Variant::V1 => vec![8],
                Variant::V2 => vec![8, 4, 2],
            },
            separable_kernel: 4,
            pool1: 2,
            pool2: 4,
            channels: 4,
            samples: 64,
            latent_dim: 8,
            decoder_temporal_kernel: 8,
            classifier_hidden: base.classifier_hidden.map(|_| 8),
            ..base
        }
    }

    pub fn branches(&self) -> usize {
        self.temporal_kernels.len()
    }

    /// Time steps left after both pooling stages.
    pub fn pooled_len(&self) -> usize {
        self.samples / (self.pool1 * self.pool2)
    }

    /// Width of one branch's flattened feature map.
    pub fn flatten_width(&self) -> usize {
        self.f2 * self.pooled_len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let positive = [
            ("f1", self.f1),
            ("depth_mult", self.depth_mult),
            ("f2", self.f2),
            ("separable_kernel", self.separable_kernel),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
            ("channels", self.channels),
            ("samples", self.samples),
            ("latent_dim", self.latent_dim),
            ("decoder_temporal_kernel", self.decoder_temporal_kernel),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.temporal_kernels.is_empty() || self.temporal_kernels.contains(&0) {
            return bad("temporal_kernels must be a non-empty list of positive sizes".into());
        }
        if self.variant == Variant::V1 && self.branches() != 1 {
            return bad(format!("v1 has one encoder branch, got {}", self.branches()));
        }
        if !self.samples.is_multiple_of(self.pool1 * self.pool2) {
            return bad(format!(
                "samples {} not divisible by pool1*pool2 = {}",
                self.samples,
                self.pool1 * self.pool2
            ));
        }
        if let Some(k) = self
            .temporal_kernels
            .iter()
            .chain([&self.decoder_temporal_kernel])
            .find(|&&k| k > self.samples)
        {
            return bad(format!("temporal kernel {k} exceeds samples {}", self.samples));
        }
        if self.separable_kernel > self.samples / self.pool1 {
            return bad("separable kernel longer than the pooled sequence".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.classifier_hidden == Some(0) {
            return bad("classifier_hidden must be positive when set".into());
        }
        Ok(())
    }

    pub(crate) fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }
}
