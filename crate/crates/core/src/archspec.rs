//! Declarative model descriptions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Video architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "TSN")]
    Tsn,
    #[serde(rename = "I3D")]
    I3d,
    #[serde(rename = "S3D")]
    S3d,
    #[serde(rename = "TAM")]
    Tam,
    #[serde(rename = "TSM")]
    Tsm,
    #[serde(rename = "Conv1D")]
    Conv1d,
    #[serde(rename = "TSN+NLN")]
    TsnNln,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Tsn,
        Family::I3d,
        Family::S3d,
        Family::Tam,
        Family::Tsm,
        Family::Conv1d,
        Family::TsnNln,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Tsn => "TSN",
            Family::I3d => "I3D",
            Family::S3d => "S3D",
            Family::Tam => "TAM",
            Family::Tsm => "TSM",
            Family::Conv1d => "Conv1D",
            Family::TsnNln => "TSN+NLN",
        }
    }

    /// 3D families consume `C×F×H×W` volumes; the rest are 2D models over a
    /// batch of frames.
    pub fn is_3d(self) -> bool {
        matches!(self, Family::I3d | Family::S3d)
    }

    /// Families that add one temporal module per backbone insertion point.
    pub fn has_per_block_modules(self) -> bool {
        matches!(self, Family::Tam | Family::Tsm | Family::Conv1d)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown family `{s}`")))
    }
}

/// 2D backbone network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Backbone {
    InceptionV1,
    ResNet18,
    ResNet50,
    TinyNet,
}

impl Backbone {
    pub const ALL: [Backbone; 4] =
        [Backbone::InceptionV1, Backbone::ResNet18, Backbone::ResNet50, Backbone::TinyNet];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::InceptionV1 => "InceptionV1",
            Backbone::ResNet18 => "ResNet18",
            Backbone::ResNet50 => "ResNet50",
            Backbone::TinyNet => "TinyNet",
        }
    }

    pub fn is_resnet(self) -> bool {
        matches!(self, Backbone::ResNet18 | Backbone::ResNet50)
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown backbone `{s}`")))
    }
}

/// Which insertion points receive a temporal module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Placement {
    #[default]
    All,
    TopHalf,
    BottomHalf,
    UniformHalf,
}

impl Placement {
    pub const ALL: [Placement; 4] =
        [Placement::All, Placement::TopHalf, Placement::BottomHalf, Placement::UniformHalf];

    pub fn name(self) -> &'static str {
        match self {
            Placement::All => "All",
            Placement::TopHalf => "TopHalf",
            Placement::BottomHalf => "BottomHalf",
            Placement::UniformHalf => "UniformHalf",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Placement::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown placement `{s}`")))
    }
}

/// Description of one model: architecture, backbone, input length and
/// temporal pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    pub backbone: Backbone,
    pub frames: usize,
    #[serde(default)]
    pub temporal_pool: bool,
    #[serde(default)]
    pub placement: Placement,
    pub num_classes: usize,
}

/// One broken rule of an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Temporal max pools applied when `temporal_pool` is set.
pub const TEMPORAL_POOLS: usize = 3;
/// Minimum frame count that survives three stride-2 temporal pools.
pub const MIN_FRAMES_WITH_POOLING: usize = 8;

impl ArchSpec {
    pub fn new(family: Family, backbone: Backbone, frames: usize, num_classes: usize) -> Self {
        Self {
            family,
            backbone,
            frames,
            temporal_pool: false,
            placement: Placement::All,
            num_classes,
        }
    }

    pub fn with_temporal_pool(mut self, on: bool) -> Self {
        self.temporal_pool = on;
        self
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    /// All rule violations; empty iff the spec is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.frames == 0 {
            out.push(Violation { field: "frames", rule: "frames must be positive".into() });
        }
        if self.num_classes == 0 {
            out.push(Violation {
                field: "num_classes",
                rule: "num_classes must be positive".into(),
            });
        }
        if self.placement != Placement::All && !self.family.has_per_block_modules() {
            out.push(Violation {
                field: "placement",
                rule: format!(
                    "placement {} is invalid for {}: only TAM, TSM and Conv1D have per-block temporal modules",
                    self.placement, self.family
                ),
            });
        }
        if self.temporal_pool && self.frames < MIN_FRAMES_WITH_POOLING {
            out.push(Violation {
                field: "frames",
                rule: format!(
                    "frames={} < {MIN_FRAMES_WITH_POOLING} with temporal_pool: three stride-2 temporal pools need at least {MIN_FRAMES_WITH_POOLING} frames",
                    self.frames
                ),
            });
        }
        if self.family == Family::TsnNln && !self.backbone.is_resnet() {
            out.push(Violation {
                field: "backbone",
                rule: format!("TSN+NLN needs a ResNet backbone, got {}", self.backbone),
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            return Ok(());
        }
        let msg: Vec<String> = violations.iter().map(|v| format!("{v}")).collect();
        Err(Error::InvalidSpec(msg.join("; ")))
    }

    /// `family-backbone[-tp]`, e.g. `I3D-ResNet18-tp`.
    pub fn canonical_name(&self) -> Result<String> {
        self.ensure_valid()?;
        let mut name = format!("{}-{}", self.family, self.backbone);
        if self.temporal_pool {
            name.push_str("-tp");
        }
        Ok(name)
    }
}
