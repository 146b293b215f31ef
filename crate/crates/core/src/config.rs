//! Architecture selection and dimension presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw per-frame widths of the three feature streams.
pub const HEAD_DIM: usize = 3;
pub const BODY_DIM: usize = 34;
pub const HAND_DIM: usize = 8;

/// Epsilon inside the layer-norm square root.
pub const LN_EPS: f64 = 1e-5;

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $kw)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $kw),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($kw => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " '{}'"),
                        s
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// How the camera-view axis is reduced in the context block.
    Aggregation { Gap => "gap", Ws => "ws", Conv1d => "conv1d" }
);

keyword_enum!(
    /// How context and feature embeddings are merged.
    FusionStrategy { Cf => "cf", Af => "af", Caf => "caf" }
);

keyword_enum!(
    /// Feature stream. The declaration order is the concatenation order.
    Modality { Body => "body", Head => "head", Hand => "hand" }
);

keyword_enum!(
    /// Which network is built.
    ModelKind { Context => "context", Feature => "feature", DriverNet => "drivernet" }
);

keyword_enum!(
    /// End-to-end training versus fusion-only training on frozen blocks.
    Regime { All => "all", Fusion => "fusion" }
);

impl Modality {
    /// Width of the raw per-frame vector.
    pub fn input_dim(self) -> usize {
        match self {
            Modality::Body => BODY_DIM,
            Modality::Head => HEAD_DIM,
            Modality::Hand => HAND_DIM,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Non-empty subset of the feature streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Modality>", into = "Vec<Modality>")]
pub struct ModalitySet([bool; 3]);

impl ModalitySet {
    pub fn all() -> Self {
        Self([true; 3])
    }

    pub fn only(m: Modality) -> Self {
        let mut set = [false; 3];
        set[m.index()] = true;
        Self(set)
    }

    pub fn from_slice(mods: &[Modality]) -> Result<Self> {
        let mut set = [false; 3];
        for m in mods {
            set[m.index()] = true;
        }
        if !set.iter().any(|&b| b) {
            return Err(Error::Config("modality set is empty".into()));
        }
        Ok(Self(set))
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0[m.index()]
    }

    /// Active modalities in concatenation order.
    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.iter().copied().filter(|m| self.contains(*m))
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TryFrom<Vec<Modality>> for ModalitySet {
    type Error = Error;

    fn try_from(v: Vec<Modality>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<ModalitySet> for Vec<Modality> {
    fn from(s: ModalitySet) -> Self {
        s.iter().collect()
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Modality::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        let mods = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<Modality>>>()?;
        Self::from_slice(&mods)
    }
}

/// Per-modality widths, indexed in concatenation order (body, head, hand).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDims {
    pub body: usize,
    pub head: usize,
    pub hand: usize,
}

impl StreamDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Body => self.body,
            Modality::Head => self.head,
            Modality::Hand => self.hand,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub aggregation: Aggregation,
    pub fusion: FusionStrategy,
    pub modalities: ModalitySet,
    /// Camera views per clip.
    pub views: usize,
    /// Frames per clip (N).
    pub frames: usize,
    /// Colour channels per frame.
    pub channels: usize,
    /// Square frame side in pixels.
    pub frame_size: usize,
    /// Output channels of each 3D conv stage; the last equals `d_model`.
    pub encoder_channels: Vec<usize>,
    pub d_model: usize,
    pub context_heads: usize,
    pub conv_kernel: usize,
    pub fcl_dims: StreamDims,
    pub gru_dims: StreamDims,
    pub feature_heads: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    /// Whether the visual encoder is updated during end-to-end training.
    pub train_encoder: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Dimensions from the paper; used for parameter audits.
    pub fn paper() -> Self {
        Self {
            kind: ModelKind::DriverNet,
            aggregation: Aggregation::Gap,
            fusion: FusionStrategy::Cf,
            modalities: ModalitySet::all(),
            views: 3,
            frames: 16,
            channels: 3,
            frame_size: 32,
            encoder_channels: vec![16, 32, 64, 256],
            d_model: 256,
            context_heads: 4,
            conv_kernel: 3,
            fcl_dims: StreamDims { body: 64, head: 16, hand: 16 },
            gru_dims: StreamDims { body: 128, head: 32, hand: 32 },
            feature_heads: 4,
            head_hidden: 32,
            dropout: 0.5,
            train_encoder: true,
            seed: 0,
        }
    }

    /// Narrow widths and 8×8 frames; trains on a single CPU core in minutes.
    pub fn compact() -> Self {
        Self {
            frame_size: 8,
            encoder_channels: vec![8, 32],
            d_model: 32,
            fcl_dims: StreamDims { body: 16, head: 8, hand: 8 },
            gru_dims: StreamDims { body: 32, head: 16, hand: 16 },
            ..Self::paper()
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            frames: 4,
            frame_size: 8,
            encoder_channels: vec![3, 8],
            d_model: 8,
            context_heads: 2,
            fcl_dims: StreamDims { body: 4, head: 2, hand: 2 },
            gru_dims: StreamDims { body: 4, head: 2, hand: 2 },
            feature_heads: 2,
            head_hidden: 4,
            ..Self::paper()
        }
    }

    pub fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_fusion(mut self, fusion: FusionStrategy) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_modalities(mut self, modalities: ModalitySet) -> Self {
        self.modalities = modalities;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn uses_context(&self) -> bool {
        self.kind != ModelKind::Feature
    }

    pub fn uses_features(&self) -> bool {
        self.kind != ModelKind::Context
    }

    /// Width of the concatenated GRU outputs for the active modalities.
    pub fn feature_width(&self) -> usize {
        self.modalities.iter().map(|m| self.gru_dims.get(m)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.views == 0 || self.frames == 0 || self.channels == 0 {
            return bad("views, frames and channels must be positive".into());
        }
        if self.uses_context() {
            let Some(&last) = self.encoder_channels.last() else {
                return bad("encoder needs at least one stage".into());
            };
            if last != self.d_model {
                return bad(format!(
                    "last encoder stage has {last} channels but the model width is {}",
                    self.d_model
                ));
            }
            if self.encoder_channels.contains(&0) {
                return bad("encoder channel counts must be positive".into());
            }
            let min = 1usize << self.encoder_channels.len();
            if self.frame_size < min {
                return bad(format!(
                    "frames of {0}×{0} are too small for {1} encoder stages (need {min})",
                    self.frame_size,
                    self.encoder_channels.len()
                ));
            }
            if self.context_heads == 0 || !self.d_model.is_multiple_of(self.context_heads) {
                return bad(format!(
                    "model width {} is not divisible by {} heads",
                    self.d_model, self.context_heads
                ));
            }
            if self.aggregation == Aggregation::Conv1d && self.views < self.conv_kernel {
                return bad(format!(
                    "Conv1D aggregation needs at least {} views, got {}",
                    self.conv_kernel, self.views
                ));
            }
        }
        if self.uses_features() {
            if self.modalities.is_empty() {
                return bad("modality set is empty".into());
            }
            let width = self.feature_width();
            if self.feature_heads == 0 || !width.is_multiple_of(self.feature_heads) {
                return bad(format!(
                    "feature width {width} is not divisible by {} heads",
                    self.feature_heads
                ));
            }
            for m in self.modalities.iter() {
                if self.fcl_dims.get(m) == 0 || self.gru_dims.get(m) == 0 {
                    return bad(format!("{m} stream widths must be positive"));
                }
            }
        }
        if self.d_model == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::paper(), ModelConfig::compact(), ModelConfig::miniature()] {
            for kind in ModelKind::ALL {
                for &m in Modality::ALL {
                    cfg.clone().with_kind(*kind).with_modalities(ModalitySet::only(m)).validate().unwrap();
                }
                cfg.clone().with_kind(*kind).validate().unwrap();
            }
        }
    }

    #[test]
    fn paper_feature_width_is_192() {
        assert_eq!(ModelConfig::paper().feature_width(), 192);
    }

    #[test]
    fn keyword_parsing() {
        assert_eq!("Conv1D".parse::<Aggregation>().unwrap(), Aggregation::Conv1d);
        assert_eq!("caf".parse::<FusionStrategy>().unwrap(), FusionStrategy::Caf);
        assert!("mean".parse::<Aggregation>().is_err());
        let set: ModalitySet = "hand, body".parse().unwrap();
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![Modality::Body, Modality::Hand]);
        assert_eq!("all".parse::<ModalitySet>().unwrap(), ModalitySet::all());
        assert!("".parse::<ModalitySet>().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ModelConfig::paper();
        cfg.views = 2;
        cfg.aggregation = Aggregation::Conv1d;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::paper();
        cfg.encoder_channels = vec![16, 128];
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::paper();
        cfg.frame_size = 8;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::paper();
        cfg.context_heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ModelConfig::compact().with_modalities(ModalitySet::only(Modality::Head));
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"modalities\":[\"head\"]"));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
