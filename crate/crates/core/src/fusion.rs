//! Cross-modal fusion and the assembled network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{FusionStrategy, ModelConfig, ModelKind, Regime};
use crate::context::ContextBlock;
use crate::error::{shape_err, Error, Result};
use crate::feature::{FeatureBlock, FeatureStreams, NormStats};
use crate::nn::{Activation, Dropout, Graph, Linear, Mode, MultiHeadAttention, ParamStore};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub strategy: FusionStrategy,
    pub concat_fcl: Option<Linear>,
    pub cross_attention: Option<MultiHeadAttention>,
    pub hidden: Linear,
    pub dropout: Dropout,
    pub out: Linear,
    frames: usize,
    d_model: usize,
}

impl FusionBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        let concat_fcl = match cfg.fusion {
            FusionStrategy::Cf => Some(Linear::new(
                store,
                &format!("{name}.concat"),
                cfg.frames * 2 * d,
                d,
                Activation::Relu,
                rng,
            )?),
            _ => None,
        };
        let cross_attention = match cfg.fusion {
            FusionStrategy::Caf => Some(MultiHeadAttention::new(
                store,
                &format!("{name}.cross_attn"),
                d,
                cfg.context_heads,
                rng,
            )?),
            _ => None,
        };
        let hidden = Linear::new(store, &format!("{name}.hidden"), d, cfg.head_hidden, Activation::Relu, rng)?;
        let out = Linear::new(store, &format!("{name}.out"), cfg.head_hidden, 2, Activation::Identity, rng)?;
        Ok(Self {
            strategy: cfg.fusion,
            concat_fcl,
            cross_attention,
            hidden,
            dropout: Dropout::new(cfg.dropout)?,
            out,
            frames: cfg.frames,
            d_model: d,
        })
    }

    pub fn param_count(&self) -> usize {
        self.concat_fcl.as_ref().map_or(0, Linear::param_count)
            + self.cross_attention.as_ref().map_or(0, MultiHeadAttention::param_count)
            + self.hidden.param_count()
            + self.out.param_count()
    }

    /// Merges `x_context` and `x_feature`, both `[B, N, d]`, into `[B, d]`.
    pub fn fuse(&self, g: &mut Graph, x_context: Var, x_feature: Var) -> Result<Var> {
        let (cs, fs) = (g.shape(x_context).to_vec(), g.shape(x_feature).to_vec());
        if cs != fs || cs.len() != 3 || cs[2] != self.d_model {
            return Err(shape_err(
                "fuse",
                format!("context {cs:?} and feature {fs:?} are not matching [B, N, {}]", self.d_model),
            ));
        }
        let (b, n, d) = (cs[0], cs[1], cs[2]);
        match self.strategy {
            FusionStrategy::Cf => {
                if n != self.frames {
                    return Err(shape_err(
                        "fuse",
                        format!("concatenation fusion is sized for {} frames, got {n}", self.frames),
                    ));
                }
                let x = g.concat(&[x_context, x_feature], 2)?;
                let x = g.reshape(x, &[b, n * 2 * d])?;
                self.concat_fcl.as_ref().expect("built for CF").forward(g, x)
            }
            FusionStrategy::Af => {
                let x = g.add(x_context, x_feature)?;
                g.mean(x, 1)
            }
            FusionStrategy::Caf => {
                let attn = self.cross_attention.as_ref().expect("built for CAF");
                let x = attn.forward(g, x_context, x_feature)?;
                g.mean(x, 1)
            }
        }
    }

    /// Classification head on the fused `[B, d]` vector.
    pub fn head(&self, g: &mut Graph, fused: Var) -> Result<Var> {
        let h = self.hidden.forward(g, fused)?;
        let h = self.dropout.forward(g, h)?;
        self.out.forward(g, h)
    }
}

/// Model inputs for one batch. Cached embeddings, when given, replace the
/// corresponding part of the forward pass and must have been computed with
/// the current parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct Inputs<'a> {
    /// `[B, V, N, C, W, H]`
    pub clips: Option<&'a Tensor>,
    /// Normalized streams.
    pub streams: Option<&'a FeatureStreams>,
    /// Encoder output `[B, V, N, d]`.
    pub encoded: Option<&'a Tensor>,
    /// X_context `[B, N, d]`.
    pub context: Option<&'a Tensor>,
    /// X_feature `[B, N, d]`.
    pub feature: Option<&'a Tensor>,
}

/// Parameter totals of one named layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub count: usize,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Every scalar in the model.
    pub total: usize,
    /// Scalars updated by training and reported as trainable; excludes
    /// frozen parameters and the visual encoder.
    pub trainable: usize,
    /// Visual encoder scalars.
    pub encoder: usize,
    /// Context, feature and fusion parts of `trainable`.
    pub context: usize,
    pub feature: usize,
    pub fusion: usize,
    pub layers: Vec<LayerCount>,
}

const ENCODER_PREFIX: &str = "context.encoder.";

/// A context-only, feature-only, or fused network with its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub context: Option<ContextBlock>,
    pub feature: Option<FeatureBlock>,
    pub fusion: Option<FusionBlock>,
    pub norm: Option<NormStats>,
    regime: Regime,
}

impl Network {
    /// Builds and initializes the network from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let standalone = config.kind != ModelKind::DriverNet;
        let context = if config.uses_context() {
            Some(ContextBlock::new(&mut store, "context", &config, standalone, &mut rng)?)
        } else {
            None
        };
        let feature = if config.uses_features() {
            Some(FeatureBlock::new(&mut store, "feature", &config, standalone, &mut rng)?)
        } else {
            None
        };
        let fusion = if config.kind == ModelKind::DriverNet {
            Some(FusionBlock::new(&mut store, "fusion", &config, &mut rng)?)
        } else {
            None
        };
        let mut net = Self {
            config,
            store,
            context,
            feature,
            fusion,
            norm: None,
            regime: Regime::All,
        };
        net.set_regime(Regime::All)?;
        Ok(net)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `All` trains every block (the encoder only if `train_encoder`);
    /// `Fusion` freezes the context and feature blocks.
    pub fn set_regime(&mut self, regime: Regime) -> Result<()> {
        if regime == Regime::Fusion && self.config.kind != ModelKind::DriverNet {
            return Err(Error::Config("fusion-only training needs the assembled network".into()));
        }
        self.store.set_frozen("", false);
        if !self.config.train_encoder {
            self.store.set_frozen(ENCODER_PREFIX, true);
        }
        if regime == Regime::Fusion {
            self.store.set_frozen("context.", true);
            self.store.set_frozen("feature.", true);
        }
        self.regime = regime;
        Ok(())
    }

    /// Copies same-named parameters under `prefix` (e.g. `"context."`) from a
    /// standalone block; its head has no counterpart and is skipped.
    pub fn load_block(&mut self, source: &Network, prefix: &str) -> Result<usize> {
        let copied = self.store.copy_from(&source.store, prefix)?;
        let expected = self.store.iter().filter(|(_, p)| p.name.starts_with(prefix)).count();
        if copied != expected {
            return Err(Error::Config(format!(
                "source provides {copied} of {expected} parameters under '{prefix}'"
            )));
        }
        if prefix.starts_with("feature") && self.norm.is_none() {
            self.norm = source.norm.clone();
        }
        Ok(copied)
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut layers: Vec<LayerCount> = Vec::new();
        let mut count = ParamCount {
            total: 0,
            trainable: 0,
            encoder: 0,
            context: 0,
            feature: 0,
            fusion: 0,
            layers: Vec::new(),
        };
        for (_, p) in self.store.iter() {
            let n = p.value.numel();
            count.total += n;
            let encoder = p.name.starts_with(ENCODER_PREFIX);
            if encoder {
                count.encoder += n;
            } else if !p.frozen {
                count.trainable += n;
                match p.name.split('.').next() {
                    Some("context") => count.context += n,
                    Some("feature") => count.feature += n,
                    _ => count.fusion += n,
                }
            }
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            match layers.last_mut() {
                Some(last) if last.name == layer => last.count += n,
                _ => layers.push(LayerCount {
                    name: layer.to_string(),
                    count: n,
                    frozen: p.frozen,
                }),
            }
        }
        count.layers = layers;
        count
    }

    fn context_block(&self) -> Result<&ContextBlock> {
        self.context
            .as_ref()
            .ok_or_else(|| Error::Contract("network has no context block".into()))
    }

    fn feature_block(&self) -> Result<&FeatureBlock> {
        self.feature
            .as_ref()
            .ok_or_else(|| Error::Contract("network has no feature block".into()))
    }

    /// X_context `[B, N, d]` from the most processed input available.
    pub fn context_embedding(&self, g: &mut Graph, inputs: &Inputs) -> Result<Var> {
        if let Some(t) = inputs.context {
            return Ok(g.input(t.clone()));
        }
        let block = self.context_block()?;
        if let Some(t) = inputs.encoded {
            let enc = g.input(t.clone());
            return block.forward_encoded(g, enc);
        }
        let clips = inputs
            .clips
            .ok_or_else(|| Error::Contract("context block needs clips or a cached embedding".into()))?;
        let x = g.input(clips.clone());
        block.forward(g, x)
    }

    /// X_feature `[B, N, d]`.
    pub fn feature_embedding(&self, g: &mut Graph, inputs: &Inputs) -> Result<Var> {
        if let Some(t) = inputs.feature {
            return Ok(g.input(t.clone()));
        }
        let streams = inputs
            .streams
            .ok_or_else(|| Error::Contract("feature block needs streams or a cached embedding".into()))?;
        self.feature_block()?.forward(g, streams)
    }

    /// Class logits `[B, 2]`; index 1 is "ready".
    pub fn logits(&self, g: &mut Graph, inputs: &Inputs) -> Result<Var> {
        match self.config.kind {
            ModelKind::Context => {
                let x = self.context_embedding(g, inputs)?;
                self.context_block()?.head_logits(g, x)
            }
            ModelKind::Feature => {
                let x = self.feature_embedding(g, inputs)?;
                self.feature_block()?.head_logits(g, x)
            }
            ModelKind::DriverNet => {
                let xc = self.context_embedding(g, inputs)?;
                let xf = self.feature_embedding(g, inputs)?;
                let fusion = self.fusion.as_ref().expect("assembled network has a fusion block");
                let fused = fusion.fuse(g, xc, xf)?;
                fusion.head(g, fused)
            }
        }
    }

    /// Evaluation-mode logits as a tensor.
    pub fn predict(&self, inputs: &Inputs) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let y = self.logits(&mut g, inputs)?;
        Ok(g.value(y).clone())
    }

    /// Encoder output `[B, V, N, d]` in evaluation mode.
    pub fn encode(&self, clips: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let x = g.input(clips.clone());
        let y = self.context_block()?.encode_views(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// X_context in evaluation mode, for caching a frozen block.
    pub fn embed_context(&self, inputs: &Inputs) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let v = self.context_embedding(&mut g, inputs)?;
        Ok(g.value(v).clone())
    }

    /// X_feature in evaluation mode.
    pub fn embed_feature(&self, inputs: &Inputs) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let v = self.feature_embedding(&mut g, inputs)?;
        Ok(g.value(v).clone())
    }
}
