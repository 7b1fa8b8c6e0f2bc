//! The three next-frame flow models.
//!
//! All three map frames `[batch×H×W]` to a predicted next frame of the same
//! shape. Only the transformer consumes the previous frame.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{conv_output_len, Tape, Var};
use crate::error::{dim_err, param_err, Error, Result};
use crate::nn::{
    bind_parameters, visit_child, visit_child_mut, Conv2dLayer, DecoderBlock, EncoderBlock, LayerNorm, Linear,
    Parameters, Phase, PositionalEncoding, TransformerBlockConfig,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameGeometry {
    pub height: usize,
    pub width: usize,
}

impl FrameGeometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(param_err!("frame geometry {}×{} must be positive", height, width));
        }
        Ok(FrameGeometry { height, width })
    }

    pub fn flat_len(&self) -> usize {
        self.height * self.width
    }
}

impl Default for FrameGeometry {
    /// 16×32, flattening to 512 values.
    fn default() -> Self {
        FrameGeometry { height: 16, width: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    FlowAutoencoder,
    FlowConvAutoencoder,
    FlowTransformer,
}

impl ModelKind {
    /// Fixed column order of the metric CSVs.
    pub const CSV_ORDER: [ModelKind; 3] =
        [ModelKind::FlowTransformer, ModelKind::FlowConvAutoencoder, ModelKind::FlowAutoencoder];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FlowAutoencoder => "FlowAutoencoder",
            ModelKind::FlowConvAutoencoder => "FlowConvAutoencoder",
            ModelKind::FlowTransformer => "FlowTransformer",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::FlowAutoencoder => 0,
            ModelKind::FlowConvAutoencoder => 1,
            ModelKind::FlowTransformer => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ModelKind::FlowAutoencoder),
            1 => Ok(ModelKind::FlowConvAutoencoder),
            2 => Ok(ModelKind::FlowTransformer),
            c => Err(param_err!("unknown model kind code {}", c)),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" | "FlowAutoencoder" => Ok(ModelKind::FlowAutoencoder),
            "conv" | "FlowConvAutoencoder" => Ok(ModelKind::FlowConvAutoencoder),
            "transformer" | "FlowTransformer" => Ok(ModelKind::FlowTransformer),
            other => Err(param_err!("unknown model tag `{}` (expected ae, conv or transformer)", other)),
        }
    }
}

/// Operator used for the conv decoder's upscale stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// How the transformer turns a frame into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tokenization {
    /// One token per frame (the whole flattened frame).
    Frame,
    /// One token per image row.
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderConfig {
    pub geometry: FrameGeometry,
    pub hidden: usize,
    pub bottleneck: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvAutoencoderConfig {
    pub geometry: FrameGeometry,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub upsample: UpsampleMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub geometry: FrameGeometry,
    pub block: TransformerBlockConfig,
    pub tokenization: Tokenization,
}

/// Architecture hyperparameters of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelConfig {
    FlowAutoencoder(AutoencoderConfig),
    FlowConvAutoencoder(ConvAutoencoderConfig),
    FlowTransformer(TransformerConfig),
}

impl ModelConfig {
    /// Benchmark defaults for `kind` at `geometry`.
    pub fn standard(kind: ModelKind, geometry: FrameGeometry) -> Self {
        match kind {
            ModelKind::FlowAutoencoder => {
                ModelConfig::FlowAutoencoder(AutoencoderConfig { geometry, hidden: 512, bottleneck: 128 })
            }
            ModelKind::FlowConvAutoencoder => ModelConfig::FlowConvAutoencoder(ConvAutoencoderConfig {
                geometry,
                channels: [8, 16],
                kernel: 3,
                upsample: UpsampleMode::Bilinear,
            }),
            ModelKind::FlowTransformer => ModelConfig::FlowTransformer(TransformerConfig {
                geometry,
                block: TransformerBlockConfig::default(),
                tokenization: Tokenization::Frame,
            }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::FlowAutoencoder(_) => ModelKind::FlowAutoencoder,
            ModelConfig::FlowConvAutoencoder(_) => ModelKind::FlowConvAutoencoder,
            ModelConfig::FlowTransformer(_) => ModelKind::FlowTransformer,
        }
    }

    pub fn geometry(&self) -> FrameGeometry {
        match self {
            ModelConfig::FlowAutoencoder(c) => c.geometry,
            ModelConfig::FlowConvAutoencoder(c) => c.geometry,
            ModelConfig::FlowTransformer(c) => c.geometry,
        }
    }

    /// Sets the dropout probability (transformer only; a no-op otherwise).
    pub fn with_dropout(mut self, p: f64) -> Self {
        if let ModelConfig::FlowTransformer(c) = &mut self {
            c.block.dropout_p = p;
        }
        self
    }

    /// Named numeric hyperparameters, as stored in checkpoints.
    pub fn hyperparameters(&self) -> Vec<(String, f64)> {
        let kv = |k: &str, v: f64| (String::from(k), v);
        match self {
            ModelConfig::FlowAutoencoder(c) => {
                vec![kv("hidden", c.hidden as f64), kv("bottleneck", c.bottleneck as f64)]
            }
            ModelConfig::FlowConvAutoencoder(c) => vec![
                kv("channels1", c.channels[0] as f64),
                kv("channels2", c.channels[1] as f64),
                kv("kernel", c.kernel as f64),
                kv("upsample_bilinear", if c.upsample == UpsampleMode::Bilinear { 1.0 } else { 0.0 }),
            ],
            ModelConfig::FlowTransformer(c) => vec![
                kv("d_model", c.block.d_model as f64),
                kv("num_heads", c.block.num_heads as f64),
                kv("d_ff", c.block.d_ff as f64),
                kv("dropout_p", c.block.dropout_p),
                kv("row_tokens", if c.tokenization == Tokenization::Rows { 1.0 } else { 0.0 }),
            ],
        }
    }

    /// Inverse of [`ModelConfig::hyperparameters`].
    pub fn from_hyperparameters(kind: ModelKind, geometry: FrameGeometry, hp: &[(String, f64)]) -> Result<Self> {
        let get = |key: &str| {
            hp.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| param_err!("hyperparameter `{}` missing for {}", key, kind))
        };
        let int = |key: &str| -> Result<usize> {
            let v = get(key)?;
            if v < 0.0 || libm::trunc(v) != v {
                return Err(param_err!("hyperparameter `{}` = {} is not a count", key, v));
            }
            Ok(v as usize)
        };
        Ok(match kind {
            ModelKind::FlowAutoencoder => ModelConfig::FlowAutoencoder(AutoencoderConfig {
                geometry,
                hidden: int("hidden")?,
                bottleneck: int("bottleneck")?,
            }),
            ModelKind::FlowConvAutoencoder => ModelConfig::FlowConvAutoencoder(ConvAutoencoderConfig {
                geometry,
                channels: [int("channels1")?, int("channels2")?],
                kernel: int("kernel")?,
                upsample: if get("upsample_bilinear")? != 0.0 { UpsampleMode::Bilinear } else { UpsampleMode::Nearest },
            }),
            ModelKind::FlowTransformer => ModelConfig::FlowTransformer(TransformerConfig {
                geometry,
                block: TransformerBlockConfig {
                    d_model: int("d_model")?,
                    num_heads: int("num_heads")?,
                    d_ff: int("d_ff")?,
                    dropout_p: get("dropout_p")?,
                },
                tokenization: if get("row_tokens")? != 0.0 { Tokenization::Rows } else { Tokenization::Frame },
            }),
        })
    }
}

fn frame_batch(tape: &Tape, x: Var, geometry: FrameGeometry, what: &str) -> Result<usize> {
    match tape.shape(x) {
        [b, h, w] if *h * *w == geometry.flat_len() && (*h, *w) == (geometry.height, geometry.width) => Ok(*b),
        s => Err(dim_err!(
            "{} frames {:?} do not match model geometry {}×{}",
            what,
            s,
            geometry.height,
            geometry.width
        )),
    }
}

/// Three fully connected tanh layers: flat, hidden, bottleneck, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAutoencoder {
    pub config: AutoencoderConfig,
    pub layer1: Linear,
    pub layer2: Linear,
    pub layer3: Linear,
}

impl FlowAutoencoder {
    pub fn new(config: AutoencoderConfig, rng: &mut Rng) -> Result<Self> {
        let n = config.geometry.flat_len();
        Ok(FlowAutoencoder {
            config,
            layer1: Linear::new("layer1", n, config.hidden, rng)?,
            layer2: Linear::new("layer2", config.hidden, config.bottleneck, rng)?,
            layer3: Linear::new("layer3", config.bottleneck, n, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, frame: Var) -> Result<Var> {
        let g = self.config.geometry;
        let batch = frame_batch(tape, frame, g, "FlowAutoencoder input")?;
        let mut x = tape.reshape(frame, &[batch, g.flat_len()])?;
        for layer in [&self.layer1, &self.layer2, &self.layer3] {
            let y = layer.forward(tape, x)?;
            x = tape.tanh(y);
        }
        tape.reshape(x, &[batch, g.height, g.width])
    }
}

impl Parameters for FlowAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &crate::Tensor)) {
        visit_child("layer1", &self.layer1, f);
        visit_child("layer2", &self.layer2, f);
        visit_child("layer3", &self.layer3, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::Tensor)) {
        visit_child_mut("layer1", &mut self.layer1, f);
        visit_child_mut("layer2", &mut self.layer2, f);
        visit_child_mut("layer3", &mut self.layer3, f);
    }
}

/// Two conv+pool+tanh encoder stages, two conv+upscale+tanh decoder stages,
/// then zero-pad or crop back to the input geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConvAutoencoder {
    pub config: ConvAutoencoderConfig,
    pub enc1: Conv2dLayer,
    pub enc2: Conv2dLayer,
    pub dec1: Conv2dLayer,
    pub dec2: Conv2dLayer,
}

impl FlowConvAutoencoder {
    pub fn new(config: ConvAutoencoderConfig, rng: &mut Rng) -> Result<Self> {
        let [c1, c2] = config.channels;
        let (k, p) = (config.kernel, config.kernel / 2);
        if k % 2 == 0 {
            return Err(param_err!("conv kernel size {} must be odd", k));
        }
        Ok(FlowConvAutoencoder {
            config,
            enc1: Conv2dLayer::new(1, c1, k, p, rng)?,
            enc2: Conv2dLayer::new(c1, c2, k, p, rng)?,
            dec1: Conv2dLayer::new(c2, c1, k, p, rng)?,
            dec2: Conv2dLayer::new(c1, 1, k, p, rng)?,
        })
    }

    fn upsample(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.config.upsample {
            UpsampleMode::Nearest => tape.upsample_nearest(x, 2),
            UpsampleMode::Bilinear => tape.upsample_bilinear(x, 2),
        }
    }

    /// `image: [batch×1×H×W]` to the same shape.
    pub fn forward_image(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let (h, w) = match tape.shape(image) {
            [_, 1, h, w] => (*h, *w),
            s => return Err(dim_err!("FlowConvAutoencoder expects [batch×1×H×W], got {:?}", s)),
        };
        if conv_output_len(h, 2, 0, 2).and_then(|v| conv_output_len(v, 2, 0, 2)).is_none()
            || conv_output_len(w, 2, 0, 2).and_then(|v| conv_output_len(v, 2, 0, 2)).is_none()
        {
            return Err(dim_err!("frame {}×{} is too small for two 2×2 pooling stages (need >= 4×4)", h, w));
        }
        let mut x = image;
        for conv in [&self.enc1, &self.enc2] {
            let y = conv.forward(tape, x)?;
            let (y, _) = tape.maxpool2d(y, 2, 2)?;
            x = tape.tanh(y);
        }
        for conv in [&self.dec1, &self.dec2] {
            let y = conv.forward(tape, x)?;
            let y = self.upsample(tape, y)?;
            x = tape.tanh(y);
        }
        tape.pad_crop(x, h, w)
    }

    pub fn forward(&self, tape: &mut Tape, frame: Var) -> Result<Var> {
        let g = self.config.geometry;
        let batch = frame_batch(tape, frame, g, "FlowConvAutoencoder input")?;
        let image = tape.reshape(frame, &[batch, 1, g.height, g.width])?;
        let out = self.forward_image(tape, image)?;
        tape.reshape(out, &[batch, g.height, g.width])
    }
}

impl Parameters for FlowConvAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &crate::Tensor)) {
        visit_child("enc1", &self.enc1, f);
        visit_child("enc2", &self.enc2, f);
        visit_child("dec1", &self.dec1, f);
        visit_child("dec2", &self.dec2, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::Tensor)) {
        visit_child_mut("enc1", &mut self.enc1, f);
        visit_child_mut("enc2", &mut self.enc2, f);
        visit_child_mut("dec1", &mut self.dec1, f);
        visit_child_mut("dec2", &mut self.dec2, f);
    }
}

/// Encoder-decoder transformer: the previous frame feeds the encoder, the
/// current frame the decoder, and a linear layer maps the decoder output
/// back to a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTransformer {
    pub config: TransformerConfig,
    pub embed_prev: Linear,
    pub embed_curr: Linear,
    pub pe: PositionalEncoding,
    pub encoder: EncoderBlock,
    pub encoder_norm: LayerNorm,
    pub decoder: DecoderBlock,
    pub decoder_norm: LayerNorm,
    pub unembed: Linear,
}

/// Transformer prediction with the attention weights of every stage.
pub struct TransformerTrace {
    pub output: Var,
    pub encoder_self: Vec<Var>,
    pub decoder_self: Vec<Var>,
    pub decoder_cross: Vec<Var>,
}

impl FlowTransformer {
    pub fn new(config: TransformerConfig, rng: &mut Rng) -> Result<Self> {
        config.block.validate()?;
        let d = config.block.d_model;
        let (tokens, width) = Self::token_layout(&config);
        Ok(FlowTransformer {
            config,
            embed_prev: Linear::new("embed_prev", width, d, rng)?,
            embed_curr: Linear::new("embed_curr", width, d, rng)?,
            pe: PositionalEncoding::new(tokens, d)?,
            encoder: EncoderBlock::new(config.block, rng)?,
            encoder_norm: LayerNorm::new(d)?,
            decoder: DecoderBlock::new(config.block, rng)?,
            decoder_norm: LayerNorm::new(d)?,
            unembed: Linear::new("unembed", d, width, rng)?,
        })
    }

    /// (tokens per frame, values per token).
    fn token_layout(config: &TransformerConfig) -> (usize, usize) {
        let g = config.geometry;
        match config.tokenization {
            Tokenization::Frame => (1, g.flat_len()),
            Tokenization::Rows => (g.height, g.width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, prev: Var, curr: Var, phase: &mut Phase<'_>) -> Result<Var> {
        Ok(self.forward_traced(tape, prev, curr, phase)?.output)
    }

    pub fn forward_traced(&self, tape: &mut Tape, prev: Var, curr: Var, phase: &mut Phase<'_>) -> Result<TransformerTrace> {
        let g = self.config.geometry;
        let batch = frame_batch(tape, prev, g, "FlowTransformer previous")?;
        if frame_batch(tape, curr, g, "FlowTransformer current")? != batch {
            return Err(dim_err!(
                "previous {:?} and current {:?} batches differ",
                tape.shape(prev),
                tape.shape(curr)
            ));
        }
        let (tokens, width) = Self::token_layout(&self.config);
        let p = self.config.block.dropout_p;

        let embed = |tape: &mut Tape, frames: Var, layer: &Linear, phase: &mut Phase<'_>| -> Result<Var> {
            let t = tape.reshape(frames, &[batch * tokens, width])?;
            let e = layer.forward(tape, t)?;
            let e = self.pe.add(tape, e, batch)?;
            crate::nn::dropout(tape, e, p, phase)
        };
        let src = embed(tape, prev, &self.embed_prev, phase)?;
        let tgt = embed(tape, curr, &self.embed_curr, phase)?;

        let d = self.config.block.d_model;
        let enc_sa = self.encoder.self_attn.forward_batched(tape, src, src, src, batch, p, phase)?;
        let memory = self.encoder.forward_after_attention(tape, src, enc_sa.output, phase)?;
        let memory = self.encoder_norm.forward(tape, memory)?;
        let dec = self.decoder.forward_traced(tape, tgt, memory, batch, phase)?;
        let out = self.decoder_norm.forward(tape, dec.output)?;
        debug_assert_eq!(tape.shape(out), [batch * tokens, d]);
        let out = self.unembed.forward(tape, out)?;
        let output = tape.reshape(out, &[batch, g.height, g.width])?;
        Ok(TransformerTrace {
            output,
            encoder_self: enc_sa.weights,
            decoder_self: dec.self_weights,
            decoder_cross: dec.cross_weights,
        })
    }
}

impl Parameters for FlowTransformer {
    fn visit(&self, f: &mut dyn FnMut(&str, &crate::Tensor)) {
        visit_child("embed_prev", &self.embed_prev, f);
        visit_child("embed_curr", &self.embed_curr, f);
        visit_child("encoder", &self.encoder, f);
        visit_child("encoder_norm", &self.encoder_norm, f);
        visit_child("decoder", &self.decoder, f);
        visit_child("decoder_norm", &self.decoder_norm, f);
        visit_child("unembed", &self.unembed, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::Tensor)) {
        visit_child_mut("embed_prev", &mut self.embed_prev, f);
        visit_child_mut("embed_curr", &mut self.embed_curr, f);
        visit_child_mut("encoder", &mut self.encoder, f);
        visit_child_mut("encoder_norm", &mut self.encoder_norm, f);
        visit_child_mut("decoder", &mut self.decoder, f);
        visit_child_mut("decoder_norm", &mut self.decoder_norm, f);
        visit_child_mut("unembed", &mut self.unembed, f);
    }
}

/// Any of the three benchmark models behind one interface. Variants are
/// held inline so weights stay reachable without indirection.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FlowModel {
    Autoencoder(FlowAutoencoder),
    ConvAutoencoder(FlowConvAutoencoder),
    Transformer(FlowTransformer),
}

impl FlowModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(match config {
            ModelConfig::FlowAutoencoder(c) => FlowModel::Autoencoder(FlowAutoencoder::new(c, rng)?),
            ModelConfig::FlowConvAutoencoder(c) => FlowModel::ConvAutoencoder(FlowConvAutoencoder::new(c, rng)?),
            ModelConfig::FlowTransformer(c) => FlowModel::Transformer(FlowTransformer::new(c, rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            FlowModel::Autoencoder(m) => ModelConfig::FlowAutoencoder(m.config),
            FlowModel::ConvAutoencoder(m) => ModelConfig::FlowConvAutoencoder(m.config),
            FlowModel::Transformer(m) => ModelConfig::FlowTransformer(m.config),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.config().geometry()
    }

    /// Predicts frame `t+1` from frames `t-1` (`prev`) and `t` (`curr`),
    /// both `[batch×H×W]`. Parameters must already be bound to `tape`.
    pub fn forward(&self, tape: &mut Tape, prev: Var, curr: Var, phase: &mut Phase<'_>) -> Result<Var> {
        match self {
            FlowModel::Autoencoder(m) => m.forward(tape, curr),
            FlowModel::ConvAutoencoder(m) => m.forward(tape, curr),
            FlowModel::Transformer(m) => m.forward(tape, prev, curr, phase),
        }
    }

    /// Evaluation-mode prediction on a private tape.
    pub fn predict(&mut self, prev: &Tensor, curr: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        bind_parameters(self, &mut tape);
        let p = tape.leaf(prev);
        let c = tape.leaf(curr);
        let out = self.forward(&mut tape, p, c, &mut Phase::Eval)?;
        Ok(tape.to_tensor(out))
    }
}

impl Parameters for FlowModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &crate::Tensor)) {
        match self {
            FlowModel::Autoencoder(m) => m.visit(f),
            FlowModel::ConvAutoencoder(m) => m.visit(f),
            FlowModel::Transformer(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::Tensor)) {
        match self {
            FlowModel::Autoencoder(m) => m.visit_mut(f),
            FlowModel::ConvAutoencoder(m) => m.visit_mut(f),
            FlowModel::Transformer(m) => m.visit_mut(f),
        }
    }
}
