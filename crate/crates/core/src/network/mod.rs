//! Dual-path fusion network with spatial-frequency fusion modules.

mod checkpoint;
mod params;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, load_checkpoint_for,
    save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use params::{Bound, ModelParams, Param};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channels produced by every block.
    pub growth: usize,
    /// Dense blocks per path, and fusion modules.
    pub blocks: usize,
    pub kernel: usize,
    /// Bottleneck ratio of the channel-attention MLP.
    pub attention_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            growth: 16,
            blocks: 4,
            kernel: 3,
            attention_reduction: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.growth == 0 || self.blocks == 0 {
            return Err(Error::InvalidArgument(
                "growth and blocks must be at least 1".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel {} must be odd",
                self.kernel
            )));
        }
        let r = self.attention_reduction;
        if r == 0 || !(2 * self.growth).is_multiple_of(r) {
            return Err(Error::InvalidArgument(format!(
                "attention reduction {r} must divide {}",
                2 * self.growth
            )));
        }
        Ok(())
    }
}

/// Which exposure a feature path processes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathSel {
    Over,
    Under,
}

impl PathSel {
    fn prefix(self) -> &'static str {
        match self {
            PathSel::Over => "path_over",
            PathSel::Under => "path_under",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Record per-module feature maps.
    pub taps: bool,
    /// Replace the frequency branch output with zeros.
    pub without_frequency: bool,
}

/// Feature maps of one fusion module.
#[derive(Clone, Copy, Debug)]
pub struct ModuleTaps {
    pub spatial: Var,
    pub frequency: Var,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `(N, 1, H, W)` in `[0, 1]`.
    pub fused: Var,
    pub taps: Vec<ModuleTaps>,
}

pub const MIN_SIZE: usize = 16;

fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    g.conv2d(x, w, b)
}

fn conv_prelu(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = conv(g, p, &format!("{name}.conv"), x)?;
    let a = p.var(&format!("{name}.prelu.slope"))?;
    g.prelu(y, a)
}

/// Stem plus dense blocks: returns `F¹ … F^{blocks+1}`, each `(N, G, H, W)`.
pub fn encoder_forward(
    g: &mut Graph,
    p: &Bound,
    config: &ModelConfig,
    path: PathSel,
    y: Var,
) -> Result<Vec<Var>> {
    let s = g.shape(y);
    if s.c != 1 || s.h < MIN_SIZE || s.w < MIN_SIZE {
        return Err(Error::Shape(format!(
            "encoder input {s} must be (N, 1, ≥{MIN_SIZE}, ≥{MIN_SIZE})"
        )));
    }
    let prefix = path.prefix();
    let mut feats = vec![conv_prelu(g, p, &format!("{prefix}.stem"), y)?];
    for i in 1..=config.blocks {
        let input = if i == 1 {
            feats[0]
        } else {
            g.concat_channels(&feats)?
        };
        feats.push(conv_prelu(g, p, &format!("{prefix}.block{i}"), input)?);
    }
    Ok(feats)
}

/// Fusion module `i` (1-based): frequency branch on `F^i`, spatial branch on `F^{i+1}`.
#[allow(clippy::too_many_arguments)]
pub fn sffm_forward(
    g: &mut Graph,
    p: &Bound,
    config: &ModelConfig,
    i: usize,
    over: Var,
    under: Var,
    over_next: Var,
    under_next: Var,
    options: ForwardOptions,
) -> Result<ModuleTaps> {
    let s = g.shape(over);
    for v in [under, over_next, under_next] {
        if g.shape(v) != s {
            return Err(Error::Shape(format!(
                "fusion module inputs {s} vs {}",
                g.shape(v)
            )));
        }
    }
    let name = format!("sffm{i}");
    let both_next = g.concat_channels(&[over_next, under_next])?;
    let spa = conv(g, p, &format!("{name}.spatial_conv"), both_next)?;

    let fre = if options.without_frequency {
        g.constant(Tensor::zeros(s))
    } else {
        let (amp_o, pha_o) = g.dft_layer(over)?;
        let (amp_u, pha_u) = g.dft_layer(under)?;
        let amps = g.concat_channels(&[amp_u, amp_o])?;
        let phas = g.concat_channels(&[pha_u, pha_o])?;
        let amp_f = conv_prelu(g, p, &format!("{name}.amp_cb"), amps)?;
        let pha_f = conv_prelu(g, p, &format!("{name}.pha_cb"), phas)?;
        let back = g.idft_layer(amp_f, pha_f)?;
        conv(g, p, &format!("{name}.freq_conv"), back)?
    };

    let both = g.concat_channels(&[spa, fre])?;
    let logits = conv(g, p, &format!("{name}.spatial_attn.conv"), both)?;
    let maps = g.sigmoid(logits)?;
    let s_spa = g.slice_channels(maps, 0, 1)?;
    let s_fre = g.slice_channels(maps, 1, 1)?;

    let sum = g.add(spa, fre)?;
    let pooled = g.gap(sum)?;
    let fc = format!("{name}.channel_attn");
    let hidden = g.linear(
        pooled,
        p.var(&format!("{fc}.fc1.weight"))?,
        p.var(&format!("{fc}.fc1.bias"))?,
    )?;
    let hidden = g.relu(hidden)?;
    let expanded = g.linear(
        hidden,
        p.var(&format!("{fc}.fc2.weight"))?,
        p.var(&format!("{fc}.fc2.bias"))?,
    )?;
    let gates = g.sigmoid(expanded)?;
    let c_spa = g.slice_channels(gates, 0, config.growth)?;
    let c_fre = g.slice_channels(gates, config.growth, config.growth)?;

    let a = g.mul(spa, s_spa)?;
    let a = g.mul(a, c_spa)?;
    let b = g.mul(fre, s_fre)?;
    let b = g.mul(b, c_fre)?;
    let mixed = g.add(a, b)?;
    let fused = conv(g, p, &format!("{name}.out_conv"), mixed)?;
    Ok(ModuleTaps {
        spatial: spa,
        frequency: fre,
        fused,
    })
}

/// Fuses luminance batches `(N, 1, H, W)` in `[0, 1]`.
pub fn model_forward(
    g: &mut Graph,
    p: &Bound,
    config: &ModelConfig,
    y_over: Var,
    y_under: Var,
    options: ForwardOptions,
) -> Result<ModelOutput> {
    if g.shape(y_over) != g.shape(y_under) {
        return Err(Error::Shape(format!(
            "exposures {} vs {}",
            g.shape(y_over),
            g.shape(y_under)
        )));
    }
    if g.is_checked() {
        for v in [y_over, y_under] {
            if g.value(v).data().iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidArgument(
                    "network input outside [0, 1]".into(),
                ));
            }
        }
    }
    let xo = g.affine(y_over, 2.0, -1.0)?;
    let xu = g.affine(y_under, 2.0, -1.0)?;
    let fo = encoder_forward(g, p, config, PathSel::Over, xo)?;
    let fu = encoder_forward(g, p, config, PathSel::Under, xu)?;
    let mut taps = Vec::with_capacity(config.blocks);
    for i in 1..=config.blocks {
        taps.push(sffm_forward(
            g,
            p,
            config,
            i,
            fo[i - 1],
            fu[i - 1],
            fo[i],
            fu[i],
            options,
        )?);
    }
    let fused: Vec<Var> = taps.iter().map(|t| t.fused).collect();
    let cat = if fused.len() == 1 {
        fused[0]
    } else {
        g.concat_channels(&fused)?
    };
    let head = conv(g, p, "head.conv", cat)?;
    let head = g.tanh(head)?;
    let out = g.affine(head, 0.5, 0.5)?;
    Ok(ModelOutput {
        fused: out,
        taps: if options.taps { taps } else { Vec::new() },
    })
}

/// Inference on a single pair of luminance planes in `[0, 1]`.
pub fn fuse_luma(
    params: &ModelParams,
    config: &ModelConfig,
    over: &Tensor,
    under: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let (o, u) = (g.constant(over.clone()), g.constant(under.clone()));
    let out = model_forward(&mut g, &p, config, o, u, ForwardOptions::default())?;
    Ok(g.value(out.fused).clone())
}
