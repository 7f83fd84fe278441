//! Synthetic exposure pairs, patch sampling, AdamW and the training loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{PlanarImage, Plane, SampleRange};
use crate::loss::{total_loss, LossWeights};
use crate::network::{model_forward, save_checkpoint, ForwardOptions, ModelConfig, ModelParams};
use crate::tensor::{grad_check_at, GradCheck, Graph, Shape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Reject non-finite intermediate values.
    pub checked: bool,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub forward: ForwardOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch: 64,
            batch: 8,
            lr: 1e-3,
            weight_decay: 9e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 1,
            max_steps: None,
            seed: 0,
            checked: false,
            checkpoint_every: 0,
            forward: ForwardOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch < crate::network::MIN_SIZE {
            return Err(Error::InvalidArgument(format!(
                "patch {} below {}",
                self.patch,
                crate::network::MIN_SIZE
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidArgument(
                "lr and eps must be positive, weight decay non-negative".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, pairs: usize) -> usize {
        pairs.div_ceil(self.batch)
    }
}

/// Two aligned exposures of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposurePair {
    pub over: PlanarImage,
    pub under: PlanarImage,
    pub reference: Option<PlanarImage>,
}

impl ExposurePair {
    pub fn new(over: PlanarImage, under: PlanarImage) -> Result<Self> {
        over.same_dims(&under)?;
        Ok(ExposurePair {
            over,
            under,
            reference: None,
        })
    }
}

/// Luma in `[0, 1]`.
pub fn luma_unit(img: &PlanarImage) -> Result<Plane> {
    if img.channels() == 1 && img.range() == SampleRange::Unit {
        return Ok(img.channel(0));
    }
    Ok(img.luma()?.map(|v| v / 255.0))
}

/// A procedural grayscale scene in `[0, 1]` with smooth illumination, bright
/// and dark regions, edges and fine texture.
pub fn synth_scene(width: usize, height: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let lights: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..w),
                rng.gen_range(0.0..h),
                rng.gen_range(0.15..0.45) * w.max(h),
                rng.gen_range(0.3..0.7),
            )
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let (x0, y0) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            let (rw, rh) = (rng.gen_range(0.1..0.4) * w, rng.gen_range(0.1..0.4) * h);
            (x0, y0, x0 + rw, y0 + rh, rng.gen_range(-0.35..0.35))
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle: f64 = rng.gen_range(0.0..PI);
            let period = rng.gen_range(3.0..14.0);
            (
                angle.cos() * 2.0 * PI / period,
                angle.sin() * 2.0 * PI / period,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.02..0.07),
            )
        })
        .collect();
    let tilt = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let plane = Plane::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.25 + tilt.0 * (xf / w - 0.5) + tilt.1 * (yf / h - 0.5);
        for &(cx, cy, r, a) in &lights {
            let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
            v += a * (-d2 / (2.0 * r * r)).exp();
        }
        for &(x0, y0, x1, y1, a) in &rects {
            if (x0..x1).contains(&xf) && (y0..y1).contains(&yf) {
                v += a;
            }
        }
        for &(kx, ky, ph, a) in &waves {
            v += a * (kx * xf + ky * yf + ph).sin();
        }
        v.clamp(0.0, 1.0)
    });
    PlanarImage::from_plane(&plane, SampleRange::Unit).expect("clamped scene is in range")
}

/// `clamp(base^γ · s)` per sample.
pub fn expose(base: &PlanarImage, gamma: f64, gain: f64) -> Result<PlanarImage> {
    let data = base
        .data()
        .iter()
        .map(|v| (v.powf(gamma) * gain).clamp(0.0, 1.0))
        .collect();
    PlanarImage::new(
        base.width(),
        base.height(),
        base.channels(),
        SampleRange::Unit,
        data,
    )
}

/// Over/under exposures of `base` with per-pair gamma and gain drawn from the
/// seeded generator: γ_o ∈ [0.3, 0.6], s_o ∈ [1.2, 1.6], γ_u ∈ [1.8, 2.6],
/// s_u ∈ [0.4, 0.7].
pub fn synth_pairs(base: &PlanarImage, count: usize, seed: u64) -> Result<Vec<ExposurePair>> {
    if base.range() != SampleRange::Unit {
        return Err(Error::InvalidArgument(
            "synthetic pairs need a [0, 1] base image".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (go, so) = (rng.gen_range(0.3..=0.6), rng.gen_range(1.2..=1.6));
            let (gu, su) = (rng.gen_range(1.8..=2.6), rng.gen_range(0.4..=0.7));
            Ok(ExposurePair {
                over: expose(base, go, so)?,
                under: expose(base, gu, su)?,
                reference: Some(base.clone()),
            })
        })
        .collect()
}

/// Luma planes of a pair in `[0, 1]`, prepared once for cropping.
#[derive(Clone, Debug, PartialEq)]
pub struct LumaPair {
    pub over: Plane,
    pub under: Plane,
}

impl LumaPair {
    pub fn from_pair(p: &ExposurePair) -> Result<Self> {
        p.over.same_dims(&p.under)?;
        Ok(LumaPair {
            over: luma_unit(&p.over)?,
            under: luma_unit(&p.under)?,
        })
    }
}

fn crop(p: &Plane, x0: usize, y0: usize, size: usize, out: &mut Vec<f64>) {
    for y in y0..y0 + size {
        out.extend_from_slice(&p.data[y * p.width + x0..y * p.width + x0 + size]);
    }
}

/// Aligned random crops of the listed pairs, stacked to `(len, 1, patch, patch)`.
pub fn sample_batch(
    pairs: &[LumaPair],
    indices: &[usize],
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    let mut over = Vec::with_capacity(indices.len() * patch * patch);
    let mut under = Vec::with_capacity(indices.len() * patch * patch);
    for &i in indices {
        let p = pairs
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("pair index {i} out of range")))?;
        let (w, h) = (p.over.width, p.over.height);
        if w < patch || h < patch {
            return Err(Error::InvalidArgument(format!(
                "{w}x{h} image smaller than {patch}x{patch} patch"
            )));
        }
        let x0 = rng.gen_range(0..=w - patch);
        let y0 = rng.gen_range(0..=h - patch);
        crop(&p.over, x0, y0, patch, &mut over);
        crop(&p.under, x0, y0, patch, &mut under);
    }
    let s = Shape::new(indices.len(), 1, patch, patch);
    Ok((Tensor::new(s, over)?, Tensor::new(s, under)?))
}

/// First and second moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(k, p)| (k.to_string(), vec![0.0; p.len()]))
            .collect();
        AdamWState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Hyperparameters of one AdamW update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        AdamW {
            lr: c.lr,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

impl AdamW {
    /// Updates one parameter array in place.
    pub fn update(&self, step: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p[i]);
        }
    }
}

/// Decoupled weight-decay Adam step using the gradients stored in `params`.
pub fn adamw_step(params: &mut ModelParams, state: &mut AdamWState, opt: &AdamW) -> Result<()> {
    for name in params.names() {
        if !state.m.contains_key(name) || !state.v.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "no optimizer state for {name}"
            )));
        }
    }
    state.step += 1;
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        if m.len() != p.len() || v.len() != p.len() {
            return Err(Error::Shape(format!(
                "optimizer state for {name} has wrong length"
            )));
        }
        let g = p.grad.clone();
        opt.update(state.step, p.values_mut(), &g, m, v);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub params: ModelParams,
}

/// CSV training log. Wall time is written only when `timing` is set, so that
/// seeded runs produce identical files.
pub fn log_csv(log: &[LogRow], timing: bool) -> String {
    let mut s = String::from("step,loss,seconds\n");
    for r in log {
        let secs = if timing { r.seconds } else { 0.0 };
        let _ = writeln!(s, "{},{:e},{}", r.step, r.loss, secs);
    }
    s
}

/// One forward/backward pass; returns the loss and leaves gradients in `params`.
pub fn train_step(
    params: &mut ModelParams,
    model: &ModelConfig,
    weights: &LossWeights,
    over: Tensor,
    under: Tensor,
    options: ForwardOptions,
    checked: bool,
) -> Result<f64> {
    let mut g = if checked {
        Graph::checked()
    } else {
        Graph::new()
    };
    let bound = params.bind(&mut g, true);
    let (o, u) = (g.constant(over), g.constant(under));
    let out = model_forward(&mut g, &bound, model, o, u, options)?;
    let loss = total_loss(&mut g, out.fused, o, u, weights)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    params.zero_grads();
    params.accumulate_grads(&g, &bound);
    Ok(value)
}

fn diverged(step: usize, what: &str, params: &ModelParams) -> Error {
    let mut norms = params.norms();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<String> = norms
        .iter()
        .take(3)
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect();
    Error::Diverged {
        step,
        detail: format!("{what}; largest parameter norms: {}", top.join(", ")),
    }
}

/// Runs the training loop from `params`. When `checkpoint` is given and
/// `checkpoint_every` is nonzero, intermediate checkpoints overwrite it.
pub fn train(
    mut params: ModelParams,
    model: &ModelConfig,
    data: &[ExposurePair],
    config: &TrainConfig,
    weights: &LossWeights,
    checkpoint: Option<&Path>,
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainReport> {
    config.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    let lumas = data
        .iter()
        .map(LumaPair::from_pair)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamWState::new(&params);
    let opt = AdamW::from(config);
    let total = config.epochs * config.steps_per_epoch(data.len());
    let total = config.max_steps.map_or(total, |m| m.min(total));
    let start = Instant::now();
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..data.len()).collect();
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            if log.len() == total {
                break 'epochs;
            }
            let step = log.len() + 1;
            let (o, u) = sample_batch(&lumas, chunk, config.patch, &mut rng)?;
            let loss = match train_step(
                &mut params,
                model,
                weights,
                o,
                u,
                config.forward,
                config.checked,
            ) {
                Ok(l) => l,
                Err(Error::NonFinite { op }) => {
                    return Err(diverged(
                        step,
                        &format!("non-finite value in {op}"),
                        &params,
                    ))
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(step, &format!("loss is {loss}"), &params));
            }
            adamw_step(&mut params, &mut state, &opt)?;
            if config.checked && !params.all_finite() {
                return Err(diverged(step, "non-finite parameter after update", &params));
            }
            let row = LogRow {
                step,
                loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_step(&row);
            log.push(row);
            if let Some(path) = checkpoint {
                if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                    save_checkpoint(&params, model, path)?;
                }
            }
        }
    }
    Ok(TrainReport { log, params })
}

/// Worst relative error of one checked tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub report: GradCheck,
}

/// Parameters sampled by [`end_to_end_gradcheck`] besides the two inputs.
pub const GRADCHECK_PARAMS: [&str; 5] = [
    "head.conv.weight",
    "path_over.stem.conv.weight",
    "sffm1.amp_cb.conv.weight",
    "sffm1.channel_attn.fc1.weight",
    "sffm2.spatial_attn.conv.weight",
];

/// Central differences of the full model plus total loss on one `size`×`size`
/// pair, against both inputs and a sample of parameter coordinates.
pub fn end_to_end_gradcheck(
    model: &ModelConfig,
    size: usize,
    seed: u64,
) -> Result<Vec<GradCheckEntry>> {
    let params = ModelParams::init(model, seed)?;
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = Shape::new(1, 1, size, size);
    let over = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.05..0.95));
    let under = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.05..0.95));
    let step = 1e-5;
    let stride = |n: usize| (n / 24).max(1);
    let mut out = Vec::new();

    let over_fn = |g: &mut Graph, v: Var| {
        let b = params.bind(g, false);
        let u = g.constant(under.clone());
        let y = model_forward(g, &b, model, v, u, ForwardOptions::default())?;
        total_loss(g, y.fused, v, u, &weights)
    };
    let coords: Vec<usize> = (0..over.data().len())
        .step_by(stride(over.data().len()))
        .collect();
    out.push(GradCheckEntry {
        name: "input.over".into(),
        report: grad_check_at(over_fn, &over, step, &coords)?,
    });
    let under_fn = |g: &mut Graph, v: Var| {
        let b = params.bind(g, false);
        let o = g.constant(over.clone());
        let y = model_forward(g, &b, model, o, v, ForwardOptions::default())?;
        total_loss(g, y.fused, o, v, &weights)
    };
    out.push(GradCheckEntry {
        name: "input.under".into(),
        report: grad_check_at(under_fn, &under, step, &coords)?,
    });

    for name in GRADCHECK_PARAMS.iter().filter(|n| params.get(n).is_some()) {
        let value = params
            .get(name)
            .map(|p| p.value().clone())
            .expect("filtered");
        let f = |g: &mut Graph, v: Var| {
            let mut b = params.bind(g, false);
            b.replace(name, v)?;
            let (o, u) = (g.constant(over.clone()), g.constant(under.clone()));
            let y = model_forward(g, &b, model, o, u, ForwardOptions::default())?;
            total_loss(g, y.fused, o, u, &weights)
        };
        let coords: Vec<usize> = (0..value.data().len())
            .step_by(stride(value.data().len()))
            .collect();
        out.push(GradCheckEntry {
            name: name.to_string(),
            report: grad_check_at(f, &value, step, &coords)?,
        });
    }
    Ok(out)
}
