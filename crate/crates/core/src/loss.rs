//! Dual-domain training objective: structural similarity and L2 in the
//! spatial domain, amplitude and phase distances in the frequency domain.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the L2 terms against the MSSIM terms.
    pub alpha: f64,
    /// Weight of the frequency loss in the total.
    pub gamma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub window: usize,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.8,
            gamma: 0.1,
            ssim_c1: 0.01f64.powi(2),
            ssim_c2: 0.03f64.powi(2),
            window: 11,
            sigma: 1.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(
                "alpha and gamma must be non-negative".into(),
            ));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidArgument(
                "SSIM stabilizers must be positive".into(),
            ));
        }
        if self.window == 0 || self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "SSIM window must be non-empty with positive sigma".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Arc<[f64]> {
        gaussian_taps(self.window, self.sigma)
    }
}

pub fn gaussian_taps(size: usize, sigma: f64) -> Arc<[f64]> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Per-pixel SSIM over the valid interior, `(N, C, H − w + 1, W − w + 1)`.
pub fn ssim_map(g: &mut Graph, x: Var, y: Var, w: &LossWeights) -> Result<Var> {
    let (sx, sy) = (g.shape(x), g.shape(y));
    if sx != sy {
        return Err(Error::Shape(format!("ssim: {sx} vs {sy}")));
    }
    if sx.h < w.window || sx.w < w.window {
        return Err(Error::Shape(format!(
            "ssim: {sx} smaller than the {0}×{0} window",
            w.window
        )));
    }
    let taps = w.gaussian_taps();
    let mx = g.blur_valid(x, taps.clone())?;
    let my = g.blur_valid(y, taps.clone())?;
    let x2 = g.square(x)?;
    let y2 = g.square(y)?;
    let xy = g.mul(x, y)?;
    let ex2 = g.blur_valid(x2, taps.clone())?;
    let ey2 = g.blur_valid(y2, taps.clone())?;
    let exy = g.blur_valid(xy, taps)?;

    let mx2 = g.square(mx)?;
    let my2 = g.square(my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(ex2, mx2)?;
    let vy = g.sub(ey2, my2)?;
    let cov = g.sub(exy, mxy)?;

    let lum_num = g.affine(mxy, 2.0, w.ssim_c1)?;
    let lum_den = g.add(mx2, my2)?;
    let lum_den = g.affine(lum_den, 1.0, w.ssim_c1)?;
    let cs_num = g.affine(cov, 2.0, w.ssim_c2)?;
    let cs_den = g.add(vx, vy)?;
    let cs_den = g.affine(cs_den, 1.0, w.ssim_c2)?;
    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    g.div(num, den)
}

/// Mean of [`ssim_map`].
pub fn mssim(g: &mut Graph, x: Var, y: Var, w: &LossWeights) -> Result<Var> {
    let m = ssim_map(g, x, y, w)?;
    g.mean(m)
}

/// Mean squared difference.
pub fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.square(d)?;
    g.mean(d2)
}

fn pair_sum(
    g: &mut Graph,
    f: Var,
    o: Var,
    u: Var,
    term: impl Fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let a = term(g, f, o)?;
    let b = term(g, f, u)?;
    g.add(a, b)
}

/// `(1 − MSSIM(f,o)) + (1 − MSSIM(f,u)) + α·(mse(f,o) + mse(f,u))`
pub fn spatial_loss(g: &mut Graph, f: Var, o: Var, u: Var, w: &LossWeights) -> Result<Var> {
    let structural = pair_sum(g, f, o, u, |g, a, b| {
        let m = mssim(g, a, b, w)?;
        g.affine(m, -1.0, 1.0)
    })?;
    let l2 = pair_sum(g, f, o, u, mse)?;
    let l2 = g.affine(l2, w.alpha, 0.0)?;
    g.add(structural, l2)
}

/// `mse(A_f, A_o) + mse(A_f, A_u)` on precomputed amplitudes.
pub fn amplitude_term(g: &mut Graph, af: Var, ao: Var, au: Var) -> Result<Var> {
    pair_sum(g, af, ao, au, mse)
}

/// Squared distances of amplitude and of raw phase between `f` and each input.
pub fn freq_loss(g: &mut Graph, f: Var, o: Var, u: Var) -> Result<Var> {
    let (af, pf) = g.dft_layer(f)?;
    let (ao, po) = g.dft_layer(o)?;
    let (au, pu) = g.dft_layer(u)?;
    let amp = amplitude_term(g, af, ao, au)?;
    let pha = pair_sum(g, pf, po, pu, mse)?;
    g.add(amp, pha)
}

/// The three loss values of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub spatial: Var,
    pub freq: Var,
    pub total: Var,
}

/// `spatial + γ·freq`
pub fn total_loss_parts(
    g: &mut Graph,
    f: Var,
    o: Var,
    u: Var,
    w: &LossWeights,
) -> Result<LossParts> {
    let spatial = spatial_loss(g, f, o, u, w)?;
    let freq = freq_loss(g, f, o, u)?;
    let scaled = g.affine(freq, w.gamma, 0.0)?;
    let total = g.add(spatial, scaled)?;
    Ok(LossParts {
        spatial,
        freq,
        total,
    })
}

pub fn total_loss(g: &mut Graph, f: Var, o: Var, u: Var, w: &LossWeights) -> Result<Var> {
    total_loss_parts(g, f, o, u, w).map(|p| p.total)
}
