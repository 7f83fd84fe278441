//! Unitary 2D DFT with amplitude/phase decomposition, plus the two
//! exposure experiments: amplitude swapping and amplitude-weighted fusion.

pub mod fft;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::{PlanarImage, Plane, SampleRange};
pub use fft::{Dft1, Dft2, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `1/√(HW)` on both forward and inverse transforms.
    Unitary,
}

/// Polar form of a 2D DFT on an `height × width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub amplitude: Vec<f64>,
    /// Principal value in `(-π, π]`; zero where the coefficient is zero.
    pub phase: Vec<f64>,
    pub normalization: Normalization,
}

impl Spectrum {
    pub fn from_complex(width: usize, height: usize, coeffs: &[Complex64]) -> Self {
        let (amplitude, phase) = coeffs.iter().map(|&z| polar(z)).unzip();
        Spectrum {
            width,
            height,
            amplitude,
            phase,
            normalization: Normalization::Unitary,
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(&a, &p)| Complex64::new(a * p.cos(), a * p.sin()))
            .collect()
    }

    /// Amplitude at the zero frequency, `√(HW)·mean` for nonnegative input.
    pub fn dc(&self) -> f64 {
        self.amplitude[0]
    }
}

/// Amplitude and phase of one coefficient. A signed-zero imaginary part is
/// folded to `+0` so purely real negative coefficients land on `+π`.
#[inline]
pub fn polar(z: Complex64) -> (f64, f64) {
    let im = if z.im == 0.0 { 0.0 } else { z.im };
    ((z.re * z.re + im * im).sqrt(), im.atan2(z.re))
}

pub fn dft2(plane: &Plane) -> Spectrum {
    let plan = Dft2::new(plane.width, plane.height);
    Spectrum::from_complex(plane.width, plane.height, &plan.forward_real(&plane.data))
}

/// Inverse transform, returning the real part and the largest discarded
/// imaginary magnitude.
pub fn idft2_with_residue(sp: &Spectrum) -> (Plane, f64) {
    let plan = Dft2::new(sp.width, sp.height);
    let mut buf = sp.to_complex();
    plan.process(&mut buf, Direction::Inverse);
    let residue = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let plane = Plane {
        width: sp.width,
        height: sp.height,
        data: buf.iter().map(|z| z.re).collect(),
    };
    (plane, residue)
}

pub fn idft2(sp: &Spectrum) -> Plane {
    idft2_with_residue(sp).0
}

/// An image rebuilt from a manipulated spectrum, before and after clamping.
#[derive(Clone, Debug)]
pub struct Recomposed {
    pub raw: Plane,
    pub image: PlanarImage,
    pub clamped: usize,
}

impl Recomposed {
    fn new(raw: Plane, range: SampleRange) -> Result<Self> {
        let (image, clamped) = PlanarImage::from_planes_clamped(std::slice::from_ref(&raw), range)?;
        Ok(Recomposed {
            raw,
            image,
            clamped,
        })
    }
}

fn single_channel_pair(a: &PlanarImage, b: &PlanarImage) -> Result<SampleRange> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::InvalidArgument(
            "spectral operations take single-channel images".into(),
        ));
    }
    a.same_dims(b)?;
    if a.range() != b.range() {
        return Err(Error::InvalidArgument(
            "images declare different ranges".into(),
        ));
    }
    Ok(a.range())
}

fn recompose(amplitude: Vec<f64>, phase_of: &Spectrum, range: SampleRange) -> Result<Recomposed> {
    let sp = Spectrum {
        amplitude,
        phase: phase_of.phase.clone(),
        ..phase_of.clone()
    };
    let (raw, residue) = idft2_with_residue(&sp);
    debug_assert!(residue < 1e-8, "imaginary residue {residue}");
    Recomposed::new(raw, range)
}

/// Exchanges amplitude spectra: `pseudo_a` keeps the phase of `a` with the
/// amplitude of `b`, `pseudo_b` the reverse.
pub fn swap_amplitude(a: &PlanarImage, b: &PlanarImage) -> Result<(Recomposed, Recomposed)> {
    let range = single_channel_pair(a, b)?;
    let sa = dft2(&a.channel(0));
    let sb = dft2(&b.channel(0));
    let pseudo_a = recompose(sb.amplitude.clone(), &sa, range)?;
    let pseudo_b = recompose(sa.amplitude.clone(), &sb, range)?;
    Ok((pseudo_a, pseudo_b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseFrom {
    A,
    B,
}

/// Normalized weighted sum of the two amplitude spectra under the phase of
/// the selected input.
pub fn fuse_amplitude_weighted(
    a: &PlanarImage,
    b: &PlanarImage,
    wa: f64,
    wb: f64,
    phase_from: PhaseFrom,
) -> Result<Recomposed> {
    let range = single_channel_pair(a, b)?;
    if !(wa >= 0.0 && wb >= 0.0) || wa + wb <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "amplitude weights must be nonnegative with a positive sum, got ({wa}, {wb})"
        )));
    }
    let sa = dft2(&a.channel(0));
    let sb = dft2(&b.channel(0));
    let total = wa + wb;
    let amplitude = sa
        .amplitude
        .iter()
        .zip(&sb.amplitude)
        .map(|(x, y)| (wa * x + wb * y) / total)
        .collect();
    let phase_of = match phase_from {
        PhaseFrom::A => &sa,
        PhaseFrom::B => &sb,
    };
    recompose(amplitude, phase_of, range)
}
