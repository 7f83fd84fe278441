//! Colour handling around the luminance-only fusion methods.

use mefsfi::image::{
    fuse_chroma, rgb_to_ycbcr, ycbcr_to_rgb, PlanarImage, Plane, SampleRange, YCbCrImage,
};
use mefsfi::network::{fuse_luma, ModelConfig, ModelParams};
use mefsfi::spectrum::{fuse_amplitude_weighted, PhaseFrom};
use mefsfi::{Error, Result, Shape, Tensor};

/// Neutral chroma in `[0, 255]`.
pub const CHROMA_NEUTRAL: f64 = 128.0;

/// Luma in `[0, 255]` and, for colour input, the Cb/Cr planes.
pub struct Split {
    pub y: Plane,
    pub chroma: Option<(Plane, Plane)>,
}

pub fn split(img: &PlanarImage) -> Result<Split> {
    match img.channels() {
        3 => {
            let ycc = rgb_to_ycbcr(img)?;
            Ok(Split {
                y: ycc.y.channel(0),
                chroma: Some((ycc.cb.channel(0), ycc.cr.channel(0))),
            })
        }
        _ => Ok(Split {
            y: img.luma()?,
            chroma: None,
        }),
    }
}

fn check_pair(over: &PlanarImage, under: &PlanarImage) -> Result<()> {
    over.same_dims(under)?;
    if over.channels() != under.channels() {
        return Err(Error::InvalidArgument(format!(
            "inputs have {} and {} channels",
            over.channels(),
            under.channels()
        )));
    }
    Ok(())
}

/// Puts a fused luma plane back together with the fused chroma of both inputs.
fn recombine(y: &Plane, over: &Split, under: &Split) -> Result<PlanarImage> {
    let y = y.map(|v| v.clamp(0.0, 255.0));
    match (&over.chroma, &under.chroma) {
        (Some((cbo, cro)), Some((cbu, cru))) => {
            let one = |p: &Plane| PlanarImage::from_plane(p, SampleRange::Byte);
            let cb = fuse_chroma(cbo, cbu, CHROMA_NEUTRAL)?;
            let cr = fuse_chroma(cro, cru, CHROMA_NEUTRAL)?;
            Ok(ycbcr_to_rgb(&YCbCrImage::new(
                one(&y)?,
                one(&cb)?,
                one(&cr)?,
            )?))
        }
        _ => PlanarImage::from_plane(&y, SampleRange::Byte),
    }
}

pub fn luma_tensor(p: &Plane) -> Result<Tensor> {
    Tensor::new(
        Shape::new(1, 1, p.height, p.width),
        p.data.iter().map(|v| v / 255.0).collect(),
    )
}

/// Network fusion of luma plus weighted chroma fusion.
pub fn fuse_network(
    params: &ModelParams,
    config: &ModelConfig,
    over: &PlanarImage,
    under: &PlanarImage,
) -> Result<PlanarImage> {
    check_pair(over, under)?;
    let (so, su) = (split(over)?, split(under)?);
    let fused = fuse_luma(params, config, &luma_tensor(&so.y)?, &luma_tensor(&su.y)?)?;
    let y = Plane::new(
        so.y.width,
        so.y.height,
        fused.data().iter().map(|v| v * 255.0).collect(),
    )?;
    recombine(&y, &so, &su)
}

/// Weighted amplitude fusion of luma under the phase of one input.
pub fn fuse_classical(
    over: &PlanarImage,
    under: &PlanarImage,
    wa: f64,
    wb: f64,
    phase: PhaseFrom,
) -> Result<PlanarImage> {
    check_pair(over, under)?;
    let (so, su) = (split(over)?, split(under)?);
    let one = |p: &Plane| PlanarImage::from_plane(p, SampleRange::Byte);
    let r = fuse_amplitude_weighted(&one(&so.y)?, &one(&su.y)?, wa, wb, phase)?;
    recombine(&r.image.channel(0), &so, &su)
}

/// Per-sample mean of the two inputs.
pub fn fuse_average(over: &PlanarImage, under: &PlanarImage) -> Result<PlanarImage> {
    check_pair(over, under)?;
    let data = over
        .data()
        .iter()
        .zip(under.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    PlanarImage::new(
        over.width(),
        over.height(),
        over.channels(),
        over.range(),
        data,
    )
}
