//! Raster containers, PNG/PGM/PPM codecs, YCbCr conversion and chroma fusion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Declared value interval of a [`PlanarImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleRange {
    /// `[0, 255]`
    Byte,
    /// `[0, 1]`
    Unit,
}

impl SampleRange {
    pub fn max(self) -> f64 {
        match self {
            SampleRange::Byte => 255.0,
            SampleRange::Unit => 1.0,
        }
    }

    pub fn clamp(self, v: f64) -> f64 {
        v.clamp(0.0, self.max())
    }
}

/// A single unconstrained channel of reals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Plane) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamps into `range` and reports how many samples moved.
    pub fn clamp_to(&self, range: SampleRange) -> (Plane, usize) {
        let mut clamped = 0;
        let data = self
            .data
            .iter()
            .map(|&v| {
                let c = range.clamp(v);
                if c != v {
                    clamped += 1;
                }
                c
            })
            .collect();
        (
            Plane {
                width: self.width,
                height: self.height,
                data,
            },
            clamped,
        )
    }
}

/// H×W×C raster in a declared range. Channel-planar, row-major within a plane.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    channels: usize,
    range: SampleRange,
    data: Vec<f64>,
}

impl PlanarImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        range: SampleRange,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=range.max()).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} outside declared range [0, {}]",
                range.max()
            )));
        }
        Ok(PlanarImage {
            width,
            height,
            channels,
            range,
            data,
        })
    }

    /// Builds an image from planes of equal size, clamping into `range`.
    /// Returns the image and the number of clamped samples.
    pub fn from_planes_clamped(planes: &[Plane], range: SampleRange) -> Result<(Self, usize)> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no planes".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        let mut clamped = 0;
        for p in planes {
            first.same_dims(p)?;
            let (c, n) = p.clamp_to(range);
            clamped += n;
            data.extend_from_slice(&c.data);
        }
        let img = PlanarImage::new(first.width, first.height, planes.len(), range, data)?;
        Ok((img, clamped))
    }

    pub fn from_plane(plane: &Plane, range: SampleRange) -> Result<Self> {
        PlanarImage::new(plane.width, plane.height, 1, range, plane.data.clone())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> SampleRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Plane {
        let n = self.width * self.height;
        Plane {
            width: self.width,
            height: self.height,
            data: self.data[c * n..(c + 1) * n].to_vec(),
        }
    }

    pub fn same_dims(&self, other: &PlanarImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Luma plane in `[0, 255]`: the Y of full-range BT.601 for colour input,
    /// the sole channel for grayscale.
    pub fn luma(&self) -> Result<Plane> {
        let img = from_unit_range_if_needed(self);
        match img.channels {
            1 => Ok(img.channel(0)),
            3 => Ok(rgb_to_ycbcr(&img)?.y.channel(0)),
            c => Err(Error::InvalidArgument(format!("luma of {c}-channel image"))),
        }
    }
}

fn from_unit_range_if_needed(img: &PlanarImage) -> PlanarImage {
    match img.range {
        SampleRange::Byte => img.clone(),
        SampleRange::Unit => from_unit_range(img),
    }
}

/// Affine map `[0,255] -> [0,1]`. Images already in unit range are returned unchanged.
pub fn to_unit_range(img: &PlanarImage) -> PlanarImage {
    if img.range == SampleRange::Unit {
        return img.clone();
    }
    PlanarImage {
        data: img.data.iter().map(|v| v / 255.0).collect(),
        range: SampleRange::Unit,
        ..img.clone()
    }
}

/// Affine map `[0,1] -> [0,255]`.
pub fn from_unit_range(img: &PlanarImage) -> PlanarImage {
    if img.range == SampleRange::Byte {
        return img.clone();
    }
    PlanarImage {
        data: img.data.iter().map(|v| (v * 255.0).min(255.0)).collect(),
        range: SampleRange::Byte,
        ..img.clone()
    }
}

/// Three `[0,255]` planes of identical size.
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCrImage {
    pub y: PlanarImage,
    pub cb: PlanarImage,
    pub cr: PlanarImage,
}

impl YCbCrImage {
    pub fn new(y: PlanarImage, cb: PlanarImage, cr: PlanarImage) -> Result<Self> {
        for p in [&y, &cb, &cr] {
            if p.channels != 1 || p.range != SampleRange::Byte {
                return Err(Error::InvalidArgument(
                    "YCbCr planes must be single-channel [0,255]".into(),
                ));
            }
        }
        y.same_dims(&cb)?;
        y.same_dims(&cr)?;
        Ok(YCbCrImage { y, cb, cr })
    }
}

/// Full-range BT.601 (JPEG convention).
pub fn rgb_to_ycbcr(img: &PlanarImage) -> Result<YCbCrImage> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "rgb_to_ycbcr needs 3 channels, got {}",
            img.channels
        )));
    }
    let img = from_unit_range_if_needed(img);
    let n = img.width * img.height;
    let (r, rest) = img.data.split_at(n);
    let (g, b) = rest.split_at(n);
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for i in 0..n {
        let (r, g, b) = (r[i], g[i], b[i]);
        y.push((0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 255.0));
        cb.push((128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b).clamp(0.0, 255.0));
        cr.push((128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b).clamp(0.0, 255.0));
    }
    let mk = |d| PlanarImage::new(img.width, img.height, 1, SampleRange::Byte, d);
    YCbCrImage::new(mk(y)?, mk(cb)?, mk(cr)?)
}

/// Inverse of [`rgb_to_ycbcr`], clamped to `[0,255]`.
pub fn ycbcr_to_rgb(img: &YCbCrImage) -> PlanarImage {
    let n = img.y.width * img.y.height;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let y = img.y.data[i];
        let cb = img.cb.data[i] - 128.0;
        let cr = img.cr.data[i] - 128.0;
        data[i] = (y + 1.402 * cr).clamp(0.0, 255.0);
        data[n + i] = (y - 0.344136 * cb - 0.714136 * cr).clamp(0.0, 255.0);
        data[2 * n + i] = (y + 1.772 * cb).clamp(0.0, 255.0);
    }
    PlanarImage {
        width: img.y.width,
        height: img.y.height,
        channels: 3,
        range: SampleRange::Byte,
        data,
    }
}

/// Chroma weighted by distance from neutral `tau`: far-from-neutral samples dominate.
/// Both inputs neutral gives `tau`.
pub fn fuse_chroma(c1: &Plane, c2: &Plane, tau: f64) -> Result<Plane> {
    c1.same_dims(c2)?;
    let data = c1
        .data
        .iter()
        .zip(&c2.data)
        .map(|(&a, &b)| fuse_chroma_sample(a, b, tau))
        .collect();
    Ok(Plane {
        width: c1.width,
        height: c1.height,
        data,
    })
}

#[inline]
pub fn fuse_chroma_sample(a: f64, b: f64, tau: f64) -> f64 {
    let wa = (a - tau).abs();
    let wb = (b - tau).abs();
    let den = wa + wb;
    if den < 1e-6 {
        tau
    } else {
        (a * wa + b * wb) / den
    }
}

/// Round-and-clamp quantizer used by every writer.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

enum Format {
    Png,
    Pgm,
    Ppm,
}

fn sniff(path: &Path, bytes: &[u8]) -> Result<Format> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Ok(Format::Png)
    } else if bytes.starts_with(b"P5") {
        Ok(Format::Pgm)
    } else if bytes.starts_with(b"P6") {
        Ok(Format::Ppm)
    } else if bytes.len() < 2 {
        Err(Error::CorruptHeader {
            path: path.into(),
            reason: "file too short".into(),
        })
    } else {
        Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "expected PNG, binary PGM (P5) or binary PPM (P6)".into(),
        })
    }
}

/// Decodes a PNG, P5 PGM or P6 PPM into a `[0,255]` image.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    match sniff(path, &bytes)? {
        Format::Png => decode_png(path, &bytes),
        Format::Pgm => decode_pnm(path, &bytes, 1),
        Format::Ppm => decode_pnm(path, &bytes, 3),
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptHeader {
        path: path.into(),
        reason: reason.into(),
    }
}

fn decode_pnm(path: &Path, bytes: &[u8], channels: usize) -> Result<PlanarImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and '#' comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | None) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(corrupt(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt(path, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(path, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(corrupt(path, "truncated header")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("maxval {maxval}; only 8-bit (255) supported"),
        });
    }
    if width == 0 || height == 0 {
        return Err(corrupt(path, "zero image dimension"));
    }
    let n = width * height;
    let payload = &bytes[pos..];
    if payload.len() < n * channels {
        return Err(corrupt(
            path,
            format!(
                "expected {} pixel bytes, found {}",
                n * channels,
                payload.len()
            ),
        ));
    }
    let mut data = vec![0.0; n * channels];
    for i in 0..n {
        for c in 0..channels {
            data[c * n + i] = payload[i * channels + c] as f64;
        }
    }
    PlanarImage::new(width, height, channels, SampleRange::Byte, data)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<PlanarImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| corrupt(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| corrupt(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("{:?} bit depth; only 8-bit supported", info.bit_depth),
        });
    }
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: "unexpanded palette".into(),
            })
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let n = width * height;
    let mut data = vec![0.0; n * channels];
    for y in 0..height {
        let row = &buf[y * info.line_size..];
        for x in 0..width {
            for c in 0..channels {
                data[c * n + y * width + x] = row[x * stride + c] as f64;
            }
        }
    }
    PlanarImage::new(width, height, channels, SampleRange::Byte, data)
}

/// Writes PNG, or PGM/PPM when the extension is `.pgm`/`.ppm`. Samples are
/// scaled to `[0,255]`, rounded and clamped.
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot save {}-channel image",
            img.channels
        )));
    }
    let img = from_unit_range_if_needed(img);
    let n = img.width * img.height;
    let mut interleaved = vec![0u8; n * img.channels];
    for i in 0..n {
        for c in 0..img.channels {
            interleaved[i * img.channels + c] = to_u8(img.data[c * n + i]);
        }
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match ext.as_deref() {
        Some("pgm") | Some("ppm") => {
            let magic = if img.channels == 1 { "P5" } else { "P6" };
            write!(out, "{magic}\n{} {}\n255\n", img.width, img.height)
                .and_then(|_| out.write_all(&interleaved))
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(path, e))
        }
        _ => {
            let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
            enc.set_color(if img.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let to_io =
                |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
            let mut writer = enc.write_header().map_err(to_io)?;
            writer.write_image_data(&interleaved).map_err(to_io)?;
            writer.finish().map_err(to_io)?;
            out.flush().map_err(|e| Error::io(path, e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: f64, g: f64, b: f64) -> PlanarImage {
        PlanarImage::new(1, 1, 3, SampleRange::Byte, vec![r, g, b]).unwrap()
    }

    #[test]
    fn decodes_p5() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        std::fs::write(&p, b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn decodes_p6_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        std::fs::write(&p, b"P6\n# red\n1 1\n255\n\xff\x00\x00").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[255.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_file_is_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        std::fs::write(&p, b"P5\n2 ").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("corrupt header"), "{err}");
        assert!(err.to_string().contains("t.pgm"));

        std::fs::write(&p, b"P5\n2 2\n255\n\x00").unwrap();
        assert!(matches!(load_image(&p), Err(Error::CorruptHeader { .. })));
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bmp");
        std::fs::write(&p, b"BM....").unwrap();
        assert!(matches!(
            load_image(&p),
            Err(Error::UnsupportedFormat { .. })
        ));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn pnm_headers_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let img = PlanarImage::new(3, 2, 1, SampleRange::Byte, vec![1.0; 6]).unwrap();
        save_image(&img, &p).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P5\n3 2\n255\n"));
        let p = dir.path().join("c.ppm");
        let img = PlanarImage::new(3, 2, 3, SampleRange::Byte, vec![1.0; 18]).unwrap();
        save_image(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn png_and_pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..5 * 4 * 3).map(|i| ((i * 37) % 256) as f64).collect();
        let img = PlanarImage::new(5, 4, 3, SampleRange::Byte, data).unwrap();
        for name in ["x.png", "x.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
        let gray = PlanarImage::new(
            4,
            4,
            1,
            SampleRange::Byte,
            (0..16).map(|v| v as f64 * 16.0).collect(),
        )
        .unwrap();
        let p = dir.path().join("g.png");
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);
    }

    #[test]
    fn quantizer_clamps() {
        assert_eq!(to_u8(255.6), 255);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(127.5), 128);
    }

    #[test]
    fn two_channel_save_rejected() {
        let img = PlanarImage::new(1, 1, 2, SampleRange::Byte, vec![0.0, 0.0]).unwrap();
        assert!(save_image(&img, "/tmp/never-written.png").is_err());
    }

    #[test]
    fn range_invariant_enforced() {
        assert!(PlanarImage::new(1, 1, 1, SampleRange::Unit, vec![1.5]).is_err());
        assert!(PlanarImage::new(1, 1, 1, SampleRange::Byte, vec![f64::NAN]).is_err());
        assert!(PlanarImage::new(2, 1, 1, SampleRange::Byte, vec![0.0]).is_err());
    }

    #[test]
    fn ycbcr_reference_points() {
        let w = rgb_to_ycbcr(&rgb(255.0, 255.0, 255.0)).unwrap();
        assert!((w.y.data()[0] - 255.0).abs() < 1e-9);
        assert!((w.cb.data()[0] - 128.0).abs() < 1e-9);
        assert!((w.cr.data()[0] - 128.0).abs() < 1e-9);
        let k = rgb_to_ycbcr(&rgb(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            (k.y.data()[0], k.cb.data()[0], k.cr.data()[0]),
            (0.0, 128.0, 128.0)
        );
        let r = rgb_to_ycbcr(&rgb(255.0, 0.0, 0.0)).unwrap();
        assert!((r.y.data()[0] - 76.245).abs() < 1e-9);
        assert!((r.cb.data()[0] - 84.97232).abs() < 1e-9);
        assert!((r.cr.data()[0] - 255.0).abs() < 1e-9);
        assert!(
            rgb_to_ycbcr(&PlanarImage::new(1, 1, 1, SampleRange::Byte, vec![0.0]).unwrap())
                .is_err()
        );
    }

    #[test]
    fn ycbcr_inverse_reference_points() {
        let plane = |v| PlanarImage::new(1, 1, 1, SampleRange::Byte, vec![v]).unwrap();
        let white =
            ycbcr_to_rgb(&YCbCrImage::new(plane(255.0), plane(128.0), plane(128.0)).unwrap());
        assert_eq!(white.data(), &[255.0, 255.0, 255.0]);
        let black = ycbcr_to_rgb(&YCbCrImage::new(plane(0.0), plane(128.0), plane(128.0)).unwrap());
        assert_eq!(black.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn color_round_trip_on_grid() {
        // Saturated colours push Cb/Cr to 255.5 before the [0,255] clamp, so
        // the bound is 1 overall and 0.5 wherever chroma stayed in range.
        let mut worst: f64 = 0.0;
        let mut worst_unclamped: f64 = 0.0;
        for r in (0..=255).step_by(5) {
            for g in (0..=255).step_by(5) {
                for b in (0..=255).step_by(5) {
                    let (r, g, b) = (r as f64, g as f64, b as f64);
                    let p = rgb(r, g, b);
                    let back = ycbcr_to_rgb(&rgb_to_ycbcr(&p).unwrap());
                    let err = p
                        .data()
                        .iter()
                        .zip(back.data())
                        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                    worst = worst.max(err);
                    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
                    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
                    if (0.0..=255.0).contains(&cb) && (0.0..=255.0).contains(&cr) {
                        worst_unclamped = worst_unclamped.max(err);
                    }
                }
            }
        }
        assert!(worst < 1.0, "worst round-trip error {worst}");
        assert!(
            worst_unclamped < 0.5,
            "worst unclamped error {worst_unclamped}"
        );
    }

    #[test]
    fn chroma_examples() {
        assert_eq!(fuse_chroma_sample(100.0, 100.0, 128.0), 100.0);
        assert_eq!(fuse_chroma_sample(128.0, 90.0, 128.0), 90.0);
        assert_eq!(fuse_chroma_sample(128.0, 128.0, 128.0), 128.0);
        let a = Plane::filled(2, 2, 1.0);
        let b = Plane::filled(3, 2, 1.0);
        assert!(fuse_chroma(&a, &b, 128.0).is_err());
    }

    #[test]
    fn unit_range_maps() {
        let img = PlanarImage::new(3, 1, 1, SampleRange::Byte, vec![255.0, 0.0, 128.0]).unwrap();
        let u = to_unit_range(&img);
        assert_eq!(u.data(), &[1.0, 0.0, 128.0 / 255.0]);
        assert_eq!(u.range(), SampleRange::Unit);
        let back = from_unit_range(&u);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
