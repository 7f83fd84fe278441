//! Fusion quality metrics on luma planes in `[0, 255]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{load_image, Plane};
use crate::loss::{mssim, LossWeights};
use crate::tensor::{Graph, Shape, Tensor};

fn check_dims(f: &Plane, a: &Plane, b: &Plane) -> Result<()> {
    f.same_dims(a)?;
    f.same_dims(b)
}

fn histogram_bin(v: f64) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

/// Shannon entropy (natural log) of the 256-bin histogram.
pub fn entropy(a: &Plane) -> f64 {
    let mut hist = [0u64; 256];
    for &v in &a.data {
        hist[histogram_bin(v)] += 1;
    }
    let n = a.data.len() as f64;
    -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mutual information of two planes from their joint 256×256 histogram.
pub fn mutual_information_pair(a: &Plane, f: &Plane) -> Result<f64> {
    a.same_dims(f)?;
    let mut joint = vec![0u64; 256 * 256];
    let mut ha = [0u64; 256];
    let mut hf = [0u64; 256];
    for (&x, &y) in a.data.iter().zip(&f.data) {
        let (i, j) = (histogram_bin(x), histogram_bin(y));
        joint[i * 256 + j] += 1;
        ha[i] += 1;
        hf[j] += 1;
    }
    let n = a.data.len() as f64;
    let mut mi = 0.0;
    for i in 0..256 {
        if ha[i] == 0 {
            continue;
        }
        for j in 0..256 {
            let c = joint[i * 256 + j];
            if c == 0 {
                continue;
            }
            let pab = c as f64 / n;
            mi += pab * (pab / ((ha[i] as f64 / n) * (hf[j] as f64 / n))).ln();
        }
    }
    Ok(mi)
}

/// `MI(A, F) + MI(B, F)`
pub fn mutual_information(f: &Plane, a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(f, a, b)?;
    Ok(mutual_information_pair(a, f)? + mutual_information_pair(b, f)?)
}

pub const QABF_GAMMA_G: f64 = 0.9994;
pub const QABF_KAPPA_G: f64 = -15.0;
pub const QABF_SIGMA_G: f64 = 0.5;
pub const QABF_GAMMA_A: f64 = 0.9879;
pub const QABF_KAPPA_A: f64 = -22.0;
pub const QABF_SIGMA_A: f64 = 0.8;

/// Score of a pixel whose edge strength and orientation are fully preserved.
pub fn qabf_perfect() -> f64 {
    QABF_GAMMA_G / (1.0 + (QABF_KAPPA_G * (1.0 - QABF_SIGMA_G)).exp())
        * (QABF_GAMMA_A / (1.0 + (QABF_KAPPA_A * (1.0 - QABF_SIGMA_A)).exp()))
}

/// Sobel strength and orientation on the interior pixels.
fn sobel(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.width, p.height);
    let at = |x: usize, y: usize| p.data[y * w + x];
    let mut g = Vec::with_capacity((w - 2) * (h - 2));
    let mut a = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            g.push((sx * sx + sy * sy).sqrt());
            let alpha = (sy / sx).atan();
            a.push(if alpha.is_nan() { 0.0 } else { alpha });
        }
    }
    (g, a)
}

fn edge_preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    let g = if gs == gf {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let a = 1.0 - (as_ - af).abs() / std::f64::consts::FRAC_PI_2;
    let qg = QABF_GAMMA_G / (1.0 + (QABF_KAPPA_G * (g - QABF_SIGMA_G)).exp());
    let qa = QABF_GAMMA_A / (1.0 + (QABF_KAPPA_A * (a - QABF_SIGMA_A)).exp());
    qg * qa
}

/// Edge-information transfer from both sources into the fused image.
pub fn qabf(f: &Plane, a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(f, a, b)?;
    if f.width < 3 || f.height < 3 {
        return Err(Error::InvalidArgument(format!(
            "Qabf needs at least 3x3, got {}x{}",
            f.width, f.height
        )));
    }
    let (gf, af) = sobel(f);
    let (ga, aa) = sobel(a);
    let (gb, ab) = sobel(b);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..gf.len() {
        num += edge_preservation(ga[i], aa[i], gf[i], af[i]) * ga[i]
            + edge_preservation(gb[i], ab[i], gf[i], af[i]) * gb[i];
        den += ga[i] + gb[i];
    }
    if den < 1e-9 {
        return Ok(1.0);
    }
    Ok(num / den)
}

pub const MEF_SSIM_WINDOW: usize = 8;

fn window(p: &Plane, x0: usize, y0: usize, k: usize, out: &mut Vec<f64>) {
    out.clear();
    for y in y0..y0 + k {
        out.extend_from_slice(&p.data[y * p.width + x0..y * p.width + x0 + k]);
    }
}

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// Structure-and-contrast similarity of the fused image to the per-window
/// desired patch built from the sources.
pub fn mef_ssim(f: &Plane, a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(f, a, b)?;
    let k = MEF_SSIM_WINDOW;
    if f.width < k || f.height < k {
        return Err(Error::InvalidArgument(format!(
            "MEF-SSIM needs at least {k}x{k}, got {}x{}",
            f.width, f.height
        )));
    }
    let c2 = (0.03f64 * 255.0).powi(2);
    let n = (k * k) as f64;
    let rows: Vec<(f64, usize)> = (0..=f.height - k)
        .into_par_iter()
        .map(|y0| {
            let (mut pf, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
            let mut total = 0.0;
            let mut count = 0;
            for x0 in 0..=f.width - k {
                window(f, x0, y0, k, &mut pf);
                window(a, x0, y0, k, &mut pa);
                window(b, x0, y0, k, &mut pb);
                count += 1;
                if pa == pf && pb == pf {
                    // the desired patch is the fused patch itself
                    total += 1.0;
                    continue;
                }
                let (ya, ca) = centered(&pa);
                let (yb, cb) = centered(&pb);
                let (yf, _) = centered(&pf);
                let strength = ca.max(cb);
                let (wa, wb) = (ca.powi(4), cb.powi(4));
                let mut dir: Vec<f64> = (0..pf.len())
                    .map(|i| {
                        let sa = if ca > 0.0 { ya[i] / ca } else { 0.0 };
                        let sb = if cb > 0.0 { yb[i] / cb } else { 0.0 };
                        wa * sa + wb * sb
                    })
                    .collect();
                let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in dir.iter_mut() {
                    *v = if dn > 0.0 { strength * *v / dn } else { 0.0 };
                }
                let var_d = dir.iter().map(|v| v * v).sum::<f64>() / n;
                let var_f = yf.iter().map(|v| v * v).sum::<f64>() / n;
                let cov = dir.iter().zip(&yf).map(|(p, q)| p * q).sum::<f64>() / n;
                total += (2.0 * cov + c2) / (var_d + var_f + c2);
            }
            (total, count)
        })
        .collect();
    let (sum, count) = rows.iter().fold((0.0, 0), |(s, c), &(t, n)| (s + t, c + n));
    Ok(sum / count as f64)
}

pub const Q_Y_WINDOW: usize = 7;

/// Uniform-window local statistics `(μa, μb, σa², σb², σab)`.
fn local_stats(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let eaa = a.iter().map(|v| v * v).sum::<f64>() / n;
    let ebb = b.iter().map(|v| v * v).sum::<f64>() / n;
    let eab = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n;
    (ma, mb, eaa - ma * ma, ebb - mb * mb, eab - ma * mb)
}

fn window_ssim(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (ma, mb, va, vb, cov) = local_stats(a, b);
    let s =
        ((2.0 * (ma * mb) + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    (s, va, vb)
}

/// SSIM-based fusion score with saliency weighting where the sources agree.
pub fn q_y(f: &Plane, a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(f, a, b)?;
    let k = Q_Y_WINDOW;
    if f.width < k || f.height < k {
        return Err(Error::InvalidArgument(format!(
            "Q_Y needs at least {k}x{k}, got {}x{}",
            f.width, f.height
        )));
    }
    let rows: Vec<(f64, usize)> = (0..=f.height - k)
        .into_par_iter()
        .map(|y0| {
            let (mut pf, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
            let mut total = 0.0;
            let mut count = 0;
            for x0 in 0..=f.width - k {
                window(f, x0, y0, k, &mut pf);
                window(a, x0, y0, k, &mut pa);
                window(b, x0, y0, k, &mut pb);
                let (sab, va, vb) = window_ssim(&pa, &pb);
                let (saf, _, _) = window_ssim(&pa, &pf);
                let (sbf, _, _) = window_ssim(&pb, &pf);
                total += if sab >= 0.75 {
                    let lam = q_y_lambda(va, vb);
                    sbf + lam * (saf - sbf)
                } else {
                    saf.max(sbf)
                };
                count += 1;
            }
            (total, count)
        })
        .collect();
    let (sum, count) = rows.iter().fold((0.0, 0), |(s, c), &(t, n)| (s + t, c + n));
    Ok(sum / count as f64)
}

/// Saliency weight of the first source from local variances.
pub fn q_y_lambda(var_a: f64, var_b: f64) -> f64 {
    if var_a + var_b < 1e-12 {
        0.5
    } else {
        var_a / (var_a + var_b)
    }
}

fn unit_tensor(p: &Plane) -> Tensor {
    let data = p.data.iter().map(|v| v / 255.0).collect();
    Tensor::new(Shape::new(1, 1, p.height, p.width), data).expect("plane dims match")
}

/// MSSIM between two `[0, 255]` planes, through the training loss code path.
pub fn mssim_pair(x: &Plane, y: &Plane) -> Result<f64> {
    x.same_dims(y)?;
    let mut g = Graph::new();
    let (a, b) = (g.constant(unit_tensor(x)), g.constant(unit_tensor(y)));
    let m = mssim(&mut g, a, b, &LossWeights::default())?;
    Ok(g.value(m).item())
}

/// `(MSSIM(F, A) + MSSIM(F, B)) / 2`
pub fn mssim_metric(f: &Plane, a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(f, a, b)?;
    Ok((mssim_pair(f, a)? + mssim_pair(f, b)?) / 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub pair: String,
    pub mi: f64,
    pub qabf: f64,
    pub mssim: f64,
    pub mef_ssim: f64,
    pub q_y: f64,
}

impl MetricReport {
    fn values(&self) -> [f64; 5] {
        [self.mi, self.qabf, self.mssim, self.mef_ssim, self.q_y]
    }
}

/// Every metric for one fused result against its two sources.
pub fn evaluate_triple(pair: &str, f: &Plane, a: &Plane, b: &Plane) -> Result<MetricReport> {
    Ok(MetricReport {
        pair: pair.to_string(),
        mi: mutual_information(f, a, b)?,
        qabf: qabf(f, a, b)?,
        mssim: mssim_metric(f, a, b)?,
        mef_ssim: mef_ssim(f, a, b)?,
        q_y: q_y(f, a, b)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<MetricReport>,
    /// Column means, labelled `MEAN`.
    pub mean: MetricReport,
    /// Files without a complete `_over`/`_under`/`_fused` triple.
    pub skipped: Vec<String>,
}

impl SuiteReport {
    pub fn from_rows(rows: Vec<MetricReport>, skipped: Vec<String>) -> Self {
        let n = rows.len() as f64;
        let mut sums = [0.0; 5];
        for r in &rows {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let m = sums.map(|s| if rows.is_empty() { f64::NAN } else { s / n });
        SuiteReport {
            mean: MetricReport {
                pair: "MEAN".into(),
                mi: m[0],
                qabf: m[1],
                mssim: m[2],
                mef_ssim: m[3],
                q_y: m[4],
            },
            rows,
            skipped,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,mi,qabf,mssim,mef_ssim,q_y\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.pair, r.mi, r.qabf, r.mssim, r.mef_ssim, r.q_y
            );
        }
        s
    }
}

const ROLES: [&str; 3] = ["_over", "_under", "_fused"];

/// Scores every `<id>_over`, `<id>_under`, `<id>_fused` image triple in `dir`.
pub fn evaluate_suite(dir: &Path) -> Result<SuiteReport> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut groups: BTreeMap<String, [Option<std::path::PathBuf>; 3]> = BTreeMap::new();
    let mut skipped = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        match ROLES.iter().position(|r| stem.ends_with(r)) {
            Some(i) => {
                let id = stem[..stem.len() - ROLES[i].len()].to_string();
                groups.entry(id).or_default()[i] = Some(path);
            }
            None => skipped.push(path.display().to_string()),
        }
    }
    let mut complete = Vec::new();
    for (id, files) in groups {
        match files {
            [Some(o), Some(u), Some(f)] => complete.push((id, o, u, f)),
            partial => skipped.extend(
                partial
                    .into_iter()
                    .flatten()
                    .map(|p| p.display().to_string()),
            ),
        }
    }
    let rows = complete
        .par_iter()
        .map(|(id, o, u, f)| {
            let (a, b, fused) = (
                load_image(o)?.luma()?,
                load_image(u)?.luma()?,
                load_image(f)?.luma()?,
            );
            evaluate_triple(id, &fused, &a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    skipped.sort();
    Ok(SuiteReport::from_rows(rows, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(w, h, |_, _| rng.gen_range(0.0..=255.0f64).round())
    }

    fn textured(w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |x, y| {
            128.0
                + 60.0 * ((x as f64) * 0.7).sin()
                + 40.0 * ((y as f64) * 0.45 + x as f64 * 0.1).cos()
        })
    }

    fn step_edge(w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |x, _| if x < w / 2 { 40.0 } else { 200.0 })
    }

    #[test]
    fn mutual_information_properties() {
        let c = Plane::filled(20, 20, 77.0);
        assert_eq!(mutual_information(&c, &c, &c).unwrap(), 0.0);
        let a = noise(512, 512, 1);
        let b = noise(512, 512, 2);
        assert!((mutual_information_pair(&a, &a).unwrap() - entropy(&a)).abs() < 1e-12);
        assert!(
            (mutual_information_pair(&a, &b).unwrap() - mutual_information_pair(&b, &a).unwrap())
                .abs()
                < 1e-12
        );
        let indep = mutual_information_pair(&b, &a).unwrap();
        assert!(indep < 0.1 * entropy(&a), "{indep}");
        let s1 = mutual_information(&a, &a, &b).unwrap();
        let s2 = mutual_information(&a, &b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(mutual_information(&a, &Plane::filled(3, 3, 0.0), &b).is_err());
    }

    #[test]
    fn qabf_perfect_and_degenerate() {
        let e = step_edge(32, 24);
        assert!((qabf(&e, &e, &e).unwrap() - qabf_perfect()).abs() < 1e-12);
        let c = Plane::filled(10, 10, 9.0);
        assert_eq!(qabf(&c, &c, &c).unwrap(), 1.0);
        let n = noise(32, 24, 3);
        assert!(qabf(&n, &e, &e).unwrap() < qabf_perfect());
        assert!(qabf(
            &Plane::filled(2, 2, 0.0),
            &Plane::filled(2, 2, 0.0),
            &Plane::filled(2, 2, 0.0)
        )
        .is_err());
    }

    #[test]
    fn qabf_decreases_with_noise() {
        let e = step_edge(48, 48);
        let mut prev = qabf_perfect();
        for (level, seed) in [(4.0, 10), (16.0, 11), (48.0, 12)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Plane::new(
                48,
                48,
                e.data
                    .iter()
                    .map(|v| (v + level * rng.gen_range(-1.0..1.0)).clamp(0.0, 255.0))
                    .collect(),
            )
            .unwrap();
            let q = qabf(&f, &e, &e).unwrap();
            assert!(q < prev, "{level}: {q} !< {prev}");
            prev = q;
        }
    }

    #[test]
    fn qabf_is_source_symmetric() {
        let (a, b, f) = (textured(20, 20), step_edge(20, 20), noise(20, 20, 4));
        assert!((qabf(&f, &a, &b).unwrap() - qabf(&f, &b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mef_ssim_cases() {
        let a = textured(24, 20);
        assert_eq!(mef_ssim(&a, &a, &a).unwrap(), 1.0);
        let mean = a.mean();
        let low = a.map(|v| 0.5 * (v - mean) + mean);
        let s = mef_ssim(&a, &a, &low).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        assert!((s - mef_ssim(&a, &low, &a).unwrap()).abs() < 1e-12);
        let blurred = Plane::from_fn(24, 20, |x, y| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                    if (0..24).contains(&sx) && (0..20).contains(&sy) {
                        acc += a.get(sx as usize, sy as usize);
                        n += 1.0;
                    }
                }
            }
            acc / n
        });
        assert!(mef_ssim(&blurred, &a, &a).unwrap() < 1.0);
        assert!(mef_ssim(
            &Plane::filled(7, 9, 0.0),
            &Plane::filled(7, 9, 0.0),
            &Plane::filled(7, 9, 0.0)
        )
        .is_err());
    }

    #[test]
    fn q_y_cases() {
        let a = textured(20, 18);
        assert_eq!(q_y(&a, &a, &a).unwrap(), 1.0);
        assert_eq!(q_y_lambda(3.0, 3.0), 0.5);
        assert_eq!(q_y_lambda(0.0, 0.0), 0.5);
        // orthogonal stripe patterns never agree structurally
        let h = Plane::from_fn(21, 21, |_, y| if y % 2 == 0 { 30.0 } else { 220.0 });
        let v = Plane::from_fn(21, 21, |x, _| if x % 2 == 0 { 30.0 } else { 220.0 });
        assert_eq!(q_y(&h, &h, &v).unwrap(), 1.0);
        let n = noise(20, 18, 5);
        let (s1, s2) = (
            q_y(&n, &a, &textured(20, 18).map(|x| x * 0.8)).unwrap(),
            q_y(&n, &textured(20, 18).map(|x| x * 0.8), &a).unwrap(),
        );
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn mssim_metric_shares_loss_path() {
        let a = textured(16, 16);
        let b = noise(16, 16, 6);
        assert_eq!(mssim_metric(&a, &a, &a).unwrap(), 1.0);
        let f = noise(16, 16, 7);
        let m = mssim_metric(&f, &a, &b).unwrap();
        assert_eq!(
            m,
            (mssim_pair(&f, &a).unwrap() + mssim_pair(&f, &b).unwrap()) / 2.0
        );
        let mut g = Graph::new();
        let (x, y) = (g.constant(unit_tensor(&f)), g.constant(unit_tensor(&a)));
        let direct = mssim(&mut g, x, y, &LossWeights::default()).unwrap();
        assert_eq!(g.value(direct).item(), mssim_pair(&f, &a).unwrap());
    }

    #[test]
    fn report_aggregates() {
        let a = textured(16, 16);
        let r1 = evaluate_triple("x", &a, &a, &a).unwrap();
        assert_eq!((r1.mssim, r1.mef_ssim, r1.q_y), (1.0, 1.0, 1.0));
        let n = noise(16, 16, 8);
        let r2 = evaluate_triple("y", &n, &a, &a).unwrap();
        let suite = SuiteReport::from_rows(vec![r1.clone(), r2.clone()], vec![]);
        assert!((suite.mean.mi - (r1.mi + r2.mi) / 2.0).abs() < 1e-12);
        assert!((suite.mean.q_y - (r1.q_y + r2.q_y) / 2.0).abs() < 1e-12);
        let csv = suite.to_csv();
        assert!(csv.starts_with("pair,mi,qabf,mssim,mef_ssim,q_y\nx,"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("MEAN,"));
    }
}
