use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mefsfi::image::{load_image, save_image, to_u8, PlanarImage, Plane, SampleRange};
use mefsfi::loss::LossWeights;
use mefsfi::metrics::evaluate_suite;
use mefsfi::network::{
    load_checkpoint, model_forward, save_checkpoint, ForwardOptions, ModelConfig, ModelParams,
    MIN_SIZE,
};
use mefsfi::spectrum::{fuse_amplitude_weighted, swap_amplitude, PhaseFrom, Recomposed};
use mefsfi::training::{
    end_to_end_gradcheck, log_csv, luma_unit, synth_pairs, synth_scene, train, ExposurePair,
    TrainConfig,
};
use mefsfi::{Graph, Tensor};

use crate::args::{
    DumpFeaturesArgs, EvalArgs, FuseArgs, FuseMode, GradcheckArgs, PhaseSource, SwapArgs, TrainArgs,
};
use crate::error::{CliError, CliResult};
use crate::pipeline::{fuse_classical, fuse_network, luma_tensor, split};

/// Size of the procedural base scene used when no `--base` is given.
pub const SYNTH_SCENE_SIZE: usize = 96;

/// Worst relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn load(path: &Path) -> CliResult<PlanarImage> {
    Ok(load_image(path)?)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

/// The parent directory of an output file must already exist.
fn check_output(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::validation(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn check_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{} is not a directory",
            dir.display()
        )))
    }
}

fn phase_from(p: PhaseSource) -> PhaseFrom {
    match p {
        PhaseSource::Over => PhaseFrom::A,
        PhaseSource::Under => PhaseFrom::B,
    }
}

fn check_size(img: &PlanarImage) -> CliResult<()> {
    if img.width() < MIN_SIZE || img.height() < MIN_SIZE {
        return Err(CliError::validation(format!(
            "network needs at least {MIN_SIZE}x{MIN_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn load_pair(over: &Path, under: &Path) -> CliResult<(PlanarImage, PlanarImage)> {
    let (o, u) = (load(over)?, load(under)?);
    o.same_dims(&u)?;
    if o.channels() != u.channels() {
        return Err(CliError::validation(format!(
            "inputs have {} and {} channels",
            o.channels(),
            u.channels()
        )));
    }
    Ok((o, u))
}

pub fn fuse(a: &FuseArgs) -> CliResult<()> {
    let (over, under) = load_pair(&a.over, &a.under)?;
    check_output(&a.out)?;
    let fused = match a.mode {
        FuseMode::Network => {
            let weights = a.weights.as_ref().ok_or_else(|| {
                CliError::validation("network mode needs --weights (or use --mode classical)")
            })?;
            let (params, config) = load_checkpoint(weights)?;
            check_size(&over)?;
            fuse_network(&params, &config, &over, &under)?
        }
        FuseMode::Classical => fuse_classical(&over, &under, a.wa, a.wb, phase_from(a.phase_from))?,
    };
    save_image(&fused, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn describe(report: &mut String, name: &str, raw: &Plane, clamped: usize) {
    let clipped = raw.map(|v| v.clamp(0.0, 255.0));
    let _ = writeln!(
        report,
        "{name},{:.6},{:.6},{clamped}",
        raw.mean(),
        clipped.mean()
    );
}

pub fn swap(a: &SwapArgs) -> CliResult<()> {
    let (ia, ib) = load_pair(&a.a, &a.b)?;
    let gray = |img: &PlanarImage| -> CliResult<PlanarImage> {
        Ok(PlanarImage::from_plane(&split(img)?.y, SampleRange::Byte)?)
    };
    let (ya, yb) = (gray(&ia)?, gray(&ib)?);
    let (pa, pb) = swap_amplitude(&ya, &yb)?;
    let fa = fuse_amplitude_weighted(&ya, &yb, 0.5, 0.5, PhaseFrom::A)?;
    let fb = fuse_amplitude_weighted(&ya, &yb, 0.5, 0.5, PhaseFrom::B)?;
    create_dir(&a.outdir)?;
    let mut report = String::from("image,mean,clamped_mean,clamped_pixels\n");
    describe(&mut report, "a", &ya.channel(0), 0);
    describe(&mut report, "b", &yb.channel(0), 0);
    let outputs: [(&str, &Recomposed); 4] = [
        ("pseudo_a", &pa),
        ("pseudo_b", &pb),
        ("fused_phaseA", &fa),
        ("fused_phaseB", &fb),
    ];
    for (name, r) in outputs {
        save_image(&r.image, a.outdir.join(format!("{name}.png")))?;
        describe(&mut report, name, &r.raw, r.clamped);
    }
    write(&a.outdir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

/// `<id>_over` / `<id>_under` image pairs in `dir`, sorted by id.
pub fn discover_pairs(dir: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    check_dir(dir)?;
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let mut found: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?
            .path();
        let Some(stem) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
        else {
            continue;
        };
        if let Some(id) = stem.strip_suffix("_over") {
            found.entry(id.to_string()).or_default().0 = Some(path);
        } else if let Some(id) = stem.strip_suffix("_under") {
            found.entry(id.to_string()).or_default().1 = Some(path);
        }
    }
    let mut pairs = Vec::new();
    for (id, files) in found {
        match files {
            (Some(o), Some(u)) => pairs.push((id, o, u)),
            _ => eprintln!("warning: {id} has no matching over/under partner, skipped"),
        }
    }
    Ok(pairs)
}

fn train_settings(a: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let model = ModelConfig {
        growth: a.growth,
        blocks: a.blocks,
        ..ModelConfig::default()
    };
    model.validate()?;
    let config = TrainConfig {
        patch: a.patch,
        batch: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        max_steps: a.max_steps,
        seed: a.seed,
        checked: a.checked,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::default()
    };
    config.validate()?;
    if a.epochs == 0 {
        return Err(CliError::validation("epochs must be at least 1"));
    }
    Ok((model, config))
}

fn training_data(a: &TrainArgs) -> CliResult<Vec<ExposurePair>> {
    if let Some(n) = a.synthetic {
        if n == 0 {
            return Err(CliError::validation("--synthetic needs at least one pair"));
        }
        let base = match &a.base {
            Some(path) => PlanarImage::from_plane(&luma_unit(&load(path)?)?, SampleRange::Unit)?,
            None => synth_scene(SYNTH_SCENE_SIZE, SYNTH_SCENE_SIZE, a.seed),
        };
        return Ok(synth_pairs(&base, n, a.seed)?);
    }
    let dir = a
        .data
        .as_ref()
        .expect("clap requires --data or --synthetic");
    let found = discover_pairs(dir)?;
    if found.is_empty() {
        return Err(CliError::validation(format!(
            "no <id>_over/<id>_under pairs in {}",
            dir.display()
        )));
    }
    found
        .iter()
        .map(|(_, o, u)| {
            let (o, u) = load_pair(o, u)?;
            Ok(ExposurePair::new(o, u)?)
        })
        .collect()
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let (model, config) = train_settings(a)?;
    let data = training_data(a)?;
    if let Some(small) = data
        .iter()
        .find(|p| p.over.width() < a.patch || p.over.height() < a.patch)
    {
        return Err(CliError::validation(format!(
            "{}x{} image smaller than {}x{} patch",
            small.over.width(),
            small.over.height(),
            a.patch,
            a.patch
        )));
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    check_output(&a.out)?;
    check_output(&log_path)?;
    let params = ModelParams::init(&model, a.seed)?;
    let ckpt = (a.checkpoint_every > 0).then_some(a.out.as_path());
    let quiet = a.quiet;
    let report = train(
        params,
        &model,
        &data,
        &config,
        &LossWeights::default(),
        ckpt,
        |row| {
            if !quiet {
                eprintln!("step {} loss {:.6}", row.step, row.loss);
            }
        },
    )?;
    save_checkpoint(&report.params, &model, &a.out)?;
    write(&log_path, log_csv(&report.log, a.timing))?;
    println!(
        "wrote {} and {} ({} steps)",
        a.out.display(),
        log_path.display(),
        report.log.len()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    check_dir(&a.data)?;
    check_output(&a.out)?;
    let report = evaluate_suite(&a.data)?;
    for s in &report.skipped {
        eprintln!("warning: {s} is not part of a complete triple, skipped");
    }
    if report.rows.is_empty() {
        return Err(CliError::validation(format!(
            "no <id>_over/_under/_fused triples in {}",
            a.data.display()
        )));
    }
    let csv = report.to_csv();
    write(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let model = ModelConfig {
        growth: a.growth,
        blocks: a.blocks,
        ..ModelConfig::default()
    };
    model.validate()?;
    if a.size < MIN_SIZE {
        return Err(CliError::validation(format!(
            "size must be at least {MIN_SIZE}"
        )));
    }
    let entries = end_to_end_gradcheck(&model, a.size, a.seed)?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        println!(
            "{:<36} {:.3e} over {} coordinates",
            e.name, e.report.max_rel_error, e.report.checked
        );
        worst = worst.max(e.report.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if worst > GRADCHECK_TOLERANCE || worst.is_nan() {
        return Err(CliError::numeric(format!(
            "gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Channels of `t` (batch item 0) tiled into a near-square grid, each map
/// stretched to `[0, 255]` on its own.
pub fn feature_grid(t: &Tensor) -> PlanarImage {
    let s = t.shape();
    let cols = (s.c as f64).sqrt().ceil() as usize;
    let rows = s.c.div_ceil(cols);
    let (w, h) = (cols * s.w, rows * s.h);
    let mut data = vec![0.0; w * h];
    for c in 0..s.c {
        let plane = t.plane(0, c);
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let (ox, oy) = ((c % cols) * s.w, (c / cols) * s.h);
        for y in 0..s.h {
            for x in 0..s.w {
                data[(oy + y) * w + ox + x] = f64::from(to_u8((plane[y * s.w + x] - lo) * scale));
            }
        }
    }
    PlanarImage::new(w, h, 1, SampleRange::Byte, data).expect("grid dims match data")
}

pub fn dump_features(a: &DumpFeaturesArgs) -> CliResult<()> {
    let (over, under) = load_pair(&a.over, &a.under)?;
    let (params, config) = load_checkpoint(&a.weights)?;
    check_size(&over)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let o = g.constant(luma_tensor(&split(&over)?.y)?);
    let u = g.constant(luma_tensor(&split(&under)?.y)?);
    let options = ForwardOptions {
        taps: true,
        ..ForwardOptions::default()
    };
    let out = model_forward(&mut g, &bound, &config, o, u, options)?;
    create_dir(&a.outdir)?;
    for (i, taps) in out.taps.iter().enumerate() {
        for (branch, v) in [
            ("spatial", taps.spatial),
            ("frequency", taps.frequency),
            ("fused", taps.fused),
        ] {
            let path = a.outdir.join(format!("sffm{}_{branch}.png", i + 1));
            save_image(&feature_grid(g.value(v)), &path)?;
        }
    }
    println!(
        "wrote {} feature grids to {}",
        3 * out.taps.len(),
        a.outdir.display()
    );
    Ok(())
}
