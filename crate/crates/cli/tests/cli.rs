use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mefsfi::image::{load_image, save_image, PlanarImage, SampleRange};
use mefsfi::network::{save_checkpoint, ModelConfig, ModelParams};
use mefsfi::training::{synth_pairs, synth_scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mefsfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mefsfi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn noise_image(w: usize, h: usize, channels: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * channels)
        .map(|_| f64::from(rng.gen_range(0u8..=255)))
        .collect();
    PlanarImage::new(w, h, channels, SampleRange::Byte, data).unwrap()
}

fn write_png(dir: &Path, name: &str, img: &PlanarImage) -> PathBuf {
    let p = dir.join(name);
    save_image(img, &p).unwrap();
    p
}

fn small_config() -> ModelConfig {
    ModelConfig {
        growth: 4,
        blocks: 2,
        ..ModelConfig::default()
    }
}

fn small_checkpoint(dir: &Path) -> PathBuf {
    let p = dir.join("small.ckpt");
    save_checkpoint(
        &ModelParams::init(&small_config(), 1).unwrap(),
        &small_config(),
        &p,
    )
    .unwrap();
    p
}

#[test]
fn classical_fuse_of_identical_inputs_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let img = noise_image(20, 14, 1, 1);
    let a = write_png(dir.path(), "a.png", &img);
    let out = dir.path().join("f.png");
    let o = mefsfi(&[
        "fuse",
        "--over",
        s(&a),
        "--under",
        s(&a),
        "--out",
        s(&out),
        "--mode",
        "classical",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_image(&out).unwrap(), img);
}

#[test]
fn mismatched_sizes_exit_2_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_png(dir.path(), "a.png", &noise_image(20, 14, 3, 2));
    let b = write_png(dir.path(), "b.png", &noise_image(18, 14, 3, 3));
    let out = dir.path().join("f.png");
    let o = mefsfi(&[
        "fuse",
        "--over",
        s(&a),
        "--under",
        s(&b),
        "--out",
        s(&out),
        "--mode",
        "classical",
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("20x14") && stderr(&o).contains("18x14"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());
}

#[test]
fn network_mode_needs_weights() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_png(dir.path(), "a.png", &noise_image(16, 16, 1, 4));
    let out = dir.path().join("f.png");
    let o = mefsfi(&["fuse", "--over", s(&a), "--under", s(&a), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let o = mefsfi(&[
        "fuse",
        "--over",
        s(&missing),
        "--under",
        s(&missing),
        "--out",
        s(&dir.path().join("f.png")),
        "--mode",
        "classical",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn network_fuse_with_fresh_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(dir.path());
    let a = write_png(dir.path(), "a.png", &noise_image(24, 16, 3, 5));
    let b = write_png(dir.path(), "b.png", &noise_image(24, 16, 3, 6));
    let out = dir.path().join("f.png");
    let o = mefsfi(&[
        "fuse",
        "--over",
        s(&a),
        "--under",
        s(&b),
        "--out",
        s(&out),
        "--weights",
        s(&ckpt),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f = load_image(&out).unwrap();
    assert_eq!((f.width(), f.height(), f.channels()), (24, 16, 3));
}

#[test]
fn swap_of_identical_inputs_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let img = noise_image(12, 10, 1, 7);
    let a = write_png(dir.path(), "a.png", &img);
    let outdir = dir.path().join("new").join("swap");
    let o = mefsfi(&["swap", "--a", s(&a), "--b", s(&a), "--outdir", s(&outdir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["pseudo_a", "pseudo_b", "fused_phaseA", "fused_phaseB"] {
        assert_eq!(
            load_image(outdir.join(format!("{name}.png"))).unwrap(),
            img,
            "{name}"
        );
    }
    assert!(outdir.join("report.txt").is_file());
}

fn report_means(path: &Path) -> HashMap<String, (f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                (f[1].parse().unwrap(), f[2].parse().unwrap()),
            )
        })
        .collect()
}

#[test]
fn swap_report_shows_amplitude_carries_brightness() {
    let dir = tempfile::tempdir().unwrap();
    for k in 0..3 {
        let pair = synth_pairs(&synth_scene(32, 32, 40 + k), 1, 50 + k)
            .unwrap()
            .remove(0);
        let a = write_png(dir.path(), &format!("over{k}.png"), &pair.over);
        let b = write_png(dir.path(), &format!("under{k}.png"), &pair.under);
        let outdir = dir.path().join(format!("out{k}"));
        let o = mefsfi(&["swap", "--a", s(&a), "--b", s(&b), "--outdir", s(&outdir)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let m = report_means(&outdir.join("report.txt"));
        let (over, under) = (m["a"].0, m["b"].0);
        // pseudo_b carries the over-exposed amplitude
        assert!((m["pseudo_b"].1 - over).abs() / over < 0.1);
        assert!((m["pseudo_a"].0 - under).abs() < 1e-5);
        for fused in ["fused_phaseA", "fused_phaseB"] {
            assert!((m[fused].0 - 0.5 * (over + under)).abs() < 1e-5);
            assert!(under < m[fused].1 && m[fused].1 < over);
        }
    }
}

#[test]
fn swap_validates_before_creating_outdir() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_png(dir.path(), "a.png", &noise_image(12, 10, 1, 8));
    let b = write_png(dir.path(), "b.png", &noise_image(10, 10, 1, 9));
    let outdir = dir.path().join("never");
    let o = mefsfi(&["swap", "--a", s(&a), "--b", s(&b), "--outdir", s(&outdir)]);
    assert_eq!(code(&o), 2);
    assert!(!outdir.exists());
}

#[test]
fn train_rejects_bad_data_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let o = mefsfi(&[
        "train",
        "--data",
        s(&dir.path().join("missing")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = mefsfi(&["train", "--data", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn train_from_directory_and_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    for k in 0..2 {
        let pair = synth_pairs(&synth_scene(24, 24, k), 1, 10 + k)
            .unwrap()
            .remove(0);
        write_png(&data, &format!("p{k}_over.png"), &pair.over);
        write_png(&data, &format!("p{k}_under.png"), &pair.under);
    }
    write_png(&data, "lonely_over.png", &noise_image(24, 24, 1, 3));
    let out = dir.path().join("m.ckpt");
    let common = [
        "--patch", "16", "--batch", "2", "--growth", "4", "--blocks", "2", "--epochs", "2",
        "--quiet",
    ];
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out)];
    args.extend(common);
    let o = mefsfi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("lonely"));
    let log = fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(log.starts_with("step,loss,seconds\n"));
    assert_eq!(log.lines().count(), 3);

    let log2 = dir.path().join("syn.csv");
    let mut args = vec![
        "train",
        "--synthetic",
        "3",
        "--out",
        s(&out),
        "--log",
        s(&log2),
    ];
    args.extend(common);
    let o = mefsfi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&log2).unwrap().lines().count(), 5);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.conf");
    fs::write(&cfg, "# tiny run\nsynthetic = 2\npatch=16\nbatch = 2\ngrowth=4\nblocks=2\nquiet=true\nmax_steps = 1\n").unwrap();
    let out = dir.path().join("m.ckpt");
    let o = mefsfi(&[
        "--config",
        s(&cfg),
        "train",
        "--out",
        s(&out),
        "--epochs",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.with_extension("csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    fs::write(&cfg, "learning_rate=3\n").unwrap();
    let o = mefsfi(&[
        "--config",
        s(&cfg),
        "train",
        "--synthetic",
        "1",
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_flag_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let o = mefsfi(&["train", "--synthetic", "2", "--out", s(&out), "--lr", "-1"]);
    assert_eq!(code(&o), 2);
    let o = mefsfi(&["train", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    let o = Command::new(env!("CARGO_BIN_EXE_mefsfi"))
        .args(["gradcheck", "--growth", "4", "--blocks", "2"])
        .env("MEF_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_on_identical_triples() {
    let dir = tempfile::tempdir().unwrap();
    for k in 0..2 {
        let img = noise_image(20, 20, 1, 20 + k);
        for role in ["over", "under", "fused"] {
            write_png(dir.path(), &format!("t{k}_{role}.png"), &img);
        }
    }
    write_png(dir.path(), "stray_over.png", &noise_image(20, 20, 1, 1));
    let out = dir.path().join("report.csv");
    let o = mefsfi(&["eval", "--data", s(dir.path()), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("stray_over"));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pair,mi,qabf,mssim,mef_ssim,q_y");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(&f[3..], &["1", "1", "1"], "{l}");
    }
    assert!(lines[3].starts_with("MEAN,"));
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let o = mefsfi(&["gradcheck", "--seed", "7", "--growth", "4", "--blocks", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

#[test]
fn dump_features_writes_three_grids_per_module() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(dir.path());
    let a = write_png(dir.path(), "a.png", &noise_image(16, 16, 1, 30));
    let b = write_png(dir.path(), "b.png", &noise_image(16, 16, 1, 31));
    let outdir = dir.path().join("features");
    let o = mefsfi(&[
        "dump-features",
        "--over",
        s(&a),
        "--under",
        s(&b),
        "--weights",
        s(&ckpt),
        "--outdir",
        s(&outdir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&outdir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), small_config().blocks * 3);
    assert!(names.contains(&"sffm2_frequency.png".to_string()));
    let grid = load_image(outdir.join("sffm1_fused.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (32, 32));
}
