use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use tempfile::TempDir;

fn asconvsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asconvsr"))
        .args(args)
        .output()
        .expect("spawn asconvsr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pattern(w: u32, h: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(37) ^ y.wrapping_mul(91) ^ seed.wrapping_mul(13);
        Rgb([
            (v % 256) as u8,
            ((v / 3 + x) % 256) as u8,
            ((v / 7 + 2 * y) % 256) as u8,
        ])
    })
}

fn dataset(dir: &Path, stems: &[&str], size: u32) -> PathBuf {
    let root = dir.join("data");
    std::fs::create_dir_all(root.join("HR")).unwrap();
    for (i, s) in stems.iter().enumerate() {
        pattern(size, size, i as u32)
            .save(root.join("HR").join(format!("{s}.png")))
            .unwrap();
    }
    root
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fresh_checkpoint(dir: &TempDir) -> PathBuf {
    let data = dataset(dir.path(), &["a", "b"], 32);
    let ck = dir.path().join("fresh.ckpt");
    let o = asconvsr(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ck),
        "--iters",
        "0",
        "--lr-patch",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    ck
}

#[test]
fn score_matches_hand_value() {
    let o = asconvsr(&[
        "score",
        "--psnr",
        "30.87",
        "--bicubic",
        "29.81",
        "--runtime-ms",
        "3.91",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("score ")).unwrap();
    let v: f64 = line[6..].trim().parse().unwrap();
    assert!((v - 21.09).abs() < 0.01, "{v}");
    assert!(out.starts_with("# asconvsr score"));
}

#[test]
fn score_rejects_non_positive_runtime() {
    let o = asconvsr(&[
        "score",
        "--psnr",
        "30",
        "--bicubic",
        "29",
        "--runtime-ms",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flops_json_reports_both_conventions() {
    let o = asconvsr(&["flops", "--preset", "asconvsr-l", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let json = &out[out.find('{').unwrap()..];
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    let flops = v["total_flops"].as_u64().unwrap();
    let macs = v["total_macs"].as_u64().unwrap();
    assert!(flops > macs && macs > 0);
    assert!(out.contains("# asconvsr flops"));
}

#[test]
fn flops_table_lists_layers() {
    let o = asconvsr(&["flops", "--width", "64", "--height", "32"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("head"));
    assert!(out.contains("tail"));
    assert!(out.contains("total:"));
}

#[test]
fn fresh_model_infers_nearest_neighbour() {
    let dir = TempDir::new().unwrap();
    let ck = fresh_checkpoint(&dir);
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    let img = pattern(128, 128, 5);
    img.save(&input).unwrap();
    let o = asconvsr(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&input),
        "--out",
        p(&output),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sr = image::open(&output).unwrap().to_rgb8();
    assert_eq!(sr.dimensions(), (256, 256));
    for (x, y, px) in sr.enumerate_pixels() {
        assert_eq!(px, img.get_pixel(x / 2, y / 2), "({x},{y})");
    }
}

#[test]
fn greyscale_input_is_expanded() {
    let dir = TempDir::new().unwrap();
    let ck = fresh_checkpoint(&dir);
    let input = dir.path().join("grey.png");
    let output = dir.path().join("grey_sr.png");
    GrayImage::from_fn(16, 12, |x, y| Luma([(x * 10 + y) as u8]))
        .save(&input)
        .unwrap();
    let o = asconvsr(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&input),
        "--out",
        p(&output),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sr = image::open(&output).unwrap().to_rgb8();
    assert_eq!(sr.dimensions(), (32, 24));
    assert_eq!(sr.get_pixel(3, 5), &Rgb([12, 12, 12]));
}

#[test]
fn sixteen_bit_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let ck = fresh_checkpoint(&dir);
    let input = dir.path().join("deep.png");
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_pixel(8, 8, Rgb([1000, 2000, 3000]));
    img.save(&input).unwrap();
    let out = dir.path().join("x.png");
    let o = asconvsr(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&input),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bit depth"), "{}", stderr(&o));
}

#[test]
fn missing_lr_is_synthesised_and_cached() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), &["z", "m"], 32);
    let ck = dir.path().join("c.ckpt");
    let o = asconvsr(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ck),
        "--iters",
        "0",
        "--lr-patch",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in ["z", "m"] {
        let gen = data.join("LR_gen").join(format!("{s}.png"));
        assert_eq!(image::image_dimensions(&gen).unwrap(), (16, 16));
    }
}

#[test]
fn mismatched_lr_names_the_file() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), &["img"], 32);
    std::fs::create_dir_all(data.join("LR")).unwrap();
    pattern(15, 16, 0)
        .save(data.join("LR").join("img.png"))
        .unwrap();
    let ck = dir.path().join("c.ckpt");
    let o = asconvsr(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ck),
        "--iters",
        "0",
        "--lr-patch",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("img"), "{}", stderr(&o));
}

#[test]
fn eval_writes_sorted_report() {
    let dir = TempDir::new().unwrap();
    let ck = fresh_checkpoint(&dir);
    let data = dataset(&dir.path().join("eval"), &["c", "a", "b"], 32);
    let report = dir.path().join("report.json");
    let o = asconvsr(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--runtime-ms",
        "4.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let names: Vec<&str> = v["per_image"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["image"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["a", "b", "c"]);
    for key in ["psnr", "ssim", "psnr_bicubic", "score"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert_eq!(v["runtime_ms"].as_f64(), Some(4.0));
}

#[test]
fn same_seed_training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), &["a", "b", "c"], 32);
    let run = |name: &str| {
        let ck = dir.path().join(name);
        let log = dir.path().join(format!("{name}.csv"));
        let o = asconvsr(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&ck),
            "--log",
            p(&log),
            "--iters",
            "3",
            "--seed",
            "9",
            "--lr-patch",
            "8",
            "--batch-size",
            "2",
            "--set",
            "channels=8",
            "--set",
            "num_bases=2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(ck).unwrap(),
            std::fs::read_to_string(log).unwrap(),
        )
    };
    let (a, log_a) = run("a.ckpt");
    let (b, log_b) = run("b.ckpt");
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert!(log_a.starts_with("iter,lr,loss,psnr_eval\n"));
    assert_eq!(log_a.lines().count(), 4);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), &["a", "b"], 32);
    let common = [
        "--lr-patch",
        "8",
        "--batch-size",
        "2",
        "--seed",
        "3",
        "--set",
        "channels=8",
        "--set",
        "num_bases=2",
    ];
    let train = |out: &Path, iters: &str, resume: Option<&Path>| {
        let mut args = vec![
            "train",
            "--data",
            p(&data),
            "--out",
            p(out),
            "--iters",
            iters,
        ];
        args.extend(common);
        if let Some(r) = resume {
            args.extend(["--resume", p(r)]);
        }
        let o = asconvsr(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let full = dir.path().join("full.ckpt");
    let half = dir.path().join("half.ckpt");
    let resumed = dir.path().join("resumed.ckpt");
    train(&full, "4", None);
    train(&half, "2", None);
    train(&resumed, "4", Some(&half));
    assert_eq!(
        std::fs::read(full).unwrap(),
        std::fs::read(resumed).unwrap()
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(asconvsr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        asconvsr(&["flops", "--preset", "huge"]).status.code(),
        Some(1)
    );
    assert_eq!(
        asconvsr(&["flops", "--set", "bogus_key=1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        asconvsr(&["flops", "--set", "novalue"]).status.code(),
        Some(1)
    );
}

#[test]
fn help_exits_zero() {
    let o = asconvsr(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("train"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = asconvsr(&[
        "infer",
        "--ckpt",
        p(&dir.path().join("nope.ckpt")),
        "--in",
        "x.png",
        "--out",
        "y.png",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_header_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = asconvsr(&[
        "flops",
        "--preset",
        "asconvsr-l",
        "--width",
        "64",
        "--height",
        "64",
    ]);
    let header: String = stdout(&o)
        .lines()
        .take_while(|l| !l.starts_with("layer"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("model.cfg");
    std::fs::write(&cfg, &header).unwrap();
    let o2 = asconvsr(&[
        "flops",
        "--config",
        p(&cfg),
        "--width",
        "64",
        "--height",
        "64",
    ]);
    assert!(o2.status.success(), "{}", stderr(&o2));
    assert_eq!(stdout(&o), stdout(&o2));
}
