use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use asconvsr_core::metrics::{bicubic_upscale, efficiency_score_with, runtime_bench, EFFICIENCY_C};
use asconvsr_core::train::{Checkpoint, TrainRecord, Trainer};
use asconvsr_core::{
    flops_estimate, psnr_rgb, ssim_rgb, AsConvSr, BenchConfig, ModelConfig, Rng, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config_file::{apply, read_config_file, render_header};
use crate::dataset::{dataset_scan, load_pairs};
use crate::error::{CliError, CliResult};
use crate::png::{png_read, png_write};

#[derive(Debug, Parser)]
#[command(
    name = "asconvsr",
    version,
    about = "Train, evaluate and benchmark AsConvSR super-resolution models"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a dataset folder.
    Train(TrainArgs),
    /// PSNR/SSIM of a checkpoint on a dataset, against bicubic.
    Eval(EvalArgs),
    /// Super-resolve one PNG.
    Infer(InferArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Operation counts per layer.
    Flops(FlopsArgs),
    /// Efficiency score from PSNR and runtime.
    Score(ScoreArgs),
}

/// Model configuration: preset, then file, then `--set` overrides.
#[derive(Debug, Args)]
struct ModelArgs {
    /// `asconvsr` or `asconvsr-l`.
    #[arg(long, default_value = "asconvsr")]
    preset: String,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint written at the end.
    #[arg(long)]
    out: PathBuf,
    /// CSV log `iter,lr,loss,psnr_eval`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_patch: Option<usize>,
    /// Continue from a checkpoint's parameters, optimizer and sampler.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Runtime used in the score; benchmarked on the first image if absent.
    #[arg(long)]
    runtime_ms: Option<f64>,
    #[arg(long, default_value_t = 5)]
    bench_reps: usize,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Benchmark a checkpoint instead of a freshly initialised preset.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1920)]
    width: usize,
    #[arg(long, default_value_t = 1080)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the report as a CSV row (header written for a new file).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1920)]
    width: usize,
    #[arg(long, default_value_t = 1080)]
    height: usize,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    psnr: f64,
    #[arg(long)]
    bicubic: f64,
    #[arg(long)]
    runtime_ms: f64,
    #[arg(long, default_value_t = EFFICIENCY_C)]
    c: f64,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Flops(a) => flops(a, out),
        Command::Score(a) => score(a, out),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(path.display(), e)
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn resolve_model(a: &ModelArgs, mut train: Option<&mut TrainConfig>) -> CliResult<ModelConfig> {
    let mut model =
        ModelConfig::preset(&a.preset).map_err(|e| CliError::Usage(format!("--preset: {e}")))?;
    if let Some(path) = &a.config {
        let pairs = read_config_file(path)?;
        apply(
            &pairs,
            &mut model,
            train.as_deref_mut(),
            &path.display().to_string(),
        )?;
    }
    let sets = a
        .set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    apply(&sets, &mut model, train, "--set")?;
    model
        .validate()
        .map_err(|e| CliError::Usage(format!("model config: {e}")))?;
    Ok(model)
}

fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, AsConvSr<f32>)> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::core(path.display(), e))?;
    let model = ck
        .to_model()
        .map_err(|e| CliError::core(path.display(), e))?;
    Ok((ck, model))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut tc = TrainConfig::default();
    let mc = resolve_model(&a.model, Some(&mut tc))?;
    if let Some(v) = a.iters {
        tc.total_iters = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr_patch {
        tc.lr_patch = v;
        tc.hr_patch = mc.scale * v;
    }
    tc.validate(mc.scale)
        .map_err(|e| CliError::Usage(format!("train config: {e}")))?;
    let mut extra = vec![
        ("data", a.data.display().to_string()),
        ("out", a.out.display().to_string()),
    ];
    if let Some(r) = &a.resume {
        extra.push(("resume", r.display().to_string()));
    }
    emit(out, &render_header("train", &extra, &mc, Some(&tc)))?;

    let index = dataset_scan(&a.data, mc.scale)?;
    let data = load_pairs(&index, mc.scale)?;
    data.check_patch(tc.lr_patch)
        .map_err(|e| CliError::data(a.data.display(), e))?;
    let mut trainer = match &a.resume {
        None => {
            let model = AsConvSr::new(mc.clone(), &mut Rng::new(tc.seed))
                .map_err(|e| CliError::core("init", e))?;
            Trainer::new(model, tc.clone()).map_err(|e| CliError::core("train", e))?
        }
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| CliError::core(path.display(), e))?;
            let mut model =
                AsConvSr::new_uninit(mc.clone()).map_err(|e| CliError::core("init", e))?;
            ck.restore_into(&mut model)
                .map_err(|e| CliError::core(path.display(), e))?;
            let mut t = Trainer::new(model, tc.clone()).map_err(|e| CliError::core("train", e))?;
            if let Some(adam) = ck
                .adam_state()
                .map_err(|e| CliError::core(path.display(), e))?
            {
                t.adam = adam;
            }
            t.rng = Rng::from_state(ck.rng);
            t.iter = ck.iteration as usize;
            t
        }
    };

    let mut log = match &a.log {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(io_err(p))?;
            writeln!(f, "{}", TrainRecord::CSV_HEADER).map_err(io_err(p))?;
            Some((p.clone(), f))
        }
        None => None,
    };
    let eval = (tc.eval_every > 0).then_some(&data);
    let records = trainer
        .run(&data, eval, |r| {
            if let Some((p, f)) = log.as_mut() {
                writeln!(f, "{}", r.to_csv_row()).map_err(|e| {
                    asconvsr_core::Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{}: {e}", p.display()),
                    ))
                })?;
            }
            Ok(())
        })
        .map_err(|e| CliError::core("train", e))?;

    let ck = Checkpoint::from_model(
        &trainer.model,
        trainer.iter as u64,
        trainer.rng.state(),
        Some(&trainer.adam),
    )
    .map_err(|e| CliError::core("checkpoint", e))?;
    ck.save(&a.out)
        .map_err(|e| CliError::core(a.out.display(), e))?;
    let last = records.last();
    emit(
        out,
        &format!(
            "trained {} iterations (total {}), final loss {}, psnr {}\ncheckpoint: {}\n",
            records.len(),
            trainer.iter,
            last.map(|r| format!("{:.6}", r.loss))
                .unwrap_or_else(|| "-".into()),
            last.and_then(|r| r.psnr_eval)
                .map(|p| format!("{p:.3} dB"))
                .unwrap_or_else(|| "-".into()),
            a.out.display()
        ),
    )
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let (_, model) = load_checkpoint(&a.ckpt)?;
    let cfg = model.config().clone();
    let extra = [
        ("ckpt", a.ckpt.display().to_string()),
        ("data", a.data.display().to_string()),
        ("report", a.report.display().to_string()),
        (
            "runtime_ms",
            a.runtime_ms
                .map(|v| v.to_string())
                .unwrap_or_else(|| "bench".into()),
        ),
    ];
    emit(out, &render_header("eval", &extra, &cfg, None))?;
    let index = dataset_scan(&a.data, cfg.scale)?;
    let data = load_pairs(&index, cfg.scale)?;

    let mut rows = Vec::new();
    let (mut sum_p, mut sum_s, mut sum_bp, mut sum_bs) = (0.0, 0.0, 0.0, 0.0);
    for (name, (lr, hr)) in data.names().iter().zip(data.pairs()) {
        let ctx = |e| CliError::core(name, e);
        let sr = model.infer(lr).map_err(ctx)?;
        let bic = bicubic_upscale(lr, cfg.scale)
            .and_then(|b| b.clamp(0.0, 1.0))
            .map_err(ctx)?;
        let p = psnr_rgb(&sr, hr).map_err(ctx)?;
        let s = ssim_rgb(&sr, hr).map_err(ctx)?;
        let bp = psnr_rgb(&bic, hr).map_err(ctx)?;
        let bs = ssim_rgb(&bic, hr).map_err(ctx)?;
        sum_p += p;
        sum_s += s;
        sum_bp += bp;
        sum_bs += bs;
        rows.push(serde_json::json!({"image": name, "psnr": p, "ssim": s, "psnr_bicubic": bp, "ssim_bicubic": bs}));
    }
    let n = data.len() as f64;
    let (psnr, ssim, psnr_b, ssim_b) = (sum_p / n, sum_s / n, sum_bp / n, sum_bs / n);
    let (runtime_ms, source) = match a.runtime_ms {
        Some(v) => (v, "flag".to_string()),
        None => {
            let [_, _, h, w] = data.pairs()[0]
                .0
                .dims4()
                .map_err(|e| CliError::core("bench", e))?;
            let bc = BenchConfig {
                height: h,
                width: w,
                reps: a.bench_reps,
                ..BenchConfig::default()
            };
            let rep = runtime_bench(&model, &a.ckpt.display().to_string(), &bc)
                .map_err(|e| CliError::core("bench", e))?;
            (
                rep.median_ms,
                format!("bench {}x{} median of {}", w, h, rep.reps),
            )
        }
    };
    let score = efficiency_score_with(psnr, psnr_b, runtime_ms, EFFICIENCY_C)
        .map_err(|e| CliError::core("score", e))?;
    let report = serde_json::json!({
        "checkpoint": a.ckpt.display().to_string(),
        "data": a.data.display().to_string(),
        "images": data.len(),
        "psnr": psnr,
        "ssim": ssim,
        "psnr_bicubic": psnr_b,
        "ssim_bicubic": ssim_b,
        "runtime_ms": runtime_ms,
        "runtime_source": source,
        "score": score,
        "per_image": rows,
    });
    std::fs::write(
        &a.report,
        serde_json::to_string_pretty(&report).expect("json"),
    )
    .map_err(io_err(&a.report))?;
    emit(
        out,
        &format!(
            "images {}\npsnr {psnr:.4} dB  ssim {ssim:.4}\nbicubic psnr {psnr_b:.4} dB  ssim {ssim_b:.4}\nruntime {runtime_ms:.3} ms ({source})\nscore {score:.4}\n",
            data.len()
        ),
    )
}

fn infer(a: InferArgs, out: &mut dyn Write) -> CliResult<()> {
    let (_, model) = load_checkpoint(&a.ckpt)?;
    let extra = [
        ("ckpt", a.ckpt.display().to_string()),
        ("in", a.input.display().to_string()),
        ("out", a.out.display().to_string()),
    ];
    emit(out, &render_header("infer", &extra, model.config(), None))?;
    let x = png_read(&a.input)?;
    let y = model
        .infer(&x)
        .map_err(|e| CliError::core(a.input.display(), e))?;
    png_write(&y, &a.out)?;
    let [_, _, h, w] = y.dims4().map_err(|e| CliError::core("infer", e))?;
    info!("wrote {}x{} image", w, h);
    emit(out, &format!("wrote {} ({w}x{h})\n", a.out.display()))
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let (model, id) = match &a.ckpt {
        Some(p) => (load_checkpoint(p)?.1, p.display().to_string()),
        None => {
            let mc = resolve_model(&a.model, None)?;
            let m =
                AsConvSr::new(mc, &mut Rng::new(a.seed)).map_err(|e| CliError::core("init", e))?;
            (m, a.model.preset.clone())
        }
    };
    let bc = BenchConfig {
        height: a.height,
        width: a.width,
        warmup: a.warmup,
        reps: a.reps,
        seed: a.seed,
        threads: a.threads,
    };
    let extra = [
        ("model", id.clone()),
        ("input", format!("{}x{}", a.width, a.height)),
        ("warmup", a.warmup.to_string()),
        ("reps", a.reps.to_string()),
        ("threads", a.threads.to_string()),
        ("seed", a.seed.to_string()),
    ];
    emit(out, &render_header("bench", &extra, model.config(), None))?;
    let rep = runtime_bench(&model, &id, &bc).map_err(|e| CliError::core("bench", e))?;
    if let Some(p) = &a.csv {
        let new = !p.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(io_err(p))?;
        if new {
            writeln!(f, "{}", asconvsr_core::BenchReport::CSV_HEADER).map_err(io_err(p))?;
        }
        writeln!(f, "{}", rep.to_csv_row()).map_err(io_err(p))?;
    }
    emit(out, &format!("{}\n", rep.to_json()))
}

fn flops(a: FlopsArgs, out: &mut dyn Write) -> CliResult<()> {
    let mc = resolve_model(&a.model, None)?;
    let rep = flops_estimate(&mc, a.height, a.width).map_err(|e| CliError::core("flops", e))?;
    let extra = [("input", format!("{}x{}", a.width, a.height))];
    emit(out, &render_header("flops", &extra, &mc, None))?;
    if a.json {
        return emit(
            out,
            &format!("{}\n", serde_json::to_string_pretty(&rep).expect("json")),
        );
    }
    let mut s = format!(
        "{:<24} {:<14} {:>5} {:>5} {:>2} {:>11} {:>18} {:>18}\n",
        "layer", "kind", "c_in", "c_out", "k", "map", "flops", "macs"
    );
    for l in &rep.layers {
        s.push_str(&format!(
            "{:<24} {:<14} {:>5} {:>5} {:>2} {:>11} {:>18} {:>18}\n",
            l.name,
            l.kind,
            l.c_in,
            l.c_out,
            l.k,
            format!("{}x{}", l.width, l.height),
            l.flops,
            l.macs
        ));
    }
    s.push_str(&format!(
        "convolutions: {} flops (mult+add), {} MACs\ndynamic overhead: {} flops (mult+add), {} MACs\ntotal: {} flops (mult+add) = {:.3} G, {} MACs = {:.3} G\n",
        rep.conv_flops,
        rep.conv_macs,
        rep.overhead_flops,
        rep.overhead_macs,
        rep.total_flops,
        rep.total_flops as f64 / 1e9,
        rep.total_macs,
        rep.total_macs as f64 / 1e9
    ));
    emit(out, &s)
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> CliResult<()> {
    emit(
        out,
        &format!(
            "# asconvsr score\n# psnr: {}\n# bicubic: {}\n# runtime_ms: {}\n# c: {}\n",
            a.psnr, a.bicubic, a.runtime_ms, a.c
        ),
    )?;
    let s = efficiency_score_with(a.psnr, a.bicubic, a.runtime_ms, a.c)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    emit(out, &format!("score {s:.4}\n"))
}
