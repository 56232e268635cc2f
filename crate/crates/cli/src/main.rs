use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use dsa_splat::checkpoint::{self, CheckpointMeta};
use dsa_splat::dataset::{Dataset, Split};
use dsa_splat::imageio::{write_image, BitDepth};
use dsa_splat::model::GaussianCloud;
use dsa_splat::phantom::{build_oracle, default_phantom, write_dataset, PhantomSpec, RenderMode};
use dsa_splat::report::Report;
use dsa_splat::serve::{render_frame, Server, ServerConfig};
use dsa_splat::train::{evaluate, parse_log, train, LogRecord, TrainConfig, TrainObserver};
use dsa_splat::{Camera, Error, Exec, Orbit};

/// Gaussian splatting for time-resolved angiography.
#[derive(Parser)]
#[command(name = "dsa-splat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vessel phantom dataset.
    PhantomGen(PhantomGenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render one frame from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint against a dataset split.
    Eval(EvalArgs),
    /// Stream rendered frames over WebSocket.
    Serve(ServeArgs),
    /// Summarize a training log.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oracle,
    Analytic,
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Phantom description (TOML); the built-in vessel tree if omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the built-in phantom.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the phantom description's render mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Training configuration (TOML); defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: PathBuf,
    /// Configuration override `key=value`, e.g. `density.grad_threshold=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Total training iterations.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of randomly initialized Gaussians.
    #[arg(long)]
    init_count: Option<usize>,
    /// Offset table length.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    tr: Option<u64>,
    /// Keep only this many training views, evenly spaced.
    #[arg(long)]
    views: Option<usize>,
    /// Freeze the opacity offset tables at zero.
    #[arg(long)]
    no_table: bool,
    /// Disable scheduled random pruning.
    #[arg(long)]
    no_random_prune: bool,
    /// Drop the table smoothness term from the loss.
    #[arg(long)]
    no_smooth: bool,
    /// Drop the SSIM term from the loss.
    #[arg(long)]
    no_ssim: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Checkpoint file (.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera or orbit as JSON, inline or a file path.
    #[arg(long)]
    camera: String,
    /// Normalized time in [0, 1].
    #[arg(long, allow_negative_numbers = true)]
    time: f64,
    /// Output image (.png, or .pgm).
    #[arg(long)]
    out: PathBuf,
    /// Image width; required for an orbit, optional resize for a camera.
    #[arg(long)]
    width: Option<u32>,
    /// Image height; required for an orbit, optional resize for a camera.
    #[arg(long)]
    height: Option<u32>,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file (.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also print one line per frame.
    #[arg(long)]
    per_frame: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Checkpoint file (.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Largest accepted width and height.
    #[arg(long, default_value_t = 2048)]
    max_size: u32,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Training log (`log.jsonl`).
    #[arg(long)]
    log: PathBuf,
    /// Directory for report.md, eval.csv, train.csv and psnr.svg.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PhantomGen(a) => phantom_gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn phantom_gen(a: PhantomGenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => PhantomSpec::load(p)?,
        None => default_phantom(a.seed),
    };
    if let Some(m) = a.mode {
        spec.acquisition.mode = match m {
            ModeArg::Oracle => RenderMode::Oracle,
            ModeArg::Analytic => RenderMode::Analytic,
        };
    }
    let d = write_dataset(&spec, spec.acquisition.mode, exec(a.sequential), &a.out)?;
    let oracle: GaussianCloud<f32> = build_oracle(&spec, spec.acquisition.table_len)?;
    let oracle_path = a.out.join("oracle.ckpt");
    checkpoint::save(&oracle, &oracle_path)?;
    println!(
        "wrote {} frames ({} train, {} test) and {} oracle Gaussians to {}",
        d.frames.len(),
        d.train().len(),
        d.test().len(),
        oracle.len(),
        a.out.display()
    );
    Ok(())
}

/// Streams log records to `log.jsonl` and writes checkpoints.
struct CliObserver {
    out: PathBuf,
    log: BufWriter<File>,
    config_hash: String,
}

impl TrainObserver for CliObserver {
    fn record(&mut self, r: &LogRecord) -> dsa_splat::Result<()> {
        let line = r.to_json_line()?;
        let path = self.out.join("log.jsonl");
        let io = |e| Error::Io { path: path.clone(), source: e };
        writeln!(self.log, "{line}").map_err(io)?;
        self.log.flush().map_err(io)?;
        match r {
            LogRecord::Eval { iteration, split, psnr, ssim, count, .. } => {
                info!("iter {iteration:>6} {split:?}: psnr {psnr:.2} ssim {ssim:.4} N {count}")
            }
            LogRecord::Train { iteration, loss, count, .. } => {
                log::debug!("iter {iteration:>6} loss {:.5} N {count}", loss.total)
            }
            LogRecord::Density { .. } => {}
        }
        Ok(())
    }

    fn checkpoint(&mut self, iteration: u64, cloud: &GaussianCloud<f32>) -> dsa_splat::Result<()> {
        let path = self.out.join(format!("checkpoint_{iteration:06}.ckpt"));
        checkpoint::save_with_meta(cloud, &path, iteration, &self.config_hash)?;
        info!("saved {}", path.display());
        Ok(())
    }

    fn aborted(&mut self, iteration: u64, cloud: &GaussianCloud<f32>, error: &Error) {
        let path = self.out.join("last_good.ckpt");
        match checkpoint::save_with_meta(cloud, &path, iteration.saturating_sub(1), &self.config_hash) {
            Ok(()) => log::error!("iteration {iteration} failed ({error}); saved {}", path.display()),
            Err(e) => log::error!("iteration {iteration} failed ({error}); could not save last good state: {e}"),
        }
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    cfg = cfg.with_overrides(&a.set)?;
    if let Some(v) = a.iterations {
        cfg.total_iterations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.init_count {
        cfg.init_count = v;
    }
    if let Some(v) = a.tr {
        cfg.table_len = v as usize;
    }
    cfg.disable_table |= a.no_table;
    cfg.disable_random_prune |= a.no_random_prune;
    cfg.disable_smooth |= a.no_smooth;
    cfg.disable_ssim |= a.no_ssim;
    cfg.sequential |= a.sequential;
    cfg.validate()?;

    let mut dataset = Dataset::load(&a.data)?;
    if let Some(k) = a.views {
        dataset = dataset.with_train_views(k)?;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    let config_hash = cfg.hash()?;
    let log_path = a.out.join("log.jsonl");
    let log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut observer = CliObserver {
        out: a.out.clone(),
        log,
        config_hash: config_hash.clone(),
    };
    info!(
        "training {} iterations on {} train / {} test frames, init {} Gaussians, L = {}",
        cfg.total_iterations,
        dataset.train().len(),
        dataset.test().len(),
        cfg.init_count,
        cfg.table_len
    );
    let outcome = train(&dataset, &cfg, &mut observer)?;
    let final_path = a.out.join("final.ckpt");
    checkpoint::save_with_meta(&outcome.cloud, &final_path, cfg.total_iterations, &config_hash)?;
    match outcome.final_eval(Split::Test) {
        Some((psnr, ssim)) => println!(
            "final: {} Gaussians, test psnr {psnr:.2} ssim {ssim:.4}; wrote {}",
            outcome.cloud.len(),
            final_path.display()
        ),
        None => println!("final: {} Gaussians; wrote {}", outcome.cloud.len(), final_path.display()),
    }
    Ok(())
}

/// Reads `arg` as a file if it names one, otherwise as inline JSON.
fn json_arg(arg: &str) -> Result<serde_json::Value> {
    let path = Path::new(arg);
    let text = if !arg.trim_start().starts_with('{') && path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {arg}"))?
    } else {
        arg.to_owned()
    };
    serde_json::from_str(&text).context("camera is not valid JSON")
}

/// A full camera record, or an orbit (which needs an explicit size).
fn parse_camera(arg: &str, width: Option<u32>, height: Option<u32>) -> Result<Camera> {
    let value = json_arg(arg)?;
    if value.get("fx").is_some() {
        let cam: Camera = serde_json::from_value(value).context("parsing camera")?;
        cam.validate()?;
        return Ok(match (width, height) {
            (None, None) => cam,
            (w, h) => cam.with_size(w.unwrap_or(cam.width), h.unwrap_or(cam.height)),
        });
    }
    let orbit: Orbit = serde_json::from_value(value).context("parsing orbit (expected a camera or an orbit)")?;
    let (Some(w), Some(h)) = (width, height) else {
        bail!("an orbit camera needs --width and --height");
    };
    Ok(Camera::orbit(&orbit, w, h)?)
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.time) {
        return Err(Error::TimeOutOfRange(a.time).into());
    }
    let cloud = checkpoint::load(&a.checkpoint)?;
    let cam = parse_camera(&a.camera, a.width, a.height)?;
    let image = render_frame(&cloud, &cam, a.time, exec(a.sequential))?;
    write_image(&a.out, &image, BitDepth::Eight)?;
    info!("rendered {}x{} at t = {} to {}", cam.width, cam.height, a.time, a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cloud = checkpoint::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let frames: Vec<_> = match a.split {
        SplitArg::Train => dataset.train(),
        SplitArg::Test => dataset.test(),
        SplitArg::All => dataset.frames.iter().collect(),
    };
    if frames.is_empty() {
        bail!("the requested split has no frames");
    }
    let e = evaluate(&cloud, &frames, exec(a.sequential))?;
    if a.per_frame {
        for s in &e.frames {
            println!("view {:>3} t {:.4} psnr {:.2} ssim {:.4}", s.view, s.t, s.psnr, s.ssim);
        }
    }
    println!("frames {} mean psnr {:.2} ssim {:.4}", frames.len(), e.mean_psnr, e.mean_ssim);
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let cloud = checkpoint::load(&a.checkpoint)?;
    if let Some(CheckpointMeta { iteration, .. }) = checkpoint::load_meta(&a.checkpoint)? {
        info!("checkpoint from iteration {iteration}");
    }
    let cfg = ServerConfig {
        max_width: a.max_size,
        max_height: a.max_size,
        exec: exec(a.sequential),
    };
    let n = cloud.len();
    let server = Server::bind((a.host.as_str(), a.port), cloud, cfg)?;
    let addr = server.local_addr()?;
    println!("serving {n} Gaussians on ws://{addr}/");
    server.run()?;
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let report = Report::from_records(&parse_log(&text)?);
    let md = report.markdown();
    print!("{md}");
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.md"), &md)?;
        fs::write(dir.join("eval.csv"), report.eval_csv()?)?;
        fs::write(dir.join("train.csv"), report.train_csv()?)?;
        fs::write(dir.join("psnr.svg"), report.psnr_svg())?;
    }
    Ok(())
}
