use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use sssp_core::data::{Dataset, Split};
use sssp_core::harness::{evaluate, train, Checkpoint, SsspModel, Stage, TrainConfig, YAW_SWEEP};
use sssp_core::image::{Image, SketchImage};
use sssp_core::render::Camera;
use sssp_cli::{router, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "sssp", version, about = "Sketch-guided 3D portrait generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Vq,
    Contour,
    Sssp,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Vq => Stage::Vq,
            StageArg::Contour => Stage::Contour,
            StageArg::Sssp => Stage::Sssp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage and write a checkpoint.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// JSON document mirroring TrainConfig; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the desk-scale smoke preset instead of the defaults.
        #[arg(long, conflicts_with = "config")]
        smoke: bool,
        /// Checkpoint path (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// VQ checkpoint for the contour stage (overrides `vq_checkpoint`).
        #[arg(long)]
        vq_ckpt: Option<PathBuf>,
    },
    /// Score a portrait checkpoint on held-out synthetic samples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of validation samples (defaults to the checkpoint's config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Render one portrait from a sketch PNG.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API (and optionally the built UI).
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Portrait (sssp stage) checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Contour-stage checkpoint holding the sketch codec.
        #[arg(long)]
        vq_ckpt: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 900)]
        session_ttl_secs: u64,
        #[arg(long, default_value_t = 256)]
        session_capacity: usize,
    },
    /// Print a configuration document.
    Config {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        smoke: bool,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { stage, config, smoke, out, vq_ckpt } => {
            let stage = Stage::from(stage);
            let mut cfg = match (config, smoke) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let mut value: serde_json::Value = serde_json::from_str(&text)?;
                    value["stage"] = serde_json::to_value(stage)?;
                    serde_json::from_value(value)?
                }
                (None, true) => TrainConfig::smoke(stage),
                (None, false) => TrainConfig { stage, ..Default::default() },
            };
            if out.is_some() {
                cfg.output = out;
            }
            if vq_ckpt.is_some() {
                cfg.vq_checkpoint = vq_ckpt;
            }
            if cfg.output.is_none() {
                bail!("no checkpoint path: pass --out or set `output` in the config");
            }
            cfg.validate()?;
            let outcome = train(&cfg)?;
            let summary = serde_json::json!({
                "steps": outcome.logs.len(),
                "initial_loss": outcome.initial_loss(),
                "final_loss": outcome.final_loss(10),
                "metrics": outcome.metrics,
                "checkpoint": cfg.output,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { ckpt, out, samples } => {
            let ck = Checkpoint::load(&ckpt)?;
            let cfg: TrainConfig = serde_json::from_value(ck.config.clone())?;
            let model = SsspModel::from_checkpoint(&ck)?;
            let n = samples.unwrap_or(cfg.data.val_samples).max(1);
            let val = Dataset::new(Split::Val, n, cfg.data.seed, cfg.sample_options())?.load_all()?;
            let report = evaluate(&model, &val, &YAW_SWEEP)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
        }
        Command::Render { ckpt, sketch, yaw, pitch, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let cfg: TrainConfig = serde_json::from_value(ck.config.clone())?;
            let model = SsspModel::from_checkpoint(&ck)?;
            let img = Image::from_png(&std::fs::read(&sketch)?, true)?;
            let size = model.cfg.image_resolution;
            if img.height != size || img.width != size {
                bail!("sketch is {}x{}, the model expects {size}x{size}", img.width, img.height);
            }
            let cams = cfg.data.cameras;
            let cam = Camera::new(yaw, pitch, cams.radius, cams.fov_y)?;
            let (portrait, _, _) = model.portrait(&SketchImage::new(img)?, &cam)?;
            portrait.save_png(&out)?;
        }
        Command::Serve { port, host, ckpt, vq_ckpt, static_dir, session_ttl_secs, session_capacity } => {
            let cfg = ServiceConfig { session_ttl: Duration::from_secs(session_ttl_secs), session_capacity };
            let state = AppState::load(ckpt.as_deref(), vq_ckpt.as_deref(), &cfg)?;
            if state.model.is_none() || state.codec.is_none() {
                log::warn!("serving without all models; affected endpoints return 503");
            }
            let app = router(Arc::new(state), static_dir.as_deref());
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on http://{addr}");
                axum::serve(listener, app).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Config { stage, smoke } => {
            let stage = Stage::from(stage);
            let cfg = if smoke { TrainConfig::smoke(stage) } else { TrainConfig { stage, ..Default::default() } };
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}
