use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use practice_core::exercise::{load_exercise, Exercise};
use practice_core::session::{parse_take_json, SessionStore};
use practice_core::{CalibrationFile, Correspondence};
use practice_service::config::PipelineConfig;
use practice_service::engine::Engine;
use practice_service::replay::{replay, ReplayOptions};
use practice_service::server::{serve_with_shutdown, shutdown_signal, ServeOptions};

#[derive(Parser)]
#[command(name = "practice", version, about = "Instrument practice feedback engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the WebSocket scene server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Session directory.
        #[arg(long, env = "PRACTICE_ROOT", default_value = "practice-data")]
        root: PathBuf,
        /// Exercise to store and select at startup.
        #[arg(long)]
        exercise: Option<PathBuf>,
        /// Pipeline configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of UI assets to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Feed a MIDI file or stored take through the pipeline.
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Run on a virtual clock instead of waiting for each event.
        #[arg(long)]
        no_realtime: bool,
        #[arg(long)]
        exercise: PathBuf,
        /// Where to write the finished take.
        #[arg(long)]
        out: PathBuf,
        /// Also store the take in this session directory.
        #[arg(long, env = "PRACTICE_ROOT")]
        root: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-align a stored take against an exercise.
    Analyze {
        #[arg(long)]
        take: PathBuf,
        #[arg(long)]
        exercise: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a homography to point correspondences.
    Calibrate {
        /// JSON list of `{"world": [x, y], "pixel": [u, v]}`.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_exercise(path: &Path) -> Result<Exercise> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_exercise(&text).with_context(|| format!("loading exercise {}", path.display()))
}

fn read_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn serve(
    port: u16,
    host: &str,
    root: PathBuf,
    exercise: Option<PathBuf>,
    config: Option<PathBuf>,
    ui: Option<PathBuf>,
) -> Result<()> {
    let config = read_config(config.as_deref())?;
    let store = SessionStore::new(root);
    let mut engine = Engine::new(config, store.clone());
    if let Some(path) = exercise {
        let ex = read_exercise(&path)?;
        store.save_exercise(&ex)?;
        engine.set_exercise(ex);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("cannot bind {host}:{port}"))?;
        serve_with_shutdown(listener, engine, ServeOptions { ui_dir: ui }, shutdown_signal()).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve {
            port,
            host,
            root,
            exercise,
            config,
            ui,
        } => serve(port, &host, root, exercise, config, ui),
        Command::Replay {
            input,
            speed,
            no_realtime,
            exercise,
            out,
            root,
            config,
        } => {
            let config = read_config(config.as_deref())?;
            let ex = read_exercise(&exercise)?;
            let options = ReplayOptions {
                speed,
                realtime: !no_realtime,
                classifier: config.classifier,
                fretboard: config.fretboard,
            };
            let take = replay(&input, &ex, &options)?;
            write_json(&out, &take)?;
            if let Some(root) = root {
                let store = SessionStore::new(root);
                store.save_exercise(&ex)?;
                let path = store.save_take(&take)?;
                println!("stored {}", path.display());
            }
            println!(
                "take {}: {} matched, {} missed, {} extra, {} live correction(s)",
                take.take_id,
                take.report.matched_count(),
                take.report.count(practice_core::alignment::OutcomeClass::Missed),
                take.report.count(practice_core::alignment::OutcomeClass::Extra),
                take.live_vs_final_corrections.unwrap_or(0)
            );
            Ok(())
        }
        Command::Analyze { take, exercise, out } => {
            let ex = read_exercise(&exercise)?;
            let text = fs::read_to_string(&take).with_context(|| format!("reading {}", take.display()))?;
            let mut record = parse_take_json(&take, &text, |_| Ok(ex.clone()))?;
            if record.exercise_id != ex.id {
                bail!("take {} was played against {}, not {}", record.take_id, record.exercise_id, ex.id);
            }
            record.recompute(&ex)?;
            write_json(&out, &record)?;
            Ok(())
        }
        Command::Calibrate { points, out } => {
            let text = fs::read_to_string(&points).with_context(|| format!("reading {}", points.display()))?;
            let correspondences: Vec<Correspondence> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", points.display()))?;
            let file = CalibrationFile::from_correspondences(correspondences)?;
            write_json(&out, &file)?;
            println!("rms {:.6} px, max {:.6} px", file.rms, file.max);
            Ok(())
        }
    }
}
