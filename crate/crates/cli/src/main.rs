use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bgsub_core::camera::{ground_plane_backproject, project, PixelPoint};
use bgsub_core::pipeline::{
    generate_synthetic_sequence, overlay_path, render_overlay, run_sequence, PipelineConfig, ScenarioFile,
};
use bgsub_core::regression::fit;
use bgsub_core::synth::{render_flow_field, simulate_ground_points};
use clap::{Parser, Subcommand};

/// Background subtraction for a forward-moving camera.
#[derive(Parser)]
#[command(name = "bgsub", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a directory of frames and write one JSON line per frame pair.
    Run {
        frame_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results and overlays (defaults to the frame directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write `<frame>.overlay.png` for every processed pair.
        #[arg(long)]
        overlay: bool,
        /// JSON-Lines output path (defaults to `<out>/results.jsonl`).
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Include per-stage wall-clock timings in the records.
        #[arg(long)]
        timing: bool,
    },
    /// Render a synthetic sequence with ground truth from a scenario file.
    Synth {
        scenario_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a configuration and its camera geometry.
    CalibCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            frame_dir,
            config,
            out,
            overlay,
            jsonl,
            timing,
        } => run(&frame_dir, &config, out, overlay, jsonl, timing),
        Command::Synth { scenario_file, out } => synth(&scenario_file, &out).map(|()| ExitCode::SUCCESS),
        Command::CalibCheck { config } => calib_check(&config).map(|()| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

fn run(
    frame_dir: &Path,
    config: &Path,
    out: Option<PathBuf>,
    overlay: bool,
    jsonl: Option<PathBuf>,
    timing: bool,
) -> Result<ExitCode> {
    let cfg = PipelineConfig::load(config)?;
    let mut stream = run_sequence(frame_dir, &cfg)?;
    let out = out.unwrap_or_else(|| frame_dir.to_path_buf());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let jsonl = jsonl.unwrap_or_else(|| out.join("results.jsonl"));
    let file = File::create(&jsonl).with_context(|| format!("creating {}", jsonl.display()))?;
    let mut writer = BufWriter::new(file);

    let mut failed = 0usize;
    let pairs = stream.pair_count();
    while let Some((result, frame)) = stream.next_with_frame() {
        writeln!(writer, "{}", result.to_json_line(timing))?;
        writer.flush()?;
        let name = result.frame.file_name().unwrap_or_default().to_string_lossy();
        match &result.error {
            Some(e) => {
                failed += 1;
                eprintln!("[{}/{pairs}] {name}: error: {e}", result.frame_index + 1);
            }
            None => {
                let c = result.counts();
                let speed = result.speed.map(|s| s.speed_kmh).unwrap_or(f64::NAN);
                eprintln!(
                    "[{}/{pairs}] {name}: {} vectors, {} outlier, {} static, {} moving, {speed:.1} km/h, {:.1} ms",
                    result.frame_index + 1,
                    c.total(),
                    c.outlier,
                    c.static_inlier,
                    c.moving,
                    result.timing_ms.total,
                );
            }
        }
        if overlay {
            if let Some(frame) = frame {
                let path = overlay_path(&out, &result.frame);
                render_overlay(&frame, &result.labeled, result.foe)
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    eprintln!("wrote {}", jsonl.display());
    Ok(if failed > 0 {
        eprintln!("{failed} of {pairs} frame pairs failed");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn synth(scenario_file: &Path, out: &Path) -> Result<()> {
    let file = ScenarioFile::load(scenario_file)?;
    let truth = generate_synthetic_sequence(&file.config, &file.scenario, out)?;
    for t in &truth {
        eprintln!(
            "{}: {:.2} km/h, foe ({:.1}, {:.1}), {} moving patches",
            t.file,
            t.speed_kmh,
            t.foe[0],
            t.foe[1],
            t.moving.len()
        );
    }
    eprintln!("wrote {} frames to {}", truth.len(), out.display());
    Ok(())
}

fn calib_check(config: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    cfg.validate()?;
    let k = cfg.intrinsics();
    let h = cfg.camera.camera_height_m;
    println!(
        "intrinsics: fx {} fy {} cx {} cy {} {}x{} @ {} fps, camera height {} m",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.fps, h
    );
    if !(k.cy >= 0.0 && k.cy < k.height as f64) {
        bail!("horizon row {} lies outside the image", k.cy);
    }
    println!("horizon row {:.1}, {} ground rows", k.cy, k.height as f64 - k.cy.ceil());

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for v in (k.cy.floor() as u32 + 1..k.height).step_by(16) {
        for u in (0..k.width).step_by(16) {
            let px = PixelPoint::new(u as f64, v as f64);
            let ground = ground_plane_backproject(&px, &k, h)?;
            worst = worst.max(project(&ground, &k)?.distance(&px));
            checked += 1;
        }
    }
    if !(worst < 1e-6) {
        bail!("ground-plane round trip error {worst:e} px");
    }
    println!("ground-plane round trip: {checked} pixels, max error {worst:.2e} px");

    let points = simulate_ground_points(&cfg.sim)?;
    let foe = PixelPoint::new(k.cx, k.cy);
    let field = render_flow_field(&points, &k, &foe, cfg.sim.reference_speed_kmh, k.frame_interval());
    let model = fit(&field.samples, cfg.sim.reference_speed_kmh)?;
    println!(
        "synthetic field: {} kept, {} dropped; model {:.4} + {:.6}·u + {:.6}·v, sigma {:.4} px",
        field.samples.len(),
        field.dropped,
        model.beta0,
        model.beta1,
        model.beta2,
        model.residual_sigma
    );
    println!("ok");
    Ok(())
}
