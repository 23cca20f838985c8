//! Operator entry points: bake, render, compare, sweep, validate, and the
//! far-field training-variance experiment.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lightbake::integrator::{
    self, mse, render_farfield, render_neural, render_reference, Image, RenderConfig, RenderMode,
};
use lightbake::model::TransportModel;
use lightbake::scene::Scene;
use lightbake::trainer::{self, farfield::FarfieldModel, TrainConfig};
use lightbake::validate;

#[derive(Parser)]
#[command(name = "lightbake", version, about = "Bake and render learned asset light transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override a config key, e.g. --set steps=20000 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (1 guarantees bitwise determinism).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Bake an asset's light transport into a checkpoint.
    Bake {
        scene: PathBuf,
        /// Asset name inside the scene file.
        #[arg(long)]
        asset: String,
        /// Output checkpoint path.
        #[arg(short, long)]
        out: PathBuf,
        /// Optional training config TOML (defaults apply otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render a scene to PFM.
    Render {
        scene: PathBuf,
        #[arg(long, default_value = "reference")]
        mode: String,
        #[arg(long, default_value_t = 64)]
        spp: u32,
        #[arg(long, default_value_t = 64)]
        max_depth: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint for neural / farfield modes (falls back to the asset's
        /// `checkpoint` field in the scene file).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write an 8-bit sRGB preview (lossy) next to the PFM.
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Mean squared error between two PFM images.
    Compare { a: PathBuf, b: PathBuf },
    /// Render at several sample counts and report variance vs a high-spp
    /// self-reference as CSV.
    Sweep {
        scene: PathBuf,
        #[arg(long, default_value = "reference")]
        mode: String,
        /// Comma-separated spp list.
        #[arg(long, default_value = "8,32,128,512")]
        spp: String,
        /// Self-reference sample count.
        #[arg(long, default_value_t = 2048)]
        reference_spp: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the oracle/validation suite.
    Validate {
        /// fast: spline, reparameterization, gradient, furnace checks.
        /// full: every acceptance criterion (bakes and renders; hours).
        #[arg(long, default_value = "fast")]
        suite: String,
        /// Working directory for cached bakes and renders.
        #[arg(long, default_value = "validate-work")]
        work_dir: PathBuf,
        /// JSON report path.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train-variance experiment: 8D distribution bake vs 6D regression at
    /// matched path budgets (CSV summary of render MSEs).
    FarfieldExperiment {
        #[arg(long, default_value = "validate-work")]
        work_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

/// Apply `--set key=value` dotted paths onto a TOML table.
fn apply_overrides(table: &mut toml::Table, sets: &[String]) -> Result<(), String> {
    for s in sets {
        let (key, value) = s.split_once('=').ok_or_else(|| format!("--set '{s}' is not KEY=VALUE"))?;
        let parsed: toml::Value = value
            .parse::<i64>()
            .map(toml::Value::Integer)
            .or_else(|_| value.parse::<f64>().map(toml::Value::Float))
            .or_else(|_| value.parse::<bool>().map(toml::Value::Boolean))
            .unwrap_or_else(|_| toml::Value::String(value.to_string()));
        let mut node = &mut *table;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert(toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| format!("--set '{key}': '{part}' is not a table"))?;
        }
        node.insert(parts.last().unwrap().to_string(), parsed);
    }
    Ok(())
}

fn load_train_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig, String> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            text.parse().map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(&mut table, sets)?;
    table.try_into().map_err(|e| format!("invalid training config: {e}"))
}

fn render_once(
    scene: &Scene,
    mode: &str,
    spp: u32,
    max_depth: u32,
    seed: u64,
    threads: usize,
    checkpoint: Option<&Path>,
) -> Result<Image, String> {
    let mode = match mode {
        "reference" => RenderMode::Reference,
        "neural" => RenderMode::Neural,
        "farfield" => RenderMode::Farfield,
        other => return Err(format!("unknown mode '{other}'")),
    };
    let config = RenderConfig { spp, max_depth, seed, mode, threads };
    let checkpoint_path = |explicit: Option<&Path>| -> Result<PathBuf, String> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        let idx = scene
            .neural_asset_index()
            .ok_or_else(|| "scene has no neural-flagged asset".to_string())?;
        scene.assets[idx]
            .checkpoint
            .clone()
            .ok_or_else(|| "no --checkpoint given and the asset lists none".to_string())
    };
    let out = match mode {
        RenderMode::Reference => render_reference(scene, &config),
        RenderMode::Neural => {
            let path = checkpoint_path(checkpoint)?;
            let model = TransportModel::load(&path).map_err(|e| e.to_string())?;
            if scene.neural_asset_index().is_none() {
                return Err("scene has no neural-flagged asset".into());
            }
            render_neural(scene, &config, &model)
        }
        RenderMode::Farfield => {
            let path = checkpoint_path(checkpoint)?;
            let model = FarfieldModel::load(&path).map_err(|e| e.to_string())?;
            render_farfield(scene, &config, &model)
        }
    };
    Ok(out.image)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Bake { scene, asset, out, config, overrides } => {
            let scene = match Scene::load(&scene) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let Some(asset_obj) = scene.assets.iter().find(|a| a.name == asset) else {
                return fail(2, format!("asset '{asset}' not found in scene"));
            };
            let config = match load_train_config(config.as_deref(), &overrides.set) {
                Ok(c) => c,
                Err(e) => return fail(2, e),
            };
            let echo = toml::to_string(&config).unwrap_or_default();
            let t0 = Instant::now();
            match trainer::bake(asset_obj, &config) {
                Ok((model, curves)) => {
                    if let Err(e) = model.save(&out, &echo) {
                        return fail(2, e);
                    }
                    let csv = out.with_extension("curves.csv");
                    if std::fs::write(&csv, curves.to_csv()).is_err() {
                        return fail(2, "cannot write curves csv");
                    }
                    let heldout_csv = out.with_extension("heldout.csv");
                    let _ = std::fs::write(&heldout_csv, curves.heldout_csv());
                    let (final_nll, final_albedo) = curves
                        .rows
                        .last()
                        .map(|r| (r.1, r.2))
                        .unwrap_or((f64::NAN, f64::NAN));
                    let tuples = config.steps * config.batch_size;
                    println!(
                        "bake_ok checkpoint={} steps={} nll={:.5} albedo_loss={:.6} tuples={} seconds={:.1}",
                        out.display(),
                        config.steps,
                        final_nll,
                        final_albedo,
                        tuples,
                        t0.elapsed().as_secs_f64()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(3, e),
            }
        }
        Command::Render { scene, mode, spp, max_depth, seed, checkpoint, out, png, overrides } => {
            let scene = match Scene::load(&scene) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let image = match render_once(
                &scene,
                &mode,
                spp,
                max_depth,
                seed,
                overrides.threads,
                checkpoint.as_deref(),
            ) {
                Ok(i) => i,
                Err(e) => return fail(2, e),
            };
            if let Err(e) = image.write_pfm(&out) {
                return fail(2, e);
            }
            if png {
                let preview = out.with_extension("ppm");
                let mut data =
                    format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
                data.extend_from_slice(&image.to_srgb8());
                if std::fs::write(&preview, data).is_err() {
                    return fail(2, "cannot write preview");
                }
            }
            println!("render_ok out={} spp={spp} mode={mode}", out.display());
            ExitCode::SUCCESS
        }
        Command::Compare { a, b } => {
            let ia = match Image::read_pfm(&a) {
                Ok(i) => i,
                Err(e) => return fail(2, e),
            };
            let ib = match Image::read_pfm(&b) {
                Ok(i) => i,
                Err(e) => return fail(2, e),
            };
            match mse(&ia, &ib) {
                Ok(v) => {
                    println!("mse={v:.9e}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(2, e),
            }
        }
        Command::Sweep { scene, mode, spp, reference_spp, seed, checkpoint, out, overrides } => {
            let scene_data = match Scene::load(&scene) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let spp_list: Vec<u32> = match spp.split(',').map(|s| s.trim().parse()).collect() {
                Ok(v) => v,
                Err(_) => return fail(2, format!("bad spp list '{spp}'")),
            };
            let reference = match render_once(
                &scene_data,
                &mode,
                reference_spp,
                64,
                seed + 7_777,
                overrides.threads,
                checkpoint.as_deref(),
            ) {
                Ok(i) => i,
                Err(e) => return fail(2, e),
            };
            let mut csv = String::from("spp,seconds,variance\n");
            for (i, &n) in spp_list.iter().enumerate() {
                let t0 = Instant::now();
                let img = match render_once(
                    &scene_data,
                    &mode,
                    n,
                    64,
                    seed + i as u64,
                    overrides.threads,
                    checkpoint.as_deref(),
                ) {
                    Ok(i) => i,
                    Err(e) => return fail(2, e),
                };
                let var = match integrator::variance_protocol(&[img], &reference) {
                    Ok(v) => v,
                    Err(e) => return fail(2, e),
                };
                csv.push_str(&format!("{n},{:.3},{var:.9e}\n", t0.elapsed().as_secs_f64()));
            }
            if std::fs::write(&out, &csv).is_err() {
                return fail(2, "cannot write sweep csv");
            }
            print!("{csv}");
            ExitCode::SUCCESS
        }
        Command::Validate { suite, work_dir, report, overrides } => {
            let ctx = validate::Ctx { work_dir, threads: overrides.threads };
            let reports = match suite.as_str() {
                "fast" => validate::run_fast(&ctx),
                "full" => validate::run_full(&ctx),
                other => return fail(2, format!("unknown suite '{other}'")),
            };
            let mut all_pass = true;
            for r in &reports {
                println!("{}", r.line());
                all_pass &= r.pass;
            }
            if let Some(path) = report {
                let json = validate::reports_json(&reports);
                if std::fs::write(&path, json).is_err() {
                    return fail(2, "cannot write report");
                }
            }
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::FarfieldExperiment { work_dir, overrides } => {
            let ctx = validate::Ctx { work_dir, threads: overrides.threads };
            let r = validate::criterion_9_training_variance(&ctx);
            println!("{}", r.line());
            let csv = ctx.work_dir.join("farfield_experiment.csv");
            let mut text = String::from("metric,value\n");
            for (k, v) in &r.measured {
                text.push_str(&format!("{k},{v:.9e}\n"));
            }
            let _ = std::fs::write(&csv, text);
            if r.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
