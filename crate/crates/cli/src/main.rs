//! `fovkit`: command-line driver for phantom generation, truncation
//! simulation, model training, recovery, evaluation and the self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fovkit::bodycomp::{recover_slice, Models};
use fovkit::bodydetect::{train_bbox_regressor, BboxRegressorParams, CropGeometry};
use fovkit::config::{parse_range, RunConfig};
use fovkit::diffusion::{outpaint_n, train_denoiser, DenoiserParams, DenoiserSample, OutpaintRequest};
use fovkit::evalharness::{evaluate, EvalConfig};
use fovkit::fovsim::{build_dataset, load_dataset, manifest_path};
use fovkit::phantom::{generate_phantoms, write_phantoms, DESK_RESOLUTION};
use fovkit::selftest::{run_selftest, SelftestOptions};
use fovkit::{io, Error, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "fovkit", version, about = "Recover FOV-truncated CT-like slices by diffusion outpainting")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// `key = value` config file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base preset (desk or paper).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct SeedArg {
    /// Seed; falls back to FOVKIT_SEED, then to the config value.
    #[arg(long, env = "FOVKIT_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic phantom slices and a manifest.
    Phantom {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Uniform HU noise amplitude.
        #[arg(long)]
        noise: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Simulate FOV truncation on a phantom manifest.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, value_parser = ratio_range)]
        rfov: Option<(f64, f64)>,
        #[arg(long, value_parser = ratio_range)]
        dfov: Option<(f64, f64)>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the body bounding-box regressor.
    TrainBbox {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the outpainting denoiser.
    TrainOutpainter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Outpaint a slice inside a given mask.
    Outpaint {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Recover one truncated slice with multiple inference.
    Recover {
        #[arg(long)]
        bbox_model: PathBuf,
        #[arg(long)]
        outpaint_model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Display-FOV window `x0:y0:side` in pixels (default: whole slice).
        #[arg(long, value_parser = dfov_window)]
        dfov: Option<CropGeometry>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate truncated, single- and multiple-inference predictions.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bbox_model: PathBuf,
        #[arg(long)]
        outpaint_model: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run the fast invariant suite.
    Selftest {
        /// Inject a known fault to confirm the suite catches it.
        #[arg(long, value_parser = ["corrupt-schedule"])]
        inject_fault: Option<String>,
    },
}

fn ratio_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = parse_range("range", s).map_err(|e| e.to_string())?;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(format!("{s:?} must satisfy 0 < lo <= hi <= 1"));
    }
    Ok((lo, hi))
}

fn dfov_window(s: &str) -> std::result::Result<CropGeometry, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<i64> = parts
        .iter()
        .map(|p| p.trim().parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("{s:?} is not x0:y0:side in whole pixels"))?;
    match nums[..] {
        [x0, y0, side] if side > 0 => Ok(CropGeometry {
            x0: x0 as f64,
            y0: y0 as f64,
            side: side as f64,
        }),
        _ => Err(format!("{s:?} is not x0:y0:side with side > 0")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(cli.preset.as_deref().unwrap_or("desk"))?;
    if let Some(path) = &cli.config {
        // A `--preset` flag wins over a `preset = ...` line in the file.
        cfg.apply_file(path, cli.preset.is_none())?;
    }
    Ok(cfg)
}

fn seed_of(arg: SeedArg, cfg: &RunConfig) -> u64 {
    arg.seed.unwrap_or(cfg.seed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_models(bbox: &Path, outpaint: &Path) -> Result<Models> {
    Models::new(BboxRegressorParams::load(bbox)?, DenoiserParams::load(outpaint)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Phantom { count, out, noise, seed } => {
            if let Some(n) = noise {
                cfg.noise_hu = n;
            }
            cfg.validate()?;
            if cfg.resolution != DESK_RESOLUTION {
                return Err(Error::Config(format!(
                    "the phantom generator renders {DESK_RESOLUTION} px slices, preset {} asks for {}",
                    cfg.preset, cfg.resolution
                )));
            }
            let records = generate_phantoms(count, seed_of(seed, &cfg), cfg.noise_hu)?;
            let manifest = write_phantoms(&records, &out)?;
            log::info!("wrote {count} phantoms to {}", manifest.display());
        }
        Command::Simulate {
            input,
            out,
            count,
            rfov,
            dfov,
            seed,
        } => {
            cfg.rfov_range = rfov.unwrap_or(cfg.rfov_range);
            cfg.dfov_range = dfov.unwrap_or(cfg.dfov_range);
            cfg.validate()?;
            let rows = build_dataset(&input, &out, count, seed_of(seed, &cfg), &cfg.simulation())?;
            log::info!("wrote {} samples to {}", rows.len(), manifest_path(&out).display());
        }
        Command::TrainBbox { data, out, epochs, seed } => {
            if let Some(e) = epochs {
                cfg.bbox_epochs = e;
            }
            cfg.validate()?;
            let samples: Vec<_> = load_dataset(&data)?.iter().map(|s| s.bbox_training_sample()).collect();
            let trained = train_bbox_regressor(&samples, &cfg.bbox_hyper(), seed_of(seed, &cfg))?;
            trained.params.save(&out)?;
            log::info!("saved bbox regressor to {}", out.display());
        }
        Command::TrainOutpainter { data, out, steps, seed } => {
            if let Some(s) = steps {
                cfg.train_steps = s;
            }
            cfg.validate()?;
            let samples: Vec<_> = load_dataset(&data)?.iter().map(DenoiserSample::from_truncation).collect();
            let hp = cfg.denoiser_hyper();
            let schedule = hp.header.schedule.build_for_sampling()?;
            let trained = train_denoiser(&samples, &schedule, &hp, seed_of(seed, &cfg))?;
            trained.params.save(&out)?;
            log::info!("saved denoiser to {} (recent loss {:.4})", out.display(), trained.recent_loss(100));
        }
        Command::Outpaint {
            model,
            input,
            mask,
            n,
            out_dir,
            seed,
        } => {
            cfg.validate()?;
            let params = DenoiserParams::load(&model)?;
            let schedule = params.header.schedule.build_for_sampling()?;
            let slice = io::read_normalized(&input)?;
            let request = OutpaintRequest::new(slice, io::read_mask(&mask)?, seed_of(seed, &cfg))?;
            let outs = outpaint_n(&params, &schedule, &request, n.unwrap_or(cfg.n))?;
            for (i, o) in outs.iter().enumerate() {
                io::write_normalized(&out_dir.join(format!("candidate_{i}.fg01")), o)?;
            }
        }
        Command::Recover {
            bbox_model,
            outpaint_model,
            input,
            dfov,
            n,
            out,
            seed,
        } => {
            cfg.validate()?;
            let models = load_models(&bbox_model, &outpaint_model)?;
            let slice = io::read_normalized(&input)?;
            let dfov = dfov.unwrap_or_else(|| CropGeometry::full(slice.width(), slice.height()));
            let rec = recover_slice(&models, &slice, &dfov, n.unwrap_or(cfg.n), seed_of(seed, &cfg), &cfg.recovery())?;
            io::write_normalized(&out.join("selected.fg01"), rec.selected())?;
            for (i, c) in rec.candidates.iter().enumerate() {
                io::write_normalized(&out.join(format!("candidate_{i}.fg01")), c)?;
            }
            io::write_mask(&out.join("small_mask.fg01"), &rec.prepared.small_mask, rec.prepared.zoomed.spacing())?;
            write_json(
                &out.join("selection.json"),
                &serde_json::json!({
                    "selected_index": rec.selection.selected_index,
                    "distances": rec.selection.distances,
                    "medians": [rec.selection.medians.0, rec.selection.medians.1],
                    "measurements": rec.measurements,
                    "predicted_bbox": rec.prepared.predicted_bbox.as_array(),
                    "zoom": rec.prepared.transform,
                }),
            )?;
            log::info!("selected candidate {}", rec.selection.selected_index);
        }
        Command::Evaluate {
            data,
            bbox_model,
            outpaint_model,
            n,
            out,
            seed,
        } => {
            cfg.validate()?;
            let models = load_models(&bbox_model, &outpaint_model)?;
            let config = EvalConfig {
                n: n.unwrap_or(cfg.n),
                seed: seed_of(seed, &cfg),
                recovery: cfg.recovery(),
            };
            let report = evaluate(&data, &models, &config, &out)?;
            for (method, levels) in &report {
                if let Some(all) = levels.get(fovkit::evalharness::ALL_LEVELS) {
                    log::info!(
                        "{method}: RMSE muscle {:.2} SAT {:.2} cm², Dice {:.3}/{:.3}",
                        all.rmse_muscle,
                        all.rmse_sat,
                        all.dice_muscle_mean,
                        all.dice_sat_mean
                    );
                }
            }
        }
        Command::Selftest { inject_fault } => {
            let options = SelftestOptions {
                corrupt_schedule: inject_fault.is_some(),
            };
            let results = run_selftest(options);
            let mut failed = 0;
            for r in &results {
                if r.passed {
                    println!("PASS {}", r.name);
                } else {
                    failed += 1;
                    println!("FAIL {}: {}", r.name, r.detail);
                }
            }
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Err(Error::Stage {
                    stage: "selftest".into(),
                    source: Box::new(Error::Config(format!("{failed} check(s) failed"))),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(k) = cli.jobs {
        if k == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
