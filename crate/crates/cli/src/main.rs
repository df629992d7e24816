//! Command-line entry point. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpv_cli::config::{FusionChoice, PipelineConfig};
use dpv_cli::pipeline::{self, ScenePreset};
use dpv_cli::manifest::SequenceManifest;
use dpv_cli::{io, CliError};
use dpv_core::dpv::DepthHypotheses;
use dpv_core::plane_sweep;

#[derive(Parser)]
#[command(name = "dpv", about = "Streaming depth probability volumes from posed video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that mirror the pipeline config file; set flags win over the file.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    smooth_cost: Option<bool>,
    /// none, bayes, global-damping, or adaptive.
    #[arg(long)]
    fusion: Option<FusionChoice>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    refine: Option<bool>,
    #[arg(long)]
    spatial_sigma: Option<f64>,
    #[arg(long)]
    range_sigma: Option<f64>,
    #[arg(long)]
    refine_radius: Option<f64>,
    #[arg(long)]
    pose_refine: Option<bool>,
    #[arg(long)]
    conf_threshold: Option<f64>,
    #[arg(long)]
    delta_t: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    strict: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, output_dir: Option<PathBuf>) -> Result<PipelineConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v.into(); })*
            };
        }
        apply!(d_min, d_max, planes, smooth_cost, fusion, lambda, kappa, lambda_min);
        apply!(refine, spatial_sigma, range_sigma, refine_radius, pose_refine);
        apply!(conf_threshold, delta_t, strict, seed);
        if let Some(v) = self.temperature {
            c.temperature = Some(v);
        }
        if let Some(v) = self.stride {
            c.stride = Some(v);
        }
        if output_dir.is_some() {
            c.output_dir = output_dir;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate depth from a single five-frame window.
    Sweep {
        /// Dataset directory (frames.txt, intrinsics.txt, trajectory.txt).
        #[arg(long)]
        data: PathBuf,
        /// Reference frame index.
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the streaming filter over the whole sequence.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth depth directory for per-frame metrics.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare predicted depth PNGs against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Multiply predictions by median(gt)/median(pred) first.
        #[arg(long)]
        scale_normalize: bool,
        /// Only score ground-truth depths at or above this (meters).
        #[arg(long)]
        min_depth: Option<f64>,
        /// Only score ground-truth depths at or below this (meters).
        #[arg(long)]
        max_depth: Option<f64>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// plane or two-layer.
        #[arg(long, default_value = "plane")]
        preset: ScenePreset,
        #[arg(long, default_value_t = 25)]
        frames: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
        /// Lateral camera translation per frame (meters).
        #[arg(long, default_value_t = 0.02)]
        baseline: f64,
        /// Gaussian image noise sigma.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Refine a window's source poses against given depth and confidence.
    RefinePose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Depth PNG at quarter resolution.
        #[arg(long)]
        depth: PathBuf,
        /// Confidence PNG at quarter resolution.
        #[arg(long)]
        conf: PathBuf,
        #[arg(long, default_value_t = 1)]
        delta_t: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep {
            data,
            frame,
            out,
            config,
        } => {
            let config = config.resolve(Some(out.clone()))?;
            let manifest = SequenceManifest::load(&data)?;
            let window = pipeline::build_window(&manifest, frame, config.delta_t)?;
            let hyps = DepthHypotheses::new(config.d_min, config.d_max, config.planes)?;
            let meas = plane_sweep::measure_dpv(&window, &hyps, &config.sweep())?;
            let extracted = pipeline::extract_outputs(&meas, &window.reference, &config)?;
            std::fs::create_dir_all(&out)?;
            let saturated = io::write_depth(&extracted.masked_depth, &out.join("depth.png"))?;
            io::write_confidence(&extracted.confidence, &out.join("conf.png"))?;
            println!(
                "wrote {} ({} masked, {} saturated)",
                out.join("depth.png").display(),
                extracted.masked_pixels,
                saturated
            );
            Ok(())
        }
        Command::Track {
            data,
            out,
            gt,
            config,
        } => {
            let config = config.resolve(Some(out))?;
            let manifest = SequenceManifest::load(&data)?;
            let summary = pipeline::run_stream(&manifest, &config, gt.as_deref())?;
            println!(
                "processed {} frames, skipped {}",
                summary.frames_processed, summary.frames_skipped
            );
            if let Some(m) = &summary.aggregated {
                print!("{}", m.to_text());
            }
            Ok(())
        }
        Command::Eval {
            pred,
            gt,
            scale_normalize,
            min_depth,
            max_depth,
        } => {
            let range = match (min_depth, max_depth) {
                (None, None) => None,
                (lo, hi) => Some((lo.unwrap_or(0.0), hi.unwrap_or(f64::INFINITY))),
            };
            let (per_file, mean) = pipeline::eval_dirs(&pred, &gt, scale_normalize, range)?;
            for (name, m) in &per_file {
                println!(
                    "{name} abs_rel {:.6} rmse {:.6} delta_1.25 {:.6}",
                    m.abs_rel, m.rmse, m.delta_1
                );
            }
            println!("mean over {} files:", per_file.len());
            print!("{}", mean.to_text());
            if let Some((lo, hi)) = range {
                println!("valid_range {lo} {hi}");
            }
            Ok(())
        }
        Command::Synth {
            out,
            preset,
            frames,
            width,
            height,
            baseline,
            noise,
            seed,
        } => {
            let scene = pipeline::make_scene(preset, frames, width, height, baseline, seed)?;
            pipeline::write_synthetic_dataset(&scene, noise, &out)?;
            println!("wrote {frames} frames to {}", out.display());
            Ok(())
        }
        Command::RefinePose {
            data,
            frame,
            depth,
            conf,
            delta_t,
        } => {
            let manifest = SequenceManifest::load(&data)?;
            let window = pipeline::build_window(&manifest, frame, delta_t)?;
            let depth = io::read_depth(&depth)?;
            let conf = io::read_confidence(&conf)?;
            let (refined, logs) = pipeline::refine_window_poses(&window, &depth, &conf)?;
            for (src, log) in refined.sources.iter().zip(&logs) {
                let t = src.pose_src_to_ref.translation;
                println!(
                    "t={} src_to_ref_translation {} {} {} energy {:.6e} -> {:.6e} ({} iters)",
                    src.timestamp, t[0], t[1], t[2], log.initial_energy, log.final_energy,
                    log.iterations
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
