//! The streaming driver: slides a five-frame window over a sequence, runs
//! the measure/predict/update cycle, refines, and writes per-frame outputs.
//! Also hosts synthetic dataset generation and directory-level evaluation.

use std::path::Path;

use dpv_core::dpv::{self, DepthHypotheses, DepthProbabilityVolume};
use dpv_core::eval::{self, DepthMetrics, Primitive, SyntheticScene};
use dpv_core::fusion::{self, FilterState};
use dpv_core::geometry::{self, CameraIntrinsics, Pose};
use dpv_core::grid::Map2;
use dpv_core::plane_sweep::{FrameWindow, SourceFrame};
use dpv_core::pose_opt::{self, PoseOptProblem};
use dpv_core::refine;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::io;
use crate::manifest::SequenceManifest;
use crate::{CliError, Result};

/// Feature extraction and the fused belief live at quarter resolution.
const GRID_FACTOR: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct PoseRefineLog {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameLog {
    pub frame: usize,
    pub timestamp: f64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_pixels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturated_pixels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_refine: Option<Vec<PoseRefineLog>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct StreamSummary {
    pub frames_processed: usize,
    pub frames_skipped: usize,
    pub logs: Vec<FrameLog>,
    pub aggregated: Option<DepthMetrics>,
}

pub fn metrics_to_json(m: &DepthMetrics) -> serde_json::Value {
    serde_json::json!({
        "delta_1": m.delta_1,
        "delta_2": m.delta_2,
        "delta_3": m.delta_3,
        "abs_rel": m.abs_rel,
        "sq_rel": m.sq_rel,
        "rmse": m.rmse,
        "rmse_log": m.rmse_log,
        "scale_inv": m.scale_inv,
        "valid_pixels": m.valid_pixels,
    })
}

/// Build the five-frame window centered on `ref_idx` with source offsets of
/// one and two `delta_t` strides on each side.
pub fn build_window(
    manifest: &SequenceManifest,
    ref_idx: usize,
    delta_t: usize,
) -> Result<FrameWindow> {
    let n = manifest.frames.len();
    let span = 2 * delta_t;
    if ref_idx < span || ref_idx + span >= n {
        return Err(CliError::Usage(format!(
            "window requires 5 frames at spacing {delta_t} around frame {ref_idx} (sequence has {n})"
        )));
    }
    let reference = &manifest.frames[ref_idx];
    let ref_image = io::read_image(&reference.image_path)?;
    let ref_pose = manifest.pose_at(reference.timestamp)?;
    let mut sources = Vec::with_capacity(4);
    for offset in [-2isize, -1, 1, 2] {
        let idx = (ref_idx as isize + offset * delta_t as isize) as usize;
        let record = &manifest.frames[idx];
        let image = io::read_image(&record.image_path)?;
        let src_pose = manifest.pose_at(record.timestamp)?;
        sources.push(SourceFrame {
            image,
            timestamp: record.timestamp,
            pose_src_to_ref: geometry::compose(&geometry::invert(&ref_pose), &src_pose),
        });
    }
    let window = FrameWindow::new(
        ref_image,
        reference.timestamp,
        ref_pose,
        sources,
        manifest.intrinsics,
    )?;
    Ok(window)
}

/// Refine the window's source poses photometrically against a depth and
/// confidence estimate at the belief grid resolution. Returns the refined
/// window plus per-source energy diagnostics.
pub fn refine_window_poses(
    window: &FrameWindow,
    depth: &Map2,
    confidence: &Map2,
) -> Result<(FrameWindow, Vec<PoseRefineLog>)> {
    let k_low = window.intrinsics.scaled_down(GRID_FACTOR);
    let reference = window.reference.downsample_box(GRID_FACTOR);
    let sources: Vec<Map2> = window
        .sources
        .iter()
        .map(|s| s.image.downsample_box(GRID_FACTOR))
        .collect();
    let initial_poses: Vec<Pose> = window.sources.iter().map(|s| s.pose_src_to_ref).collect();
    let problem = PoseOptProblem::with_defaults(
        reference,
        sources,
        depth.clone(),
        confidence.clone(),
        initial_poses,
        k_low,
    );
    let result = pose_opt::optimize_window_poses(&problem)?;
    let mut refined = window.clone();
    for (src, pose) in refined.sources.iter_mut().zip(&result.poses) {
        src.pose_src_to_ref = *pose;
    }
    let logs = result
        .diagnostics
        .iter()
        .map(|d| PoseRefineLog {
            initial_energy: d.initial_energy,
            final_energy: d.final_energy,
            iterations: d.iterations,
        })
        .collect();
    Ok((refined, logs))
}

/// Depth, confidence, and masked depth extracted from a belief volume,
/// optionally upsampled to full resolution against the reference image.
pub struct Extracted {
    pub depth: Map2,
    pub confidence: Map2,
    pub masked_depth: Map2,
    pub masked_pixels: usize,
}

pub fn extract_outputs(
    belief: &DepthProbabilityVolume,
    guide: &Map2,
    config: &PipelineConfig,
) -> Result<Extracted> {
    let volume;
    let full = if config.refine {
        volume = refine::upsample_dpv(belief, guide, &config.upsample())?;
        &volume
    } else {
        belief
    };
    let depth = dpv::expected_depth(full);
    let confidence = dpv::confidence(full, &depth);
    let masked_depth = dpv::mask_low_confidence(&depth, &confidence, config.conf_threshold);
    let masked_pixels = masked_depth.data().iter().filter(|&&d| d == 0.0).count();
    Ok(Extracted {
        depth,
        confidence,
        masked_depth,
        masked_pixels,
    })
}

/// Valid-aware box downsample for ground-truth depth (0 = invalid).
fn downsample_depth_valid(depth: &Map2, factor: usize) -> Map2 {
    let w = (depth.width() / factor).max(1);
    let h = (depth.height() / factor).max(1);
    Map2::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                let sx = (factor * x + dx).min(depth.width() - 1);
                let sy = (factor * y + dy).min(depth.height() - 1);
                let d = depth.get(sx, sy);
                if d > 0.0 {
                    sum += d;
                    n += 1.0;
                }
            }
        }
        if n > 0.0 {
            sum / n
        } else {
            0.0
        }
    })
}

fn frame_metrics(pred: &Map2, gt_path: &Path) -> Result<DepthMetrics> {
    let gt_full = io::read_depth(gt_path)?;
    let gt = if gt_full.width() == pred.width() && gt_full.height() == pred.height() {
        gt_full
    } else {
        downsample_depth_valid(&gt_full, gt_full.width() / pred.width().max(1))
    };
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(CliError::Data(format!(
            "ground truth {}x{} does not match prediction {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    let mask = Map2::new(pred.width(), pred.height(), 1.0);
    Ok(eval::compute_metrics(pred, &gt, &mask)?)
}

fn mean_metrics(frames: &[DepthMetrics]) -> Option<DepthMetrics> {
    if frames.is_empty() {
        return None;
    }
    let n = frames.len() as f64;
    let mut sum = DepthMetrics {
        delta_1: 0.0,
        delta_2: 0.0,
        delta_3: 0.0,
        abs_rel: 0.0,
        sq_rel: 0.0,
        rmse: 0.0,
        rmse_log: 0.0,
        scale_inv: 0.0,
        valid_pixels: 0,
    };
    for m in frames {
        sum.delta_1 += m.delta_1 / n;
        sum.delta_2 += m.delta_2 / n;
        sum.delta_3 += m.delta_3 / n;
        sum.abs_rel += m.abs_rel / n;
        sum.sq_rel += m.sq_rel / n;
        sum.rmse += m.rmse / n;
        sum.rmse_log += m.rmse_log / n;
        sum.scale_inv += m.scale_inv / n;
        sum.valid_pixels += m.valid_pixels;
    }
    Some(sum)
}

/// Run the streaming pipeline over the manifest. When `gt_dir` is given,
/// per-frame metrics are computed against `depth_{frame:05}.png` files in it.
pub fn run_stream(
    manifest: &SequenceManifest,
    config: &PipelineConfig,
    gt_dir: Option<&Path>,
) -> Result<StreamSummary> {
    config.validate()?;
    let out_dir = config
        .output_dir
        .as_deref()
        .ok_or_else(|| CliError::Usage("output_dir is required".into()))?;
    std::fs::create_dir_all(out_dir)?;
    let span = 2 * config.delta_t;
    if manifest.frames.len() < 2 * span + 1 {
        return Err(CliError::Usage(format!(
            "window requires 5 frames at spacing {} ({} needed, manifest has {})",
            config.delta_t,
            2 * span + 1,
            manifest.frames.len()
        )));
    }
    let hyps = DepthHypotheses::new(config.d_min, config.d_max, config.planes)?;
    let gain = config.gain();
    let sweep = config.sweep();
    let mut state: Option<FilterState> = None;
    let mut logs = Vec::new();
    let mut per_frame_metrics = Vec::new();
    let mut processed = 0usize;
    let mut skipped = 0usize;

    let mut ref_idx = span;
    while ref_idx + span < manifest.frames.len() {
        let timestamp = manifest.frames[ref_idx].timestamp;
        match process_frame(
            manifest, config, gt_dir, out_dir, &hyps, &gain, &sweep, &mut state, ref_idx,
        ) {
            Ok((mut log, metrics)) => {
                log.frame = ref_idx;
                if let Some(m) = metrics {
                    log.metrics = Some(metrics_to_json(&m));
                    per_frame_metrics.push(m);
                }
                logs.push(log);
                processed += 1;
            }
            Err(e) if !config.strict => {
                log::warn!("frame {ref_idx}: skipped: {e}");
                logs.push(FrameLog {
                    frame: ref_idx,
                    timestamp,
                    status: "skipped".into(),
                    reason: Some(e.to_string()),
                    masked_pixels: None,
                    saturated_pixels: None,
                    mean_confidence: None,
                    pose_refine: None,
                    metrics: None,
                });
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
        ref_idx += config.stride();
    }

    let mut log_file = String::new();
    for log in &logs {
        log_file.push_str(&serde_json::to_string(log).expect("log serializes"));
        log_file.push('\n');
    }
    std::fs::write(out_dir.join("log.jsonl"), log_file)?;
    let aggregated = mean_metrics(&per_frame_metrics);
    if let Some(m) = &aggregated {
        std::fs::write(out_dir.join("metrics.txt"), m.to_text())?;
    }
    Ok(StreamSummary {
        frames_processed: processed,
        frames_skipped: skipped,
        logs,
        aggregated,
    })
}

#[allow(clippy::too_many_arguments)]
fn process_frame(
    manifest: &SequenceManifest,
    config: &PipelineConfig,
    gt_dir: Option<&Path>,
    out_dir: &Path,
    hyps: &DepthHypotheses,
    gain: &dpv_core::fusion::GainConfig,
    sweep: &dpv_core::plane_sweep::SweepConfig,
    state: &mut Option<FilterState>,
    ref_idx: usize,
) -> Result<(FrameLog, Option<DepthMetrics>)> {
    let mut window = build_window(manifest, ref_idx, config.delta_t)?;
    let mut pose_logs = None;
    if config.pose_refine {
        if let Some(prev) = state.as_ref() {
            // Align source poses against the belief predicted into this
            // frame before measuring.
            let k_low = window.intrinsics.scaled_down(GRID_FACTOR);
            let cam_prev_to_cur = geometry::compose(
                &geometry::invert(&window.ref_world_from_cam),
                &prev.world_from_cam,
            );
            let predicted = fusion::predict(prev, &cam_prev_to_cur, &k_low).to_probability();
            let depth = dpv::expected_depth(&predicted);
            let conf = dpv::confidence(&predicted, &depth);
            let (refined, plogs) = refine_window_poses(&window, &depth, &conf)?;
            window = refined;
            pose_logs = Some(plogs);
        }
    }
    let next = match state.as_ref() {
        None => {
            let meas = dpv_core::plane_sweep::measure_dpv(&window, hyps, sweep)?;
            FilterState::from_measurement(&meas, window.ref_world_from_cam, window.timestamp)
        }
        Some(prev) => fusion::step(prev, &window, gain, sweep)?,
    };
    let belief = next.belief.to_probability();
    let extracted = extract_outputs(&belief, &window.reference, config)?;
    let depth_path = out_dir.join(format!("depth_{ref_idx:05}.png"));
    let conf_path = out_dir.join(format!("conf_{ref_idx:05}.png"));
    let saturated = io::write_depth(&extracted.masked_depth, &depth_path)?;
    io::write_confidence(&extracted.confidence, &conf_path)?;
    let metrics = match gt_dir {
        Some(dir) => Some(frame_metrics(
            &extracted.masked_depth,
            &dir.join(format!("depth_{ref_idx:05}.png")),
        )?),
        None => None,
    };
    let n = extracted.confidence.data().len() as f64;
    let mean_conf = extracted.confidence.data().iter().sum::<f64>() / n;
    *state = Some(next);
    Ok((
        FrameLog {
            frame: ref_idx,
            timestamp: window.timestamp,
            status: "ok".into(),
            reason: None,
            masked_pixels: Some(extracted.masked_pixels),
            saturated_pixels: Some(saturated),
            mean_confidence: Some(mean_conf),
            pose_refine: pose_logs,
            metrics: None,
        },
        metrics,
    ))
}

/// Evaluate a directory of predicted depth PNGs against ground truth with
/// matching file names. Returns per-file and mean metrics.
pub fn eval_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    scale_normalize: bool,
    depth_range: Option<(f64, f64)>,
) -> Result<(Vec<(String, DepthMetrics)>, DepthMetrics)> {
    let mut names: Vec<String> = std::fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("depth_") && n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Data(format!(
            "no depth_*.png files in {}",
            pred_dir.display()
        )));
    }
    let mut per_file = Vec::new();
    for name in names {
        let pred = io::read_depth(&pred_dir.join(&name))?;
        let gt = io::read_depth(&gt_dir.join(&name))?;
        if gt.width() != pred.width() || gt.height() != pred.height() {
            return Err(CliError::Data(format!("{name}: size mismatch")));
        }
        let mask = match depth_range {
            Some((lo, hi)) => Map2::from_fn(gt.width(), gt.height(), |x, y| {
                let d = gt.get(x, y);
                if d >= lo && d <= hi {
                    1.0
                } else {
                    0.0
                }
            }),
            None => Map2::new(gt.width(), gt.height(), 1.0),
        };
        let pred = if scale_normalize {
            eval::scale_normalize(&pred, &gt)?
        } else {
            pred
        };
        let metrics = eval::compute_metrics(&pred, &gt, &mask)?;
        per_file.push((name, metrics));
    }
    let mean = mean_metrics(
        &per_file
            .iter()
            .map(|(_, m)| m.clone())
            .collect::<Vec<_>>(),
    )
    .expect("at least one file");
    Ok((per_file, mean))
}

/// Built-in synthetic scene layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// Fronto-parallel textured plane.
    Plane,
    /// Foreground rectangle occluding a back plane; lateral motion
    /// disoccludes the trailing edge.
    TwoLayer,
}

impl std::str::FromStr for ScenePreset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plane" => Ok(ScenePreset::Plane),
            "two-layer" => Ok(ScenePreset::TwoLayer),
            other => Err(format!("unknown preset '{other}' (expected plane, two-layer)")),
        }
    }
}

/// Construct a synthetic scene with a laterally translating trajectory.
pub fn make_scene(
    preset: ScenePreset,
    frames: usize,
    width: usize,
    height: usize,
    baseline: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    let fx = 1.2 * width as f64;
    let intrinsics = CameraIntrinsics::new(
        fx,
        fx,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )?;
    let primitives = match preset {
        ScenePreset::Plane => vec![Primitive::Plane { z: 2.0 }],
        ScenePreset::TwoLayer => vec![
            Primitive::Plane { z: 4.0 },
            Primitive::Rect {
                z: 1.5,
                x_min: -1.2,
                x_max: 0.1,
                y_min: -1.0,
                y_max: 1.0,
            },
        ],
    };
    let trajectory = (0..frames)
        .map(|i| Pose::from_translation(Vector3::new(i as f64 * baseline, 0.0, 0.0)))
        .collect();
    Ok(SyntheticScene {
        primitives,
        trajectory,
        intrinsics,
        seed,
    })
}

fn pose_to_tum_line(timestamp: f64, pose: &Pose) -> String {
    let q = UnitQuaternion::from_matrix(&pose.rotation);
    let t = pose.translation;
    format!(
        "{timestamp} {} {} {} {} {} {} {}\n",
        t[0], t[1], t[2], q.i, q.j, q.k, q.w
    )
}

/// Render a scene to a dataset directory: images/, gt/ depth maps,
/// frames.txt, trajectory.txt, intrinsics.txt. Optional Gaussian image
/// noise is seeded from the scene seed.
pub fn write_synthetic_dataset(
    scene: &SyntheticScene,
    noise_sigma: f64,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("gt"))?;
    let mut frames_txt = String::new();
    let mut traj_txt = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed.wrapping_add(1));
    for i in 0..scene.trajectory.len() {
        let (mut image, depth, pose) = eval::render(scene, i)?;
        if noise_sigma > 0.0 {
            for v in image.data_mut() {
                // Box-Muller keeps the dependency surface small.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                *v = (*v + noise_sigma * (-2.0 * u1.ln()).sqrt() * u2.cos()).clamp(0.0, 1.0);
            }
        }
        let image_name = format!("images/frame_{i:05}.png");
        io::write_image(&image, &out_dir.join(&image_name))?;
        io::write_depth(&depth, &out_dir.join(format!("gt/depth_{i:05}.png")))?;
        let timestamp = i as f64;
        frames_txt.push_str(&format!("{timestamp} {image_name}\n"));
        traj_txt.push_str(&pose_to_tum_line(timestamp, &pose));
    }
    let k = &scene.intrinsics;
    std::fs::write(
        out_dir.join("intrinsics.txt"),
        format!(
            "fx {}\nfy {}\ncx {}\ncy {}\nwidth {}\nheight {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ),
    )?;
    std::fs::write(out_dir.join("frames.txt"), frames_txt)?;
    std::fs::write(out_dir.join("trajectory.txt"), traj_txt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_dataset(dir: &Path, frames: usize) -> SequenceManifest {
        let scene = make_scene(ScenePreset::Plane, frames, 64, 48, 0.02, 7).unwrap();
        write_synthetic_dataset(&scene, 0.0, dir).unwrap();
        SequenceManifest::load(dir).unwrap()
    }

    fn tiny_config(out: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.planes = 16;
        c.d_min = 1.0;
        c.d_max = 4.0;
        c.delta_t = 1;
        c.refine = false;
        c.output_dir = Some(out.to_path_buf());
        c
    }

    #[test]
    fn too_short_manifest_is_a_window_error() {
        let data = tempdir().unwrap();
        let out = tempdir().unwrap();
        let manifest = tiny_dataset(data.path(), 3);
        let config = tiny_config(out.path());
        let err = run_stream(&manifest, &config, None).unwrap_err();
        assert!(err.to_string().contains("window requires 5 frames"), "{err}");
    }

    #[test]
    fn single_window_stream_writes_outputs() {
        let data = tempdir().unwrap();
        let out = tempdir().unwrap();
        let manifest = tiny_dataset(data.path(), 5);
        let config = tiny_config(out.path());
        let summary = run_stream(&manifest, &config, Some(&data.path().join("gt"))).unwrap();
        assert_eq!(summary.frames_processed, 1);
        assert!(out.path().join("depth_00002.png").exists());
        assert!(out.path().join("conf_00002.png").exists());
        assert!(out.path().join("log.jsonl").exists());
        let m = summary.aggregated.unwrap();
        assert!(m.abs_rel < 0.1, "abs_rel {}", m.abs_rel);
    }

    #[test]
    fn stream_with_fusion_processes_multiple_windows() {
        let data = tempdir().unwrap();
        let out = tempdir().unwrap();
        let manifest = tiny_dataset(data.path(), 8);
        let mut config = tiny_config(out.path());
        config.stride = Some(1);
        let summary = run_stream(&manifest, &config, None).unwrap();
        assert_eq!(summary.frames_processed, 4);
        assert_eq!(summary.frames_skipped, 0);
    }

    #[test]
    fn eval_dirs_on_identical_inputs_is_zero_error() {
        let data = tempdir().unwrap();
        tiny_dataset(data.path(), 3);
        let gt = data.path().join("gt");
        let (per_file, mean) = eval_dirs(&gt, &gt, false, None).unwrap();
        assert_eq!(per_file.len(), 3);
        assert!(mean.abs_rel < 1e-12);
        assert!(mean.delta_1 > 99.9);
    }

    #[test]
    fn synthetic_dataset_roundtrips_through_manifest() {
        let data = tempdir().unwrap();
        let manifest = tiny_dataset(data.path(), 5);
        assert_eq!(manifest.frames.len(), 5);
        let window = build_window(&manifest, 2, 1).unwrap();
        assert_eq!(window.sources.len(), 4);
        // Lateral baseline of 0.02 between consecutive frames.
        let p = window.sources[3].pose_src_to_ref.translation;
        approx::assert_abs_diff_eq!(p[0], 2.0 * 0.02, epsilon = 1e-9);
    }
}
