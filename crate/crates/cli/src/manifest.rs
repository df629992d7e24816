//! Dataset ingestion: frame lists, plain-text intrinsics, and TUM-format
//! trajectories.
//!
//! Trajectory poses are interpreted as camera-to-world (the TUM ground-truth
//! convention): the stored rotation/translation map camera-frame points into
//! the world frame.

use std::path::{Path, PathBuf};

use dpv_core::geometry::{CameraIntrinsics, Pose};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::{CliError, Result};

/// How far a quaternion norm may drift from 1 before the line is rejected.
const QUATERNION_DRIFT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    /// Camera-to-world pose.
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub image_path: PathBuf,
}

/// An on-disk sequence: ordered frames, intrinsics, and a pose trajectory.
#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub frames: Vec<FrameRecord>,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: Vec<TrajectoryEntry>,
}

/// Parse a TUM trajectory file: one "timestamp tx ty tz qx qy qz qw" line
/// per pose, '#' comment lines skipped, quaternions normalized on ingest.
pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                CliError::Data(format!(
                    "{}:{}: malformed trajectory line: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
        if fields.len() != 8 {
            return Err(CliError::Data(format!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = fields[..] else {
            unreachable!()
        };
        let q = Quaternion::new(qw, qx, qy, qz);
        if (q.norm() - 1.0).abs() > QUATERNION_DRIFT {
            return Err(CliError::Data(format!(
                "{}:{}: quaternion norm {} drifts beyond {QUATERNION_DRIFT}",
                path.display(),
                lineno + 1,
                q.norm()
            )));
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        entries.push(TrajectoryEntry {
            timestamp: t,
            pose: Pose::new(rotation.into_inner(), Vector3::new(tx, ty, tz)),
        });
    }
    Ok(entries)
}

/// Parse a plain-text key-value intrinsics file with the six required keys
/// fx, fy, cx, cy, width, height.
pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut values = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(key), Some(value)) = (parts.next(), parts.next()) else {
            return Err(CliError::Data(format!(
                "{}:{}: expected 'key value'",
                path.display(),
                lineno + 1
            )));
        };
        let value: f64 = value.parse().map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        values.insert(key.to_string(), value);
    }
    let get = |key: &str| {
        values
            .get(key)
            .copied()
            .ok_or_else(|| CliError::Data(format!("{}: missing key: {key}", path.display())))
    };
    let k = CameraIntrinsics::new(
        get("fx")?,
        get("fy")?,
        get("cx")?,
        get("cy")?,
        get("width")? as usize,
        get("height")? as usize,
    )?;
    Ok(k)
}

/// Parse a frame list: one "timestamp image-filename" line per frame, paths
/// relative to the list's directory.
pub fn load_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(ts), Some(name)) = (parts.next(), parts.next()) else {
            return Err(CliError::Data(format!(
                "{}:{}: expected 'timestamp filename'",
                path.display(),
                lineno + 1
            )));
        };
        let timestamp: f64 = ts.parse().map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        frames.push(FrameRecord {
            timestamp,
            image_path: base.join(name),
        });
    }
    Ok(frames)
}

impl SequenceManifest {
    /// Load a dataset directory containing frames.txt, intrinsics.txt, and
    /// trajectory.txt.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self {
            frames: load_frames(&dir.join("frames.txt"))?,
            intrinsics: load_intrinsics(&dir.join("intrinsics.txt"))?,
            trajectory: load_trajectory(&dir.join("trajectory.txt"))?,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.frames.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(CliError::Data(format!(
                    "frame timestamps not strictly increasing at t={}",
                    pair[1].timestamp
                )));
            }
        }
        Ok(())
    }

    /// Median spacing between consecutive frame timestamps.
    pub fn frame_interval(&self) -> f64 {
        let mut gaps: Vec<f64> = self
            .frames
            .windows(2)
            .map(|p| p[1].timestamp - p[0].timestamp)
            .collect();
        if gaps.is_empty() {
            return 0.0;
        }
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    }

    /// Camera-to-world pose for a frame timestamp. The closest trajectory
    /// entry must lie within half the frame interval; anything farther is a
    /// hard error rather than a silent nearest-neighbor grab.
    pub fn pose_at(&self, timestamp: f64) -> Result<Pose> {
        let tol = 0.5 * self.frame_interval();
        let best = self
            .trajectory
            .iter()
            .min_by(|a, b| {
                (a.timestamp - timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - timestamp).abs())
            })
            .ok_or_else(|| CliError::Data("empty trajectory".into()))?;
        let gap = (best.timestamp - timestamp).abs();
        if gap > tol {
            return Err(CliError::Data(format!(
                "no trajectory pose within {tol} s of frame t={timestamp} (closest is {gap} s away)"
            )));
        }
        Ok(best.pose)
    }
}
