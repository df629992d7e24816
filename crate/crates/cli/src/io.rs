//! Bit-exact image file formats: 16-bit grayscale PNGs for depth (in
//! millimeters), confidence, and intensity, each with a sidecar text file
//! recording the scale factor.

use std::path::Path;

use dpv_core::grid::Map2;
use image::{ImageBuffer, Luma};

use crate::{CliError, Result};

/// Meters per stored depth unit (stored values are millimeters).
pub const DEPTH_SCALE: f64 = 1e-3;
/// Largest representable depth in meters; everything above saturates.
pub const DEPTH_MAX_METERS: f64 = 65.535;

fn save_png16(map: &Map2, path: &Path, quantize: impl Fn(f64) -> u16) -> Result<()> {
    let (w, h) = (map.width() as u32, map.height() as u32);
    let buf: Vec<u16> = map.data().iter().map(|&v| quantize(v)).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, buf).expect("buffer size matches dimensions");
    img.save(path)
        .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

fn load_png16(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

fn write_sidecar(path: &Path, lines: &str) -> Result<()> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".scale.txt");
    std::fs::write(&sidecar, lines)?;
    Ok(())
}

/// Round half up: 0.5 always rounds toward positive infinity.
#[inline]
fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Write a depth map as a 16-bit PNG in millimeters (0 = invalid). Returns
/// the number of saturated pixels (> 65.535 m), which the caller should
/// surface as a warning when nonzero.
pub fn write_depth(depth: &Map2, path: &Path) -> Result<usize> {
    let mut saturated = 0usize;
    let (w, h) = (depth.width() as u32, depth.height() as u32);
    let buf: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                0
            } else if d > DEPTH_MAX_METERS {
                saturated += 1;
                u16::MAX
            } else {
                round_half_up(d / DEPTH_SCALE) as u16
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, buf).expect("buffer size matches dimensions");
    img.save(path)
        .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
    write_sidecar(path, "meters_per_unit 0.001\ninvalid_value 0\n")?;
    if saturated > 0 {
        log::warn!("{}: {saturated} depth pixels saturated at 65.535 m", path.display());
    }
    Ok(saturated)
}

/// Read a depth PNG back into meters; stored 0 stays 0 (invalid).
pub fn read_depth(path: &Path) -> Result<Map2> {
    let (w, h, raw) = load_png16(path)?;
    let data = raw.into_iter().map(|v| v as f64 * DEPTH_SCALE).collect();
    Ok(Map2::from_vec(w as usize, h as usize, data))
}

/// Write a confidence map in [0, 1] as a 16-bit PNG scaled by 65535.
pub fn write_confidence(conf: &Map2, path: &Path) -> Result<()> {
    save_png16(conf, path, |v| {
        round_half_up(v.clamp(0.0, 1.0) * 65535.0) as u16
    })?;
    write_sidecar(path, "units_per_one 65535\n")
}

pub fn read_confidence(path: &Path) -> Result<Map2> {
    let (w, h, raw) = load_png16(path)?;
    let data = raw.into_iter().map(|v| v as f64 / 65535.0).collect();
    Ok(Map2::from_vec(w as usize, h as usize, data))
}

/// Write an intensity image in [0, 1] as a 16-bit PNG.
pub fn write_image(img: &Map2, path: &Path) -> Result<()> {
    save_png16(img, path, |v| {
        round_half_up(v.clamp(0.0, 1.0) * 65535.0) as u16
    })
}

pub fn read_image(path: &Path) -> Result<Map2> {
    let (w, h, raw) = load_png16(path)?;
    let data = raw.into_iter().map(|v| v as f64 / 65535.0).collect();
    Ok(Map2::from_vec(w as usize, h as usize, data))
}
