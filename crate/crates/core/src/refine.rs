//! Edge-aware upsampling of the quarter-resolution fused DPV to full image
//! resolution, guided by the reference image (joint bilateral upsampling).

use crate::dpv::{self, DepthProbabilityVolume};
use crate::error::{Error, Result};
use crate::grid::{Map2, Volume};

const UPSAMPLE_FACTOR: usize = 4;

/// Joint bilateral upsampling parameters. Sigmas and radius are in full-
/// resolution pixels; range sigma is in intensity units on [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct GuidedUpsampleConfig {
    pub spatial_sigma: f64,
    pub range_sigma: f64,
    pub radius: f64,
}

impl Default for GuidedUpsampleConfig {
    fn default() -> Self {
        Self {
            spatial_sigma: 4.0,
            range_sigma: 0.1,
            radius: 8.0,
        }
    }
}

impl GuidedUpsampleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.spatial_sigma > 0.0 && self.range_sigma > 0.0 && self.radius > 0.0) {
            return Err(Error::InvalidArgument(
                "guided upsample parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Upsample each probability plane with weights from spatial distance and
/// guide-intensity difference, then renormalize per pixel.
///
/// The guide must be `4x` the DPV dimensions (integer division; remainder
/// pixels are edge-clamped).
pub fn upsample_dpv(
    dpv: &DepthProbabilityVolume,
    guide: &Map2,
    cfg: &GuidedUpsampleConfig,
) -> Result<DepthProbabilityVolume> {
    cfg.validate()?;
    if guide.width() / UPSAMPLE_FACTOR != dpv.width()
        || guide.height() / UPSAMPLE_FACTOR != dpv.height()
    {
        return Err(Error::ShapeMismatch(format!(
            "guide {}x{} is not 4x the DPV {}x{}",
            guide.width(),
            guide.height(),
            dpv.width(),
            dpv.height()
        )));
    }
    let (lw, lh, n) = (dpv.width(), dpv.height(), dpv.hypotheses().count());
    let (w, h) = (guide.width(), guide.height());
    let guide_low = guide.downsample_box(UPSAMPLE_FACTOR);
    let radius_cells = (cfg.radius / UPSAMPLE_FACTOR as f64).ceil() as isize;
    let inv_2ss = 1.0 / (2.0 * cfg.spatial_sigma * cfg.spatial_sigma);
    let inv_2sr = 1.0 / (2.0 * cfg.range_sigma * cfg.range_sigma);

    let mut out = Volume::new(w, h, n, 0.0);
    let mut acc = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            // Low-res position of this output pixel (pixel-center aligned).
            let lx = (x as f64 + 0.5) / UPSAMPLE_FACTOR as f64 - 0.5;
            let ly = (y as f64 + 0.5) / UPSAMPLE_FACTOR as f64 - 0.5;
            let cx0 = lx.round() as isize;
            let cy0 = ly.round() as isize;
            let g = guide.get(x, y);
            acc.fill(0.0);
            let mut total = 0.0;
            for cy in cy0 - radius_cells..=cy0 + radius_cells {
                for cx in cx0 - radius_cells..=cx0 + radius_cells {
                    let ux = cx.clamp(0, lw as isize - 1) as usize;
                    let uy = cy.clamp(0, lh as isize - 1) as usize;
                    let dx = (cx as f64 - lx) * UPSAMPLE_FACTOR as f64;
                    let dy = (cy as f64 - ly) * UPSAMPLE_FACTOR as f64;
                    let d2 = dx * dx + dy * dy;
                    if d2 > cfg.radius * cfg.radius {
                        continue;
                    }
                    let dg = g - guide_low.get(ux, uy);
                    let weight = (-d2 * inv_2ss).exp() * (-dg * dg * inv_2sr).exp();
                    if weight <= 0.0 {
                        continue;
                    }
                    total += weight;
                    for (a, p) in acc.iter_mut().zip(dpv.values().pixel(ux, uy)) {
                        *a += weight * p;
                    }
                }
            }
            let px = out.pixel_mut(x, y);
            if total > 1e-300 {
                for (o, a) in px.iter_mut().zip(&acc) {
                    *o = a / total;
                }
            } else {
                // All neighbors suppressed; fall back to the nearest cell.
                let ux = cx0.clamp(0, lw as isize - 1) as usize;
                let uy = cy0.clamp(0, lh as isize - 1) as usize;
                px.copy_from_slice(dpv.values().pixel(ux, uy));
            }
        }
    }
    let (result, _) = dpv::normalize(out, dpv.hypotheses().clone())?;
    Ok(result)
}
