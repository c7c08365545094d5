//! Heatmap overlays as PPM and Shapley attributions as CSV.

use photorisk_core::explain::{Heatmap, ShapAttribution};
use photorisk_core::EnvImage;

use crate::error::{Error, Result};
use crate::netpbm;

pub const SHAP_CSV_HEADER: [&str; 7] = [
    "index",
    "lux",
    "eye_variance",
    "phi_brightness",
    "phi_variance",
    "base_value",
    "prediction",
];

/// Blue at 0, red at 1.
pub fn heat_color(h: f64) -> [f64; 3] {
    [h, 0.0, 1.0 - h]
}

/// `(1 - h) * gray + h * heat_color(h)` per pixel, as a binary PPM.
pub fn render_heatmap_overlay(heatmap: &Heatmap, image: &EnvImage) -> Result<Vec<u8>> {
    if (heatmap.width, heatmap.height) != (image.width, image.height) {
        return Err(photorisk_core::Error::ShapeMismatch {
            expected: vec![image.height, image.width],
            actual: vec![heatmap.height, heatmap.width],
        }
        .into());
    }
    let mut rgb = Vec::with_capacity(image.pixels.len() * 3);
    for (&h, &g) in heatmap.grid.iter().zip(&image.pixels) {
        let h = h.clamp(0.0, 1.0);
        for c in heat_color(h) {
            let v = (1.0 - h) * g + h * c;
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(netpbm::encode_ppm(image.width, image.height, &rgb))
}

/// One row per `(lux, variance, attribution)`.
pub fn shap_csv(rows: &[((f64, f64), ShapAttribution)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SHAP_CSV_HEADER)?;
    for (i, ((lux, var), a)) in rows.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{lux:.6}"),
            format!("{var:.6}"),
            format!("{:.9}", a.phi_brightness),
            format!("{:.9}", a.phi_variance),
            format!("{:.9}", a.base_value),
            format!("{:.9}", a.prediction),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))
}
