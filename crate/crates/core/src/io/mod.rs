//! Image codecs, dataset ingestion, result files and plots.

pub mod dataset;
pub mod results;
pub mod svg;

use std::path::Path;

use image::{DynamicImage, ImageBuffer as RawImage, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub use dataset::{load_dataset, load_directory, load_manifest, DatasetManifest, ManifestEntry};
pub use results::{
    format_sig9, read_curve_csv, read_json, write_curve_csv, write_ensemble_csv, write_json, CsvCurveRow, HerdRecord,
};
pub use svg::{emit_svg, PlotOptions, PlotSeries};

/// Extensions accepted by [`decode_image`].
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes PNG or PGM/PPM. 8-bit channels map to `v / 255`, 16-bit to
/// `v / 65535`; alpha is dropped.
pub fn decode_image(path: &Path) -> Result<ImageBuffer> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
        return Err(load_err(
            path,
            format!("unsupported image format '{ext}' (use PNG or PGM/PPM)"),
        ));
    }
    if !path.is_file() {
        return Err(load_err(path, "file not found"));
    }
    let img = image::open(path).map_err(|e| load_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, pixels): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let b = img.to_luma16();
            (1, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect())
        }
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageRgba8(b) => (
            3,
            b.pixels()
                .flat_map(|p| [p[0], p[1], p[2]])
                .map(|v| f64::from(v) / 255.0)
                .collect(),
        ),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        other => {
            let b = other.to_rgb16();
            (3, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect())
        }
    };
    ImageBuffer::new(w, h, channels, pixels).map_err(|e| load_err(path, e.to_string()))
}

/// Writes a 16-bit PNG (gray or RGB). Values are rounded to the nearest
/// of 65536 levels, so 8-bit sources round-trip exactly.
pub fn encode_png16(image: &ImageBuffer, path: &Path) -> Result<()> {
    let quantized: Vec<u16> = image.pixels().iter().map(|&v| (v * 65535.0).round() as u16).collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = if image.channels() == 1 {
        RawImage::<Luma<u16>, _>::from_raw(w, h, quantized)
            .expect("buffer length matches dimensions")
            .save(path)
    } else {
        RawImage::<Rgb<u16>, _>::from_raw(w, h, quantized)
            .expect("buffer length matches dimensions")
            .save(path)
    };
    result.map_err(|e| load_err(path, e.to_string()))
}

/// Writes an 8-bit PNG (gray or RGB).
pub fn encode_png8(image: &ImageBuffer, path: &Path) -> Result<()> {
    let quantized: Vec<u8> = image.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = if image.channels() == 1 {
        RawImage::<Luma<u8>, _>::from_raw(w, h, quantized)
            .expect("buffer length matches dimensions")
            .save(path)
    } else {
        RawImage::<Rgb<u8>, _>::from_raw(w, h, quantized)
            .expect("buffer length matches dimensions")
            .save(path)
    };
    result.map_err(|e| load_err(path, e.to_string()))
}
