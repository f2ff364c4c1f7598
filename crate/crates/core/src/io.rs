//! PNG read/write for [`GrayImage`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

fn image_err(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}

/// Rec. 601 luma, rounded to nearest.
pub fn rec601_luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) + 500) / 1000) as u8
}

/// Load an image as 8-bit luminance. Color inputs are converted with
/// Rec. 601 weights; alpha is ignored.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (width, height) = (img.width(), img.height());
    let pixels = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| rec601_luma(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage::new(width, height, pixels)
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    image::save_buffer_with_format(
        path,
        img.pixels(),
        img.width(),
        img.height(),
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

/// Width and height from the file header without decoding pixels.
pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| image_err(path, e))
}
