//! Raster files on disk.
//!
//! Only lossless formats are accepted by default: thresholding compression
//! artifacts corrupts labels. The published DeepPCB images are JPEG, so the
//! check can be lifted explicitly with [`ReadOptions::allow_lossy`].

use std::path::Path;

use image::{ImageFormat, ImageReader, Rgb, RgbImage};

use crate::error::{Error, Result};

use super::preprocess::{binarize, otsu_threshold};
use super::Raster;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    pub allow_lossy: bool,
    /// Fixed binarization threshold; Otsu's method when `None`.
    pub threshold: Option<u8>,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn is_lossless(format: ImageFormat) -> bool {
    matches!(
        format,
        ImageFormat::Png | ImageFormat::Bmp | ImageFormat::Pnm | ImageFormat::Tiff
    )
}

/// Reads any supported image as 8-bit grayscale.
pub fn read_gray(path: &Path, opts: &ReadOptions) -> Result<Raster> {
    let bytes = std::fs::read(path)?;
    let format = image::guess_format(&bytes).map_err(|e| image_err(path, e.to_string()))?;
    if !is_lossless(format) && !opts.allow_lossy {
        return Err(image_err(
            path,
            format!("{format:?} is lossy; convert to PNG or allow lossy inputs"),
        ));
    }
    let img = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| image_err(path, e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Raster::from_vec(w as usize, h as usize, img.into_raw())
}

/// Reads an image and binarizes it.
pub fn read_binary(path: &Path, opts: &ReadOptions) -> Result<Raster> {
    let gray = read_gray(path, opts)?;
    let t = opts.threshold.unwrap_or_else(|| otsu_threshold(&gray));
    Ok(binarize(&gray, t))
}

/// Writes a binary raster as an 8-bit PNG with copper at 255.
pub fn write_binary_png(raster: &Raster, path: &Path) -> Result<()> {
    let data: Vec<u8> = raster
        .data
        .iter()
        .map(|&v| if v != 0 { 255 } else { 0 })
        .collect();
    let img = image::GrayImage::from_raw(raster.width as u32, raster.height as u32, data)
        .ok_or_else(|| image_err(path, "raster size mismatch"))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Writes an RGB image as PNG.
pub fn write_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Grayscale-to-RGB copy of a binary raster, copper drawn light.
pub fn binary_to_rgb(raster: &Raster) -> RgbImage {
    RgbImage::from_fn(raster.width as u32, raster.height as u32, |x, y| {
        if raster.get(x as usize, y as usize) != 0 {
            Rgb([200, 200, 200])
        } else {
            Rgb([20, 20, 20])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_and_lossy_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Raster::new(8, 6);
        r.set(2, 3, 1);
        r.set(7, 5, 1);
        let p = dir.path().join("a.png");
        write_binary_png(&r, &p).unwrap();
        assert_eq!(read_binary(&p, &ReadOptions::default()).unwrap(), r);

        let j = dir.path().join("a.jpg");
        image::GrayImage::from_raw(8, 6, vec![0; 48])
            .unwrap()
            .save_with_format(&j, ImageFormat::Jpeg)
            .unwrap();
        assert!(matches!(
            read_binary(&j, &ReadOptions::default()),
            Err(Error::Image { .. })
        ));
        let lossy = ReadOptions {
            allow_lossy: true,
            ..ReadOptions::default()
        };
        assert_eq!(read_binary(&j, &lossy).unwrap().count_nonzero(), 0);
    }
}
