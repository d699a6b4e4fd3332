//! PNG adapters: 8-bit RGB frames and 16-bit single-channel label maps.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageError, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::types::{BinaryLabelMap, ImageTensor, InstanceLabelMap};

fn image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Loads an 8-bit image as RGB; level v maps to v / 255.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_rgb8()
        }
        _ => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: "expected an 8-bit image".into(),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// Writes an image as 8-bit RGB, rounding to the nearest level.
/// Single-channel images are replicated to grey.
pub fn write_rgb_png(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let quantize = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let raw: Vec<u8> = if img.channels() == 3 {
        img.data().iter().map(|&v| quantize(v)).collect()
    } else {
        img.data().iter().flat_map(|&v| [quantize(v); 3]).collect()
    };
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches image shape");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Reads a single-channel PNG (8- or 16-bit) as raw integer levels.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        _ => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: "expected a single-channel label image".into(),
            })
        }
    };
    Ok((h, w, values))
}

pub fn write_label_png(path: impl AsRef<Path>, height: usize, width: usize, values: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, values.to_vec()).ok_or_else(|| {
            Error::contract(format!(
                "label buffer of {} values does not match {height}x{width}",
                values.len()
            ))
        })?;
    buf.save(path).map_err(|e| image_error(path, e))
}

pub fn read_instance_png(path: impl AsRef<Path>) -> Result<InstanceLabelMap> {
    let (h, w, values) = read_label_png(path)?;
    InstanceLabelMap::new(h, w, values.into_iter().map(u32::from).collect())
}

pub fn write_instance_png(path: impl AsRef<Path>, masks: &InstanceLabelMap) -> Result<()> {
    let values = masks
        .labels()
        .iter()
        .map(|&l| {
            u16::try_from(l).map_err(|_| Error::contract(format!("instance id {l} exceeds 16 bits")))
        })
        .collect::<Result<Vec<_>>>()?;
    write_label_png(path, masks.height(), masks.width(), &values)
}

pub fn read_gt_png(path: impl AsRef<Path>) -> Result<BinaryLabelMap> {
    let path = path.as_ref();
    let (h, w, values) = read_label_png(path)?;
    BinaryLabelMap::from_values(h, w, &values).map_err(|e| Error::format(path, "labels", e.to_string()))
}

pub fn write_gt_png(path: impl AsRef<Path>, gt: &BinaryLabelMap) -> Result<()> {
    let values: Vec<u16> = gt.labels().iter().map(|l| l.value()).collect();
    write_label_png(path, gt.height(), gt.width(), &values)
}

/// Writes a normalized map as an 8-bit greyscale preview.
pub fn write_map_preview(path: impl AsRef<Path>, map: &crate::types::AnomalyMap) -> Result<()> {
    let path = path.as_ref();
    let raw = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(map.width() as u32, map.height() as u32, raw)
        .expect("buffer length matches map shape");
    buf.save(path).map_err(|e| image_error(path, e))
}
