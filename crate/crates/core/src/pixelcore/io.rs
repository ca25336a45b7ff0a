use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use super::{BitOrigin, Colorspace, Image};
use crate::error::{Error, Result};

/// Decodes an image file. 8-bit files yield 8-bit provenance; 16-bit PNGs are
/// read as 10-bit codes left-aligned in 16 bits.
pub fn load_image(path: impl AsRef<Path>, colorspace: Colorspace) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynimg = image::load_from_memory(&bytes)?;
    let sixteen = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    if sixteen {
        let buf = dynimg.to_rgb16();
        let data = buf.as_raw().iter().map(|&v| (v >> 6) as f32 / 1023.0).collect();
        Ok(Image::from_vec(buf.height() as usize, buf.width() as usize, data, colorspace)?
            .with_bit_origin(BitOrigin::TenBit))
    } else {
        let buf = dynimg.to_rgb8();
        Ok(Image::from_rgb8(&buf, colorspace))
    }
}

pub fn save_png8(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes 10-bit codes left-aligned in a 16-bit PNG (the HDR frame layout).
pub fn save_png16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| ((v * 1023.0).round().clamp(0.0, 1023.0) as u16) << 6)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data).expect("buffer size matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
