//! 8-bit PNG and binary PPM images.

use super::IoError;
use crate::model::ImageBuffer;
use std::path::Path;

/// `[0, 1]` value to a byte: clamp, scale, round half to even.
pub fn to_byte(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round_ties_even() as u8
}

pub fn to_rgb8(img: &ImageBuffer) -> Vec<u8> {
    img.pixels.iter().map(|v| to_byte(*v)).collect()
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_rgb8(img));
    out
}

fn encode_png(bytes: &[u8], width: usize, height: usize, color: image::ExtendedColorType) -> Result<Vec<u8>, IoError> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| IoError::Image(e.to_string()))?;
    Ok(out)
}

/// Writes an 8-bit image, PNG or PPM by extension.
pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<(), IoError> {
    let bytes = match extension(path).as_str() {
        "png" => encode_png(&to_rgb8(img), img.width, img.height, image::ExtendedColorType::Rgb8)?,
        "ppm" => encode_ppm(img),
        other => return Err(IoError::UnknownExtension(other.to_string())),
    };
    std::fs::write(path, bytes).map_err(|e| IoError::path(path, e))
}

/// Writes an RGBA PNG with `alpha` in the fourth channel.
pub fn write_png_with_alpha(img: &ImageBuffer, alpha: &[f64], path: &Path) -> Result<(), IoError> {
    if alpha.len() != img.width * img.height {
        return Err(IoError::Format("alpha size differs from image".into()));
    }
    let mut bytes = Vec::with_capacity(alpha.len() * 4);
    for (px, a) in img.pixels.chunks_exact(3).zip(alpha) {
        bytes.extend(px.iter().map(|v| to_byte(*v)));
        bytes.push(to_byte(*a));
    }
    let data = encode_png(&bytes, img.width, img.height, image::ExtendedColorType::Rgba8)?;
    std::fs::write(path, data).map_err(|e| IoError::path(path, e))
}

/// Reads a PNG or PPM; the alpha channel is returned when present.
pub fn read_image(path: &Path) -> Result<(ImageBuffer, Option<Vec<f64>>), IoError> {
    let data = std::fs::read(path).map_err(|e| IoError::path(path, e))?;
    let format = match extension(path).as_str() {
        "png" => image::ImageFormat::Png,
        "ppm" => return read_ppm(&data).map(|img| (img, None)),
        other => return Err(IoError::UnknownExtension(other.to_string())),
    };
    let decoded = image::load_from_memory_with_format(&data, format).map_err(|e| IoError::Image(e.to_string()))?;
    let has_alpha = decoded.color().has_alpha();
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut img = ImageBuffer::new(w, h);
    let mut alpha = Vec::with_capacity(w * h);
    for (i, p) in rgba.pixels().enumerate() {
        for c in 0..3 {
            img.pixels[i * 3 + c] = p.0[c] as f64 / 255.0;
        }
        alpha.push(p.0[3] as f64 / 255.0);
    }
    Ok((img, has_alpha.then_some(alpha)))
}

fn read_ppm(data: &[u8]) -> Result<ImageBuffer, IoError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| IoError::Format(format!("bad PPM field `{s}`")));
    if fields[0] != "P6" || num(&fields[3])? != 255 {
        return Err(IoError::Format("only 8-bit binary PPM (P6) is supported".into()));
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = data.get(pos..pos + w * h * 3).ok_or(IoError::Truncated {
        offset: data.len(),
        expected: pos + w * h * 3,
    })?;
    let mut img = ImageBuffer::new(w, h);
    for (d, b) in img.pixels.iter_mut().zip(body) {
        *d = *b as f64 / 255.0;
    }
    Ok(img)
}
