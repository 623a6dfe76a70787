//! PNG (8-bit) and binary PGM/PPM image files. Loading maps [0,255] to
//! [0,1]; saving clamps to [0,1] and quantizes round-half-up.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Real;

pub fn load_image<S: Real>(path: impl AsRef<Path>) -> Result<Image<S>> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => load_png(path),
        "pgm" | "ppm" => load_pnm(path),
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension .{other})",
            path.display()
        ))),
    }
}

pub fn save_image<S: Real>(img: &Image<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "pgm" | "ppm" => save_pnm(img, path),
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension .{other})",
            path.display()
        ))),
    }
}

fn quantize<S: Real>(v: S) -> u8 {
    let v = v.to_f64_lossy().clamp(0.0, 1.0);
    // round half up; for non-negative values f64::round is half away from zero
    (v * 255.0).round() as u8
}

fn load_png<S: Real>(path: &Path) -> Result<Image<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let dyn_img = image::load_from_memory(&bytes).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let scale = S::of(1.0 / 255.0);
    match dyn_img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().into_iter().map(|b| S::of(b as f64) * scale).collect();
            Image::from_vec(h, w, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data = rgb.into_raw().into_iter().map(|b| S::of(b as f64) * scale).collect();
            Image::from_vec(h, w, 3, data)
        }
    }
}

fn save_png<S: Real>(img: &Image<S>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &bytes, w, h, color).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_pnm<S: Real>(path: &Path) -> Result<Image<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    // header: magic, width, height, maxval as whitespace-separated tokens
    // (comments allowed), then a single whitespace byte before raster data
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| corrupt("non-ascii header"))?
                .to_string(),
        );
    }
    pos += 1; // single whitespace after maxval

    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::UnsupportedFormat(format!("PNM magic {m}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| corrupt("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| corrupt("bad height"))?;
    let maxval: usize = tokens[3].parse().map_err(|_| corrupt("bad maxval"))?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {maxval}")));
    }
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(corrupt("truncated raster"));
    }
    let scale = S::of(1.0 / 255.0);
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| S::of(b as f64) * scale)
        .collect();
    Image::from_vec(height, width, channels, data)
}

fn save_pnm<S: Real>(img: &Image<S>, path: &Path) -> Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height()).expect("in-memory write");
    out.extend(img.data().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
