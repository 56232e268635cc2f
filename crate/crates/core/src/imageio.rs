//! Grayscale image files: PNG (8/16-bit) and binary PGM (P5).

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::math::Real;
use crate::raster::Image;

/// Sample depth used when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn codec(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

/// Encodes an image as a grayscale PNG, clamping to `[0, 1]`.
pub fn encode_png<T: Real>(img: &Image<T>, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        let bytes = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                img.to_u8()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                img.to_u16().iter().flat_map(|v| v.to_be_bytes()).collect()
            }
        };
        let mut writer = enc.write_header().map_err(codec)?;
        writer.write_image_data(&bytes).map_err(codec)?;
    }
    Ok(out)
}

/// Decodes a grayscale PNG (8 or 16 bits) to values in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Image<f32>> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(codec)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(codec)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Image(format!("expected grayscale PNG, found {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| v as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..2 * w * h]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => return Err(Error::Image(format!("unsupported PNG bit depth {other:?}"))),
    };
    Image::from_vec(w, h, data)
}

/// Encodes a binary PGM; 16-bit samples are big-endian per the format.
pub fn encode_pgm<T: Real>(img: &Image<T>, depth: BitDepth) -> Vec<u8> {
    let maxval = match depth {
        BitDepth::Eight => 255,
        BitDepth::Sixteen => 65535,
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    match depth {
        BitDepth::Eight => out.extend(img.to_u8()),
        BitDepth::Sixteen => out.extend(img.to_u16().iter().flat_map(|v| v.to_be_bytes())),
    }
    out
}

/// Decodes a binary PGM with any maxval up to 65535.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image<f32>> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
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
            return Err(Error::Image("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Image(format!("expected P5 PGM, found magic {:?}", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("PGM maxval {maxval} out of range")));
    }
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::Image("truncated PGM raster".into()))?;
    let maxval = maxval as f32;
    let data = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval)
            .collect()
    } else {
        raster.iter().map(|&v| v as f32 / maxval).collect()
    };
    Image::from_vec(w, h, data)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Writes PNG or PGM depending on the file extension.
pub fn write_image<T: Real>(path: &Path, img: &Image<T>, depth: BitDepth) -> Result<()> {
    let bytes = if is_pgm(path) {
        encode_pgm(img, depth)
    } else {
        encode_png(img, depth)?
    };
    fs::write(path, bytes).with_path(path)
}

/// Reads a PNG or PGM file, sniffing the format from its magic bytes.
pub fn read_image(path: &Path) -> Result<Image<f32>> {
    let bytes = fs::read(path).with_path(path)?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        decode_png(&bytes)
    }
}
