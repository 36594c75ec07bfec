//! PNG encoding and decoding for the scene bundle: 8-bit RGB for images,
//! 8-bit indexed (palette) PNGs for labels, masks, and instance maps so the
//! stored bytes stay class indices while image viewers still show colors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};
use semsplat_core::image::{Image, InstanceMap, LabelMap};

use crate::CliError;

/// Clamps [0,1] floats to 8-bit and writes an RGB PNG.
pub fn write_rgb(path: &Path, image: &Image<f32>) -> Result<(), CliError> {
    assert_eq!(image.c, 3, "write_rgb expects 3 channels");
    let mut bytes = Vec::with_capacity(image.data.len());
    for v in &image.data {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), image.w as u32, image.h as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| CliError::png(path, e))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| CliError::png(path, e))?;
    Ok(())
}

pub fn read_rgb(path: &Path) -> Result<Image<f32>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| CliError::png(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::png(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut out = Image::zeros(h, w, 3);
    for px in 0..w * h {
        for c in 0..3 {
            let v = match info.color_type {
                ColorType::Grayscale | ColorType::GrayscaleAlpha => buf[px * channels],
                _ => buf[px * channels + c.min(channels - 1)],
            };
            out.data[px * 3 + c] = v as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Writes a single-channel index map as an indexed PNG with the given
/// palette (index -> RGB). Indices missing from the palette render black.
pub fn write_indexed(
    path: &Path,
    h: usize,
    w: usize,
    data: &[u8],
    palette: &[[u8; 3]],
) -> Result<(), CliError> {
    assert_eq!(data.len(), h * w);
    let mut pal = vec![0u8; 256 * 3];
    for (i, rgb) in palette.iter().enumerate().take(256) {
        pal[i * 3..i * 3 + 3].copy_from_slice(rgb);
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(ColorType::Indexed);
    enc.set_depth(BitDepth::Eight);
    enc.set_palette(pal);
    let mut writer = enc.write_header().map_err(|e| CliError::png(path, e))?;
    writer
        .write_image_data(data)
        .map_err(|e| CliError::png(path, e))?;
    Ok(())
}

/// Reads an indexed or grayscale PNG back as raw indices.
pub fn read_indexed(path: &Path) -> Result<(usize, usize, Vec<u8>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file));
    // Keep palette indices as stored instead of expanding to RGB.
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| CliError::png(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::png(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    match (info.color_type, info.bit_depth) {
        (ColorType::Indexed | ColorType::Grayscale, BitDepth::Eight) => {
            buf.truncate(w * h);
            Ok((h, w, buf))
        }
        (ColorType::Indexed | ColorType::Grayscale, BitDepth::Four | BitDepth::Two | BitDepth::One) => {
            // Unpack sub-byte rows.
            let bits = match info.bit_depth {
                BitDepth::Four => 4,
                BitDepth::Two => 2,
                _ => 1,
            };
            let per_byte = 8 / bits;
            let row_bytes = w.div_ceil(per_byte);
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let byte = buf[y * row_bytes + x / per_byte];
                    let shift = 8 - bits * (x % per_byte + 1);
                    out.push((byte >> shift) & ((1 << bits) - 1));
                }
            }
            Ok((h, w, out))
        }
        (ct, bd) => Err(CliError::Format(format!(
            "{}: unsupported label PNG format {ct:?}/{bd:?}; expected 8-bit indexed or grayscale",
            path.display()
        ))),
    }
}

pub fn read_label_map(path: &Path) -> Result<LabelMap, CliError> {
    let (h, w, data) = read_indexed(path)?;
    Ok(LabelMap::from_vec(h, w, data))
}

pub fn write_label_map(path: &Path, map: &LabelMap, palette: &[[u8; 3]]) -> Result<(), CliError> {
    write_indexed(path, map.h, map.w, &map.data, palette)
}

pub fn read_instance_map(path: &Path) -> Result<InstanceMap, CliError> {
    let (h, w, data) = read_indexed(path)?;
    Ok(InstanceMap::from_vec(
        h,
        w,
        data.into_iter().map(u16::from).collect(),
    ))
}

pub fn write_instance_map(path: &Path, map: &InstanceMap) -> Result<(), CliError> {
    let data: Result<Vec<u8>, CliError> = map
        .data
        .iter()
        .map(|&v| {
            u8::try_from(v).map_err(|_| {
                CliError::Format(format!(
                    "{}: instance id {v} exceeds the 255 limit of indexed PNGs",
                    path.display()
                ))
            })
        })
        .collect();
    // A simple distinguishable palette for viewing instance maps.
    let palette: Vec<[u8; 3]> = (0..256u32)
        .map(|i| {
            if i == 0 {
                [0, 0, 0]
            } else {
                [
                    ((i * 97) % 200 + 55) as u8,
                    ((i * 57) % 200 + 55) as u8,
                    ((i * 37) % 200 + 55) as u8,
                ]
            }
        })
        .collect();
    write_indexed(path, map.h, map.w, &data?, &palette)
}
