use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{ImageRgb, LabelMask};
use crate::error::{Error, Result};

/// Color of entry `index` in the standard PASCAL VOC colormap: the bits of
/// the index are dealt out to R, G, B in turn, filling each channel from its
/// most significant bit down.
pub fn voc_color(index: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = index;
    for j in 0..8 {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

/// The full 256-entry colormap as packed RGB bytes.
pub fn voc_palette() -> Vec<u8> {
    (0..=255u8).flat_map(voc_color).collect()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn decode_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::Io(io)
        }
        other => Error::Decode(other.to_string()),
    }
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    palette: Option<Vec<u8>>,
    pixels: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let mut pixels = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut pixels).map_err(decode_err)?;
    pixels.truncate(frame.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok(Decoded {
        width: frame.width as usize,
        height: frame.height as usize,
        color: frame.color_type,
        depth: frame.bit_depth,
        palette,
        pixels,
    })
}

/// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let d = decode(path.as_ref())?;
    if d.depth != BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "bit depth {:?}, expected 8",
            d.depth
        )));
    }
    let data = match d.color {
        ColorType::Rgb => d.pixels,
        ColorType::Rgba => d
            .pixels
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "color type {other:?}, expected RGB or RGBA"
            )))
        }
    };
    ImageRgb::new(d.height, d.width, data)
}

fn encoder<'a>(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
) -> Result<png::Encoder<'a, BufWriter<File>>> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    Ok(enc)
}

fn write_all(enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<()> {
    let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Encode(e.to_string()))?;
    writer.finish().map_err(|e| Error::Encode(e.to_string()))
}

pub fn save_image(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let enc = encoder(path.as_ref(), img.width, img.height, ColorType::Rgb)?;
    write_all(enc, &img.data)
}

/// Writes an 8-bit indexed PNG carrying the VOC palette. The ignore label
/// 255 lands on palette entry 255 like any other index.
pub fn save_mask_png(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let mut enc = encoder(path.as_ref(), mask.width, mask.height, ColorType::Indexed)?;
    enc.set_palette(voc_palette());
    write_all(enc, &mask.data)
}

/// Reads a VOC-style mask. Indexed PNGs must carry (a prefix of) the VOC
/// palette; 8-bit grayscale PNGs are read as raw indices.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<LabelMask> {
    let d = decode(path.as_ref())?;
    if d.depth != BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "bit depth {:?}, expected 8",
            d.depth
        )));
    }
    match d.color {
        ColorType::Indexed => {
            let palette = d
                .palette
                .ok_or_else(|| Error::Decode("indexed PNG without PLTE".into()))?;
            let reference = voc_palette();
            if let Some(entry) = palette
                .chunks_exact(3)
                .zip(reference.chunks_exact(3))
                .position(|(a, b)| a != b)
            {
                return Err(Error::PaletteMismatch(entry));
            }
        }
        ColorType::Grayscale => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "color type {other:?}, expected indexed or grayscale"
            )))
        }
    }
    LabelMask::new(d.height, d.width, d.pixels)
}

/// Writes arbitrary 8-bit indices with the VOC palette (visualization helper).
pub fn save_palette_png(
    indices: &[u8],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    save_mask_png(&LabelMask::new(height, width, indices.to_vec())?, path)
}
