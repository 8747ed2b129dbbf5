//! 8-bit raster import and export. Values map linearly between [0,1] and
//! [0,255], rounded to nearest and clamped on the way out.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use tilewarp_core::ImageBuffer;

use crate::error::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Pixels as RGB bytes; a single channel is replicated.
fn rgb_bytes(img: &ImageBuffer) -> Vec<u8> {
    match img.channels() {
        3 => img.data().iter().map(|&v| quantize(v)).collect(),
        _ => img.data().iter().flat_map(|&v| [quantize(v); 3]).collect(),
    }
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(rgb_bytes(img));
    out
}

/// Parses P6 (three channels) or P5 (one channel) with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(format!("unsupported magic {other:?}")),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header number {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(format!("maxval {maxval}, only 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster = bytes.get(pos + 1..).ok_or("missing raster")?;
    let n = height * width * channels;
    if raster.len() != n {
        return Err(format!("raster of {} bytes, expected {n}", raster.len()));
    }
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::from_vec(height, width, channels, data).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::parse(path, e))
}

/// 8-bit PNG, grayscale or RGB to match the channel count.
pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => Error::io(path, e),
        other => Error::parse(path, other),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Chooses PNG or PPM from the extension.
pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => write_png(path, img),
        Some("ppm") => write_ppm(path, img),
        _ => Err(Error::Parse(format!("{}: output must end in .png or .ppm", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_the_255_grid() {
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = ImageBuffer::from_vec(2, 2, 3, data).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn grayscale_is_replicated_and_clamped() {
        let img = ImageBuffer::from_vec(1, 2, 1, vec![-0.5, 0.5]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 0, 0, 128, 128, 128]);
    }

    #[test]
    fn header_comments_and_p5() {
        let img = decode_ppm(b"P5 # gray\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!((img.channels(), img.data()), (1, &[0.0, 1.0][..]));
    }

    #[test]
    fn rejects_short_raster() {
        assert!(decode_ppm(b"P6\n2 1\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n2 1\n65535\n").is_err());
    }
}
