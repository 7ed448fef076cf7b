//! Image file I/O: 8-bit grayscale PNG and binary PGM (P5). Color inputs are
//! converted to luma on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Loads a PNG or PGM file by extension (`.pgm` is parsed directly, anything
/// else goes through the `image` crate decoders).
pub fn load_image(path: &Path) -> Result<GrayImage> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    {
        return read_pgm_bytes(&fs::read(path)?);
    }
    let dynamic = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let luma = dynamic.into_luma8();
    Ok(GrayImage::from_fn(
        luma.width() as usize,
        luma.height() as usize,
        |x, y| luma.get_pixel(x as u32, y as u32).0[0] as f32,
    ))
}

/// Writes an 8-bit grayscale PNG, rounding and clamping intensities.
pub fn save_png(image: &GrayImage, path: &Path) -> Result<()> {
    let buf: Vec<u8> = image.pixels().iter().map(|&v| to_u8(v)).collect();
    let out = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, buf)
        .expect("buffer sized from image");
    out.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes binary PGM (P5, maxval 255).
pub fn save_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write!(file, "P5\n{} {}\n255\n", image.width(), image.height())?;
    let buf: Vec<u8> = image.pixels().iter().map(|&v| to_u8(v)).collect();
    file.write_all(&buf)?;
    Ok(())
}

/// Parses binary PGM (P5, maxval <= 255) from a byte buffer.
pub fn read_pgm_bytes(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;

    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
        skip_ws(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(&bytes[start..*pos])
    }

    fn read_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
        let tok = read_token(bytes, pos)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad number in PGM header".into()))
    }

    let magic = read_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let width = read_number(bytes, &mut pos)?;
    let height = read_number(bytes, &mut pos)?;
    let maxval = read_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // single whitespace byte separates header from raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    let pixels = bytes[pos..pos + need].iter().map(|&b| b as f32).collect();
    GrayImage::from_pixels(width, height, pixels)
}

/// Writes an RGB overlay PNG: the grayscale image with crosses drawn at mark
/// positions and small squares at the two corner points.
pub fn save_overlay_png(
    image: &GrayImage,
    marks: &[(f64, f64)],
    corners: &[(f64, f64)],
    path: &Path,
) -> Result<()> {
    let w = image.width() as u32;
    let h = image.height() as u32;
    let mut rgb = image::RgbImage::new(w, h);
    for (x, y, p) in rgb.enumerate_pixels_mut() {
        let v = to_u8(image.get(x as usize, y as usize));
        *p = image::Rgb([v, v, v]);
        let _ = y;
    }
    let mut put = |x: i64, y: i64, c: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            rgb.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    };
    for &(mx, my) in marks {
        let (cx, cy) = (mx.round() as i64, my.round() as i64);
        for d in -4..=4i64 {
            put(cx + d, cy, [255, 40, 40]);
            put(cx, cy + d, [255, 40, 40]);
        }
    }
    for &(px, py) in corners {
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        for dy in -3..=3i64 {
            for dx in -3..=3i64 {
                if dx.abs() == 3 || dy.abs() == 3 {
                    put(cx + dx, cy + dy, [60, 220, 60]);
                }
            }
        }
    }
    rgb.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::from_fn(23, 11, |x, y| ((x * 7 + y * 31) % 256) as f32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        save_pgm(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_handles_comments() {
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let img = read_pgm_bytes(&bytes).unwrap();
        assert_eq!(img.pixels(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn png_round_trip() {
        let img = GrayImage::from_fn(17, 9, |x, y| ((x * 13 + y * 5) % 256) as f32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_pgm_bytes(b"P2\n2 2\n255\n1 2 3 4").is_err());
    }
}
