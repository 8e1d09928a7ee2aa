//! RGB images: binary PPM I/O, bilinear resizing and network preprocessing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::Tensor4;

/// 8-bit interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape("image", width * height * 3, data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Draws a closed polygon outline, clipped to the image.
    pub fn draw_polygon(&mut self, points: &[Point], rgb: [u8; 3]) {
        for i in 0..points.len() {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (a.x + (b.x - a.x) * t).round();
                let y = (a.y + (b.y - a.y) * t).round();
                if x >= 0.0 && y >= 0.0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.put(x as usize, y as usize, rgb);
                }
            }
        }
    }
}

/// Parses a binary (P6) PPM. `maxval` up to 255 is rescaled to 8 bits.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
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
            return Err(Error::Format("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::Format("not a binary PPM (P6) file".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse().map_err(|_| Error::Format(format!("bad PPM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height * 3;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("empty image {width}x{height}")));
    }
    if bytes.len() < start + len {
        return Err(Error::Format(format!("PPM raster truncated: need {len} bytes")));
    }
    let mut data = bytes[start..start + len].to_vec();
    if maxval != 255 {
        for v in &mut data {
            *v = ((u32::from(*v).min(maxval as u32) * 255 + maxval as u32 / 2) / maxval as u32) as u8;
        }
    }
    RgbImage::new(width, height, data)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(Error::file(path))?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(Error::file(path))
}

/// Bilinear resize with half-pixel-centred sampling and clamped edges.
pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize to {width}x{height}")));
    }
    if (width, height) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(width, img.width);
    let ys = taps(height, img.height);
    let mut data = vec![0u8; width * height * 3];
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = img.pixel(x0, y0);
            let p01 = img.pixel(x1, y0);
            let p10 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            for c in 0..3 {
                let top = f32::from(p00[c]) * (1.0 - fx) + f32::from(p01[c]) * fx;
                let bottom = f32::from(p10[c]) * (1.0 - fx) + f32::from(p11[c]) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data[(y * width + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(width, height, data)
}

/// Size after scaling the smaller side to `min_side`, keeping the aspect ratio.
pub fn resized_dims(width: usize, height: usize, min_side: usize) -> (usize, usize) {
    let short = width.min(height) as f64;
    let s = min_side as f64 / short;
    let w = ((width as f64 * s).round() as usize).max(1);
    let h = ((height as f64 * s).round() as usize).max(1);
    if width <= height {
        (min_side, h)
    } else {
        (w, min_side)
    }
}

pub fn padded_dims(width: usize, height: usize, multiple: usize) -> (usize, usize) {
    (width.div_ceil(multiple) * multiple, height.div_ceil(multiple) * multiple)
}

/// A network-ready image plus the mapping back to original pixels.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub tensor: Tensor4,
    pub original: (usize, usize),
    pub resized: (usize, usize),
    pub padded: (usize, usize),
}

impl Prepared {
    /// Maps a point in network-input pixels back to the original image.
    pub fn to_original(&self, p: Point) -> Point {
        Point::new(
            p.x * self.original.0 as f64 / self.resized.0 as f64,
            p.y * self.original.1 as f64 / self.resized.1 as f64,
        )
    }

    pub fn to_network(&self, p: Point) -> Point {
        Point::new(
            p.x * self.resized.0 as f64 / self.original.0 as f64,
            p.y * self.resized.1 as f64 / self.original.1 as f64,
        )
    }
}

/// Resize so the smaller side is `min_side`, normalise to `x / 127.5 - 1`,
/// then zero-pad bottom/right to multiples of `pad_to`.
pub fn prepare(img: &RgbImage, min_side: usize, pad_to: usize) -> Result<Prepared> {
    if min_side == 0 || pad_to == 0 {
        return Err(Error::InvalidArgument("min side and pad multiple must be positive".into()));
    }
    let (rw, rh) = resized_dims(img.width, img.height, min_side);
    let resized = resize_bilinear(img, rw, rh)?;
    let (pw, ph) = padded_dims(rw, rh, pad_to);
    let mut data = vec![0.0f32; 3 * pw * ph];
    for y in 0..rh {
        for x in 0..rw {
            let px = resized.pixel(x, y);
            for c in 0..3 {
                data[(c * ph + y) * pw + x] = f32::from(px[c]) / 127.5 - 1.0;
            }
        }
    }
    Ok(Prepared {
        tensor: Tensor4::new([1, 3, ph, pw], data)?,
        original: (img.width, img.height),
        resized: (rw, rh),
        padded: (pw, ph),
    })
}
