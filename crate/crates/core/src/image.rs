//! H×W×3 image tensors, resampling, normalization and PNG/PPM codecs.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ColorSpace {
    /// Values in `[0, 1]`.
    SrgbUnit,
    /// Zero-mean, unit-variance per channel; unbounded.
    Normalized,
}

/// Row-major, channel-interleaved RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
    color_space: ColorSpace,
}

impl<T: Real> ImageTensor<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>, color_space: ColorSpace) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::invalid(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        if color_space == ColorSpace::SrgbUnit {
            if let Some(v) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
                return Err(Error::invalid(format!("sRGB image value {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            height,
            width,
            data,
            color_space,
        })
    }

    /// Constant sRGB image. Panics on zero dimensions.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
            color_space: ColorSpace::SrgbUnit,
        }
    }

    /// Builds an sRGB image from `f(y, x, c)`, clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self {
            height,
            width,
            data,
            color_space: ColorSpace::SrgbUnit,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Bilinear sample at continuous pixel coordinates with edge clamping.
    pub fn sample_bilinear(&self, y: T, x: T, c: usize) -> T {
        let ymax = T::from_usize(self.height - 1).unwrap();
        let xmax = T::from_usize(self.width - 1).unwrap();
        let y = y.max(T::zero()).min(ymax);
        let x = x.max(T::zero()).min(xmax);
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let y0 = y0.to_usize().unwrap();
        let x0 = x0.to_usize().unwrap();
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let top = (T::one() - fx) * self.get(y0, x0, c) + fx * self.get(y0, x1, c);
        let bottom = (T::one() - fx) * self.get(y1, x0, c) + fx * self.get(y1, x1, c);
        (T::one() - fy) * top + fy * bottom
    }

    /// Pixel-wise map over every channel value.
    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
            color_space: self.color_space,
        }
    }

    /// Map with channel index.
    pub fn map_channels(&self, mut f: impl FnMut(usize, T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i % CHANNELS, v))
                .collect(),
            color_space: self.color_space,
        }
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Self {
        let s = T::lit(255.0);
        self.map(|v| (clamp_unit(v) * s).round() / s)
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            color_space: self.color_space,
        }
    }

    /// True when every value lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| *v >= T::zero() && *v <= T::one())
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; CHANNELS] {
        let mut sum = [0.0; CHANNELS];
        for (i, v) in self.data.iter().enumerate() {
            sum[i % CHANNELS] += v.as_f64();
        }
        let n = (self.height * self.width) as f64;
        sum.map(|s| s / n)
    }
}

#[inline]
pub(crate) fn clamp_unit<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Bilinear resize with half-pixel centers. sRGB outputs are clamped to `[0, 1]`.
pub fn resize_bilinear<T: Real>(img: &ImageTensor<T>, height: usize, width: usize) -> Result<ImageTensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("resize target must be positive, got {height}x{width}")));
    }
    if height == img.height && width == img.width {
        return Ok(img.clone());
    }
    let sy = T::from_usize(img.height).unwrap() / T::from_usize(height).unwrap();
    let sx = T::from_usize(img.width).unwrap() / T::from_usize(width).unwrap();
    let half = T::lit(0.5);
    let mut data = Vec::with_capacity(height * width * CHANNELS);
    for y in 0..height {
        let src_y = (T::from_usize(y).unwrap() + half) * sy - half;
        for x in 0..width {
            let src_x = (T::from_usize(x).unwrap() + half) * sx - half;
            for c in 0..CHANNELS {
                let v = img.sample_bilinear(src_y, src_x, c);
                data.push(match img.color_space {
                    ColorSpace::SrgbUnit => clamp_unit(v),
                    ColorSpace::Normalized => v,
                });
            }
        }
    }
    Ok(ImageTensor {
        height,
        width,
        data,
        color_space: img.color_space,
    })
}

/// Per-channel statistics used for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

const DEGENERATE_STD: f64 = 1e-8;

impl ChannelStats {
    /// Population mean and standard deviation of one image.
    pub fn of_image<T: Real>(img: &ImageTensor<T>) -> Self {
        Self::of_images(std::slice::from_ref(img))
    }

    /// Pooled population statistics over a set of images.
    pub fn of_images<T: Real>(imgs: &[ImageTensor<T>]) -> Self {
        // Accumulate around a pivot so constant channels come out exact.
        let pivot: [f64; CHANNELS] = match imgs.first() {
            Some(img) => std::array::from_fn(|c| img.data[c].as_f64()),
            None => [0.0; CHANNELS],
        };
        let mut n = 0usize;
        let mut sum = [0.0f64; CHANNELS];
        for img in imgs {
            n += img.height * img.width;
            for (i, v) in img.data.iter().enumerate() {
                sum[i % CHANNELS] += v.as_f64() - pivot[i % CHANNELS];
            }
        }
        let nf = n.max(1) as f64;
        let mean: [f64; CHANNELS] = std::array::from_fn(|c| pivot[c] + sum[c] / nf);
        let mut sq = [0.0f64; CHANNELS];
        for img in imgs {
            for (i, v) in img.data.iter().enumerate() {
                let d = v.as_f64() - mean[i % CHANNELS];
                sq[i % CHANNELS] += d * d;
            }
        }
        let std = sq.map(|s| (s / nf).sqrt());
        Self { mean, std }
    }
}

/// Zero mean, unit variance per channel using this image's own statistics.
pub fn normalize_per_channel<T: Real>(img: &ImageTensor<T>) -> ImageTensor<T> {
    normalize_with(img, &ChannelStats::of_image(img))
}

/// Normalizes with externally supplied (e.g. dataset-level) statistics.
/// A channel whose std is below 1e-8 is only mean-shifted.
pub fn normalize_with<T: Real>(img: &ImageTensor<T>, stats: &ChannelStats) -> ImageTensor<T> {
    let mean = stats.mean.map(T::lit);
    let std = stats
        .std
        .map(|s| if s < DEGENERATE_STD { T::one() } else { T::lit(s) });
    let mut out = img.map_channels(|c, v| (v - mean[c]) / std[c]);
    out.color_space = ColorSpace::Normalized;
    out
}

fn to_bytes<T: Real>(img: &ImageTensor<T>) -> Vec<u8> {
    let s = T::lit(255.0);
    img.data
        .iter()
        .map(|&v| (clamp_unit(v) * s).round().to_u8().unwrap_or(0))
        .collect()
}

fn from_bytes<T: Real>(height: usize, width: usize, bytes: &[u8]) -> ImageTensor<T> {
    let s = T::lit(255.0);
    ImageTensor {
        height,
        width,
        data: bytes.iter().map(|&b| T::from_u8(b).unwrap() / s).collect(),
        color_space: ColorSpace::SrgbUnit,
    }
}

/// 8-bit RGB PNG. Values are clamped and rounded to the 1/255 grid.
pub fn encode_png<T: Real>(img: &ImageTensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&to_bytes(img))
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit PNG into an sRGB tensor. Gray and alpha channels are
/// expanded or dropped.
pub fn decode_png<T: Real>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    let mut cursor = Cursor::new(bytes);
    let fail = |cursor: &Cursor<&[u8]>, e: png::DecodingError| Error::Decode {
        offset: cursor.position() as usize,
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(&mut cursor);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = match decoder.read_info() {
        Ok(r) => r,
        Err(e) => return Err(fail(&cursor, e)),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode {
            offset: 0,
            message: "image too large".into(),
        })?;
    let mut buf = vec![0u8; size];
    let info = match reader.next_frame(&mut buf) {
        Ok(i) => i,
        Err(e) => {
            drop(reader);
            return Err(fail(&cursor, e));
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let src = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => src.to_vec(),
        png::ColorType::Rgba => src.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => src.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => src.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => {
            return Err(Error::Decode {
                offset: 0,
                message: "indexed PNG was not expanded".into(),
            })
        }
    };
    if w == 0 || h == 0 || rgb.len() != w * h * CHANNELS {
        return Err(Error::Decode {
            offset: bytes.len(),
            message: format!("unexpected pixel buffer for {w}x{h}"),
        });
    }
    Ok(from_bytes(h, w, &rgb))
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm<T: Real>(img: &ImageTensor<T>) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_bytes(img));
    out
}

pub fn decode_ppm<T: Real>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    let mut pos = 0usize;
    let err = |offset: usize, message: &str| Error::Decode {
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "missing P6 magic"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "header field out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(err(pos, "expected single whitespace after header"));
    }
    pos += 1;
    let need = w * h * CHANNELS;
    if bytes.len() < pos + need {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    Ok(from_bytes(h, w, &bytes[pos..pos + need]))
}

/// Decodes by sniffing the magic bytes (PNG or P6 PPM).
pub fn decode_image<T: Real>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        decode_png(bytes)
    }
}

pub fn read_image<T: Real>(path: &std::path::Path) -> Result<ImageTensor<T>> {
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode_image(&bytes)
}

/// Writes PNG unless the extension is `.ppm`.
pub fn write_image<T: Real>(img: &ImageTensor<T>, path: &std::path::Path) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => encode_ppm(img),
        _ => encode_png(img)?,
    };
    std::fs::write(path, bytes).map_err(Error::at_path(path))
}
