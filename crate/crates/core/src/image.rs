//! Decoded rasters and the floating-point planes every metric works on.
//!
//! [`ImageBuffer`] holds 8-bit interleaved samples exactly as decoded.
//! [`LumaPlane`] is a single channel of `f64` samples in `[0, 255]`; it is the
//! working representation for filtering, resampling and the metrics.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Full 8-bit dynamic range.
pub const PEAK: f64 = 255.0;

/// Decoded 8-bit raster, row-major, channels interleaved (R, G, B for colour).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::arg(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image with every sample set to `value`.
    pub fn uniform(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Splits the raster into one floating plane per channel.
    pub fn to_planes(&self) -> Vec<LumaPlane> {
        (0..self.channels)
            .map(|c| LumaPlane {
                width: self.width,
                height: self.height,
                data: self
                    .data
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .map(|&v| f64::from(v))
                    .collect(),
            })
            .collect()
    }

    /// Interleaves planes back into an 8-bit raster, rounding and clamping.
    pub fn from_planes(planes: &[LumaPlane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::arg("at least one plane is required"))?;
        let (width, height) = (first.width, first.height);
        if planes.iter().any(|p| p.width != width || p.height != height) {
            return Err(Error::arg("planes have differing dimensions"));
        }
        let channels = planes.len();
        let mut data = vec![0u8; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.data.iter().enumerate() {
                data[i * channels + c] = quantize(v);
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Replicates a single channel into R, G, B. Colour images are returned unchanged.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Copies out the `width`×`height` region whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::arg("crop region exceeds image bounds"));
        }
        let row = width * self.channels;
        let mut data = Vec::with_capacity(row * height);
        for yy in y..y + height {
            let start = (yy * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + row]);
        }
        Self::new(width, height, self.channels, data)
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, PEAK) as u8
}

/// Single channel of floating samples in `[0, 255]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaPlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LumaPlane {
    /// Builds a plane, clamping every sample into `[0, 255]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("plane dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "sample count {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::arg("plane contains NaN samples"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, PEAK);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &LumaPlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    // Internal constructor for values already known to be in range.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }
}

/// Output container for [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFormat {
    Png,
    Jpeg { quality: u8 },
}

/// Decodes a PNG or JPEG file. 16-bit PNG samples are reduced by `>> 8`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes PNG or JPEG bytes already in memory.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Format(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => return Err(Error::Format(format!("unsupported image format {other:?}"))),
        None => return Err(Error::Format("unrecognised image format".into())),
    }
    let decoded = reader.decode().map_err(|e| Error::Format(e.to_string()))?;
    from_dynamic(decoded)
}

fn from_dynamic(img: DynamicImage) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shift = |v: &u16| (v >> 8) as u8;
    match img {
        DynamicImage::ImageLuma8(b) => ImageBuffer::new(w, h, 1, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => {
            ImageBuffer::new(w, h, 1, b.into_raw().chunks_exact(2).map(|p| p[0]).collect())
        }
        DynamicImage::ImageRgb8(b) => ImageBuffer::new(w, h, 3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => ImageBuffer::new(
            w,
            h,
            3,
            b.into_raw()
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
        ),
        DynamicImage::ImageLuma16(b) => ImageBuffer::new(w, h, 1, b.as_raw().iter().map(shift).collect()),
        DynamicImage::ImageLumaA16(b) => ImageBuffer::new(
            w,
            h,
            1,
            b.as_raw().chunks_exact(2).map(|p| shift(&p[0])).collect(),
        ),
        DynamicImage::ImageRgb16(b) => ImageBuffer::new(w, h, 3, b.as_raw().iter().map(shift).collect()),
        DynamicImage::ImageRgba16(b) => ImageBuffer::new(
            w,
            h,
            3,
            b.as_raw()
                .chunks_exact(4)
                .flat_map(|p| [shift(&p[0]), shift(&p[1]), shift(&p[2])])
                .collect(),
        ),
        other => Err(Error::Format(format!(
            "unsupported sample layout {:?}",
            other.color()
        ))),
    }
}

/// Encodes the image into `format` and returns the file bytes.
pub fn encode_image(img: &ImageBuffer, format: SaveFormat) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let (w, h) = (img.width as u32, img.height as u32);
    let mut out = Vec::new();
    match format {
        SaveFormat::Png => PngEncoder::new(&mut out)
            .write_image(&img.data, w, h, color)
            .map_err(|e| Error::Format(e.to_string()))?,
        SaveFormat::Jpeg { quality } => {
            if !(1..=100).contains(&quality) {
                return Err(Error::arg(format!("JPEG quality must be in 1..=100, got {quality}")));
            }
            JpegEncoder::new_with_quality(&mut out, quality)
                .write_image(&img.data, w, h, color)
                .map_err(|e| Error::Format(e.to_string()))?
        }
    }
    Ok(out)
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>, format: SaveFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// BT.601 luma; single-channel input is copied through.
pub fn to_luma(img: &ImageBuffer) -> LumaPlane {
    let data = match img.channels {
        1 => img.data.iter().map(|&v| f64::from(v)).collect(),
        _ => img
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect(),
    };
    LumaPlane::from_raw(img.width, img.height, data)
}

/// Interpolation kernel for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeKernel {
    Nearest,
    Bilinear,
    Bicubic,
}

impl ResizeKernel {
    pub const ALL: [ResizeKernel; 3] = [Self::Nearest, Self::Bilinear, Self::Bicubic];
}

const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(d: f64) -> f64 {
    let x = d.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Source coordinate of output sample `o` under half-pixel-centre alignment.
#[inline]
pub fn source_coord(o: usize, in_len: usize, out_len: usize) -> f64 {
    (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Taps `(source index, weight)` for one output coordinate. Indices are clamped to the edge.
fn taps(o: usize, in_len: usize, out_len: usize, kernel: ResizeKernel) -> Vec<(usize, f64)> {
    let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
    match kernel {
        // Top-left rule: the source sample whose index is floor(o * in / out).
        ResizeKernel::Nearest => vec![((o * in_len) / out_len, 1.0)],
        ResizeKernel::Bilinear => {
            let s = source_coord(o, in_len, out_len);
            let x0 = s.floor();
            let t = s - x0;
            let x0 = x0 as isize;
            vec![(clamp(x0), 1.0 - t), (clamp(x0 + 1), t)]
        }
        ResizeKernel::Bicubic => {
            let s = source_coord(o, in_len, out_len);
            let x0 = s.floor() as isize;
            (-1..=2)
                .map(|k| {
                    let i = x0 + k;
                    (clamp(i), cubic_weight(s - i as f64))
                })
                .collect()
        }
    }
}

fn resize_plane(src: &LumaPlane, new_w: usize, new_h: usize, kernel: ResizeKernel) -> LumaPlane {
    let (w, h) = (src.width, src.height);
    let xt: Vec<_> = (0..new_w).map(|o| taps(o, w, new_w, kernel)).collect();
    let yt: Vec<_> = (0..new_h).map(|o| taps(o, h, new_h, kernel)).collect();

    let mut horiz = vec![0.0; new_w * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for (ox, t) in xt.iter().enumerate() {
            horiz[y * new_w + ox] = t.iter().map(|&(i, wt)| wt * row[i]).sum();
        }
    }
    let mut out = vec![0.0; new_w * new_h];
    for (oy, t) in yt.iter().enumerate() {
        for ox in 0..new_w {
            let v: f64 = t.iter().map(|&(i, wt)| wt * horiz[i * new_w + ox]).sum();
            out[oy * new_w + ox] = v.clamp(0.0, PEAK);
        }
    }
    LumaPlane::from_raw(new_w, new_h, out)
}

/// Types that [`resize`] accepts.
pub trait Resample: Sized {
    fn resample(&self, new_width: usize, new_height: usize, kernel: ResizeKernel) -> Self;
}

impl Resample for LumaPlane {
    fn resample(&self, new_width: usize, new_height: usize, kernel: ResizeKernel) -> Self {
        resize_plane(self, new_width, new_height, kernel)
    }
}

impl Resample for ImageBuffer {
    fn resample(&self, new_width: usize, new_height: usize, kernel: ResizeKernel) -> Self {
        let planes: Vec<_> = self
            .to_planes()
            .iter()
            .map(|p| resize_plane(p, new_width, new_height, kernel))
            .collect();
        ImageBuffer::from_planes(&planes).expect("resampled planes share dimensions")
    }
}

/// Resamples to `new_width`×`new_height`. Output samples are clamped to `[0, 255]`.
pub fn resize<T: Resample>(img: &T, new_width: usize, new_height: usize, kernel: ResizeKernel) -> Result<T> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::arg(format!(
            "resize target must be positive, got {new_width}x{new_height}"
        )));
    }
    Ok(img.resample(new_width, new_height, kernel))
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`), valid for any offset.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalised 1-D Gaussian weights for offsets `-radius..=radius`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Kernel radius used by [`gaussian_blur`]: `ceil(3σ)`.
pub fn blur_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Separable convolution with reflected borders; output has the input's size.
pub(crate) fn convolve_reflect(width: usize, height: usize, data: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                acc += wt * row[reflect(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                acc += wt * tmp[reflect(y as isize + k as isize - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur, radius `ceil(3σ)`, reflected borders.
pub fn gaussian_blur(img: &LumaPlane, sigma: f64) -> Result<LumaPlane> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::arg(format!("blur sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma, blur_radius(sigma));
    let out = convolve_reflect(img.width, img.height, &img.data, &kernel);
    Ok(LumaPlane::from_raw(img.width, img.height, out))
}

/// Gaussian blur with per-axis deviations rotated by `angle` radians.
///
/// Uses a dense 2-D kernel of radius `ceil(3·max(σx, σy))` and reflected borders.
pub fn gaussian_blur_anisotropic(img: &LumaPlane, sigma_x: f64, sigma_y: f64, angle: f64) -> Result<LumaPlane> {
    if !(sigma_x > 0.0 && sigma_y > 0.0) || !angle.is_finite() {
        return Err(Error::arg(format!(
            "anisotropic blur needs positive sigmas, got ({sigma_x}, {sigma_y})"
        )));
    }
    let radius = blur_radius(sigma_x.max(sigma_y)) as isize;
    let (s, c) = angle.sin_cos();
    // Inverse covariance of R diag(sx², sy²) Rᵀ.
    let (ix, iy) = (1.0 / (sigma_x * sigma_x), 1.0 / (sigma_y * sigma_y));
    let a = c * c * ix + s * s * iy;
    let b = c * s * (ix - iy);
    let d = s * s * ix + c * c * iy;
    let side = (2 * radius + 1) as usize;
    let mut kernel = Vec::with_capacity(side * side);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (x, y) = (dx as f64, dy as f64);
            kernel.push((-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y)).exp());
        }
    }
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);

    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut k = 0;
            for dy in -radius..=radius {
                let sy = reflect(y as isize + dy, h);
                for dx in -radius..=radius {
                    acc += kernel[k] * img.data[sy * w + reflect(x as isize + dx, w)];
                    k += 1;
                }
            }
            out[y * w + x] = acc.clamp(0.0, PEAK);
        }
    }
    Ok(LumaPlane::from_raw(w, h, out))
}

/// Adds i.i.d. zero-mean Gaussian noise and clamps to `[0, 255]`.
pub fn add_gaussian_noise<R: Rng + ?Sized>(img: &LumaPlane, sigma: f64, rng: &mut R) -> Result<LumaPlane> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::arg(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let data = img
        .data
        .iter()
        .map(|&v| (v + normal.sample(rng)).clamp(0.0, PEAK))
        .collect();
    Ok(LumaPlane::from_raw(img.width, img.height, data))
}
