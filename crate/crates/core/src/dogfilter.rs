//! Difference-of-Gaussians preprocessing for the edge-aware side branch:
//! grayscale conversion, separable Gaussian blurs at increasing scales,
//! adjacent-scale difference maps, and the 4-channel input concatenation.

use crate::error::{Error, Result};
use std::path::Path;

/// Multi-channel raster, channel-major ([C][H][W] row-major), values in [0,1]
/// for photographic content (DoG maps are signed and stored separately).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "image {}x{}x{} needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                *out.at_mut(c, y as usize, x as usize) = px.0[c] as f64 / 255.0;
            }
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        match self.channels {
            1 => {
                let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let v = (self.at(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                        buf.put_pixel(x as u32, y as u32, image::Luma([v]));
                    }
                }
                buf.save(path)?;
            }
            3 => {
                let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let px = [
                            (self.at(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                            (self.at(1, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                            (self.at(2, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                        ];
                        buf.put_pixel(x as u32, y as u32, image::Rgb(px));
                    }
                }
                buf.save(path)?;
            }
            c => return Err(Error::shape(format!("cannot save {c}-channel image as PNG"))),
        }
        Ok(())
    }
}

/// Ordered blur scales for the difference maps.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GaussianScaleSpec {
    pub sigmas: Vec<f64>,
    /// Kernel radius = ceil(truncation * sigma).
    pub truncation: f64,
}

impl Default for GaussianScaleSpec {
    fn default() -> Self {
        GaussianScaleSpec {
            sigmas: vec![1.0, 1.6],
            truncation: 3.0,
        }
    }
}

impl GaussianScaleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.len() < 2 {
            return Err(Error::config("scale spec needs at least 2 sigmas"));
        }
        for w in self.sigmas.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::config("sigmas must be strictly increasing"));
            }
        }
        if self.sigmas[0] <= 0.0 {
            return Err(Error::config("sigmas must be positive"));
        }
        Ok(())
    }
}

/// Signed single-channel difference of two adjacent blur scales.
#[derive(Debug, Clone)]
pub struct DoGMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// (i, i+1) indices into the source scale spec.
    pub scale_pair: (usize, usize),
}

/// Rec. 601 luma, clamped to [0,1].
pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::shape(format!(
            "grayscale conversion expects 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.height * img.width;
    let mut out = Image::new(1, img.height, img.width);
    let (r, g, b) = (
        &img.data[..n],
        &img.data[n..2 * n],
        &img.data[2 * n..3 * n],
    );
    for i in 0..n {
        out.data[i] = (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Discrete 1-D Gaussian taps, renormalized to sum exactly 1.
pub fn gaussian_kernel_1d(sigma: f64, truncation: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::config(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (truncation * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    Ok(k)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // Mirror with edge repeated: -1 -> 0, n -> n-1.
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur of a single-channel image with reflected borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    gaussian_blur_trunc(img, sigma, 3.0)
}

pub fn gaussian_blur_trunc(img: &Image, sigma: f64, truncation: f64) -> Result<Image> {
    if img.channels != 1 {
        return Err(Error::shape("gaussian_blur expects a single-channel image"));
    }
    let k = gaussian_kernel_1d(sigma, truncation)?;
    // A normalized kernel maps a constant image to itself; realize that
    // identity exactly instead of accumulating rounding in the taps.
    if img.data.windows(2).all(|w| w[0] == w[1]) {
        return Ok(img.clone());
    }
    let radius = (k.len() / 2) as isize;
    let (h, w) = (img.height, img.width);
    // Horizontal pass.
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let xi = reflect(x as isize + j as isize - radius, w);
                acc += kv * img.data[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = Image::new(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let yi = reflect(y as isize + j as isize - radius, h);
                acc += kv * tmp[yi * w + x];
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Difference map between adjacent blur scales: blur(sigma[i+1]) - blur(sigma[i]).
pub fn dog_map(img: &Image, spec: &GaussianScaleSpec, pair_index: usize) -> Result<DoGMap> {
    spec.validate()?;
    if pair_index + 1 >= spec.sigmas.len() {
        return Err(Error::config(format!(
            "pair index {} out of range for {} scales",
            pair_index,
            spec.sigmas.len()
        )));
    }
    let lo = gaussian_blur_trunc(img, spec.sigmas[pair_index], spec.truncation)?;
    let hi = gaussian_blur_trunc(img, spec.sigmas[pair_index + 1], spec.truncation)?;
    let data: Vec<f64> = hi
        .data
        .iter()
        .zip(lo.data.iter())
        .map(|(&a, &b)| a - b)
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("non-finite value in difference map"));
    }
    Ok(DoGMap {
        height: img.height,
        width: img.width,
        data,
        scale_pair: (pair_index, pair_index + 1),
    })
}

/// Min-max rescale of a signed map into [0,1]; a constant map lands on 0.5.
pub fn rescale_unit(data: &[f64]) -> Vec<f64> {
    let mut mn = f64::INFINITY;
    let mut mx = f64::NEG_INFINITY;
    for &v in data {
        mn = mn.min(v);
        mx = mx.max(v);
    }
    if mx - mn <= 0.0 {
        return vec![0.5; data.len()];
    }
    let inv = 1.0 / (mx - mn);
    data.iter().map(|&v| (v - mn) * inv).collect()
}

/// Stack [R, G, B, rescaled difference map] into the side branch input.
pub fn concat_branch3_input(img: &Image, dog: &DoGMap) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::shape("branch input concat expects an RGB image"));
    }
    if img.height != dog.height || img.width != dog.width {
        return Err(Error::shape(format!(
            "image {}x{} vs map {}x{}",
            img.height, img.width, dog.height, dog.width
        )));
    }
    let mut out = Image::new(4, img.height, img.width);
    let n = img.height * img.width;
    out.data[..3 * n].copy_from_slice(&img.data);
    out.data[3 * n..].copy_from_slice(&rescale_unit(&dog.data));
    Ok(out)
}

/// Full side-branch preprocessing: gray, first adjacent difference map,
/// concatenation with the original image.
pub fn branch3_input(img: &Image, spec: &GaussianScaleSpec) -> Result<Image> {
    let gray = to_grayscale(img)?;
    let dog = dog_map(&gray, spec, 0)?;
    concat_branch3_input(img, &dog)
}

/// 8-bit preview of a difference map (min-max rescaled; constant maps render
/// mid-gray).
pub fn dog_preview(dog: &DoGMap) -> Image {
    Image {
        channels: 1,
        height: dog.height,
        width: dog.width,
        data: rescale_unit(&dog.data),
    }
}
