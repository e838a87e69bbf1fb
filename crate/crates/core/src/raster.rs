//! RGB rasters, class maps and the conversions between them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::legend::Legend;
use crate::nn::{Real, Tensor};

/// H×W×3 image, channel values in `[0, 1]`, stored row-major RGB-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pub meters_per_pixel: Option<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::structural(format!(
                "raster must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::structural(format!(
                "{width}x{height} raster needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::structural(format!(
                "raster value {} at index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            meters_per_pixel: None,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::structural(format!(
                "crop {width}x{height} at ({x0}, {y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self {
            width,
            height,
            data,
            meters_per_pixel: self.meters_per_pixel,
        })
    }

    /// `[1, 3, H, W]` tensor remapped linearly to `[-1, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let hw = self.width * self.height;
        Tensor::from_fn(&[1, 3, self.height, self.width], |i| {
            let (c, p) = (i / hw, i % hw);
            T::lit(self.data[p * 3 + c] as f64 * 2.0 - 1.0)
        })
    }

    /// Inverse of [`RasterImage::to_tensor`] for one sample of a batch,
    /// clamping to the valid range.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, sample: usize) -> Result<Self> {
        let [_, c, h, w] = t.dims4()?;
        if c != 3 {
            return Err(Error::structural(format!(
                "expected a 3-channel tensor, got {c} channels"
            )));
        }
        let s = t.sample(sample);
        let hw = h * w;
        let mut data = vec![0.0f32; hw * 3];
        for ch in 0..3 {
            for p in 0..hw {
                let v = (s[ch * hw + p].to_f64().unwrap_or(0.0) + 1.0) * 0.5;
                data[p * 3 + ch] = v.clamp(0.0, 1.0) as f32;
            }
        }
        Self::new(w, h, data)
    }

    /// Nearest-neighbour ×2 enlargement.
    pub fn upsample2x(&self) -> Self {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&self.pixel(x / 2, y / 2));
            }
        }
        Self {
            width: w,
            height: h,
            data,
            meters_per_pixel: self.meters_per_pixel.map(|m| m / 2.0),
        }
    }

    /// Box-filter reduction by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::structural(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = (factor * factor) as f64;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0f64; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c] as f64;
                        }
                    }
                }
                data.extend(acc.iter().map(|a| (a / norm) as f32));
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
            meters_per_pixel: self.meters_per_pixel.map(|m| m * factor as f64),
        })
    }
}

/// Grid of class ids tied to a [`Legend`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
    legend: Arc<Legend>,
}

impl ClassMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>, legend: Arc<Legend>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::structural(format!(
                "{width}x{height} class map needs {} cells, got {}",
                width * height,
                data.len()
            )));
        }
        let map = Self {
            width,
            height,
            data,
            legend,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn filled(width: usize, height: usize, class_id: u8, legend: Arc<Legend>) -> Result<Self> {
        Self::new(width, height, vec![class_id; width * height], legend)
    }

    /// Checks every cell against the legend, naming the first offender.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|&c| !self.legend.contains(c)) {
            return Err(Error::structural(format!(
                "unknown class id {} at (x={}, y={}) for legend `{}`",
                self.data[i],
                i % self.width.max(1),
                i / self.width.max(1),
                self.legend.name
            )));
        }
        Ok(())
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

    pub fn legend(&self) -> &Arc<Legend> {
        &self.legend
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Unchecked write; call [`ClassMap::validate`] after bulk edits.
    pub fn set(&mut self, x: usize, y: usize, class_id: u8) {
        self.data[y * self.width + x] = class_id;
    }

    pub fn map_classes(&self, f: impl Fn(usize, usize, u8) -> u8) -> Result<Self> {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &c)| f(i % self.width, i / self.width, c))
            .collect();
        Self::new(self.width, self.height, data, self.legend.clone())
    }
}

/// Renders each cell as its legend colour.
pub fn encode_classmap(map: &ClassMap) -> Result<RasterImage> {
    map.validate()?;
    let palette: Vec<[f32; 3]> = map
        .legend
        .entries
        .iter()
        .map(|e| e.rgb().map(|v| v as f32 / 255.0))
        .collect();
    let data = map
        .data
        .iter()
        .flat_map(|&c| palette[c as usize])
        .collect();
    RasterImage::new(map.width, map.height, data)
}

/// Assigns each pixel the legend entry nearest in RGB, lowest id on ties.
pub fn quantize_to_classes(img: &RasterImage, legend: &Arc<Legend>) -> Result<ClassMap> {
    if legend.is_empty() {
        return Err(Error::structural("cannot quantize against an empty legend"));
    }
    let palette: Vec<[f64; 3]> = legend
        .entries
        .iter()
        .map(|e| e.rgb().map(|v| v as f64))
        .collect();
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| nearest(&palette, [px[0], px[1], px[2]]))
        .collect();
    ClassMap::new(img.width, img.height, data, legend.clone())
}

fn nearest(palette: &[[f64; 3]], px: [f32; 3]) -> u8 {
    const TIE_EPS: f64 = 1e-6;
    let p = px.map(|v| v as f64 * 255.0);
    let mut best = (0u8, f64::INFINITY);
    for (i, c) in palette.iter().enumerate() {
        let d = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>();
        if d < best.1 - TIE_EPS {
            best = (i as u8, d);
        }
    }
    best.0
}

/// Fraction of cells in each legend class.
pub fn class_histogram(map: &ClassMap) -> Result<Vec<f64>> {
    if map.data.is_empty() {
        return Err(Error::structural("histogram of a zero-area class map"));
    }
    let mut counts = vec![0usize; map.legend.len()];
    for &c in &map.data {
        counts[c as usize] += 1;
    }
    let n = map.data.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}
