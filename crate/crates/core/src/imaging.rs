//! Rasters, binarization, polarity handling and connected-component boxes.
//!
//! Luminance is a single 8-bit channel where 0 is black. Foreground ("ink")
//! is always dark after polarity normalization: a pixel is foreground when
//! its normalized value is strictly below the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Luminance below this value counts as dark when deciding polarity.
pub const DARK_LEVEL: u8 = 128;

/// Fraction of dark pixels above which an image is treated as inverted.
pub const DARK_MAJORITY: f64 = 0.5;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(Error::ImageShape {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height).expect("image dimensions are positive")
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let i = self.index(x, y);
        self.pixels[i] = value;
    }

    /// Fill the part of `b` that lies inside the image.
    pub fn fill_box(&mut self, b: &BBox, value: u8) {
        let Some(b) = b.clamp_to(self.width, self.height) else {
            return;
        };
        for y in b.y0()..b.y1() {
            let start = self.index(b.x0(), y);
            self.pixels[start..start + b.width() as usize].fill(value);
        }
    }

    /// Copy out the region `b`, clamped to the image. `None` if the clamped
    /// region is empty.
    pub fn crop(&self, b: &BBox) -> Option<GrayImage> {
        let b = b.clamp_to(self.width, self.height)?;
        let mut pixels = Vec::with_capacity(b.area() as usize);
        for y in b.y0()..b.y1() {
            let start = self.index(b.x0(), y);
            pixels.extend_from_slice(&self.pixels[start..start + b.width() as usize]);
        }
        Some(GrayImage {
            width: b.width(),
            height: b.height(),
            pixels,
        })
    }

    pub fn inverted(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| 255 - p).collect(),
        }
    }

    /// Nearest-neighbour resample.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<GrayImage> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let sy = (u64::from(y) * u64::from(self.height) / u64::from(height)) as u32;
            for x in 0..width {
                let sx = (u64::from(x) * u64::from(self.width) / u64::from(width)) as u32;
                pixels.push(self.get(sx, sy));
            }
        }
        GrayImage::new(width, height, pixels)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    mask: Vec<bool>,
}

impl std::fmt::Debug for BinaryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryImage({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width as usize * height as usize {
            return Err(Error::ImageShape {
                width,
                height,
                len: mask.len(),
            });
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.mask[y as usize * self.width as usize + x as usize] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn ink_fraction(&self) -> f64 {
        self.count() as f64 / self.mask.len() as f64
    }

    pub fn crop(&self, b: &BBox) -> Option<BinaryImage> {
        let b = b.clamp_to(self.width, self.height)?;
        let mut mask = Vec::with_capacity(b.area() as usize);
        for y in b.y0()..b.y1() {
            let start = y as usize * self.width as usize + b.x0() as usize;
            mask.extend_from_slice(&self.mask[start..start + b.width() as usize]);
        }
        Some(BinaryImage {
            width: b.width(),
            height: b.height(),
            mask,
        })
    }

    /// Render as gray: foreground 0, background 255.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.mask.iter().map(|&m| if m { 0 } else { 255 }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    DarkOnLight,
    LightOnDark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    #[default]
    Otsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::InvalidParameter(format!(
                "connectivity must be 4 or 8, got {v}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

pub fn detect_polarity(img: &GrayImage) -> Polarity {
    let dark = img.pixels.iter().filter(|&&p| p < DARK_LEVEL).count();
    if dark as f64 / img.pixels.len() as f64 > DARK_MAJORITY {
        Polarity::LightOnDark
    } else {
        Polarity::DarkOnLight
    }
}

/// Bring an image to dark ink on a light background.
pub fn normalize_polarity(img: &GrayImage) -> GrayImage {
    normalize_polarity_as(img, detect_polarity(img))
}

/// Normalize using a polarity decided elsewhere (e.g. for a whole page).
pub fn normalize_polarity_as(img: &GrayImage, polarity: Polarity) -> GrayImage {
    match polarity {
        Polarity::DarkOnLight => img.clone(),
        Polarity::LightOnDark => img.inverted(),
    }
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &p in &img.pixels {
        hist[p as usize] += 1;
    }
    hist
}

/// Otsu threshold over a 256-bin histogram.
///
/// Returns `t` such that the foreground class is `p < t`. Candidates are
/// scored by between-class variance; among equal scores the lowest `t`
/// wins. A histogram with a single occupied bin yields 0 (no foreground).
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let n = total as f64;

    let mut best_t = 0u8;
    let mut best = 0.0f64;
    let mut n0 = 0u64;
    let mut s0 = 0.0f64;
    for t in 1..=255usize {
        n0 += hist[t - 1];
        s0 += (t - 1) as f64 * hist[t - 1] as f64;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // w0*w1*(mu0-mu1)^2 scaled by N^2: (S0*N - S*n0)^2 / (n0*n1)
        let d = s0 * n - sum * n0 as f64;
        let score = d * d / (n0 as f64 * n1 as f64);
        if score > best * (1.0 + 1e-12) && score > 0.0 {
            best = score;
            best_t = t as u8;
        }
    }
    best_t
}

/// Most frequent gray level; ties go to the lighter level.
pub fn background_level(img: &GrayImage) -> u8 {
    let hist = histogram(img);
    (0..=255u8)
        .rev()
        .max_by_key(|&v| hist[usize::from(v)])
        .expect("256 levels")
}

/// Threshold the polarity-normalized image. Foreground is `p < t`.
pub fn binarize(img: &GrayImage, policy: ThresholdPolicy) -> BinaryImage {
    let norm = normalize_polarity(img);
    binarize_normalized(&norm, policy)
}

/// Threshold an image already known to be dark-on-light.
pub fn binarize_normalized(img: &GrayImage, policy: ThresholdPolicy) -> BinaryImage {
    let t = match policy {
        ThresholdPolicy::Otsu => otsu_threshold(&histogram(img)),
        ThresholdPolicy::Fixed(t) => t,
    };
    BinaryImage {
        width: img.width,
        height: img.height,
        mask: img.pixels.iter().map(|&p| p < t).collect(),
    }
}

/// A labelled foreground component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    pub pixel_count: u64,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // label 0 is background
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass labelling. Returns the per-pixel label map (0 = background,
/// labels dense from 1) and the number of components.
pub fn label_components(bin: &BinaryImage, connectivity: Connectivity) -> (Vec<u32>, u32) {
    let (w, h) = (bin.width as usize, bin.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bin.mask[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[i - 1] != 0 {
                neighbours[n] = labels[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - w;
                if labels[up] != 0 {
                    neighbours[n] = labels[up];
                    n += 1;
                }
                if connectivity == Connectivity::Eight {
                    if x > 0 && labels[up - 1] != 0 {
                        neighbours[n] = labels[up - 1];
                        n += 1;
                    }
                    if x + 1 < w && labels[up + 1] != 0 {
                        neighbours[n] = labels[up + 1];
                        n += 1;
                    }
                }
            }
            labels[i] = if n == 0 {
                sets.make()
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    sets.union(first, other);
                }
                first
            };
        }
    }

    let mut dense = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count;
        }
        *l = dense[root];
    }
    (labels, count)
}

/// Tight boxes and pixel counts of each foreground component, sorted by
/// `(y0, x0, y1, x1)`.
pub fn components(bin: &BinaryImage, connectivity: Connectivity) -> Vec<Component> {
    let (labels, count) = label_components(bin, connectivity);
    let w = bin.width as usize;
    // (x0, y0, x1, y1, pixels)
    let mut acc = vec![(u32::MAX, u32::MAX, 0u32, 0u32, 0u64); count as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        let a = &mut acc[l as usize - 1];
        a.0 = a.0.min(x);
        a.1 = a.1.min(y);
        a.2 = a.2.max(x + 1);
        a.3 = a.3.max(y + 1);
        a.4 += 1;
    }
    let mut out: Vec<Component> = acc
        .into_iter()
        .map(|(x0, y0, x1, y1, n)| Component {
            bbox: BBox::new(x0, y0, x1, y1).expect("component has at least one pixel"),
            pixel_count: n,
        })
        .collect();
    out.sort_by_key(|c| (c.bbox.raster_key(), c.pixel_count));
    out
}

/// One tight box per connected foreground component, sorted by
/// `(y0, x0, y1, x1)`.
pub fn connected_components(bin: &BinaryImage, connectivity: Connectivity) -> Vec<BBox> {
    components(bin, connectivity)
        .into_iter()
        .map(|c| c.bbox)
        .collect()
}
