//! Slice cropping: find the table rulings on a page and cut it into
//! full-height column strips.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{
    background_level, binarize_normalized, detect_polarity, normalize_polarity_as, BinaryImage,
    GrayImage, Polarity, ThresholdPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ReadingDirection {
    #[default]
    RightToLeft,
    LeftToRight,
}

/// How an empty slice header is recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeaderDetection {
    /// Ink fraction of the binarized header band.
    #[default]
    InkFraction,
    /// Ask the OCR adapter.
    Adapter,
}

/// Per-book layout parameters, loaded from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub reading_direction: ReadingDirection,
    /// Minimum ruling length as a fraction of the page dimension it runs along.
    pub min_ruling_length_frac: f64,
    /// Thickest band of line pixels still treated as a ruling.
    pub max_ruling_thickness: u32,
    /// Background gaps up to this length do not break a ruling run.
    pub max_ruling_gap: u32,
    /// Height of the header band as a fraction of the slice height.
    pub header_band_frac: f64,
    /// Columns narrower than this are margins, not slices.
    pub min_slice_width: u32,
    /// Ink fraction above which a header band counts as non-empty.
    pub ink_eps: f64,
    /// Minimum gap between the mean ink and mean paper levels of a header
    /// band; flatter bands are empty whatever their ink fraction.
    pub min_header_contrast: u8,
    pub header_detection: HeaderDetection,
    /// Recognitions below this confidence quarantine the slice.
    pub min_confidence: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            reading_direction: ReadingDirection::RightToLeft,
            min_ruling_length_frac: 0.6,
            max_ruling_thickness: 8,
            max_ruling_gap: 3,
            header_band_frac: 0.12,
            min_slice_width: 40,
            ink_eps: 0.005,
            min_header_contrast: 64,
            header_detection: HeaderDetection::InkFraction,
            min_confidence: 0.5,
            threshold: ThresholdPolicy::Otsu,
        }
    }
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(self.min_ruling_length_frac) {
            return Err(Error::InvalidParameter(format!(
                "min_ruling_length_frac must be in (0,1], got {}",
                self.min_ruling_length_frac
            )));
        }
        if !frac_ok(self.header_band_frac) {
            return Err(Error::InvalidParameter(format!(
                "header_band_frac must be in (0,1], got {}",
                self.header_band_frac
            )));
        }
        if !frac_ok(self.ink_eps) {
            return Err(Error::InvalidParameter(format!(
                "ink_eps must be in (0,1], got {}",
                self.ink_eps
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidParameter(format!(
                "min_confidence must be in [0,1], got {}",
                self.min_confidence
            )));
        }
        if self.max_ruling_thickness == 0 || self.min_slice_width == 0 {
            return Err(Error::InvalidParameter(
                "max_ruling_thickness and min_slice_width must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: LayoutSpec =
            serde_json::from_str(text).map_err(|e| Error::json("layout spec", e))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Header band height for a slice of the given height: `ceil(frac * h)`,
    /// at least 1 and at most `h`.
    pub fn header_rows(&self, height: u32) -> u32 {
        let rows = (self.header_band_frac * f64::from(height)).ceil() as u32;
        rows.clamp(1, height)
    }
}

/// Why a slice was set aside instead of being labelled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum Quarantine {
    /// No labelled slice precedes it in reading order.
    Unresolved,
    /// A header was detected but nothing usable was recognized.
    EmptyRecognition,
    /// Recognition confidence under the configured minimum.
    LowConfidence(String),
    /// The OCR adapter failed.
    OcrFailure(String),
}

/// A full-height column strip cut from a page.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub page_id: String,
    pub image: GrayImage,
    pub box_on_page: BBox,
    /// Position in reading order; `None` until [`order_slices`] runs.
    pub order_index: Option<u32>,
    pub label: Option<String>,
    /// Book-assigned category number read from the header, when present.
    pub category_number: Option<String>,
    pub quarantine: Option<Quarantine>,
}

impl Slice {
    pub fn new(page_id: impl Into<String>, image: GrayImage, box_on_page: BBox) -> Self {
        Self {
            page_id: page_id.into(),
            image,
            box_on_page,
            order_index: None,
            label: None,
            category_number: None,
            quarantine: None,
        }
    }

    /// The part of the slice below its header band, with `box_on_page`
    /// adjusted. `None` if the header band covers the whole slice.
    pub fn body(&self, spec: &LayoutSpec) -> Option<Slice> {
        let rows = spec.header_rows(self.image.height());
        let region = BBox::new(0, rows, self.image.width(), self.image.height()).ok()?;
        let image = self.image.crop(&region)?;
        let box_on_page = region.translate(self.box_on_page.x0(), self.box_on_page.y0());
        Some(Slice {
            image,
            box_on_page,
            ..self.clone()
        })
    }
}

/// Rulings found on a page, each as its tight box, sorted by position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rulings {
    pub vertical: Vec<BBox>,
    pub horizontal: Vec<BBox>,
}

/// Longest run of `true` in `line`, where background gaps of up to
/// `max_gap` do not break the run. Returns `(start, end)` (end exclusive).
fn longest_run(line: impl Iterator<Item = bool>, max_gap: u32) -> Option<(u32, u32)> {
    let mut best: Option<(u32, u32)> = None;
    let mut current: Option<(u32, u32)> = None;
    let mut gap = 0u32;
    for (i, on) in line.enumerate() {
        let i = i as u32;
        if on {
            current = match current {
                Some((s, _)) if gap <= max_gap => Some((s, i + 1)),
                _ => Some((i, i + 1)),
            };
            gap = 0;
        } else if current.is_some() {
            gap += 1;
            if gap > max_gap {
                best = longer(best, current.take());
            }
        }
    }
    longer(best, current)
}

fn longer(a: Option<(u32, u32)>, b: Option<(u32, u32)>) -> Option<(u32, u32)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.1 - y.0 > x.1 - x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Group consecutive qualifying lines into bands and keep thin ones.
/// `runs[i]` is the qualifying run of line `i`, if any.
fn bands(runs: &[Option<(u32, u32)>], max_thickness: u32) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < runs.len() {
        let Some(first) = runs[i] else {
            i += 1;
            continue;
        };
        let start = i;
        let (mut lo, mut hi) = first;
        while i < runs.len() {
            match runs[i] {
                Some((s, e)) => {
                    lo = lo.min(s);
                    hi = hi.max(e);
                    i += 1;
                }
                None => break,
            }
        }
        if (i - start) as u32 <= max_thickness {
            // (line start, line end, run start, run end)
            out.push((start as u32, i as u32, lo, hi));
        }
    }
    out
}

pub fn detect_rulings(bin: &BinaryImage, spec: &LayoutSpec) -> Rulings {
    let (w, h) = (bin.width(), bin.height());
    let qualifies = |run: Option<(u32, u32)>, extent: u32| {
        run.filter(|(s, e)| f64::from(e - s) >= spec.min_ruling_length_frac * f64::from(extent))
    };

    let columns: Vec<_> = (0..w)
        .map(|x| {
            let run = longest_run((0..h).map(|y| bin.get(x, y)), spec.max_ruling_gap);
            qualifies(run, h)
        })
        .collect();
    let rows: Vec<_> = (0..h)
        .map(|y| {
            let run = longest_run((0..w).map(|x| bin.get(x, y)), spec.max_ruling_gap);
            qualifies(run, w)
        })
        .collect();

    let vertical = bands(&columns, spec.max_ruling_thickness)
        .into_iter()
        .map(|(x0, x1, y0, y1)| BBox::new(x0, y0, x1, y1).expect("non-empty band"))
        .collect();
    let horizontal = bands(&rows, spec.max_ruling_thickness)
        .into_iter()
        .map(|(y0, y1, x0, x1)| BBox::new(x0, y0, x1, y1).expect("non-empty band"))
        .collect();
    Rulings {
        vertical,
        horizontal,
    }
}

/// Result of cutting one page.
#[derive(Debug, Clone)]
pub struct SliceCrop {
    pub slices: Vec<Slice>,
    pub rulings: Rulings,
    pub polarity: Polarity,
    /// Set when no column structure was found and the whole page became a
    /// single slice.
    pub fallback: bool,
}

/// Cut a page into full-height column strips between consecutive vertical
/// rulings.
///
/// Slice images come from the polarity-normalized page with all ruling
/// pixels set to background. Slices are returned left to right with no
/// `order_index`.
pub fn crop_slices(page_id: &str, page: &GrayImage, spec: &LayoutSpec) -> SliceCrop {
    let polarity = detect_polarity(page);
    let norm = normalize_polarity_as(page, polarity);
    let bin = binarize_normalized(&norm, spec.threshold);
    let rulings = detect_rulings(&bin, spec);

    let paper = background_level(&norm);
    let mut clean = norm;
    for r in rulings.vertical.iter().chain(&rulings.horizontal) {
        clean.fill_box(r, paper);
    }

    if rulings.vertical.len() < 2 {
        let bounds = clean.bounds();
        return SliceCrop {
            slices: vec![Slice::new(page_id, clean, bounds)],
            rulings,
            polarity,
            fallback: true,
        };
    }

    let slices = rulings
        .vertical
        .windows(2)
        .filter_map(|pair| {
            let (x0, x1) = (pair[0].x1(), pair[1].x0());
            if x1 <= x0 || x1 - x0 < spec.min_slice_width {
                return None;
            }
            let b = BBox::new(x0, 0, x1, clean.height()).ok()?;
            Some(Slice::new(page_id, clean.crop(&b)?, b))
        })
        .collect();

    SliceCrop {
        slices,
        rulings,
        polarity,
        fallback: false,
    }
}

/// Assign `order_index` in reading order.
pub fn order_slices(mut slices: Vec<Slice>, spec: &LayoutSpec) -> Vec<Slice> {
    match spec.reading_direction {
        ReadingDirection::RightToLeft => slices.sort_by(|a, b| {
            b.box_on_page
                .x0()
                .cmp(&a.box_on_page.x0())
                .then(a.box_on_page.y0().cmp(&b.box_on_page.y0()))
        }),
        ReadingDirection::LeftToRight => {
            slices.sort_by_key(|s| (s.box_on_page.x0(), s.box_on_page.y0()))
        }
    }
    for (i, s) in slices.iter_mut().enumerate() {
        s.order_index = Some(i as u32);
    }
    slices
}
