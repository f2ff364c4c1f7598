//! Slice grouping: read each slice header, decide whether it is empty, and
//! propagate category labels along the reading order.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Condvar, Mutex};

use unicode_segmentation::UnicodeSegmentation;

use crate::catalog::{unify_category, ConversionTable};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{
    binarize_normalized, components, histogram, otsu_threshold, BinaryImage, Connectivity,
    GrayImage, ThresholdPolicy,
};
use crate::layout::{HeaderDetection, LayoutSpec, Quarantine, Slice};

#[derive(Debug, Clone, PartialEq)]
pub struct OcrResult {
    /// Recognized text; empty when nothing was found.
    pub text: String,
    /// Confidence in `[0, 1]`.
    pub confidence: f64,
}

impl OcrResult {
    pub fn empty() -> Self {
        Self {
            text: String::new(),
            confidence: 0.0,
        }
    }
}

/// Text detection and recognition on a header band.
///
/// Implementations must return identical results for identical pixels.
pub trait OcrAdapter: Send + Sync {
    /// Is any text present?
    fn detect(&self, image: &GrayImage) -> Result<bool>;

    /// Only called after `detect` returned true.
    fn recognize(&self, image: &GrayImage) -> Result<OcrResult>;

    /// Short description recorded in run metadata.
    fn describe(&self) -> String;
}

/// Top band of a slice: `ceil(header_band_frac * height)` rows, at least one.
pub fn crop_header(slice: &Slice, spec: &LayoutSpec) -> GrayImage {
    let rows = spec.header_rows(slice.image.height());
    let band = BBox::new(0, 0, slice.image.width(), rows).expect("band has positive size");
    slice.image.crop(&band).expect("band lies inside the slice")
}

/// True iff the band has ink and paper levels at least `min_contrast`
/// apart and the ink fraction under the Otsu threshold exceeds `ink_eps`.
pub fn detect_header(band: &GrayImage, ink_eps: f64, min_contrast: u8) -> bool {
    let hist = histogram(band);
    let t = usize::from(otsu_threshold(&hist));
    let mean = |range: std::ops::Range<usize>| {
        let n: u64 = hist[range.clone()].iter().sum();
        let s: u64 = range.map(|v| v as u64 * hist[v]).sum();
        (n > 0).then(|| (s as f64 / n as f64, n))
    };
    let (Some((ink, n_ink)), Some((paper, _))) = (mean(0..t), mean(t..256)) else {
        return false;
    };
    if paper - ink < f64::from(min_contrast) {
        return false;
    }
    n_ink as f64 / (band.width() as f64 * band.height() as f64) > ink_eps
}

/// Split recognized header text into `(label, category_number)`.
///
/// The category number is the first run of ASCII digits. The label is the
/// first grapheme cluster left after removing ASCII digits, ASCII
/// punctuation and whitespace.
pub fn parse_header_text(text: &str) -> Option<(String, Option<String>)> {
    let number: String = text
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let rest: String = text
        .chars()
        .filter(|c| !c.is_ascii_digit() && !c.is_ascii_punctuation() && !c.is_whitespace())
        .collect();
    let label = rest.graphemes(true).next()?.to_string();
    Some((label, (!number.is_empty()).then_some(number)))
}

/// Outcome of reading one slice header.
#[derive(Debug, Clone, PartialEq)]
pub enum HeaderReading {
    Empty,
    Label {
        label: String,
        category_number: Option<String>,
        confidence: f64,
    },
    Rejected(Quarantine),
}

pub fn read_header(
    slice: &Slice,
    ocr: &dyn OcrAdapter,
    spec: &LayoutSpec,
    table: &ConversionTable,
) -> HeaderReading {
    let band = crop_header(slice, spec);
    let present = match spec.header_detection {
        HeaderDetection::InkFraction => {
            Ok(detect_header(&band, spec.ink_eps, spec.min_header_contrast))
        }
        HeaderDetection::Adapter => ocr.detect(&band),
    };
    match present {
        Ok(false) => return HeaderReading::Empty,
        Ok(true) => {}
        Err(e) => return HeaderReading::Rejected(Quarantine::OcrFailure(e.to_string())),
    }
    let result = match ocr.recognize(&band) {
        Ok(r) => r,
        Err(e) => return HeaderReading::Rejected(Quarantine::OcrFailure(e.to_string())),
    };
    let Some((label, category_number)) = parse_header_text(&result.text) else {
        return HeaderReading::Rejected(Quarantine::EmptyRecognition);
    };
    if result.confidence < spec.min_confidence {
        return HeaderReading::Rejected(Quarantine::LowConfidence(format!(
            "{label} at {:.3}",
            result.confidence
        )));
    }
    HeaderReading::Label {
        label: unify_category(&label, table),
        category_number,
        confidence: result.confidence,
    }
}

/// Apply header readings in reading order.
///
/// A labelled header starts a run; empty headers inherit the running label.
/// Slices with no label to inherit are quarantined as unresolved, and so are
/// empty-header slices following a rejected header. `carry` seeds the running
/// label (e.g. from the previous page). Returns the labelled slices and the
/// running label at the end.
pub fn propagate_labels(
    slices: Vec<Slice>,
    readings: Vec<HeaderReading>,
    carry: Option<String>,
) -> (Vec<Slice>, Option<String>) {
    assert_eq!(slices.len(), readings.len(), "one reading per slice");
    let mut current = carry;
    let mut current_number: Option<String> = None;
    let out = slices
        .into_iter()
        .zip(readings)
        .map(|(mut s, reading)| {
            match reading {
                HeaderReading::Label {
                    label,
                    category_number,
                    ..
                } => {
                    current = Some(label);
                    current_number = category_number;
                    s.label = current.clone();
                    s.category_number = current_number.clone();
                }
                HeaderReading::Empty => match &current {
                    Some(label) => {
                        s.label = Some(label.clone());
                        s.category_number = current_number.clone();
                    }
                    None => s.quarantine = Some(Quarantine::Unresolved),
                },
                HeaderReading::Rejected(reason) => {
                    current = None;
                    current_number = None;
                    s.quarantine = Some(reason);
                }
            }
            s
        })
        .collect();
    (out, current)
}

/// Label slices already sorted in reading order.
pub fn assign_labels(
    slices: Vec<Slice>,
    ocr: &dyn OcrAdapter,
    spec: &LayoutSpec,
    table: &ConversionTable,
) -> Vec<Slice> {
    let readings = slices
        .iter()
        .map(|s| read_header(s, ocr, spec, table))
        .collect();
    propagate_labels(slices, readings, None).0
}

/// Side length of the normalized glyph raster used for matching.
pub const TEMPLATE_SIZE: u32 = 32;

/// Components smaller than this many pixels are ignored as specks.
pub const SPECK_PIXELS: u64 = 6;

/// Closed-vocabulary recognizer: nearest template by Hamming distance over
/// a 32x32 binarized, tight-cropped raster.
#[derive(Debug, Clone)]
pub struct TemplateMatcher {
    templates: Vec<(String, Vec<bool>)>,
}

impl TemplateMatcher {
    /// Templates are sorted by label; ties go to the first label.
    pub fn new(templates: impl IntoIterator<Item = (String, GrayImage)>) -> Result<Self> {
        let mut out = Vec::new();
        for (label, img) in templates {
            let raster = Self::normalize(&img).ok_or_else(|| {
                Error::InvalidParameter(format!("template {label:?} contains no ink"))
            })?;
            out.push((label, raster));
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("no templates given".into()));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { templates: out })
    }

    /// Load every `*.png` in `dir`; the file stem is the label.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        entries.sort();
        let mut templates = Vec::new();
        for p in entries {
            let label = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::InvalidParameter(format!("bad template name {p:?}")))?
                .to_string();
            templates.push((label, crate::io::load_gray(&p)?));
        }
        Self::new(templates)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|(l, _)| l.as_str())
    }

    /// Binarize, drop specks, tight-crop, resize to 32x32. The image must
    /// already be dark-on-light: tight glyph crops are often mostly ink.
    pub fn normalize(img: &GrayImage) -> Option<Vec<bool>> {
        let bin = binarize_normalized(img, ThresholdPolicy::Otsu);
        let hull = components(&bin, Connectivity::Eight)
            .into_iter()
            .filter(|c| c.pixel_count >= SPECK_PIXELS)
            .map(|c| c.bbox)
            .reduce(|a, b| a.hull(&b))?;
        let crop: BinaryImage = bin.crop(&hull)?;
        let scaled = crop
            .to_gray()
            .resize_nearest(TEMPLATE_SIZE, TEMPLATE_SIZE)
            .ok()?;
        Some(scaled.pixels().iter().map(|&p| p == 0).collect())
    }
}

impl OcrAdapter for TemplateMatcher {
    fn detect(&self, image: &GrayImage) -> Result<bool> {
        Ok(Self::normalize(image).is_some())
    }

    fn recognize(&self, image: &GrayImage) -> Result<OcrResult> {
        let Some(raster) = Self::normalize(image) else {
            return Ok(OcrResult::empty());
        };
        let (label, dist) = self
            .templates
            .iter()
            .map(|(label, t)| {
                let d = t.iter().zip(&raster).filter(|(a, b)| a != b).count();
                (label, d)
            })
            .min_by_key(|&(_, d)| d)
            .expect("at least one template");
        Ok(OcrResult {
            text: label.clone(),
            confidence: 1.0 - dist as f64 / raster.len() as f64,
        })
    }

    fn describe(&self) -> String {
        format!("template({} glyphs)", self.templates.len())
    }
}

/// Counting semaphore bounding concurrent child processes.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Runs an external OCR command on each header band.
///
/// The band is written to a temporary PNG and the command is spawned as
/// `command... <absolute-png-path>`. Standard output line 1 is the text
/// (may be empty), optional line 2 the confidence in `[0, 1]` (default 1).
/// A nonzero exit status is a failure.
#[derive(Debug)]
pub struct ExternalProcess {
    command: Vec<String>,
    slots: Slots,
}

impl ExternalProcess {
    pub fn new(command: Vec<String>, max_concurrent: usize) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidParameter("empty OCR command".into()));
        }
        Ok(Self {
            command,
            slots: Slots {
                free: Mutex::new(max_concurrent.max(1)),
                cv: Condvar::new(),
            },
        })
    }

    pub fn parse_output(stdout: &str) -> Result<OcrResult> {
        let mut lines = stdout.lines();
        let text = lines
            .next()
            .unwrap_or("")
            .trim_end_matches('\r')
            .to_string();
        let confidence = match lines.next().map(str::trim) {
            None | Some("") => 1.0,
            Some(c) => {
                let v: f64 = c
                    .parse()
                    .map_err(|_| Error::Ocr(format!("bad confidence {c:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Ocr(format!("confidence {v} outside [0,1]")));
                }
                v
            }
        };
        Ok(OcrResult { text, confidence })
    }

    fn run(&self, image: &GrayImage) -> Result<OcrResult> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("header.png");
        crate::io::save_gray(&path, image)?;
        let path = std::fs::canonicalize(&path)?;
        let output = {
            let _slot = self.slots.acquire();
            Command::new(&self.command[0])
                .args(&self.command[1..])
                .arg(&path)
                .output()
                .map_err(|e| Error::Ocr(format!("cannot run {:?}: {e}", self.command[0])))?
        };
        if !output.status.success() {
            return Err(Error::Ocr(format!(
                "{:?} exited with {}",
                self.command[0], output.status
            )));
        }
        let stdout = String::from_utf8(output.stdout)
            .map_err(|_| Error::Ocr("output is not UTF-8".into()))?;
        Self::parse_output(&stdout)
    }
}

impl OcrAdapter for ExternalProcess {
    fn detect(&self, image: &GrayImage) -> Result<bool> {
        Ok(!self.run(image)?.text.trim().is_empty())
    }

    fn recognize(&self, image: &GrayImage) -> Result<OcrResult> {
        self.run(image)
    }

    fn describe(&self) -> String {
        format!("external({})", self.command.join(" "))
    }
}
