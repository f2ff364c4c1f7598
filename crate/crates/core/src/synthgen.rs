//! Synthetic tabular dictionary pages with known ground truth, and the
//! detection scorer used to compare pipeline output against them.
//!
//! A page is a ruled table of full-height columns. Each column may carry a
//! header glyph drawn from a template set, followed by a stack of glyphs.
//! A glyph is 2-4 filled polyomino blobs stacked with small vertical gaps,
//! each blob large enough to survive area filtering, with small caption
//! marks printed beneath it. Glyph heights stay under `tau` and gaps between
//! glyphs exceed it, so a correct extractor recovers every glyph exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{GrayImage, Polarity};
use crate::layout::ReadingDirection;

/// Characters used as template labels by default.
pub const DEFAULT_LABELS: &str = "甲乙丙丁戊己庚辛壬癸子丑寅卯辰巳午未申酉戌亥日月";

/// Cells per side of a template polyomino.
const TEMPLATE_CELLS: u32 = 8;
/// Template raster side in pixels.
const TEMPLATE_PIXELS: u32 = 32;
/// Minimum Hamming distance between any two template rasters.
const TEMPLATE_MIN_DISTANCE: usize = 150;
/// Horizontal padding inside a column.
const COLUMN_PAD: u32 = 10;
/// Gap between a glyph and its caption marks.
const CAPTION_GAP: u32 = 8;
const CAPTION_HEIGHT: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageSpec {
    pub columns: u32,
    pub column_width: u32,
    pub page_height: u32,
    pub margin: u32,
    pub ruling_thickness: u32,
    /// Inclusive ranges `[min, max]`.
    pub glyphs_per_column: [u32; 2],
    pub glyph_width: [u32; 2],
    pub glyph_height: [u32; 2],
    pub blobs_per_glyph: [u32; 2],
    pub blob_gap: [u32; 2],
    pub inter_glyph_gap: [u32; 2],
    pub captions: bool,
    pub labels: Vec<String>,
    /// Header presence per column in reading order; missing entries fall
    /// back to `header_probability`. The first column always has a header.
    pub header_pattern: Vec<bool>,
    pub header_probability: f64,
    /// Salt-and-pepper rate in `[0, 1]`.
    pub noise: f64,
    pub polarity: Polarity,
    pub reading_direction: ReadingDirection,
    pub seed: u64,
    pub template_seed: u64,
    pub template_scale: u32,
    pub ink: u8,
    pub paper: u8,
    pub tau: u32,
    pub min_area: u64,
    pub header_band_frac: f64,
}

impl Default for PageSpec {
    fn default() -> Self {
        Self {
            columns: 4,
            column_width: 200,
            page_height: 2400,
            margin: 40,
            ruling_thickness: 2,
            glyphs_per_column: [2, 6],
            glyph_width: [110, 170],
            glyph_height: [70, 140],
            blobs_per_glyph: [2, 4],
            blob_gap: [6, 14],
            inter_glyph_gap: [175, 200],
            captions: true,
            labels: DEFAULT_LABELS.chars().map(String::from).collect(),
            header_pattern: Vec::new(),
            header_probability: 0.6,
            noise: 0.0,
            polarity: Polarity::DarkOnLight,
            reading_direction: ReadingDirection::RightToLeft,
            seed: 0,
            template_seed: 0,
            template_scale: 2,
            ink: 30,
            paper: 235,
            tau: 150,
            min_area: 2000,
            header_band_frac: 0.12,
        }
    }
}

impl PageSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("page spec", e))
    }

    pub fn page_width(&self) -> u32 {
        2 * self.margin + self.table_width()
    }

    fn table_width(&self) -> u32 {
        self.columns * (self.column_width + self.ruling_thickness) + self.ruling_thickness
    }

    fn header_rows(&self) -> u32 {
        ((self.header_band_frac * f64::from(self.page_height)).ceil() as u32)
            .clamp(1, self.page_height)
    }

    /// Left edge of the interior of column `k` (left to right).
    fn column_x(&self, k: u32) -> u32 {
        self.margin + k * (self.column_width + self.ruling_thickness) + self.ruling_thickness
    }

    fn body_top(&self) -> u32 {
        self.header_rows()
    }

    fn body_bottom(&self) -> u32 {
        self.page_height - self.margin - self.ruling_thickness - COLUMN_PAD
    }

    /// Smallest blob height for a blob of the given width.
    fn min_blob_height(&self, width: u32) -> u32 {
        // 5% headroom over the area threshold
        let need = (self.min_area as f64 * 1.05 / f64::from(width)).ceil() as u32;
        need.max(8)
    }

    fn min_blob_width(&self, glyph_width: u32) -> u32 {
        (glyph_width * 3).div_ceil(4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InfeasibleSpec(m));
        let range_ok = |r: [u32; 2]| r[0] <= r[1];
        for (name, r) in [
            ("glyphs_per_column", self.glyphs_per_column),
            ("glyph_width", self.glyph_width),
            ("glyph_height", self.glyph_height),
            ("blobs_per_glyph", self.blobs_per_glyph),
            ("blob_gap", self.blob_gap),
            ("inter_glyph_gap", self.inter_glyph_gap),
        ] {
            if !range_ok(r) {
                return fail(format!("{name} range {r:?} is empty"));
            }
        }
        if self.columns == 0 {
            return fail("at least one column is required".into());
        }
        if self.labels.is_empty() {
            return fail("no header labels".into());
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.header_probability) {
            return fail("noise and header_probability must lie in [0,1]".into());
        }
        if self.ruling_thickness == 0 || self.template_scale == 0 {
            return fail("ruling_thickness and template_scale must be positive".into());
        }
        if self.ink >= self.paper {
            return fail("ink must be darker than paper".into());
        }
        if self.glyph_width[1] + 2 * COLUMN_PAD > self.column_width {
            return fail(format!(
                "glyphs up to {} px wide do not fit a {} px column",
                self.glyph_width[1], self.column_width
            ));
        }
        let header_px = TEMPLATE_PIXELS * self.template_scale;
        if header_px + 2 * COLUMN_PAD > self.column_width {
            return fail("header glyph wider than the column".into());
        }
        if self.glyph_height[1] >= self.tau {
            return fail(format!(
                "glyph height {} must stay below tau {}",
                self.glyph_height[1], self.tau
            ));
        }
        if self.inter_glyph_gap[0] <= self.tau {
            return fail(format!(
                "inter-glyph gap {} must exceed tau {}",
                self.inter_glyph_gap[0], self.tau
            ));
        }
        if self.blob_gap[0] < 2 || self.blob_gap[1] >= self.tau {
            return fail("blob gaps must be at least 2 px and below tau".into());
        }
        if self.blobs_per_glyph[0] < 2 {
            return fail("glyphs need at least two blobs".into());
        }
        if self.glyphs_per_column[0] == 0 {
            return fail("columns need at least one glyph".into());
        }
        // two of the narrowest blobs must fit the tallest allowed glyph
        let narrow = self.min_blob_width(self.glyph_width[0]);
        let pair = 2 * self.min_blob_height(narrow) + self.blob_gap[0];
        if pair > self.glyph_height[1] {
            return fail(format!(
                "two blobs of area >= {} need {pair} px, above glyph height {}",
                self.min_area, self.glyph_height[1]
            ));
        }
        if self.page_height < 2 * self.margin + 4 * self.ruling_thickness
            || f64::from(self.page_height - 2 * self.margin) < 0.7 * f64::from(self.page_height)
        {
            return fail("margins too large for detectable vertical rulings".into());
        }
        if f64::from(self.table_width()) < 0.7 * f64::from(self.page_width()) {
            return fail("margins too large for detectable horizontal rulings".into());
        }
        let header_bottom = self.margin + self.ruling_thickness + 14 + header_px;
        if header_bottom + 14 + self.ruling_thickness + 12 > self.header_rows() {
            return fail("header glyph does not fit the header band".into());
        }
        let worst = 20
            + self.glyphs_per_column[1] * self.glyph_height[1]
            + (self.glyphs_per_column[1] - 1) * self.inter_glyph_gap[1]
            + CAPTION_GAP
            + CAPTION_HEIGHT;
        let available = self.body_bottom().saturating_sub(self.body_top());
        if worst > available {
            return fail(format!(
                "{} glyphs need up to {worst} px but the column body has {available}",
                self.glyphs_per_column[1]
            ));
        }
        Ok(())
    }
}

/// Spec of page `index` in a corpus built from `base`: seed `base.seed +
/// index`, and when `columns` is given, a column count cycling through the
/// inclusive range.
pub fn corpus_page_spec(base: &PageSpec, index: u64, columns: Option<[u32; 2]>) -> PageSpec {
    let seed = base.seed + index;
    let mut spec = base.clone();
    spec.seed = seed;
    if let Some([lo, hi]) = columns {
        let span = u64::from(hi.saturating_sub(lo)) + 1;
        spec.columns = lo + (seed % span) as u32;
    }
    spec
}

/// File name used for page `index` of a corpus.
pub fn corpus_page_name(index: u64) -> String {
    format!("page_{index:04}.png")
}

/// A header template: label plus its 32x32 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphTemplate {
    pub label: String,
    cells: Vec<bool>,
}

impl GlyphTemplate {
    /// Render at `cell` pixels per polyomino cell.
    pub fn render(&self, cell: u32, ink: u8, paper: u8) -> GrayImage {
        let side = TEMPLATE_CELLS * cell;
        let mut img = GrayImage::filled(side, side, paper).expect("positive size");
        self.draw(&mut img, 0, 0, cell, ink);
        img
    }

    fn draw(&self, img: &mut GrayImage, x: u32, y: u32, cell: u32, ink: u8) {
        for cy in 0..TEMPLATE_CELLS {
            for cx in 0..TEMPLATE_CELLS {
                if self.cells[(cy * TEMPLATE_CELLS + cx) as usize] {
                    let b = BBox::from_origin_size(x + cx * cell, y + cy * cell, cell, cell)
                        .expect("positive cell");
                    img.fill_box(&b, ink);
                }
            }
        }
    }

    /// The 32x32 template image written to template directories.
    pub fn image(&self, ink: u8, paper: u8) -> GrayImage {
        self.render(TEMPLATE_PIXELS / TEMPLATE_CELLS, ink, paper)
    }
}

/// Connected polyomino on a `cols x rows` grid that spans every row and
/// column: a full middle row and column, grown by random 4-neighbours up
/// to the target fill.
fn polyomino(rng: &mut ChaCha8Rng, cols: u32, rows: u32, fill: f64) -> Vec<bool> {
    let (c, r) = (cols as usize, rows as usize);
    let mut cells = vec![false; c * r];
    let (mid_r, mid_c) = (rng.gen_range(0..r), rng.gen_range(0..c));
    for x in 0..c {
        cells[mid_r * c + x] = true;
    }
    for y in 0..r {
        cells[y * c + mid_c] = true;
    }
    let target = ((c * r) as f64 * fill).round() as usize;
    let mut count = cells.iter().filter(|&&v| v).count();
    while count < target {
        let frontier: Vec<usize> = (0..c * r)
            .filter(|&i| {
                let (x, y) = (i % c, i / c);
                !cells[i]
                    && ((x > 0 && cells[i - 1])
                        || (x + 1 < c && cells[i + 1])
                        || (y > 0 && cells[i - c])
                        || (y + 1 < r && cells[i + c]))
            })
            .collect();
        if frontier.is_empty() {
            break;
        }
        cells[frontier[rng.gen_range(0..frontier.len())]] = true;
        count += 1;
    }
    cells
}

/// Deterministic, pairwise-distinct templates for `labels`.
pub fn template_set(labels: &[String], seed: u64) -> Vec<GlyphTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_6d70_6c61_7465);
    let mut out: Vec<GlyphTemplate> = Vec::with_capacity(labels.len());
    for label in labels {
        let cells = loop {
            let fill = rng.gen_range(0.45..0.65);
            let cand = polyomino(&mut rng, TEMPLATE_CELLS, TEMPLATE_CELLS, fill);
            let far = out.iter().all(|t| {
                // cell mismatches scaled to 32x32 pixel mismatches
                let d = t.cells.iter().zip(&cand).filter(|(a, b)| a != b).count();
                d * 16 >= TEMPLATE_MIN_DISTANCE
            });
            if far {
                break cand;
            }
        };
        out.push(GlyphTemplate {
            label: label.clone(),
            cells,
        });
    }
    out
}

/// A planted glyph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueGlyph {
    pub bbox: BBox,
    pub category: String,
    /// Reading-order index of the slice it sits in.
    pub slice_index: u32,
    /// Top-to-bottom rank within the slice.
    pub rank: u32,
}

/// Ground truth for one page. Slices are listed in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub page: String,
    pub width: u32,
    pub height: u32,
    pub polarity: Polarity,
    pub seed: u64,
    pub slices: Vec<BBox>,
    pub header_present: Vec<bool>,
    pub labels: Vec<String>,
    pub glyphs: Vec<TrueGlyph>,
}

#[derive(Debug, Clone)]
pub struct GroundTruthPage {
    pub image: GrayImage,
    pub truth: GroundTruth,
}

struct Canvas {
    img: GrayImage,
}

impl Canvas {
    fn rect(&mut self, b: BBox, ink: u8) {
        self.img.fill_box(&b, ink);
    }
}

/// Render one page. Deterministic in `spec` (including `seed`).
pub fn render_page(spec: &PageSpec, page: &str) -> Result<GroundTruthPage> {
    spec.validate()?;
    let templates = template_set(&spec.labels, spec.template_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.page_width(), spec.page_height);
    let mut canvas = Canvas {
        img: GrayImage::filled(w, h, spec.paper)?,
    };
    let t = spec.ruling_thickness;
    let ink = spec.ink;

    // rulings
    let (top, bottom) = (spec.margin, h - spec.margin);
    for k in 0..=spec.columns {
        let x = spec.margin + k * (spec.column_width + t);
        canvas.rect(BBox::new(x, top, x + t, bottom)?, ink);
    }
    let (left, right) = (spec.margin, spec.margin + spec.table_width());
    let header_sep = spec.header_rows() - 12 - t;
    for y in [top, header_sep, bottom - t] {
        canvas.rect(BBox::new(left, y, right, y + t)?, ink);
    }

    // columns in reading order
    let mut order: Vec<u32> = (0..spec.columns).collect();
    if spec.reading_direction == ReadingDirection::RightToLeft {
        order.reverse();
    }

    let mut slices = Vec::new();
    let mut header_present = Vec::new();
    let mut labels = Vec::new();
    let mut glyphs = Vec::new();
    let mut current: Option<usize> = None;
    let cell = TEMPLATE_PIXELS / TEMPLATE_CELLS * spec.template_scale;

    for (reading_idx, &col) in order.iter().enumerate() {
        let x0 = spec.column_x(col);
        slices.push(BBox::new(x0, 0, x0 + spec.column_width, h)?);

        let has_header = reading_idx == 0
            || spec
                .header_pattern
                .get(reading_idx)
                .copied()
                .unwrap_or_else(|| rng.gen_bool(spec.header_probability));
        if has_header {
            let pick = loop {
                let i = rng.gen_range(0..templates.len());
                if templates.len() == 1 || Some(i) != current {
                    break i;
                }
            };
            current = Some(pick);
            let side = TEMPLATE_CELLS * cell;
            let hx = x0 + (spec.column_width - side) / 2;
            let hy = spec.margin + t + 14;
            templates[pick].draw(&mut canvas.img, hx, hy, cell, ink);
        }
        header_present.push(has_header);
        let label = templates[current.expect("first column has a header")]
            .label
            .clone();
        labels.push(label.clone());

        let n = rng.gen_range(spec.glyphs_per_column[0]..=spec.glyphs_per_column[1]);
        let mut y = spec.body_top() + rng.gen_range(10..=20);
        for rank in 0..n {
            let bbox = draw_glyph(&mut canvas, &mut rng, spec, x0, y)?;
            if spec.captions {
                draw_caption(&mut canvas, &mut rng, spec, bbox);
            }
            glyphs.push(TrueGlyph {
                bbox,
                category: label.clone(),
                slice_index: reading_idx as u32,
                rank,
            });
            y = bbox.y1() + rng.gen_range(spec.inter_glyph_gap[0]..=spec.inter_glyph_gap[1]);
        }
    }

    let mut img = canvas.img;
    if spec.polarity == Polarity::LightOnDark {
        img = img.inverted();
    }
    if spec.noise > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f_6973_6500_0000);
        for y in 0..h {
            for x in 0..w {
                if noise_rng.gen_bool(spec.noise) {
                    img.set(x, y, if noise_rng.gen_bool(0.5) { 0 } else { 255 });
                }
            }
        }
    }

    Ok(GroundTruthPage {
        image: img,
        truth: GroundTruth {
            page: page.to_string(),
            width: w,
            height: h,
            polarity: spec.polarity,
            seed: spec.seed,
            slices,
            header_present,
            labels,
            glyphs,
        },
    })
}

/// Draw a stack of blobs with its top edge at `y`; returns the glyph box.
fn draw_glyph(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    spec: &PageSpec,
    column_x: u32,
    y: u32,
) -> Result<BBox> {
    let width = rng.gen_range(spec.glyph_width[0]..=spec.glyph_width[1]);
    let mut n = rng.gen_range(spec.blobs_per_glyph[0]..=spec.blobs_per_glyph[1]) as usize;
    let full = rng.gen_range(0..n);
    let mut widths: Vec<u32> = (0..n)
        .map(|i| {
            if i == full {
                width
            } else {
                rng.gen_range(spec.min_blob_width(width)..=width)
            }
        })
        .collect();
    let mut gaps: Vec<u32> = (0..n.saturating_sub(1))
        .map(|_| rng.gen_range(spec.blob_gap[0]..=spec.blob_gap[1]))
        .collect();
    let minimal = |widths: &[u32], gaps: &[u32]| -> u32 {
        widths.iter().map(|&w| spec.min_blob_height(w)).sum::<u32>() + gaps.iter().sum::<u32>()
    };
    while minimal(&widths, &gaps) > spec.glyph_height[1] && n > 2 {
        // drop a blob that is not the full-width one
        let drop = if full == n - 1 { 0 } else { n - 1 };
        widths.remove(drop);
        gaps.pop();
        n -= 1;
    }
    let base = minimal(&widths, &gaps);
    if base > spec.glyph_height[1] {
        return Err(Error::InfeasibleSpec(format!(
            "glyph of width {width} cannot hold two blobs under {} px",
            spec.glyph_height[1]
        )));
    }
    let target = rng
        .gen_range(spec.glyph_height[0]..=spec.glyph_height[1])
        .max(base);
    let mut heights: Vec<u32> = widths.iter().map(|&w| spec.min_blob_height(w)).collect();
    for _ in 0..target - base {
        let i = rng.gen_range(0..n);
        heights[i] += 1;
    }

    let gx = column_x + rng.gen_range(COLUMN_PAD..=spec.column_width - COLUMN_PAD - width);
    let mut by = y;
    let mut hull: Option<BBox> = None;
    for i in 0..n {
        let bx = gx + rng.gen_range(0..=width - widths[i]);
        let blob = BBox::from_origin_size(bx, by, widths[i], heights[i])?;
        draw_blob(canvas, rng, blob, spec.ink);
        hull = Some(hull.map_or(blob, |hb| hb.hull(&blob)));
        by += heights[i] + gaps.get(i).copied().unwrap_or(0);
    }
    Ok(hull.expect("at least two blobs"))
}

/// Fill `blob` with a polyomino whose tight bounds are exactly `blob`.
fn draw_blob(canvas: &mut Canvas, rng: &mut ChaCha8Rng, blob: BBox, ink: u8) {
    let cols = (blob.width() / 14).clamp(3, 7);
    let rows = (blob.height() / 12).clamp(2, 5);
    let fill = rng.gen_range(0.6..0.85);
    let cells = polyomino(rng, cols, rows, fill);
    let edge = |k: u32, n: u32, len: u32| k * len / n;
    for cy in 0..rows {
        for cx in 0..cols {
            if !cells[(cy * cols + cx) as usize] {
                continue;
            }
            let x0 = blob.x0() + edge(cx, cols, blob.width());
            let x1 = blob.x0() + edge(cx + 1, cols, blob.width());
            let y0 = blob.y0() + edge(cy, rows, blob.height());
            let y1 = blob.y0() + edge(cy + 1, rows, blob.height());
            canvas.rect(BBox::new(x0, y0, x1, y1).expect("cells are non-empty"), ink);
        }
    }
}

/// Two or three small marks under a glyph, each far below the area limit.
fn draw_caption(canvas: &mut Canvas, rng: &mut ChaCha8Rng, spec: &PageSpec, glyph: BBox) {
    let marks = rng.gen_range(2..=3);
    let y = glyph.y1() + CAPTION_GAP;
    let mut x = glyph.x0() + rng.gen_range(0..=10);
    for _ in 0..marks {
        let w = rng.gen_range(6..=14);
        let h = rng.gen_range(8..=CAPTION_HEIGHT);
        if x + w > glyph.x1() {
            break;
        }
        let b = BBox::from_origin_size(x, y, w, h).expect("positive mark");
        debug_assert!(b.area() < spec.min_area);
        canvas.rect(b, spec.ink);
        x += w + rng.gen_range(4..=8);
    }
}

/// A predicted glyph in page coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedGlyph {
    pub bbox: BBox,
    pub label: Option<String>,
}

/// Detection scores. Ratios with an empty denominator are reported as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub truth: usize,
    pub predicted: usize,
    pub matched: usize,
    pub label_correct: usize,
    pub pages: usize,
    pub pages_slice_count_match: usize,
    pub recall: f64,
    pub precision: f64,
    pub label_accuracy: f64,
    pub slice_count_match: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Scores {
    fn from_counts(
        truth: usize,
        predicted: usize,
        matched: usize,
        label_correct: usize,
        pages: usize,
        pages_slice_count_match: usize,
    ) -> Self {
        Self {
            truth,
            predicted,
            matched,
            label_correct,
            pages,
            pages_slice_count_match,
            recall: ratio(matched, truth),
            precision: ratio(matched, predicted),
            label_accuracy: ratio(label_correct, matched),
            slice_count_match: pages_slice_count_match == pages,
        }
    }

    /// Pool counts over pages (micro-averaged ratios).
    pub fn combine<'a>(scores: impl IntoIterator<Item = &'a Scores>) -> Scores {
        let mut c = [0usize; 6];
        for s in scores {
            c[0] += s.truth;
            c[1] += s.predicted;
            c[2] += s.matched;
            c[3] += s.label_correct;
            c[4] += s.pages;
            c[5] += s.pages_slice_count_match;
        }
        Scores::from_counts(c[0], c[1], c[2], c[3], c[4], c[5])
    }
}

/// IoU at or above which a prediction may match a planted glyph.
pub const MATCH_IOU: f64 = 0.5;

/// Greedy one-to-one matching by descending IoU.
///
/// Candidate pairs with IoU >= 0.5 are taken in order of IoU, then truth
/// index, then predicted box and label, so the result does not depend on
/// the order of `predicted`.
pub fn evaluate_extraction(
    truth: &GroundTruth,
    predicted: &[PredictedGlyph],
    predicted_slices: usize,
) -> Scores {
    let mut pairs = Vec::new();
    for (ti, t) in truth.glyphs.iter().enumerate() {
        for (pi, p) in predicted.iter().enumerate() {
            let iou = t.bbox.iou(&p.bbox);
            if iou >= MATCH_IOU {
                pairs.push((iou, ti, pi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then_with(|| {
            let (pa, pb) = (&predicted[a.2], &predicted[b.2]);
            (pa.bbox.to_array(), &pa.label).cmp(&(pb.bbox.to_array(), &pb.label))
        })
    });
    let mut truth_used = vec![false; truth.glyphs.len()];
    let mut pred_used = vec![false; predicted.len()];
    let (mut matched, mut correct) = (0, 0);
    for (_, ti, pi) in pairs {
        if truth_used[ti] || pred_used[pi] {
            continue;
        }
        truth_used[ti] = true;
        pred_used[pi] = true;
        matched += 1;
        if predicted[pi].label.as_deref() == Some(truth.glyphs[ti].category.as_str()) {
            correct += 1;
        }
    }
    let slice_ok = usize::from(predicted_slices == truth.slices.len());
    Scores::from_counts(
        truth.glyphs.len(),
        predicted.len(),
        matched,
        correct,
        1,
        slice_ok,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{detect_polarity, histogram};

    fn spec(columns: u32, seed: u64) -> PageSpec {
        PageSpec {
            columns,
            seed,
            ..PageSpec::default()
        }
    }

    #[test]
    fn deterministic_render() {
        let a = render_page(&spec(3, 11), "p").unwrap();
        let b = render_page(&spec(3, 11), "p").unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
        let c = render_page(&spec(3, 12), "p").unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn three_columns_four_rulings() {
        let s = spec(3, 5);
        let page = render_page(&s, "p").unwrap();
        assert_eq!(page.truth.slices.len(), 3);
        // count full-height ink columns: 4 rulings x thickness
        let ruling_cols = (0..page.image.width())
            .filter(|&x| {
                (s.margin..s.page_height - s.margin).all(|y| page.image.get(x, y) == s.ink)
            })
            .count() as u32;
        assert_eq!(ruling_cols, 4 * s.ruling_thickness);
        for g in &page.truth.glyphs {
            let sb = page.truth.slices[g.slice_index as usize];
            assert!(sb.contains(&g.bbox), "{g:?} outside {sb:?}");
        }
    }

    #[test]
    fn light_on_dark_render() {
        let s = PageSpec {
            polarity: Polarity::LightOnDark,
            ..spec(3, 2)
        };
        let page = render_page(&s, "p").unwrap();
        let hist = histogram(&page.image);
        let dark: u64 = hist[..128].iter().sum();
        assert!(dark as f64 / (page.image.width() * page.image.height()) as f64 > 0.5);
        assert_eq!(detect_polarity(&page.image), Polarity::LightOnDark);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let tall = PageSpec {
            glyph_height: [70, 160],
            ..spec(2, 0)
        };
        assert!(matches!(
            render_page(&tall, "p"),
            Err(Error::InfeasibleSpec(_))
        ));
        let crowded = PageSpec {
            glyphs_per_column: [2, 12],
            ..spec(2, 0)
        };
        assert!(render_page(&crowded, "p").is_err());
        let narrow = PageSpec {
            column_width: 120,
            ..spec(2, 0)
        };
        assert!(render_page(&narrow, "p").is_err());
    }

    #[test]
    fn geometry_guarantees_hold() {
        for seed in 0..20 {
            let s = spec(3 + (seed % 3) as u32, seed);
            let page = render_page(&s, "p").unwrap();
            for (i, g) in page.truth.glyphs.iter().enumerate() {
                assert!(g.bbox.area() >= s.min_area);
                assert!(g.bbox.height() < s.tau);
                for o in &page.truth.glyphs[i + 1..] {
                    if o.slice_index == g.slice_index {
                        assert!(o.bbox.center().y.abs_diff(g.bbox.center().y) > s.tau);
                    }
                }
            }
            assert!(page.truth.header_present[0]);
        }
    }

    #[test]
    fn templates_are_distinct_and_spanning() {
        let labels: Vec<String> = DEFAULT_LABELS.chars().map(String::from).collect();
        let set = template_set(&labels, 0);
        assert_eq!(set.len(), labels.len());
        for (i, a) in set.iter().enumerate() {
            for b in &set[i + 1..] {
                let d = a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
                assert!(d * 16 >= TEMPLATE_MIN_DISTANCE);
            }
            let img = a.image(0, 255);
            assert_eq!((img.width(), img.height()), (32, 32));
        }
        assert_eq!(template_set(&labels, 0), set);
    }

    fn truth_with(boxes: &[BBox]) -> GroundTruth {
        GroundTruth {
            page: "p".into(),
            width: 1000,
            height: 1000,
            polarity: Polarity::DarkOnLight,
            seed: 0,
            slices: vec![BBox::new(0, 0, 1000, 1000).unwrap()],
            header_present: vec![true],
            labels: vec!["甲".into()],
            glyphs: boxes
                .iter()
                .enumerate()
                .map(|(i, &bbox)| TrueGlyph {
                    bbox,
                    category: "甲".into(),
                    slice_index: 0,
                    rank: i as u32,
                })
                .collect(),
        }
    }

    fn ten_boxes() -> Vec<BBox> {
        (0..10)
            .map(|i| BBox::new(10, i * 90, 60, i * 90 + 50).unwrap())
            .collect()
    }

    fn exact(boxes: &[BBox]) -> Vec<PredictedGlyph> {
        boxes
            .iter()
            .map(|&bbox| PredictedGlyph {
                bbox,
                label: Some("甲".into()),
            })
            .collect()
    }

    #[test]
    fn identity_scores_one() {
        let t = truth_with(&ten_boxes());
        let s = evaluate_extraction(&t, &exact(&ten_boxes()), 1);
        assert_eq!((s.recall, s.precision, s.label_accuracy), (1.0, 1.0, 1.0));
        assert!(s.slice_count_match);
    }

    #[test]
    fn one_missing_glyph() {
        let t = truth_with(&ten_boxes());
        let s = evaluate_extraction(&t, &exact(&ten_boxes()[1..]), 1);
        assert!((s.recall - 0.9).abs() < 1e-12);
        assert_eq!(s.precision, 1.0);
    }

    #[test]
    fn low_iou_is_miss_and_false_positive() {
        let truth = BBox::new(0, 0, 100, 100).unwrap();
        // 100x40 overlap strip inside a 100x100 prediction shifted by 60
        let pred = BBox::new(0, 60, 100, 160).unwrap();
        let iou = truth.iou(&pred);
        assert!((iou - 4000.0 / 16000.0).abs() < 1e-12);
        let pred = BBox::new(0, 0, 100, 40).unwrap();
        assert!((truth.iou(&pred) - 0.4).abs() < 1e-12);
        let s = evaluate_extraction(&truth_with(&[truth]), &exact(&[pred]), 1);
        assert_eq!((s.matched, s.recall, s.precision), (0, 0.0, 0.0));
    }

    #[test]
    fn scores_are_permutation_invariant() {
        let t = truth_with(&ten_boxes());
        let mut preds = exact(&ten_boxes()[2..]);
        preds.push(PredictedGlyph {
            bbox: BBox::new(10, 5, 60, 55).unwrap(),
            label: Some("乙".into()),
        });
        let base = evaluate_extraction(&t, &preds, 2);
        preds.reverse();
        assert_eq!(evaluate_extraction(&t, &preds, 2), base);
        preds.rotate_left(3);
        assert_eq!(evaluate_extraction(&t, &preds, 2), base);
        assert!(!base.slice_count_match);
    }
}
