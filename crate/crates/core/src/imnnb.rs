//! Iterative merging of nearest-neighbour boxes: turns a labelled slice into
//! one image patch per glyph.
//!
//! The stages run in a fixed order:
//!
//! 1. ink components of the binarized slice (one box per component),
//! 2. overlap merging until no two boxes overlap,
//! 3. removal of boxes below the minimum area (captions, specks),
//! 4. vertical merging of boxes whose centers are closer than `tau`,
//! 5. cropping of the surviving boxes from the gray slice.
//!
//! Both merge loops pick pairs in a fixed scan order so that results are
//! reproducible; see [`merge_stage1`] and [`merge_stage2`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::{binarize, connected_components, Connectivity, GrayImage, ThresholdPolicy};
use crate::layout::Slice;

pub const TRACE_SCHEMA: &str = "evobc-imnnb-trace/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImnnbParams {
    /// Boxes with area below this (square pixels) are dropped.
    pub min_area: u64,
    /// Vertical center distance under which boxes are merged.
    pub tau: u32,
    pub connectivity: Connectivity,
    pub threshold: ThresholdPolicy,
}

impl Default for ImnnbParams {
    fn default() -> Self {
        Self {
            min_area: 2000,
            tau: 150,
            connectivity: Connectivity::Eight,
            threshold: ThresholdPolicy::Otsu,
        }
    }
}

impl ImnnbParams {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("IMNNB params", e))
    }
}

/// `(page_id, order_index)` of the slice a patch came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceRef {
    pub page_id: String,
    pub order_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphPatch {
    pub image: GrayImage,
    pub box_in_slice: BBox,
    pub slice_ref: SliceRef,
    /// Top-to-bottom rank within the slice.
    pub position_rank: u32,
}

/// Box lists after each stage, for diagnostics and overlays.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImnnbTrace {
    pub schema: String,
    pub page_id: String,
    pub order_index: Option<u32>,
    pub slice_box_on_page: Option<BBox>,
    pub components: Vec<BBox>,
    pub stage1: Vec<BBox>,
    pub filtered: Vec<BBox>,
    pub stage2: Vec<BBox>,
}

/// Merge overlapping boxes until no two overlap.
///
/// Boxes are kept sorted by `(y0, x0, y1, x1)`. Each step scans pairs
/// `(i, j)` with `i < j` in index order, replaces the first overlapping pair
/// by its hull, re-sorts, and starts over.
pub fn merge_stage1(boxes: &[BBox]) -> Vec<BBox> {
    let mut out = boxes.to_vec();
    out.sort_by_key(BBox::raster_key);
    'scan: loop {
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                if out[i].overlaps(&out[j]) {
                    let merged = out[i].hull(&out[j]);
                    out.remove(j);
                    out[i] = merged;
                    out.sort_by_key(BBox::raster_key);
                    continue 'scan;
                }
            }
        }
        return out;
    }
}

/// Keep boxes with `area >= min_area`, order preserved.
pub fn filter_small(boxes: &[BBox], min_area: u64) -> Vec<BBox> {
    boxes
        .iter()
        .copied()
        .filter(|b| b.area() >= min_area)
        .collect()
}

fn center_key(b: &BBox) -> (u32, u32, u32, u32, u32) {
    let (y0, x0, y1, x1) = b.raster_key();
    (b.center().y, y0, x0, y1, x1)
}

/// Merge boxes whose vertical center distance is below `tau`.
///
/// Boxes are kept sorted by center y (ties by `(y0, x0, y1, x1)`). Each step
/// merges the first adjacent pair with `|cy_i - cy_j| < tau`, re-sorts, and
/// starts over. Horizontal distance is not considered.
pub fn merge_stage2(boxes: &[BBox], tau: u32) -> Vec<BBox> {
    let mut out = boxes.to_vec();
    out.sort_by_key(center_key);
    loop {
        let hit = out
            .windows(2)
            .position(|w| w[1].center().y - w[0].center().y < tau);
        match hit {
            Some(i) => {
                let merged = out[i].hull(&out[i + 1]);
                out.remove(i + 1);
                out[i] = merged;
                out.sort_by_key(center_key);
            }
            None => return out,
        }
    }
}

/// Crop one patch per box (clamped to the slice), ranked by center y.
pub fn extract_patches(slice: &Slice, boxes: &[BBox]) -> Vec<GlyphPatch> {
    let (w, h) = (slice.image.width(), slice.image.height());
    let mut clamped: Vec<BBox> = boxes.iter().filter_map(|b| b.clamp_to(w, h)).collect();
    clamped.sort_by_key(|b| (b.center().y, b.center().x, b.raster_key()));
    clamped
        .into_iter()
        .enumerate()
        .map(|(rank, b)| GlyphPatch {
            image: slice
                .image
                .crop(&b)
                .expect("clamped box is inside the slice"),
            box_in_slice: b,
            slice_ref: SliceRef {
                page_id: slice.page_id.clone(),
                order_index: slice.order_index,
            },
            position_rank: rank as u32,
        })
        .collect()
}

/// Run every stage and keep the intermediate box lists.
pub fn imnnb_traced(slice: &Slice, params: &ImnnbParams) -> (Vec<GlyphPatch>, ImnnbTrace) {
    let bin = binarize(&slice.image, params.threshold);
    let components = connected_components(&bin, params.connectivity);
    let stage1 = merge_stage1(&components);
    let filtered = filter_small(&stage1, params.min_area);
    let stage2 = merge_stage2(&filtered, params.tau);
    let patches = extract_patches(slice, &stage2);
    let trace = ImnnbTrace {
        schema: TRACE_SCHEMA.to_string(),
        page_id: slice.page_id.clone(),
        order_index: slice.order_index,
        slice_box_on_page: Some(slice.box_on_page),
        components,
        stage1,
        filtered,
        stage2,
    };
    (patches, trace)
}

pub fn imnnb(slice: &Slice, params: &ImnnbParams) -> Vec<GlyphPatch> {
    imnnb_traced(slice, params).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn sorted(mut v: Vec<BBox>) -> Vec<BBox> {
        v.sort_by_key(BBox::raster_key);
        v
    }

    #[test]
    fn stage1_examples() {
        assert_eq!(
            merge_stage1(&[b(0, 0, 10, 10), b(5, 5, 15, 15), b(100, 100, 110, 110)]),
            vec![b(0, 0, 15, 15), b(100, 100, 110, 110)]
        );
        assert!(merge_stage1(&[]).is_empty());
        assert_eq!(
            merge_stage1(&[b(0, 0, 10, 10), b(8, 0, 18, 10), b(16, 0, 26, 10)]),
            vec![b(0, 0, 26, 10)]
        );
        // touching boxes stay apart
        assert_eq!(merge_stage1(&[b(0, 0, 10, 10), b(10, 0, 20, 10)]).len(), 2);
    }

    #[test]
    fn filter_examples() {
        assert_eq!(
            filter_small(&[b(0, 0, 40, 50)], 2000),
            vec![b(0, 0, 40, 50)]
        );
        assert_eq!(b(0, 0, 40, 49).area(), 1960);
        assert!(filter_small(&[b(0, 0, 40, 49)], 2000).is_empty());
        let v = vec![b(0, 0, 1, 1), b(3, 3, 4, 9)];
        assert_eq!(filter_small(&v, 0), v);
    }

    /// Boxes 20 wide and tall enough to pass filtering, centered at `cy`.
    fn at_center(cy: u32) -> BBox {
        b(0, cy - 10, 20, cy + 10)
    }

    #[test]
    fn stage2_examples() {
        let merged = merge_stage2(&[at_center(100), at_center(240)], 150);
        assert_eq!(merged, vec![b(0, 90, 20, 250)]);
        let apart = merge_stage2(&[at_center(100), at_center(250)], 150);
        assert_eq!(apart.len(), 2);
        assert_eq!(merge_stage2(&[at_center(500)], 150), vec![at_center(500)]);
    }

    fn slice_of(img: GrayImage) -> Slice {
        let bounds = img.bounds();
        let mut s = Slice::new("page", img, bounds);
        s.order_index = Some(3);
        s
    }

    #[test]
    fn extract_examples() {
        let px: Vec<u8> = (0..200 * 800).map(|i| (i % 251) as u8).collect();
        let s = slice_of(GrayImage::new(200, 800, px).unwrap());
        let p = extract_patches(&s, &[b(0, 0, 50, 60)]);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].image.width(), p[0].image.height()), (50, 60));
        for y in 0..60 {
            for x in 0..50 {
                assert_eq!(p[0].image.get(x, y), s.image.get(x, y));
            }
        }
        assert!(extract_patches(&s, &[]).is_empty());

        let two = extract_patches(&s, &[at_center(400), at_center(100)]);
        assert_eq!(two[0].box_in_slice, at_center(100));
        assert_eq!(two[0].position_rank, 0);
        assert_eq!(two[1].position_rank, 1);
        assert_eq!(two[1].slice_ref.order_index, Some(3));

        // hulls past the slice edge are clamped
        let c = extract_patches(&s, &[b(190, 790, 260, 900)]);
        assert_eq!(c[0].box_in_slice, b(190, 790, 200, 800));
    }

    #[test]
    fn blank_slice_yields_nothing() {
        let s = slice_of(GrayImage::filled(200, 600, 245).unwrap());
        let (patches, trace) = imnnb_traced(&s, &ImnnbParams::default());
        assert!(patches.is_empty());
        assert!(trace.components.is_empty());
    }

    #[test]
    fn solid_square_is_one_patch() {
        let mut img = GrayImage::filled(200, 400, 240).unwrap();
        img.fill_box(&b(10, 10, 110, 110), 15);
        let p = imnnb(&slice_of(img), &ImnnbParams::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].box_in_slice, b(10, 10, 110, 110));
    }

    #[test]
    fn trace_serializes() {
        let mut img = GrayImage::filled(60, 60, 240).unwrap();
        img.fill_box(&b(5, 5, 9, 9), 0);
        let (_, trace) = imnnb_traced(&slice_of(img), &ImnnbParams::default());
        let text = serde_json::to_string(&trace).unwrap();
        assert!(text.contains("\"components\":[[5,5,9,9]]"));
        assert!(text.contains(TRACE_SCHEMA));
        let back: ImnnbTrace = serde_json::from_str(&text).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn params_json() {
        let p = ImnnbParams::from_json(r#"{"tau": 90, "connectivity": 4}"#).unwrap();
        assert_eq!(p.tau, 90);
        assert_eq!(p.min_area, 2000);
        assert_eq!(p.connectivity, Connectivity::Four);
        assert!(ImnnbParams::from_json(r#"{"connectivity": 6}"#).is_err());
        let fixed = ImnnbParams::from_json(r#"{"threshold": {"fixed": 100}}"#).unwrap();
        assert_eq!(fixed.threshold, ThresholdPolicy::Fixed(100));
    }

    fn box_set(max_len: usize, coord: u32) -> impl Strategy<Value = Vec<BBox>> {
        proptest::collection::vec(
            (0..coord - 1, 0..coord - 1, 1..coord / 4, 1..coord / 4)
                .prop_map(move |(x, y, w, h)| b(x, y, (x + w).min(coord), (y + h).min(coord))),
            0..=max_len,
        )
    }

    proptest! {
        #[test]
        fn stage1_contract(boxes in box_set(20, 500)) {
            let out = merge_stage1(&boxes);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(!out[i].overlaps(&out[j]));
                }
            }
            for a in &boxes {
                prop_assert_eq!(out.iter().filter(|o| o.contains(a)).count(), 1);
            }
            prop_assert_eq!(merge_stage1(&out), out.clone());
        }

        #[test]
        fn stage2_contract(boxes in box_set(20, 500), tau in 0u32..200) {
            let out = merge_stage2(&boxes, tau);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(out[i].center().y.abs_diff(out[j].center().y) >= tau);
                }
            }
            for a in &boxes {
                prop_assert!(out.iter().any(|o| o.contains(a)));
            }
            prop_assert_eq!(merge_stage2(&out, tau), out.clone());
        }

        #[test]
        fn filter_contract(boxes in box_set(20, 200), min_area in 0u64..3000) {
            let out = filter_small(&boxes, min_area);
            prop_assert!(out.iter().all(|o| o.area() >= min_area && boxes.contains(o)));
            prop_assert_eq!(out.len(), boxes.iter().filter(|o| o.area() >= min_area).count());
        }

        #[test]
        fn stage1_is_order_insensitive(boxes in box_set(8, 100)) {
            let mut rev = boxes.clone();
            rev.reverse();
            prop_assert_eq!(sorted(merge_stage1(&boxes)), sorted(merge_stage1(&rev)));
        }
    }
}
