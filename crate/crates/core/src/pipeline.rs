//! End-to-end extraction: pages in, labelled glyph records out.
//!
//! Pages are processed in parallel, but label propagation, id assignment
//! and manifest assembly run over a fixed page order, so the output does
//! not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{
    read_manifest, validate_category, write_manifest, ConversionTable, GlyphRecord, Manifest,
    PageSummary, Provenance, QuarantineEntry, RunMetadata,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::grouping::{
    propagate_labels, read_header, ExternalProcess, HeaderReading, OcrAdapter, TemplateMatcher,
};
use crate::imaging::{normalize_polarity_as, GrayImage, Polarity};
use crate::imnnb::{imnnb_traced, ImnnbParams, ImnnbTrace};
use crate::layout::{crop_slices, order_slices, LayoutSpec, Quarantine, Slice};
use crate::synthgen::{GroundTruth, PredictedGlyph};
use crate::taxonomy::{Era, SourceKind};

/// File extensions picked up from the input directory.
pub const PAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcrChoice {
    #[default]
    Template,
    External,
}

/// Run configuration as read from JSON. Every field may be overridden from
/// the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub ocr: OcrChoice,
    pub templates: Option<PathBuf>,
    pub ocr_command: Vec<String>,
    pub table: Option<PathBuf>,
    pub source: Option<String>,
    pub era: Option<String>,
    /// Book name recorded in provenance; defaults to the input folder name.
    pub book: Option<String>,
    /// 0 uses all available cores.
    pub jobs: usize,
    pub seed: u64,
    /// Let the first slices of a page inherit the last label of the
    /// previous page.
    pub inherit_across_pages: bool,
    /// Write per-slice merge traces under `<out>/traces`.
    pub debug_traces: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("run config", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn require_path(what: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| Error::InvalidParameter(format!("missing {what}")))?;
    if !p.exists() {
        return Err(Error::InvalidParameter(format!(
            "{what} {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to process pages, resolved and validated.
pub struct Pipeline {
    pub layout: LayoutSpec,
    pub params: ImnnbParams,
    pub table: ConversionTable,
    pub ocr: Box<dyn OcrAdapter>,
    pub source: SourceKind,
    pub era: Era,
    pub book: String,
    pub seed: u64,
    pub inherit_across_pages: bool,
}

impl Pipeline {
    pub fn new(layout: LayoutSpec, ocr: Box<dyn OcrAdapter>, source: SourceKind, era: Era) -> Self {
        Self {
            layout,
            params: ImnnbParams::default(),
            table: ConversionTable::new(),
            ocr,
            source,
            era,
            book: String::new(),
            seed: 0,
            inherit_across_pages: false,
        }
    }

    /// Validate `cfg` and load the files it names. Nothing is processed.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let era: Era = cfg
            .era
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("missing era".into()))?
            .parse()?;
        let source: SourceKind = cfg.source.as_deref().unwrap_or("Book").parse()?;
        let input = require_path("input directory", &cfg.input)?;
        if !input.is_dir() {
            return Err(Error::InvalidParameter(format!(
                "input {} is not a directory",
                input.display()
            )));
        }
        if cfg.out.is_none() {
            return Err(Error::InvalidParameter("missing output directory".into()));
        }
        let layout = match &cfg.layout {
            Some(_) => read_json::<LayoutSpec>(&require_path("layout", &cfg.layout)?)?,
            None => LayoutSpec::default(),
        };
        layout.validate()?;
        let params = match &cfg.params {
            Some(_) => read_json::<ImnnbParams>(&require_path("params", &cfg.params)?)?,
            None => ImnnbParams::default(),
        };
        let table = match &cfg.table {
            Some(_) => ConversionTable::load(&require_path("conversion table", &cfg.table)?)?,
            None => ConversionTable::new(),
        };
        let ocr: Box<dyn OcrAdapter> = match cfg.ocr {
            OcrChoice::Template => {
                let dir = require_path("template directory", &cfg.templates)?;
                Box::new(TemplateMatcher::from_dir(&dir)?)
            }
            OcrChoice::External => Box::new(ExternalProcess::new(
                cfg.ocr_command.clone(),
                cfg.jobs.max(1),
            )?),
        };
        let book = cfg.book.clone().unwrap_or_else(|| {
            input
                .canonicalize()
                .ok()
                .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_default()
        });
        Ok(Self {
            layout,
            params,
            table,
            ocr,
            source,
            era,
            book,
            seed: cfg.seed,
            inherit_across_pages: cfg.inherit_across_pages,
        })
    }

    pub fn layout_sha256(&self) -> String {
        let json = serde_json::to_vec(&self.layout).expect("layout serializes");
        sha256_hex(&json)
    }
}

/// One input page: an id plus a file to load or an image already in memory.
#[derive(Debug, Clone)]
pub enum PageInput {
    File { id: String, path: PathBuf },
    Image { id: String, image: GrayImage },
}

impl PageInput {
    pub fn id(&self) -> &str {
        match self {
            PageInput::File { id, .. } | PageInput::Image { id, .. } => id,
        }
    }
}

/// Page files of `dir` in name order, keyed by file name.
pub fn discover_pages(dir: &Path) -> Result<Vec<PageInput>> {
    let mut pages: Vec<PageInput> = std::fs::read_dir(dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| PAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .map(|path| PageInput::File {
            id: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path,
        })
        .collect();
    pages.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(pages)
}

/// A glyph ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub record: GlyphRecord,
    pub image: GrayImage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageFailure {
    pub page: String,
    pub reason: String,
}

/// Result of processing a batch, before anything is written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub extracted: Vec<Extracted>,
    pub pages: Vec<PageSummary>,
    pub quarantined: Vec<QuarantineEntry>,
    pub failures: Vec<PageFailure>,
    pub traces: Vec<ImnnbTrace>,
}

struct CutPage {
    id: String,
    slices: Vec<Slice>,
    readings: Vec<HeaderReading>,
    fallback: bool,
    polarity: Polarity,
}

impl Pipeline {
    fn cut(&self, page: &PageInput) -> Result<CutPage> {
        let loaded;
        let image = match page {
            PageInput::File { path, .. } => {
                loaded = crate::io::load_gray(path)?;
                &loaded
            }
            PageInput::Image { image, .. } => image,
        };
        let crop = crop_slices(page.id(), image, &self.layout);
        let slices = order_slices(crop.slices, &self.layout);
        let readings = slices
            .iter()
            .map(
                |s| match read_header(s, self.ocr.as_ref(), &self.layout, &self.table) {
                    HeaderReading::Label { label, .. } if validate_category(&label).is_err() => {
                        HeaderReading::Rejected(Quarantine::EmptyRecognition)
                    }
                    r => r,
                },
            )
            .collect();
        Ok(CutPage {
            id: page.id().to_string(),
            slices,
            readings,
            fallback: crop.fallback,
            polarity: crop.polarity,
        })
    }

    /// Process pages in the given order. `next_ids` holds the first free id
    /// per source/era (for appending to an existing catalog).
    pub fn process(
        &self,
        pages: &[PageInput],
        next_ids: &BTreeMap<(SourceKind, Era), u64>,
        keep_traces: bool,
    ) -> RunOutput {
        let cut: Vec<Result<CutPage>> = pages.par_iter().map(|p| self.cut(p)).collect();

        let mut out = RunOutput::default();
        let mut labelled: Vec<(String, Vec<Slice>, bool, Polarity)> = Vec::new();
        let mut carry = None;
        for (page, result) in pages.iter().zip(cut) {
            match result {
                Ok(c) => {
                    let seed = if self.inherit_across_pages {
                        carry.take()
                    } else {
                        None
                    };
                    let (slices, last) = propagate_labels(c.slices, c.readings, seed);
                    carry = last;
                    labelled.push((c.id, slices, c.fallback, c.polarity));
                }
                Err(e) => {
                    log::warn!("page {} skipped: {e}", page.id());
                    out.failures.push(PageFailure {
                        page: page.id().to_string(),
                        reason: e.to_string(),
                    });
                }
            }
        }

        type Found = (Vec<(Slice, Vec<crate::imnnb::GlyphPatch>)>, Vec<ImnnbTrace>);
        let found: Vec<Found> = labelled
            .par_iter()
            .map(|(_, slices, _, _)| {
                let mut per_slice = Vec::new();
                let mut traces = Vec::new();
                for s in slices.iter().filter(|s| s.quarantine.is_none()) {
                    let Some(body) = s.body(&self.layout) else {
                        continue;
                    };
                    let (patches, trace) = imnnb_traced(&body, &self.params);
                    per_slice.push((body, patches));
                    if keep_traces {
                        traces.push(trace);
                    }
                }
                (per_slice, traces)
            })
            .collect();

        let mut ids = next_ids.clone();
        for ((page_id, slices, fallback, polarity), (per_slice, traces)) in
            labelled.iter().zip(found)
        {
            let mut summary = PageSummary {
                page: page_id.clone(),
                slices: slices.len(),
                quarantined: 0,
                patches: 0,
                fallback: *fallback,
            };
            for s in slices {
                if let Some(reason) = &s.quarantine {
                    summary.quarantined += 1;
                    out.quarantined.push(QuarantineEntry {
                        page: page_id.clone(),
                        slice_index: s.order_index.unwrap_or(0),
                        reason: reason.clone(),
                    });
                }
            }
            for (body, patches) in per_slice {
                let category = body.label.clone().expect("labelled slices only");
                for patch in patches {
                    let id = ids.entry((self.source, self.era)).or_insert(0);
                    let image = normalize_polarity_as(&patch.image, Polarity::DarkOnLight);
                    let on_page = patch
                        .box_in_slice
                        .translate(body.box_on_page.x0(), body.box_on_page.y0());
                    let record = GlyphRecord::new(
                        category.clone(),
                        self.era,
                        self.source,
                        *id,
                        image.width(),
                        image.height(),
                        Some(Provenance::Book {
                            book: self.book.clone(),
                            page: page_id.clone(),
                            slice_index: body.order_index.unwrap_or(0),
                            rank: patch.position_rank,
                            box_on_page: Some(on_page),
                            category_number: body.category_number.clone(),
                        }),
                    )
                    .expect("categories are validated when headers are read");
                    *id += 1;
                    summary.patches += 1;
                    out.extracted.push(Extracted { record, image });
                }
            }
            log::debug!("page {page_id} polarity {polarity:?}");
            out.pages.push(summary);
            out.traces.extend(traces);
        }
        out
    }

    /// Run metadata for a batch processed by this pipeline.
    pub fn metadata(&self, out: &RunOutput) -> RunMetadata {
        RunMetadata {
            seed: self.seed,
            layout_sha256: Some(self.layout_sha256()),
            layout: Some(self.layout.clone()),
            imnnb: Some(self.params),
            ocr: Some(self.ocr.describe()),
            pages: out.pages.clone(),
            quarantined: out.quarantined.clone(),
            ..RunMetadata::now()
        }
    }
}

/// Machine-readable per-page status line written to standard error.
///
/// `page=<id> status=ok slices=<n> quarantined=<n> patches=<n> fallback=<bool>`
/// or `page=<id> status=error reason=<quoted>`.
pub fn page_status_line(summary: &PageSummary) -> String {
    format!(
        "page={} status=ok slices={} quarantined={} patches={} fallback={}",
        summary.page, summary.slices, summary.quarantined, summary.patches, summary.fallback
    )
}

pub fn page_error_line(failure: &PageFailure) -> String {
    format!(
        "page={} status=error reason={:?}",
        failure.page, failure.reason
    )
}

/// Write images and the manifest under `root`, appending to an existing
/// `manifest.json` there. Returns the manifest path.
pub fn write_output(root: &Path, out: &RunOutput, meta: RunMetadata) -> Result<PathBuf> {
    let manifest_path = root.join("manifest.json");
    let mut records: Vec<GlyphRecord> = if manifest_path.exists() {
        read_manifest(&manifest_path)?.records
    } else {
        Vec::new()
    };
    records.extend(out.extracted.iter().map(|e| e.record.clone()));
    let manifest = Manifest::new(records, meta);
    manifest.check_unique()?;
    out.extracted
        .par_iter()
        .try_for_each(|e| crate::io::save_gray(&root.join(&e.record.relative_path), &e.image))?;
    write_manifest(&manifest, &manifest_path)?;
    Ok(manifest_path)
}

/// Write IMNNB traces as `<root>/traces/<page>__<slice>.json`.
pub fn write_traces(root: &Path, traces: &[ImnnbTrace]) -> Result<()> {
    let dir = root.join("traces");
    std::fs::create_dir_all(&dir)?;
    for t in traces {
        let name = format!("{}__{}.json", t.page_id, t.order_index.unwrap_or(0));
        let json = serde_json::to_string_pretty(t).expect("trace serializes");
        std::fs::write(dir.join(name), json + "\n")?;
    }
    Ok(())
}

/// Predicted glyphs on `page`, recovered from manifest provenance.
pub fn predictions_for_page(manifest: &Manifest, page: &str) -> Vec<PredictedGlyph> {
    manifest
        .records
        .iter()
        .filter_map(|r| match &r.provenance {
            Some(Provenance::Book {
                page: p,
                box_on_page: Some(b),
                ..
            }) if p == page => Some(PredictedGlyph {
                bbox: *b,
                label: Some(r.category.clone()),
            }),
            _ => None,
        })
        .collect()
}

/// Slice count the run reported for `page` (0 if the page is unknown).
pub fn slice_count_for_page(manifest: &Manifest, page: &str) -> usize {
    manifest
        .run_metadata
        .pages
        .iter()
        .find(|p| p.page == page)
        .map_or(0, |p| p.slices)
}

/// Per-page and pooled scores of a manifest against ground truth files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pages: BTreeMap<String, crate::synthgen::Scores>,
    pub total: crate::synthgen::Scores,
}

pub fn evaluate_manifest(manifest: &Manifest, truths: &[GroundTruth]) -> EvalReport {
    let pages: BTreeMap<String, crate::synthgen::Scores> = truths
        .iter()
        .map(|t| {
            let got = predictions_for_page(manifest, &t.page);
            let scores = crate::synthgen::evaluate_extraction(
                t,
                &got,
                slice_count_for_page(manifest, &t.page),
            );
            (t.page.clone(), scores)
        })
        .collect();
    let total = crate::synthgen::Scores::combine(pages.values());
    EvalReport { pages, total }
}

/// Load every `*.json` ground truth file in `dir`, in name order.
pub fn load_truths(dir: &Path) -> Result<Vec<GroundTruth>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| read_json(p)).collect()
}

/// Box of a glyph on its page, when provenance records it.
pub fn record_box(record: &GlyphRecord) -> Option<BBox> {
    match &record.provenance {
        Some(Provenance::Book { box_on_page, .. }) => *box_on_page,
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{render_page, template_set, PageSpec};

    fn pipeline_for(spec: &PageSpec) -> Pipeline {
        let templates = template_set(&spec.labels, spec.template_seed)
            .into_iter()
            .map(|t| (t.label.clone(), t.image(spec.ink, spec.paper)));
        let ocr = TemplateMatcher::new(templates).unwrap();
        Pipeline::new(
            LayoutSpec::default(),
            Box::new(ocr),
            SourceKind::Book,
            Era::Bi,
        )
    }

    #[test]
    fn three_by_three_page_gives_nine_records() {
        let spec = PageSpec {
            columns: 3,
            glyphs_per_column: [3, 3],
            seed: 4,
            ..PageSpec::default()
        };
        let page = render_page(&spec, "p.png").unwrap();
        let p = pipeline_for(&spec);
        let input = [PageInput::Image {
            id: "p.png".into(),
            image: page.image.clone(),
        }];
        let out = p.process(&input, &BTreeMap::new(), false);
        assert_eq!(out.extracted.len(), 9);
        assert_eq!(out.pages[0].slices, 3);
        let ids: Vec<u64> = out.extracted.iter().map(|e| e.record.id).collect();
        assert_eq!(ids, (0..9).collect::<Vec<_>>());
        for e in &out.extracted {
            assert!(e.record.relative_path.starts_with("Book_Bronze/"));
        }
    }

    #[test]
    fn ids_continue_from_existing() {
        let spec = PageSpec {
            columns: 3,
            seed: 9,
            ..PageSpec::default()
        };
        let page = render_page(&spec, "p.png").unwrap();
        let p = pipeline_for(&spec);
        let input = [PageInput::Image {
            id: "p.png".into(),
            image: page.image,
        }];
        let start = BTreeMap::from([((SourceKind::Book, Era::Bi), 100)]);
        let out = p.process(&input, &start, false);
        assert_eq!(out.extracted[0].record.id, 100);
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            input: Some(dir.path().to_path_buf()),
            out: Some(dir.path().join("out")),
            era: Some("Jade".into()),
            ..RunConfig::default()
        };
        assert!(matches!(
            Pipeline::from_config(&cfg),
            Err(Error::UnknownToken { kind: "era", .. })
        ));
        let cfg = RunConfig {
            era: Some("OBC".into()),
            ..cfg
        };
        // template OCR without a template directory
        assert!(Pipeline::from_config(&cfg).is_err());
        assert!(RunConfig::from_json(r#"{"jobz": 3}"#).is_err());
        let parsed = RunConfig::from_json(r#"{"era": "Oracle", "jobs": 3}"#).unwrap();
        assert_eq!(parsed.jobs, 3);
    }

    #[test]
    fn status_lines() {
        let s = PageSummary {
            page: "a.png".into(),
            slices: 3,
            quarantined: 1,
            patches: 7,
            fallback: false,
        };
        assert_eq!(
            page_status_line(&s),
            "page=a.png status=ok slices=3 quarantined=1 patches=7 fallback=false"
        );
        let f = PageFailure {
            page: "b.png".into(),
            reason: "bad \"x\"".into(),
        };
        assert_eq!(
            page_error_line(&f),
            r#"page=b.png status=error reason="bad \"x\"""#
        );
    }
}
