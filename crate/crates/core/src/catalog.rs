//! Formatting and cataloging of extracted glyphs: category unification,
//! record naming, the corpus folder layout, the JSON manifest and the
//! train/validation split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imnnb::ImnnbParams;
use crate::layout::{LayoutSpec, Quarantine};
use crate::taxonomy::{is_known_folder, Era, SourceKind};

pub const MANIFEST_SCHEMA: &str = "evobc-manifest/1";

static PATH_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(Book|Website)_(Oracle|Bronze|Seal|SprAut|War|Clerical)/([^/]+)/(Book|Website)_(Oracle|Bronze|Seal|SprAut|War|Clerical)_([0-9]+)\.png$",
    )
    .expect("valid regex")
});

/// Variant character to canonical character mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversionTable {
    map: HashMap<char, char>,
}

impl ConversionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from pairs, checking that canonical characters are fixpoints.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, char)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, (variant, canonical)) in pairs.into_iter().enumerate() {
            if let Some(prev) = map.insert(variant, canonical) {
                if prev != canonical {
                    return Err(Error::ConversionTable {
                        line: i + 1,
                        message: format!("{variant} maps to both {prev} and {canonical}"),
                    });
                }
            }
        }
        let table = Self { map };
        table.check_fixpoints()?;
        Ok(table)
    }

    fn check_fixpoints(&self) -> Result<()> {
        let mut bad: Vec<(char, char)> = self
            .map
            .values()
            .filter_map(|&c| match self.map.get(&c) {
                Some(&d) if d != c => Some((c, d)),
                _ => None,
            })
            .collect();
        bad.sort_unstable();
        match bad.first() {
            Some((c, d)) => Err(Error::ConversionTable {
                line: 0,
                message: format!("canonical character {c} is itself mapped to {d}"),
            }),
            None => Ok(()),
        }
    }

    /// Parse the two-column TSV format: `variant<TAB>canonical`, with `#`
    /// comment lines and blank lines ignored.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let err = |message: String| Error::ConversionTable {
                line: line_no,
                message,
            };
            if fields.len() != 2 {
                return Err(err(format!(
                    "expected 2 tab-separated columns, got {}",
                    fields.len()
                )));
            }
            let single = |s: &str| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(err(format!("{s:?} is not a single character"))),
                }
            };
            let (variant, canonical) = (single(fields[0])?, single(fields[1])?);
            if let Some(prev) = map.insert(variant, canonical) {
                if prev != canonical {
                    return Err(err(format!(
                        "{variant} maps to both {prev} and {canonical}"
                    )));
                }
            }
        }
        let table = Self { map };
        table.check_fixpoints()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn canonical(&self, c: char) -> char {
        self.map.get(&c).copied().unwrap_or(c)
    }
}

/// Map every character of a label to its canonical form.
pub fn unify_category(label: &str, table: &ConversionTable) -> String {
    label.chars().map(|c| table.canonical(c)).collect()
}

/// `<Source>_<Era>_<id>`, e.g. `Book_Oracle_42`.
pub fn name_record(source: SourceKind, era: Era, id: u64) -> String {
    format!("{}_{}_{}", source.token(), era.token(), id)
}

pub fn folder_name(source: SourceKind, era: Era) -> String {
    format!("{}_{}", source.token(), era.token())
}

pub fn validate_category(category: &str) -> Result<()> {
    let bad = category.is_empty()
        || category == "."
        || category == ".."
        || category.contains(['/', '\\', '\0']);
    if bad {
        Err(Error::InvalidCategory(category.to_string()))
    } else {
        Ok(())
    }
}

/// `<Source>_<Era>/<category>/<Source>_<Era>_<id>.png`
pub fn record_path(source: SourceKind, era: Era, category: &str, id: u64) -> Result<String> {
    validate_category(category)?;
    Ok(format!(
        "{}/{}/{}.png",
        folder_name(source, era),
        category,
        name_record(source, era, id)
    ))
}

/// Where a glyph image came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Book {
        book: String,
        page: String,
        slice_index: u32,
        rank: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        box_on_page: Option<BBox>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category_number: Option<String>,
    },
    Website {
        site: String,
        url: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphRecord {
    pub relative_path: String,
    pub category: String,
    pub era: Era,
    pub source: SourceKind,
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl GlyphRecord {
    pub fn new(
        category: impl Into<String>,
        era: Era,
        source: SourceKind,
        id: u64,
        width: u32,
        height: u32,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let category = category.into();
        let relative_path = record_path(source, era, &category, id)?;
        Ok(Self {
            relative_path,
            category,
            era,
            source,
            id,
            width,
            height,
            provenance,
        })
    }

    pub fn name(&self) -> String {
        name_record(self.source, self.era, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSummary {
    pub page: String,
    pub slices: usize,
    pub quarantined: usize,
    pub patches: usize,
    /// No column structure was found; the page became a single slice.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub page: String,
    pub slice_index: u32,
    #[serde(flatten)]
    pub reason: Quarantine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub part: String,
    pub seed: u64,
}

/// Parameters and diagnostics of the run that produced a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    /// RFC 3339 creation time. Excluded from determinism comparisons.
    pub created_at: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imnnb: Option<ImnnbParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr: Option<String>,
    #[serde(default)]
    pub pages: Vec<PageSummary>,
    #[serde(default)]
    pub quarantined: Vec<QuarantineEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
}

impl RunMetadata {
    pub fn now() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed: 0,
            layout_sha256: None,
            layout: None,
            imnnb: None,
            ocr: None,
            pages: Vec::new(),
            quarantined: Vec::new(),
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub run_metadata: RunMetadata,
    pub records: Vec<GlyphRecord>,
}

impl Manifest {
    /// Records are kept sorted by `relative_path`.
    pub fn new(mut records: Vec<GlyphRecord>, run_metadata: RunMetadata) -> Self {
        records.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            run_metadata,
            records,
        }
    }

    pub fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert((r.source, r.era, r.id)) {
                return Err(Error::DuplicateId {
                    source_token: r.source.token(),
                    era_token: r.era.token(),
                    id: r.id,
                });
            }
        }
        Ok(())
    }

    /// Pretty JSON with records sorted by path and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        self.check_unique()?;
        let mut sorted = self.clone();
        sorted
            .records
            .sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        let mut text =
            serde_json::to_string_pretty(&sorted).map_err(|e| Error::json("manifest", e))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("manifest", e))
    }

    /// Next free id per source/era folder.
    pub fn next_ids(&self) -> BTreeMap<(SourceKind, Era), u64> {
        let mut next = BTreeMap::new();
        for r in &self.records {
            let n = next.entry((r.source, r.era)).or_insert(0);
            *n = (*n).max(r.id + 1);
        }
        next
    }
}

pub fn write_manifest(m: &Manifest, dest: &Path) -> Result<()> {
    let text = m.to_json()?;
    if let Some(dir) = dest.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(dest, text)?;
    Ok(())
}

pub fn read_manifest(src: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(src)?;
    Manifest::from_json(&text).map_err(|e| match e {
        Error::Json {
            line,
            column,
            message,
            ..
        } => Error::Json {
            what: src.display().to_string(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// 64-bit linear congruential generator used for reproducible splits.
///
/// `state' = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`,
/// starting from `state = seed`. Each draw advances the state once and
/// returns its high 32 bits. A uniform index below `bound` is
/// `(draw * bound) >> 32`.
#[derive(Debug, Clone)]
pub struct SplitRng {
    state: u64,
}

impl SplitRng {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        (self.state >> 32) as u32
    }

    pub fn below(&mut self, bound: u32) -> u32 {
        ((u64::from(self.next_u32()) * u64::from(bound)) >> 32) as u32
    }

    /// Fisher-Yates: for `i` from `n-1` down to 1, swap `i` with
    /// `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u32 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Validation share for a category of `n` records: `floor(n/10)`, but at
/// least one when `n >= 2`.
pub fn validation_count(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        _ => (n / 10).max(1),
    }
}

/// Per-category 9:1 split.
///
/// Categories are visited in byte order of their names, all drawing from a
/// single [`SplitRng`] seeded with `seed`. Within a category, records are
/// sorted by `relative_path`, shuffled, and the first
/// [`validation_count`] go to validation.
pub fn split(m: &Manifest, seed: u64) -> (Manifest, Manifest) {
    let mut groups: BTreeMap<&str, Vec<&GlyphRecord>> = BTreeMap::new();
    for r in &m.records {
        groups.entry(r.category.as_str()).or_default().push(r);
    }
    let mut rng = SplitRng::new(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for records in groups.values_mut() {
        records.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        rng.shuffle(records);
        let k = validation_count(records.len());
        val.extend(records[..k].iter().map(|r| (*r).clone()));
        train.extend(records[k..].iter().map(|r| (*r).clone()));
    }
    let part = |name: &str, records| {
        let mut meta = m.run_metadata.clone();
        meta.split = Some(SplitInfo {
            part: name.to_string(),
            seed,
        });
        Manifest::new(records, meta)
    };
    (part("train", train), part("val", val))
}

/// Outcome of checking a manifest against its schema and the files on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a path against the corpus naming scheme, including agreement of
/// the folder and file-name tokens. Returns `(source, era, category, id)`.
pub fn parse_record_path(path: &str) -> Option<(SourceKind, Era, String, u64)> {
    let caps = PATH_RE.captures(path)?;
    if caps[1] != caps[4] || caps[2] != caps[5] {
        return None;
    }
    let source = caps[1].parse().ok()?;
    let era = Era::from_token(&caps[2])?;
    let id = caps[6].parse().ok()?;
    Some((source, era, caps[3].to_string(), id))
}

/// Validate a manifest. When `root` is given, also check files on disk.
pub fn validate_manifest(m: &Manifest, root: Option<&Path>) -> ValidationReport {
    let mut report = ValidationReport {
        records: m.records.len(),
        ..Default::default()
    };
    let v = &mut report.violations;
    if m.schema != MANIFEST_SCHEMA {
        v.push(format!(
            "schema is {:?}, expected {MANIFEST_SCHEMA:?}",
            m.schema
        ));
    }

    let mut ids = BTreeSet::new();
    let mut paths = BTreeSet::new();
    let mut per_folder: BTreeMap<String, usize> = BTreeMap::new();
    let mut odd_folders = BTreeSet::new();
    for r in &m.records {
        let p = &r.relative_path;
        match parse_record_path(p) {
            None => v.push(format!("{p}: does not match the naming scheme")),
            Some((source, era, category, id)) => {
                if (source, era, category.as_str(), id)
                    != (r.source, r.era, r.category.as_str(), r.id)
                {
                    v.push(format!("{p}: path disagrees with record fields"));
                }
            }
        }
        if let Err(e) = validate_category(&r.category) {
            v.push(format!("{p}: {e}"));
        }
        if !ids.insert((r.source, r.era, r.id)) {
            v.push(format!("duplicate id {}", r.name()));
        }
        if !paths.insert(p.as_str()) {
            v.push(format!("duplicate path {p}"));
        }
        if r.width == 0 || r.height == 0 {
            v.push(format!("{p}: zero image size"));
        }
        *per_folder.entry(folder_name(r.source, r.era)).or_default() += 1;
        if !is_known_folder(r.source, r.era) {
            odd_folders.insert(folder_name(r.source, r.era));
        }

        if let Some(root) = root {
            let file = root.join(p);
            match crate::io::image_dimensions(&file) {
                Ok((w, h)) if (w, h) != (r.width, r.height) => v.push(format!(
                    "{p}: file is {w}x{h}, record says {}x{}",
                    r.width, r.height
                )),
                Ok(_) => {}
                Err(_) => v.push(format!("{p}: missing or unreadable image")),
            }
        }
    }

    if let Some(root) = root {
        for source in SourceKind::ALL {
            for era in Era::ALL {
                let folder = folder_name(source, era);
                let dir = root.join(&folder);
                if !dir.is_dir() {
                    continue;
                }
                let on_disk = count_png(&dir);
                let listed = per_folder.get(&folder).copied().unwrap_or(0);
                if on_disk != listed {
                    v.push(format!(
                        "{folder}: {on_disk} images on disk, {listed} in manifest"
                    ));
                }
            }
        }
    }

    for folder in odd_folders {
        report
            .warnings
            .push(format!("{folder} is not one of the nine published folders"));
    }
    report
}

fn count_png(dir: &Path) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return 0;
    };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                count_png(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "png"))
            }
        })
        .sum()
}
