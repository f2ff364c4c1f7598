//! Glyph extraction and cataloging for scanned tabular character
//! dictionaries: page layout analysis, slice labeling, glyph separation
//! by iterative merging of nearby boxes, and dataset cataloging.

pub mod catalog;
pub mod error;
pub mod geometry;
pub mod grouping;
pub mod imaging;
pub mod imnnb;
pub mod io;
pub mod layout;
pub mod pipeline;
pub mod synthgen;
pub mod taxonomy;

pub use error::{Error, Result};
pub use geometry::{BBox, Point};
pub use imaging::{BinaryImage, Connectivity, GrayImage, Polarity, ThresholdPolicy};
pub use imnnb::{imnnb, GlyphPatch, ImnnbParams};
pub use layout::{LayoutSpec, Quarantine, ReadingDirection, Slice};
pub use taxonomy::{Era, SourceKind};
