//! Script eras and image sources, with the tokens used in file and folder
//! names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Historical script period.
///
/// Serialized by its short code (`"OBC"`, `"BI"`, ...). Parsing also accepts
/// the folder token (`"Oracle"`, `"Bronze"`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum Era {
    /// Oracle bone characters.
    Obc,
    /// Bronze inscriptions.
    Bi,
    /// Seal script.
    Ss,
    /// Spring and Autumn characters.
    Sac,
    /// Warring States characters.
    Wsc,
    /// Clerical script.
    Cs,
}

impl Era {
    pub const ALL: [Era; 6] = [Era::Obc, Era::Bi, Era::Ss, Era::Sac, Era::Wsc, Era::Cs];

    pub fn code(self) -> &'static str {
        match self {
            Era::Obc => "OBC",
            Era::Bi => "BI",
            Era::Ss => "SS",
            Era::Sac => "SAC",
            Era::Wsc => "WSC",
            Era::Cs => "CS",
        }
    }

    /// Token used in folder and file names.
    pub fn token(self) -> &'static str {
        match self {
            Era::Obc => "Oracle",
            Era::Bi => "Bronze",
            Era::Ss => "Seal",
            Era::Sac => "SprAut",
            Era::Wsc => "War",
            Era::Cs => "Clerical",
        }
    }

    pub fn from_token(token: &str) -> Option<Era> {
        Era::ALL.into_iter().find(|e| e.token() == token)
    }
}

impl FromStr for Era {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Era::ALL
            .into_iter()
            .find(|e| e.code() == s || e.token() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "era",
                token: s.to_string(),
            })
    }
}

impl TryFrom<String> for Era {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Era> for &'static str {
    fn from(e: Era) -> Self {
        e.code()
    }
}

impl fmt::Display for Era {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Where an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum SourceKind {
    Book,
    Website,
}

impl SourceKind {
    pub const ALL: [SourceKind; 2] = [SourceKind::Book, SourceKind::Website];

    pub fn token(self) -> &'static str {
        match self {
            SourceKind::Book => "Book",
            SourceKind::Website => "Website",
        }
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "source",
                token: s.to_string(),
            })
    }
}

impl TryFrom<String> for SourceKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<SourceKind> for &'static str {
    fn from(k: SourceKind) -> Self {
        k.token()
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// The source/era folders that exist in the published corpus layout.
pub const KNOWN_FOLDERS: [(SourceKind, Era); 9] = [
    (SourceKind::Book, Era::Obc),
    (SourceKind::Book, Era::Bi),
    (SourceKind::Book, Era::Sac),
    (SourceKind::Book, Era::Wsc),
    (SourceKind::Website, Era::Obc),
    (SourceKind::Website, Era::Bi),
    (SourceKind::Website, Era::Wsc),
    (SourceKind::Website, Era::Ss),
    (SourceKind::Website, Era::Cs),
];

pub fn is_known_folder(source: SourceKind, era: Era) -> bool {
    KNOWN_FOLDERS.contains(&(source, era))
}
