//! Signature-based format identification, structural validation,
//! insertion-point discovery and tolerant covert-payload location for the
//! twelve supported formats.
//!
//! Every entry point is a pure function of the input bytes and every scan is
//! bounded by the input length, so any byte sequence is a legal input.

pub mod bmp;
pub mod checksum;
pub mod gif;
pub mod jpeg;
pub mod pe;
pub mod png;
pub mod rar;
pub mod script;
pub mod zip;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checksum::{adler32, crc32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormatId {
    Bmp,
    Gif,
    Jpeg,
    Png,
    Zip,
    Jar,
    Rar,
    Pe,
    Hta,
    Php,
    Js,
    Ps1,
    Unknown,
}

impl FormatId {
    /// All thirteen values, in one-hot slot order.
    pub const ALL: [FormatId; 13] = [
        FormatId::Bmp,
        FormatId::Gif,
        FormatId::Jpeg,
        FormatId::Png,
        FormatId::Zip,
        FormatId::Jar,
        FormatId::Rar,
        FormatId::Pe,
        FormatId::Hta,
        FormatId::Php,
        FormatId::Js,
        FormatId::Ps1,
        FormatId::Unknown,
    ];

    /// The twelve formats that may appear in a label set.
    pub const KNOWN: [FormatId; 12] = [
        FormatId::Bmp,
        FormatId::Gif,
        FormatId::Jpeg,
        FormatId::Png,
        FormatId::Zip,
        FormatId::Jar,
        FormatId::Rar,
        FormatId::Pe,
        FormatId::Hta,
        FormatId::Php,
        FormatId::Js,
        FormatId::Ps1,
    ];

    pub const IMAGES: [FormatId; 4] = [FormatId::Bmp, FormatId::Gif, FormatId::Jpeg, FormatId::Png];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FormatId::Bmp => "BMP",
            FormatId::Gif => "GIF",
            FormatId::Jpeg => "JPEG",
            FormatId::Png => "PNG",
            FormatId::Zip => "ZIP",
            FormatId::Jar => "JAR",
            FormatId::Rar => "RAR",
            FormatId::Pe => "PE",
            FormatId::Hta => "HTA",
            FormatId::Php => "PHP",
            FormatId::Js => "JS",
            FormatId::Ps1 => "PS1",
            FormatId::Unknown => "UNKNOWN",
        }
    }

    pub fn is_image(self) -> bool {
        matches!(self, FormatId::Bmp | FormatId::Gif | FormatId::Jpeg | FormatId::Png)
    }

    pub fn is_script(self) -> bool {
        matches!(self, FormatId::Hta | FormatId::Php | FormatId::Js | FormatId::Ps1)
    }

    pub fn is_zip_family(self) -> bool {
        matches!(self, FormatId::Zip | FormatId::Jar)
    }

    /// Lower-case file extensions accepted for this format on ingest.
    pub fn extensions(self) -> &'static [&'static str] {
        match self {
            FormatId::Bmp => &["bmp", "dib"],
            FormatId::Gif => &["gif"],
            FormatId::Jpeg => &["jpg", "jpeg", "jpe", "jfif"],
            FormatId::Png => &["png"],
            FormatId::Zip => &["zip"],
            FormatId::Jar => &["jar"],
            FormatId::Rar => &["rar"],
            FormatId::Pe => &["exe", "dll", "sys"],
            FormatId::Hta => &["hta"],
            FormatId::Php => &["php", "phtml"],
            FormatId::Js => &["js", "mjs"],
            FormatId::Ps1 => &["ps1", "psm1"],
            FormatId::Unknown => &[],
        }
    }

    pub fn default_extension(self) -> &'static str {
        self.extensions().first().copied().unwrap_or("bin")
    }

    pub fn from_extension(ext: &str) -> Option<FormatId> {
        let ext = ext.to_ascii_lowercase();
        FormatId::KNOWN
            .into_iter()
            .find(|f| f.extensions().contains(&ext.as_str()))
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown format name {0:?}")]
pub struct UnknownFormatName(pub String);

impl FromStr for FormatId {
    type Err = UnknownFormatName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let alias = match upper.as_str() {
            "JPG" => "JPEG",
            "EXE" => "PE",
            "JAVASCRIPT" => "JS",
            "POWERSHELL" => "PS1",
            other => other,
        };
        FormatId::ALL
            .into_iter()
            .find(|f| f.name() == alias)
            .ok_or_else(|| UnknownFormatName(s.to_string()))
    }
}

/// Outcome of structural validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseReport {
    pub format: FormatId,
    pub valid: bool,
    /// Exclusive end of the bytes the format's own structure accounts for.
    pub logical_end: usize,
    pub notes: Vec<String>,
}

impl ParseReport {
    pub(crate) fn ok(format: FormatId, logical_end: usize) -> Self {
        ParseReport { format, valid: true, logical_end, notes: Vec::new() }
    }

    pub(crate) fn invalid(format: FormatId, note: impl Into<String>) -> Self {
        ParseReport { format, valid: false, logical_end: 0, notes: vec![note.into()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InsertionKind {
    AppendAfterLogicalEnd,
    CommentSegment,
    AncillaryChunk,
    CommentExtension,
    ArchiveComment,
    PrependTolerated,
}

impl InsertionKind {
    pub fn is_comment(self) -> bool {
        matches!(
            self,
            InsertionKind::CommentSegment
                | InsertionKind::AncillaryChunk
                | InsertionKind::CommentExtension
                | InsertionKind::ArchiveComment
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertionPoint {
    pub kind: InsertionKind,
    pub offset: usize,
    /// Capacity of one carrying structure; `None` means unbounded.
    pub max_payload: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovertLocation {
    pub format: FormatId,
    pub start: usize,
    pub length: usize,
    pub via: InsertionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("{format} input failed validation: {notes}")]
    Invalid { format: FormatId, notes: String },
    #[error("UNKNOWN is not a concrete format")]
    UnknownFormat,
}

/// A comment payload or trailing region that may carry a covert file.
///
/// `start..start + length` is the span in the container; `payload` is the
/// carried data with container framing (sub-block or segment headers) removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub start: usize,
    pub length: usize,
    pub via: InsertionKind,
    pub payload: Vec<u8>,
}

/// Identify the format that presents at offset zero.
///
/// Precedence: PE, PNG, GIF, JPEG, BMP, RAR, ZIP/JAR, then the script token
/// rules (PHP, HTA, PS1, JS). A ZIP whose central directory lists
/// `META-INF/MANIFEST.MF` is reported as JAR.
pub fn identify_first(bytes: &[u8]) -> FormatId {
    if let Some(f) = identify_binary(bytes) {
        return f;
    }
    script::classify(bytes).unwrap_or(FormatId::Unknown)
}

fn identify_binary(bytes: &[u8]) -> Option<FormatId> {
    if pe::sniff(bytes) {
        Some(FormatId::Pe)
    } else if png::sniff(bytes) {
        Some(FormatId::Png)
    } else if gif::sniff(bytes) {
        Some(FormatId::Gif)
    } else if jpeg::sniff(bytes) {
        Some(FormatId::Jpeg)
    } else if bmp::sniff(bytes) {
        Some(FormatId::Bmp)
    } else if rar::sniff(bytes) {
        Some(FormatId::Rar)
    } else if zip::sniff(bytes) {
        match zip::parse(bytes) {
            Ok(archive) if archive.is_jar() => Some(FormatId::Jar),
            _ => Some(FormatId::Zip),
        }
    } else {
        None
    }
}

/// Structural validation. Never panics; malformed input yields `valid=false`.
pub fn validate(format: FormatId, bytes: &[u8]) -> ParseReport {
    match format {
        FormatId::Bmp => bmp::validate(bytes),
        FormatId::Gif => gif::validate(bytes),
        FormatId::Jpeg => jpeg::validate(bytes),
        FormatId::Png => png::validate(bytes),
        FormatId::Zip => zip::validate(bytes, false),
        FormatId::Jar => zip::validate(bytes, true),
        FormatId::Rar => rar::validate(bytes),
        FormatId::Pe => pe::validate(bytes),
        FormatId::Hta | FormatId::Php | FormatId::Js | FormatId::Ps1 => {
            script::validate(format, bytes)
        }
        FormatId::Unknown => ParseReport::invalid(format, "UNKNOWN has no structure to validate"),
    }
}

/// Every supported parasite location for `format`, plus the append point.
pub fn insertion_points(format: FormatId, bytes: &[u8]) -> Result<Vec<InsertionPoint>, FormatError> {
    if format == FormatId::Unknown {
        return Err(FormatError::UnknownFormat);
    }
    let report = validate(format, bytes);
    if !report.valid {
        return Err(FormatError::Invalid { format, notes: report.notes.join("; ") });
    }
    let append = InsertionPoint {
        kind: InsertionKind::AppendAfterLogicalEnd,
        offset: report.logical_end,
        max_payload: None,
    };
    let mut points = Vec::new();
    match format {
        FormatId::Jpeg => points.push(InsertionPoint {
            kind: InsertionKind::CommentSegment,
            offset: jpeg::comment_insert_offset(bytes),
            max_payload: Some(jpeg::MAX_COMMENT_PAYLOAD),
        }),
        FormatId::Png => points.push(InsertionPoint {
            kind: InsertionKind::AncillaryChunk,
            offset: png::parasite_insert_offset(),
            max_payload: Some(png::MAX_CHUNK_LEN),
        }),
        FormatId::Gif => points.push(InsertionPoint {
            kind: InsertionKind::CommentExtension,
            // The trailer is the last byte of the logical structure.
            offset: report.logical_end - 1,
            max_payload: Some(gif::SUB_BLOCK_MAX),
        }),
        FormatId::Zip | FormatId::Jar => {
            let archive = zip::parse(bytes).map_err(|e| FormatError::Invalid { format, notes: e })?;
            points.push(InsertionPoint {
                kind: InsertionKind::ArchiveComment,
                offset: archive.comment_start,
                max_payload: Some(zip::MAX_COMMENT - archive.comment_len),
            });
            points.push(InsertionPoint {
                kind: InsertionKind::PrependTolerated,
                offset: archive.start,
                max_payload: None,
            });
        }
        _ => {}
    }
    points.push(append);
    Ok(points)
}

/// Comment-type payloads carried by a valid file of `format`.
pub fn comment_regions(format: FormatId, bytes: &[u8]) -> Vec<Region> {
    match format {
        FormatId::Jpeg => jpeg::comment_regions(bytes),
        FormatId::Png => png::comment_regions(bytes),
        FormatId::Gif => gif::comment_regions(bytes),
        FormatId::Zip | FormatId::Jar => zip::parse(bytes)
            .ok()
            .filter(|a| a.comment_len > 0)
            .map(|a| Region {
                start: a.comment_start,
                length: a.comment_len,
                via: InsertionKind::ArchiveComment,
                payload: bytes[a.comment_start..a.comment_start + a.comment_len].to_vec(),
            })
            .into_iter()
            .collect(),
        _ => Vec::new(),
    }
}

/// Places a tolerant reader would look for a covert file: comment payloads of
/// the first format plus any bytes after its logical end.
pub fn covert_regions(bytes: &[u8]) -> Vec<Region> {
    let first = match identify_binary(bytes) {
        Some(f) => f,
        None => return Vec::new(),
    };
    let report = validate(first, bytes);
    if !report.valid {
        return Vec::new();
    }
    let mut regions = comment_regions(first, bytes);
    if report.logical_end < bytes.len() {
        regions.push(Region {
            start: report.logical_end,
            length: bytes.len() - report.logical_end,
            via: InsertionKind::AppendAfterLogicalEnd,
            payload: bytes[report.logical_end..].to_vec(),
        });
    }
    regions
}

/// Script format carried by a region, if any. Regions that open with a
/// binary magic are never treated as scripts.
pub fn classify_region(payload: &[u8]) -> Option<FormatId> {
    if identify_binary(payload).is_some() {
        return None;
    }
    script::classify(payload)
}

/// Emulate the tolerant reader of `format` and report a covert instance.
///
/// The instance that presents at offset zero is the overt file and is not
/// reported, except for an image or PE that sits in front of a
/// prepend-tolerant archive.
pub fn locate_covert(format: FormatId, bytes: &[u8]) -> Option<CovertLocation> {
    let first = identify_first(bytes);
    match format {
        FormatId::Unknown => None,
        FormatId::Zip | FormatId::Jar => {
            if first.is_zip_family() {
                return None;
            }
            let archive = zip::find_archive(bytes)?;
            if format == FormatId::Jar && !archive.is_jar() {
                return None;
            }
            let via = if archive.start == 0 {
                InsertionKind::PrependTolerated
            } else {
                InsertionKind::AppendAfterLogicalEnd
            };
            Some(CovertLocation { format, start: archive.start, length: archive.end - archive.start, via })
        }
        FormatId::Rar => {
            if first == FormatId::Rar {
                return None;
            }
            let (start, len) = rar::find_archive(bytes)?;
            Some(CovertLocation { format, start, length: len, via: InsertionKind::AppendAfterLogicalEnd })
        }
        FormatId::Bmp | FormatId::Gif | FormatId::Jpeg | FormatId::Png | FormatId::Pe => {
            if first != format {
                return None;
            }
            let report = validate(format, bytes);
            if !report.valid {
                return None;
            }
            let archive = zip::find_archive(bytes)?;
            if archive.start < report.logical_end {
                return None;
            }
            Some(CovertLocation {
                format,
                start: 0,
                length: report.logical_end,
                via: InsertionKind::PrependTolerated,
            })
        }
        FormatId::Hta | FormatId::Php | FormatId::Js | FormatId::Ps1 => {
            if first == format {
                return None;
            }
            covert_regions(bytes)
                .into_iter()
                .find(|r| classify_region(&r.payload) == Some(format))
                .map(|r| CovertLocation { format, start: r.start, length: r.length, via: r.via })
        }
    }
}

/// Bytes carried at `loc`, with container framing removed.
pub fn covert_payload(bytes: &[u8], loc: &CovertLocation) -> Option<Vec<u8>> {
    let end = loc.start.checked_add(loc.length)?;
    if end > bytes.len() {
        return None;
    }
    match loc.via {
        InsertionKind::CommentSegment | InsertionKind::CommentExtension | InsertionKind::AncillaryChunk => {
            let first = identify_first(bytes);
            comment_regions(first, bytes)
                .into_iter()
                .find(|r| r.start == loc.start && r.length == loc.length)
                .map(|r| r.payload)
        }
        _ => Some(bytes[loc.start..end].to_vec()),
    }
}

/// Ground-truth label recovery: the first format plus every covert format
/// located by a tolerant reader. JAR subsumes ZIP.
pub fn recover_labels(bytes: &[u8]) -> BTreeSet<FormatId> {
    let first = identify_first(bytes);
    let mut labels = BTreeSet::new();
    if first == FormatId::Unknown {
        return labels;
    }
    labels.insert(first);
    for f in FormatId::KNOWN {
        if f != first && locate_covert(f, bytes).is_some() {
            labels.insert(f);
        }
    }
    if labels.contains(&FormatId::Jar) {
        labels.remove(&FormatId::Zip);
    }
    labels
}

pub(crate) fn read_u16_le(b: &[u8], at: usize) -> Option<u16> {
    b.get(at..at.checked_add(2)?).map(|s| u16::from_le_bytes([s[0], s[1]]))
}

pub(crate) fn read_u32_le(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at.checked_add(4)?)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

pub(crate) fn read_i32_le(b: &[u8], at: usize) -> Option<i32> {
    read_u32_le(b, at).map(|v| v as i32)
}

pub(crate) fn read_u16_be(b: &[u8], at: usize) -> Option<u16> {
    b.get(at..at.checked_add(2)?).map(|s| u16::from_be_bytes([s[0], s[1]]))
}

pub(crate) fn read_u32_be(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at.checked_add(4)?)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
}

pub(crate) fn find_subslice(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || from >= haystack.len() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}
