//! Rule-based detection of extraneous content in images. Rules are driven by
//! the format parsers: data after the logical end, and comment payloads that
//! carry a script opening token or an archive signature.

use serde::Serialize;

use crate::format::{classify_region, comment_regions, identify_first, locate_covert, rar, script, validate, zip, FormatId};

pub const NOT_AN_IMAGE: &str = "not-an-image";
pub const UNPARSEABLE: &str = "unparseable-image";
pub const TRAILING_DATA: &str = "trailing-data";
pub const COMMENT_PAYLOAD: &str = "comment-payload";
pub const COMMENT_SCRIPT: &str = "comment-script-token";
pub const COMMENT_ARCHIVE: &str = "comment-archive-signature";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Info,
    Suspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule: &'static str,
    pub offset: usize,
    pub length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suspected: Option<FormatId>,
    pub severity: Severity,
}

impl Finding {
    fn info(rule: &'static str, offset: usize, length: usize) -> Self {
        Finding { rule, offset, length, suspected: None, severity: Severity::Info }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Clean,
    Suspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub format: FormatId,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

/// The image format and logical end, or the INFO finding explaining why the
/// rules do not apply.
fn scope(bytes: &[u8]) -> Result<(FormatId, usize), Finding> {
    let first = identify_first(bytes);
    if !first.is_image() {
        return Err(Finding::info(NOT_AN_IMAGE, 0, 0));
    }
    let report = validate(first, bytes);
    if !report.valid {
        return Err(Finding::info(UNPARSEABLE, 0, bytes.len()));
    }
    Ok((first, report.logical_end))
}

/// Data after the image's logical end.
pub fn scan_trailing(bytes: &[u8]) -> Vec<Finding> {
    let (_, end) = match scope(bytes) {
        Ok(s) => s,
        Err(info) => return vec![info],
    };
    if end >= bytes.len() {
        return Vec::new();
    }
    let located: Vec<FormatId> = FormatId::KNOWN
        .into_iter()
        .filter(|&f| locate_covert(f, bytes).is_some_and(|l| l.start >= end))
        .collect();
    // A JAR is also a readable ZIP; report the more specific format.
    let suspected = located.iter().copied().find(|&f| f == FormatId::Jar).or(located.first().copied());
    vec![Finding {
        rule: TRAILING_DATA,
        offset: end,
        length: bytes.len() - end,
        suspected,
        severity: Severity::Suspect,
    }]
}

fn archive_in(payload: &[u8]) -> Option<FormatId> {
    if let Some(a) = zip::find_archive(payload) {
        return Some(if a.is_jar() { FormatId::Jar } else { FormatId::Zip });
    }
    rar::find_archive(payload).map(|_| FormatId::Rar)
}

fn has_archive_signature(payload: &[u8]) -> bool {
    [&zip::LOCAL_SIG[..], &zip::EOCD_SIG[..], &rar::SIG_V4[..6]]
        .iter()
        .any(|sig| payload.windows(sig.len()).any(|w| w == *sig))
}

/// Comment payloads: JPEG COM, opaque PNG ancillary chunks, GIF comment
/// extensions.
pub fn scan_parasites(bytes: &[u8]) -> Vec<Finding> {
    let (format, _) = match scope(bytes) {
        Ok(s) => s,
        Err(info) => return vec![info],
    };
    comment_regions(format, bytes)
        .into_iter()
        .map(|r| {
            let (rule, suspected) = if script::has_opening_token(&r.payload) {
                (COMMENT_SCRIPT, classify_region(&r.payload))
            } else if has_archive_signature(&r.payload) {
                (COMMENT_ARCHIVE, archive_in(&r.payload))
            } else {
                return Finding::info(COMMENT_PAYLOAD, r.start, r.length);
            };
            Finding { rule, offset: r.start, length: r.length, suspected, severity: Severity::Suspect }
        })
        .collect()
}

/// SUSPECT iff any rule raised a SUSPECT finding.
pub fn verdict(bytes: &[u8]) -> ScanReport {
    let format = identify_first(bytes);
    let mut findings = match scope(bytes) {
        Ok(_) => {
            let mut f = scan_parasites(bytes);
            f.extend(scan_trailing(bytes));
            f
        }
        Err(info) => vec![info],
    };
    findings.sort_by_key(|f| (f.offset, f.length));
    let verdict = if findings.iter().any(|f| f.severity == Severity::Suspect) {
        Verdict::Suspect
    } else {
        Verdict::Clean
    };
    ScanReport { format, verdict, findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_donor;
    use crate::format::{jpeg, png};

    fn synth(f: FormatId, seed: u64) -> Vec<u8> {
        synth_donor(f, seed, 300).unwrap()
    }

    #[test]
    fn synthesized_images_are_clean() {
        for f in [FormatId::Bmp, FormatId::Gif, FormatId::Png] {
            for seed in 0..20 {
                let r = verdict(&synth(f, seed));
                assert_eq!(r.verdict, Verdict::Clean, "{f} seed {seed}: {:?}", r.findings);
                assert!(r.findings.is_empty());
            }
        }
    }

    #[test]
    fn one_trailing_zero_byte() {
        let mut p = synth(FormatId::Png, 1);
        let n = p.len();
        p.push(0);
        let f = scan_trailing(&p);
        assert_eq!(f, vec![Finding { rule: TRAILING_DATA, offset: n, length: 1, suspected: None, severity: Severity::Suspect }]);
    }

    #[test]
    fn php_in_private_png_chunk() {
        let p = synth(FormatId::Png, 2);
        let mut chunk = Vec::new();
        png::write_chunk(&mut chunk, &png::PARASITE_TYPE, b"<?php echo 1; ?>");
        let mut poly = p.clone();
        let at = png::parasite_insert_offset();
        poly.splice(at..at, chunk);
        let f = scan_parasites(&poly);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].severity, f[0].suspected, f[0].offset), (Severity::Suspect, Some(FormatId::Php), at + 8));
        assert_eq!(verdict(&poly).verdict, Verdict::Suspect);
    }

    #[test]
    fn benign_jpeg_comment_is_info() {
        let j = crate::corpus::load_fixtures(FormatId::Jpeg, &crate::corpus::default_fixtures_dir()).unwrap();
        let mut j = j[0].bytes.clone();
        let at = jpeg::comment_insert_offset(&j);
        j.splice(at..at, jpeg::comment_segments(b"made with care, 2024"));
        let f = scan_parasites(&j);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].rule, f[0].severity, f[0].length), (COMMENT_PAYLOAD, Severity::Info, 20));
        assert_eq!(verdict(&j).verdict, Verdict::Clean);
    }

    #[test]
    fn archive_signature_in_comment() {
        let mut g = synth(FormatId::Gif, 3);
        let z = synth(FormatId::Zip, 3);
        let at = g.len() - 1;
        g.splice(at..at, crate::format::gif::comment_extension(&z[..200.min(z.len())]));
        let f = scan_parasites(&g);
        assert_eq!(f[0].rule, COMMENT_ARCHIVE);
        assert_eq!(f[0].severity, Severity::Suspect);
    }

    #[test]
    fn non_image_is_clean_with_info() {
        let r = verdict(&synth(FormatId::Php, 4));
        assert_eq!(r.verdict, Verdict::Clean);
        assert_eq!(r.findings, vec![Finding::info(NOT_AN_IMAGE, 0, 0)]);
    }
}
