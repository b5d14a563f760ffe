//! Image disarmament by structural reconstruction: the output is rebuilt from
//! the format-essential structures of the input, copied byte for byte, in
//! their original order. Comments, unknown chunks, other metadata and
//! anything after the logical end are dropped.

use serde::Serialize;
use thiserror::Error;

use crate::format::{bmp, gif, identify_first, jpeg, locate_covert, png, validate, FormatId};
use crate::scanner::{self, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SanitizeError {
    #[error("not an image (identified as {0})")]
    NotAnImage(FormatId),
    #[error("invalid {format}: {notes}")]
    InvalidImage { format: FormatId, notes: String },
}

const PNG_KEEP: [&[u8; 4]; 5] = [b"IHDR", b"PLTE", b"tRNS", b"IDAT", b"IEND"];

fn jpeg_keep(s: &jpeg::Segment) -> bool {
    // DRI is kept because restart-marker scans cannot be decoded without it.
    matches!(s.marker, jpeg::SOI | jpeg::APP0 | jpeg::DQT | jpeg::DHT | jpeg::DRI | jpeg::SOS | jpeg::EOI) || s.is_sof()
}

/// A graphic control extension in its only well-formed shape (one 4-byte
/// sub-block), which affects display and has no room for a payload.
fn is_plain_gce(bytes: &[u8], b: &gif::Block) -> bool {
    b.kind == gif::BlockKind::Extension(gif::GRAPHIC_CONTROL_LABEL) && b.end - b.start == 8 && bytes[b.start + 2] == 4
}

/// The whitelisted structures of a valid image, in file order. For BMP these
/// are the headers after the 14-byte file header, then the pixel array; the
/// file header's size and offset fields are recomputed on output.
pub fn whitelisted_structures(format: FormatId, bytes: &[u8]) -> Result<Vec<&[u8]>, SanitizeError> {
    let invalid = |notes: String| SanitizeError::InvalidImage { format, notes };
    let report = validate(format, bytes);
    if !report.valid {
        return Err(invalid(report.notes.join("; ")));
    }
    Ok(match format {
        FormatId::Png => {
            let mut out = vec![&bytes[..png::SIGNATURE.len()]];
            let chunks = png::parse_chunks(bytes).map_err(invalid)?;
            out.extend(chunks.iter().filter(|c| PNG_KEEP.contains(&&c.ty)).map(|c| &bytes[c.start..c.end()]));
            out
        }
        FormatId::Jpeg => {
            let segs = jpeg::parse_segments(bytes).map_err(invalid)?;
            segs.iter().filter(|s| jpeg_keep(s)).map(|s| &bytes[s.start..s.end]).collect()
        }
        FormatId::Gif => {
            let blocks = gif::parse_blocks(bytes).map_err(invalid)?;
            blocks
                .iter()
                .filter(|b| !matches!(b.kind, gif::BlockKind::Extension(_)) || is_plain_gce(bytes, b))
                .map(|b| &bytes[b.start..b.end])
                .collect()
        }
        FormatId::Bmp => {
            let l = bmp::layout(bytes).map_err(invalid)?;
            vec![&bytes[14..l.headers_end], &bytes[l.pixel_offset..l.pixel_end()]]
        }
        other => return Err(SanitizeError::NotAnImage(other)),
    })
}

pub fn sanitize_image(bytes: &[u8]) -> Result<Vec<u8>, SanitizeError> {
    let format = identify_first(bytes);
    if !format.is_image() {
        return Err(SanitizeError::NotAnImage(format));
    }
    let parts = whitelisted_structures(format, bytes)?;
    let mut out = Vec::with_capacity(bytes.len());
    if format == FormatId::Bmp {
        let headers_end = 14 + parts[0].len();
        let total = headers_end + parts[1].len();
        out.extend_from_slice(&bytes[..14]);
        out[2..6].copy_from_slice(&(total as u32).to_le_bytes());
        out[10..14].copy_from_slice(&(headers_end as u32).to_le_bytes());
    }
    for p in parts {
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Outcome of the four disarmament checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub format: FormatId,
    /// (a) The output validates as the input's format.
    pub valid: bool,
    /// (b) The scanner finds nothing suspicious.
    pub scanner_clean: bool,
    /// (c) Formats a tolerant reader still finds in the output.
    pub covert_found: Vec<FormatId>,
    /// (d) Whitelisted structures equal those of the input.
    pub structures_identical: bool,
}

impl CleanReport {
    pub fn passed(&self) -> bool {
        self.valid && self.scanner_clean && self.covert_found.is_empty() && self.structures_identical
    }
}

pub fn verify_clean(original: &[u8], sanitized: &[u8]) -> CleanReport {
    let format = identify_first(original);
    let valid = format.is_image() && validate(format, sanitized).valid;
    let covert_found = FormatId::KNOWN
        .into_iter()
        .filter(|&f| f != format && locate_covert(f, sanitized).is_some())
        .collect();
    let structures_identical = match (whitelisted_structures(format, original), whitelisted_structures(format, sanitized)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    CleanReport {
        format,
        valid,
        scanner_clean: scanner::verdict(sanitized).verdict == Verdict::Clean,
        covert_found,
        structures_identical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_donor;

    #[test]
    fn synthesized_monoglots_pass_unchanged() {
        for f in [FormatId::Bmp, FormatId::Gif, FormatId::Png] {
            for seed in 0..10 {
                let x = synth_donor(f, seed, 400).unwrap();
                let s = sanitize_image(&x).unwrap();
                assert_eq!(s, x, "{f} seed {seed}");
                assert!(verify_clean(&x, &s).passed());
            }
        }
    }

    #[test]
    fn unknown_chunks_and_tail_are_dropped() {
        let x = synth_donor(FormatId::Png, 1, 300).unwrap();
        let mut poly = x.clone();
        let mut chunk = Vec::new();
        png::write_chunk(&mut chunk, b"tEXt", b"Comment\0hello");
        png::write_chunk(&mut chunk, &png::PARASITE_TYPE, b"<?php echo 1; ?>");
        let at = png::parasite_insert_offset();
        poly.splice(at..at, chunk);
        poly.extend_from_slice(b"trailing");
        let s = sanitize_image(&poly).unwrap();
        assert_eq!(s, x);
        assert_eq!(sanitize_image(&s).unwrap(), s);
    }

    #[test]
    fn bmp_gap_is_closed() {
        let x = synth_donor(FormatId::Bmp, 2, 300).unwrap();
        let l = bmp::layout(&x).unwrap();
        let mut gapped = x[..l.pixel_offset].to_vec();
        gapped.extend_from_slice(b"<?php system($_GET['c']); ?>");
        let off = gapped.len() as u32;
        gapped.extend_from_slice(&x[l.pixel_offset..]);
        gapped[10..14].copy_from_slice(&off.to_le_bytes());
        let size = gapped.len() as u32;
        gapped[2..6].copy_from_slice(&size.to_le_bytes());
        assert!(validate(FormatId::Bmp, &gapped).valid);
        let s = sanitize_image(&gapped).unwrap();
        assert_eq!(s, x);
    }

    #[test]
    fn corrupted_output_fails_validity() {
        let x = synth_donor(FormatId::Png, 3, 300).unwrap();
        let mut s = sanitize_image(&x).unwrap();
        let n = s.len();
        s[n - 20] ^= 0xFF;
        let r = verify_clean(&x, &s);
        assert!(!r.valid && !r.passed());
    }

    #[test]
    fn preconditions() {
        let php = synth_donor(FormatId::Php, 0, 200).unwrap();
        assert_eq!(sanitize_image(&php), Err(SanitizeError::NotAnImage(FormatId::Php)));
        let mut png = synth_donor(FormatId::Png, 0, 200).unwrap();
        png.truncate(png.len() - 5);
        assert!(matches!(sanitize_image(&png), Err(SanitizeError::InvalidImage { .. })));
    }
}
