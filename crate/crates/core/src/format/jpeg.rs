use super::{read_u16_be, FormatId, InsertionKind, ParseReport, Region};

pub const SOI: u8 = 0xD8;
pub const EOI: u8 = 0xD9;
pub const SOS: u8 = 0xDA;
pub const DQT: u8 = 0xDB;
pub const DHT: u8 = 0xC4;
pub const DRI: u8 = 0xDD;
pub const DAC: u8 = 0xCC;
pub const APP0: u8 = 0xE0;
pub const COM: u8 = 0xFE;
/// Largest payload of one COM segment (the length field counts itself).
pub const MAX_COMMENT_PAYLOAD: usize = 65533;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub marker: u8,
    /// Offset of the 0xFF that introduces the marker.
    pub start: usize,
    /// Exclusive end; for SOS this includes the entropy-coded data.
    pub end: usize,
}

impl Segment {
    pub fn is_sof(&self) -> bool {
        matches!(self.marker, 0xC0..=0xCF) && !matches!(self.marker, DHT | 0xC8 | DAC)
    }

    pub fn has_length(&self) -> bool {
        !matches!(self.marker, SOI | EOI | 0x01 | 0xD0..=0xD7)
    }

    /// Payload after the two-byte length field.
    pub fn payload_range(&self, bytes: &[u8]) -> (usize, usize) {
        if !self.has_length() {
            return (self.start + 2, self.start + 2);
        }
        let len = read_u16_be(bytes, self.start + 2).unwrap_or(2) as usize;
        (self.start + 4, self.start + 2 + len)
    }
}

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.len() >= 3 && bytes[0] == 0xFF && bytes[1] == SOI && bytes[2] == 0xFF
}

/// End of the entropy-coded data that starts at `pos`: the offset of the
/// next marker that is neither a stuffed zero nor a restart marker.
fn scan_entropy(bytes: &[u8], mut pos: usize) -> Result<usize, String> {
    while pos < bytes.len() {
        if bytes[pos] != 0xFF {
            pos += 1;
            continue;
        }
        match bytes.get(pos + 1) {
            None => break,
            Some(0x00) | Some(0xD0..=0xD7) => pos += 2,
            Some(0xFF) => pos += 1,
            Some(_) => return Ok(pos),
        }
    }
    Err("entropy-coded data runs to end of file without a marker".into())
}

/// Segment list from SOI through the first EOI, at segment-structure level.
pub fn parse_segments(bytes: &[u8]) -> Result<Vec<Segment>, String> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err("missing SOI marker".into());
    }
    let mut segments = vec![Segment { marker: SOI, start: 0, end: 2 }];
    let mut pos = 2;
    loop {
        if bytes.get(pos) != Some(&0xFF) {
            return Err(format!("expected marker at offset {pos}"));
        }
        let mut mpos = pos + 1;
        while bytes.get(mpos) == Some(&0xFF) {
            mpos += 1;
        }
        let marker = *bytes.get(mpos).ok_or_else(|| format!("truncated marker at offset {pos}"))?;
        let start = mpos - 1;
        if marker == 0x00 {
            return Err(format!("invalid marker 0x00 at offset {start}"));
        }
        let mut seg = Segment { marker, start, end: mpos + 1 };
        if seg.has_length() {
            let len = read_u16_be(bytes, mpos + 1).ok_or_else(|| format!("truncated segment length at offset {start}"))?
                as usize;
            if len < 2 {
                return Err(format!("segment length {len} < 2 at offset {start}"));
            }
            seg.end = mpos + 1 + len;
            if seg.end > bytes.len() {
                return Err(format!("segment 0x{marker:02x} at offset {start} runs past end of file"));
            }
        }
        if marker == SOS {
            seg.end = scan_entropy(bytes, seg.end)?;
        }
        pos = seg.end;
        segments.push(seg);
        if marker == EOI {
            return Ok(segments);
        }
    }
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    let segments = match parse_segments(bytes) {
        Ok(s) => s,
        Err(e) => return ParseReport::invalid(FormatId::Jpeg, e),
    };
    let sof = segments.iter().position(Segment::is_sof);
    let sos = segments.iter().position(|s| s.marker == SOS);
    match (sof, sos) {
        (Some(f), Some(s)) if f < s => ParseReport::ok(FormatId::Jpeg, segments.last().unwrap().end),
        (None, _) => ParseReport::invalid(FormatId::Jpeg, "no start-of-frame segment"),
        (_, None) => ParseReport::invalid(FormatId::Jpeg, "no start-of-scan segment"),
        _ => ParseReport::invalid(FormatId::Jpeg, "start-of-scan precedes start-of-frame"),
    }
}

/// COM parasites go right after APP0 when the file opens with one.
pub fn comment_insert_offset(bytes: &[u8]) -> usize {
    match parse_segments(bytes) {
        Ok(segs) if segs.len() > 1 && segs[1].marker == APP0 => segs[1].end,
        _ => 2,
    }
}

/// One region per run of consecutive COM segments; payloads are joined.
pub fn comment_regions(bytes: &[u8]) -> Vec<Region> {
    let Ok(segments) = parse_segments(bytes) else {
        return Vec::new();
    };
    let mut regions = Vec::new();
    let mut i = 0;
    while i < segments.len() {
        if segments[i].marker != COM {
            i += 1;
            continue;
        }
        let (start, _) = segments[i].payload_range(bytes);
        let mut payload = Vec::new();
        let mut end = start;
        while i < segments.len() && segments[i].marker == COM {
            let (s, e) = segments[i].payload_range(bytes);
            payload.extend_from_slice(&bytes[s..e]);
            end = e;
            i += 1;
        }
        regions.push(Region { start, length: end - start, via: InsertionKind::CommentSegment, payload });
    }
    regions
}

/// COM segments carrying `payload`, split at 65533 bytes per segment.
pub fn comment_segments(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4 * (payload.len() / MAX_COMMENT_PAYLOAD + 1));
    for chunk in payload.chunks(MAX_COMMENT_PAYLOAD) {
        out.extend_from_slice(&[0xFF, COM]);
        out.extend_from_slice(&((chunk.len() + 2) as u16).to_be_bytes());
        out.extend_from_slice(chunk);
    }
    out
}
