//! ZIP/JAR reading the way tolerant extractors do it: find the
//! end-of-central-directory record by scanning backwards, then resolve every
//! entry relative to a base offset inferred from where the central directory
//! actually sits. Anything prepended to the archive is tolerated.

use super::checksum::crc32;
use super::{read_u16_le, read_u32_le, FormatId, ParseReport};

pub const LOCAL_SIG: [u8; 4] = *b"PK\x03\x04";
pub const CENTRAL_SIG: [u8; 4] = *b"PK\x01\x02";
pub const EOCD_SIG: [u8; 4] = *b"PK\x05\x06";
pub const EOCD_LEN: usize = 22;
pub const MAX_COMMENT: usize = 65535;
pub const JAR_MANIFEST: &[u8] = b"META-INF/MANIFEST.MF";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipEntry {
    pub name: Vec<u8>,
    pub method: u16,
    pub crc: u32,
    pub compressed_size: usize,
    pub uncompressed_size: usize,
    /// Absolute offset of the local file header.
    pub local_offset: usize,
    pub data_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipArchive {
    /// Amount by which every stored offset is shifted in this file.
    pub base: usize,
    /// First byte belonging to the archive.
    pub start: usize,
    pub cd_start: usize,
    pub eocd_pos: usize,
    pub comment_start: usize,
    pub comment_len: usize,
    /// Exclusive end of the EOCD record including its comment.
    pub end: usize,
    pub entries: Vec<ZipEntry>,
}

impl ZipArchive {
    pub fn is_jar(&self) -> bool {
        self.entries.iter().any(|e| e.name == JAR_MANIFEST)
    }
}

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.starts_with(&LOCAL_SIG) || bytes.starts_with(&EOCD_SIG)
}

fn parse_at(bytes: &[u8], eocd: usize) -> Result<ZipArchive, String> {
    let disk = read_u16_le(bytes, eocd + 4).unwrap();
    let cd_disk = read_u16_le(bytes, eocd + 6).unwrap();
    let on_disk = read_u16_le(bytes, eocd + 8).unwrap();
    let total = read_u16_le(bytes, eocd + 10).unwrap();
    let cd_size = read_u32_le(bytes, eocd + 12).unwrap();
    let cd_offset = read_u32_le(bytes, eocd + 16).unwrap();
    let comment_len = read_u16_le(bytes, eocd + 20).unwrap() as usize;
    if disk != 0 || cd_disk != 0 || on_disk != total {
        return Err("multi-volume archives are not supported".into());
    }
    if total == 0xFFFF || cd_size == 0xFFFF_FFFF || cd_offset == 0xFFFF_FFFF {
        return Err("ZIP64 archives are not supported".into());
    }
    let end = eocd + EOCD_LEN + comment_len;
    if end > bytes.len() {
        return Err("EOCD comment runs past end of file".into());
    }
    let cd_start = eocd
        .checked_sub(cd_size as usize)
        .ok_or("central directory size exceeds EOCD position")?;
    let base = cd_start
        .checked_sub(cd_offset as usize)
        .ok_or("central directory offset exceeds its position")?;

    let mut entries = Vec::with_capacity(total as usize);
    let mut pos = cd_start;
    for i in 0..total {
        if bytes.get(pos..pos + 4) != Some(&CENTRAL_SIG[..]) || pos + 46 > eocd {
            return Err(format!("central directory entry {i} missing at offset {pos}"));
        }
        let flags = read_u16_le(bytes, pos + 8).unwrap();
        let method = read_u16_le(bytes, pos + 10).unwrap();
        let crc = read_u32_le(bytes, pos + 16).unwrap();
        let compressed_size = read_u32_le(bytes, pos + 20).unwrap() as usize;
        let uncompressed_size = read_u32_le(bytes, pos + 24).unwrap() as usize;
        let name_len = read_u16_le(bytes, pos + 28).unwrap() as usize;
        let extra_len = read_u16_le(bytes, pos + 30).unwrap() as usize;
        let comment = read_u16_le(bytes, pos + 32).unwrap() as usize;
        let local_rel = read_u32_le(bytes, pos + 42).unwrap() as usize;
        let name_end = pos + 46 + name_len;
        let next = name_end + extra_len + comment;
        if next > eocd {
            return Err(format!("central directory entry {i} overruns the directory"));
        }
        let name = bytes[pos + 46..name_end].to_vec();

        let local = base + local_rel;
        if bytes.get(local..local + 4) != Some(&LOCAL_SIG[..]) || local + 30 > cd_start {
            return Err(format!("local header for entry {i} not found at offset {local}"));
        }
        let lname_len = read_u16_le(bytes, local + 26).unwrap() as usize;
        let lextra_len = read_u16_le(bytes, local + 28).unwrap() as usize;
        if bytes.get(local + 30..local + 30 + lname_len) != Some(&name[..]) {
            return Err(format!("local and central names differ for entry {i}"));
        }
        let data_start = local + 30 + lname_len + lextra_len;
        let data_end = data_start
            .checked_add(compressed_size)
            .filter(|&e| e <= cd_start)
            .ok_or_else(|| format!("data for entry {i} overlaps the central directory"))?;
        if method == 0 && flags & 1 == 0 {
            if compressed_size != uncompressed_size {
                return Err(format!("stored entry {i} has mismatched sizes"));
            }
            if crc32(&bytes[data_start..data_end]) != crc {
                return Err(format!(
                    "CRC mismatch in entry '{}'",
                    String::from_utf8_lossy(&name)
                ));
            }
        }
        entries.push(ZipEntry {
            name,
            method,
            crc,
            compressed_size,
            uncompressed_size,
            local_offset: local,
            data_start,
        });
        pos = next;
    }
    if pos != eocd {
        return Err("central directory size does not match its entries".into());
    }
    let start = entries.iter().map(|e| e.local_offset).min().unwrap_or(cd_start);
    Ok(ZipArchive {
        base,
        start,
        cd_start,
        eocd_pos: eocd,
        comment_start: eocd + EOCD_LEN,
        comment_len,
        end,
        entries,
    })
}

/// Backward scan (at most 22 + 65535 bytes from the end) for an EOCD record
/// whose central directory is consistent.
pub fn parse(bytes: &[u8]) -> Result<ZipArchive, String> {
    if bytes.len() < EOCD_LEN {
        return Err("too short for an end-of-central-directory record".into());
    }
    let lowest = bytes.len().saturating_sub(EOCD_LEN + MAX_COMMENT);
    let mut first_err = None;
    for pos in (lowest..=bytes.len() - EOCD_LEN).rev() {
        if bytes[pos..pos + 4] != EOCD_SIG {
            continue;
        }
        match parse_at(bytes, pos) {
            Ok(a) => return Ok(a),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or_else(|| "no end-of-central-directory record".into()))
}

pub fn find_archive(bytes: &[u8]) -> Option<ZipArchive> {
    parse(bytes).ok()
}

pub fn validate(bytes: &[u8], jar: bool) -> ParseReport {
    let format = if jar { FormatId::Jar } else { FormatId::Zip };
    match parse(bytes) {
        Ok(a) if jar && !a.is_jar() => ParseReport::invalid(format, "no META-INF/MANIFEST.MF entry"),
        Ok(a) => {
            let mut r = ParseReport::ok(format, a.end);
            if a.start > 0 {
                r.notes.push(format!("archive starts at offset {}", a.start));
            }
            r
        }
        Err(e) => ParseReport::invalid(format, e),
    }
}

/// Build a stored-mode (method 0) archive.
pub fn build_stored(entries: &[(&[u8], &[u8])], comment: &[u8]) -> Vec<u8> {
    assert!(comment.len() <= MAX_COMMENT);
    let mut out = Vec::new();
    let mut central = Vec::new();
    // Fixed DOS timestamp keeps output deterministic.
    let (time, date) = (0x6000u16, 0x5821u16);
    for (name, data) in entries {
        let crc = crc32(data);
        let offset = out.len() as u32;
        out.extend_from_slice(&LOCAL_SIG);
        out.extend_from_slice(&10u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&time.to_le_bytes());
        out.extend_from_slice(&date.to_le_bytes());
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(data);

        central.extend_from_slice(&CENTRAL_SIG);
        central.extend_from_slice(&20u16.to_le_bytes());
        central.extend_from_slice(&10u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&time.to_le_bytes());
        central.extend_from_slice(&date.to_le_bytes());
        central.extend_from_slice(&crc.to_le_bytes());
        central.extend_from_slice(&(data.len() as u32).to_le_bytes());
        central.extend_from_slice(&(data.len() as u32).to_le_bytes());
        central.extend_from_slice(&(name.len() as u16).to_le_bytes());
        central.extend_from_slice(&[0u8; 12]);
        central.extend_from_slice(&offset.to_le_bytes());
        central.extend_from_slice(name);
    }
    let cd_offset = out.len() as u32;
    out.extend_from_slice(&central);
    out.extend_from_slice(&EOCD_SIG);
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    out.extend_from_slice(&(central.len() as u32).to_le_bytes());
    out.extend_from_slice(&cd_offset.to_le_bytes());
    out.extend_from_slice(&(comment.len() as u16).to_le_bytes());
    out.extend_from_slice(comment);
    out
}

/// Replace the EOCD comment of a valid archive.
pub fn with_comment(bytes: &[u8], archive: &ZipArchive, comment: &[u8]) -> Vec<u8> {
    assert!(comment.len() <= MAX_COMMENT);
    let mut out = bytes[..archive.eocd_pos + 20].to_vec();
    out.extend_from_slice(&(comment.len() as u16).to_le_bytes());
    out.extend_from_slice(comment);
    out.extend_from_slice(&bytes[archive.end..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_archive_round_trip() {
        let z = build_stored(&[(b"a.txt", b"hello"), (b"b.bin", &[0, 1, 2])], b"");
        let a = parse(&z).unwrap();
        assert_eq!(a.entries.len(), 2);
        assert_eq!(a.start, 0);
        assert_eq!(a.end, z.len());
        assert!(!a.is_jar());
        assert!(validate(&z, false).valid);
        assert!(!validate(&z, true).valid);
    }

    #[test]
    fn prepended_bytes_are_tolerated() {
        let z = build_stored(&[(b"a.txt", b"hello")], b"");
        let mut p = vec![0xAAu8; 100];
        p.extend_from_slice(&z);
        let a = parse(&p).unwrap();
        assert_eq!(a.base, 100);
        assert_eq!(a.start, 100);
    }

    #[test]
    fn comment_is_located() {
        let z = build_stored(&[(b"a.txt", b"hello")], b"");
        let a = parse(&z).unwrap();
        let c = with_comment(&z, &a, b"some comment");
        let a2 = parse(&c).unwrap();
        assert_eq!(a2.comment_len, 12);
        assert_eq!(&c[a2.comment_start..a2.end], b"some comment");
        assert_eq!(a2.entries, a.entries);
    }

    #[test]
    fn corrupted_data_fails_crc() {
        let mut z = build_stored(&[(b"a.txt", b"hello")], b"");
        z[30 + 5] ^= 0xFF;
        let r = validate(&z, false);
        assert!(!r.valid);
        assert!(r.notes[0].contains("CRC"));
    }
}
