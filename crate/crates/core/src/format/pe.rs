//! Portable Executable header sanity checks. Only what a loader needs to
//! find the image and its sections is examined; the optional header is not.

use super::{read_u16_le, read_u32_le, FormatId, ParseReport};

pub const MAX_SECTIONS: usize = 96;
const KNOWN_MACHINES: &[u16] = &[
    0x014C, // i386
    0x8664, // x86-64
    0x01C0, // ARM
    0x01C4, // ARMv7 Thumb-2
    0xAA64, // ARM64
    0x0200, // IA-64
];

fn nt_header_offset(bytes: &[u8]) -> Option<usize> {
    if !bytes.starts_with(b"MZ") {
        return None;
    }
    let e_lfanew = read_u32_le(bytes, 0x3C)? as usize;
    (e_lfanew >= 0x40 && e_lfanew.checked_add(24)? <= bytes.len()).then_some(e_lfanew)
}

pub fn sniff(bytes: &[u8]) -> bool {
    nt_header_offset(bytes).is_some_and(|at| &bytes[at..at + 4] == b"PE\0\0")
}

/// Overlay boundary: end of the last section's raw data or of the headers.
pub fn image_end(bytes: &[u8]) -> Result<usize, String> {
    if !bytes.starts_with(b"MZ") {
        return Err("missing MZ signature at offset 0".into());
    }
    let nt = nt_header_offset(bytes).ok_or("e_lfanew out of range")?;
    if &bytes[nt..nt + 4] != b"PE\0\0" {
        return Err(format!("missing PE signature at offset {nt}"));
    }
    let machine = read_u16_le(bytes, nt + 4).unwrap();
    if !KNOWN_MACHINES.contains(&machine) {
        return Err(format!("unknown machine type 0x{machine:04x}"));
    }
    let sections = read_u16_le(bytes, nt + 6).unwrap() as usize;
    if sections > MAX_SECTIONS {
        return Err(format!("{sections} sections exceeds {MAX_SECTIONS}"));
    }
    let opt_size = read_u16_le(bytes, nt + 20).unwrap() as usize;
    let table = nt + 24 + opt_size;
    let table_end = table + 40 * sections;
    if table_end > bytes.len() {
        return Err("section table runs past end of file".into());
    }
    let mut end = table_end;
    for i in 0..sections {
        let at = table + 40 * i;
        let raw_size = read_u32_le(bytes, at + 16).unwrap() as usize;
        let raw_ptr = read_u32_le(bytes, at + 20).unwrap() as usize;
        if raw_size == 0 {
            continue;
        }
        let raw_end = raw_ptr
            .checked_add(raw_size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format!("section {i} raw data runs past end of file"))?;
        end = end.max(raw_end);
    }
    Ok(end)
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    match image_end(bytes) {
        Ok(end) => ParseReport::ok(FormatId::Pe, end),
        Err(e) => ParseReport::invalid(FormatId::Pe, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_pe() -> Vec<u8> {
        let mut b = vec![0u8; 0x200];
        b[0..2].copy_from_slice(b"MZ");
        b[0x3C..0x40].copy_from_slice(&0x40u32.to_le_bytes());
        b[0x40..0x44].copy_from_slice(b"PE\0\0");
        b[0x44..0x46].copy_from_slice(&0x014Cu16.to_le_bytes());
        b[0x46..0x48].copy_from_slice(&1u16.to_le_bytes());
        b[0x54..0x56].copy_from_slice(&0u16.to_le_bytes());
        let sec = 0x40 + 24;
        b[sec..sec + 5].copy_from_slice(b".text");
        b[sec + 16..sec + 20].copy_from_slice(&0x100u32.to_le_bytes());
        b[sec + 20..sec + 24].copy_from_slice(&0x100u32.to_le_bytes());
        b
    }

    #[test]
    fn minimal_pe_is_valid() {
        let pe = minimal_pe();
        assert!(sniff(&pe));
        let r = validate(&pe);
        assert!(r.valid, "{:?}", r.notes);
        assert_eq!(r.logical_end, 0x200);
    }

    #[test]
    fn overlay_is_outside_logical_end() {
        let mut pe = minimal_pe();
        pe.extend_from_slice(b"overlay");
        assert_eq!(validate(&pe).logical_end, 0x200);
    }

    #[test]
    fn section_past_eof_invalid() {
        let mut pe = minimal_pe();
        pe.truncate(0x1F0);
        assert!(!validate(&pe).valid);
    }
}
