//! RAR 1.5–4.x and RAR 5 block walking. Readers skip any bytes in front of
//! the marker, so covert archives are found by a forward scan.

use super::checksum::crc32;
use super::{find_subslice, read_u16_le, read_u32_le, FormatId, ParseReport};

pub const SIG_V4: &[u8] = b"Rar!\x1a\x07\x00";
pub const SIG_V5: &[u8] = b"Rar!\x1a\x07\x01\x00";
const SIG_PREFIX: &[u8] = b"Rar!\x1a\x07";

const V4_MAIN: u8 = 0x73;
const V4_FILE: u8 = 0x74;
const V4_END: u8 = 0x7B;
const V4_LONG_BLOCK: u16 = 0x8000;
const V4_METHOD_STORE: u8 = 0x30;

const V5_END: u64 = 5;

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.starts_with(SIG_V4) || bytes.starts_with(SIG_V5)
}

/// Exclusive end of the archive starting at offset zero.
pub fn archive_end(bytes: &[u8]) -> Result<usize, String> {
    if bytes.starts_with(SIG_V4) {
        walk_v4(bytes)
    } else if bytes.starts_with(SIG_V5) {
        walk_v5(bytes)
    } else {
        Err("missing RAR signature".into())
    }
}

fn walk_v4(bytes: &[u8]) -> Result<usize, String> {
    let mut pos = SIG_V4.len();
    let mut blocks = 0usize;
    while pos < bytes.len() {
        if pos + 7 > bytes.len() {
            return Err(format!("truncated block header at offset {pos}"));
        }
        let head_crc = read_u16_le(bytes, pos).unwrap();
        let head_type = bytes[pos + 2];
        let flags = read_u16_le(bytes, pos + 3).unwrap();
        let head_size = read_u16_le(bytes, pos + 5).unwrap() as usize;
        if head_size < 7 || pos + head_size > bytes.len() {
            return Err(format!("bad header size {head_size} at offset {pos}"));
        }
        if !(0x72..=0x7B).contains(&head_type) {
            return Err(format!("unknown block type 0x{head_type:02x} at offset {pos}"));
        }
        if blocks == 0 && head_type != V4_MAIN {
            return Err("first block is not the archive header".into());
        }
        let computed = (crc32(&bytes[pos + 2..pos + head_size]) & 0xFFFF) as u16;
        if computed != head_crc {
            return Err(format!("header CRC mismatch at offset {pos}"));
        }
        let add_size = if flags & V4_LONG_BLOCK != 0 || head_type == V4_FILE {
            if head_size < 11 {
                return Err(format!("long block header too short at offset {pos}"));
            }
            read_u32_le(bytes, pos + 7).unwrap() as usize
        } else {
            0
        };
        let next = pos + head_size + add_size;
        if next > bytes.len() {
            return Err(format!("block data at offset {pos} runs past end of file"));
        }
        if head_type == V4_FILE && head_size >= 32 {
            let file_crc = read_u32_le(bytes, pos + 16).unwrap();
            let method = bytes[pos + 25];
            let split_or_encrypted = flags & 0x0007 != 0;
            if method == V4_METHOD_STORE && !split_or_encrypted {
                let data = &bytes[pos + head_size..next];
                if crc32(data) != file_crc {
                    return Err(format!("file CRC mismatch for entry at offset {pos}"));
                }
            }
        }
        blocks += 1;
        pos = next;
        if head_type == V4_END {
            return Ok(pos);
        }
    }
    if blocks == 0 {
        return Err("no archive header".into());
    }
    Ok(pos)
}

fn read_vint(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let mut value = 0u64;
    for shift in (0..70).step_by(7) {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        value |= ((b & 0x7F) as u64) << shift;
        if b & 0x80 == 0 {
            return Some(value);
        }
    }
    None
}

fn walk_v5(bytes: &[u8]) -> Result<usize, String> {
    let mut pos = SIG_V5.len();
    let mut blocks = 0usize;
    while pos < bytes.len() {
        let crc = read_u32_le(bytes, pos).ok_or_else(|| format!("truncated header at offset {pos}"))?;
        let mut p = pos + 4;
        let size_at = p;
        let head_size = read_vint(bytes, &mut p).ok_or("bad header size")? as usize;
        let header_end = p
            .checked_add(head_size)
            .filter(|&e| e <= bytes.len() && head_size > 0)
            .ok_or_else(|| format!("header at offset {pos} runs past end of file"))?;
        if crc32(&bytes[size_at..header_end]) != crc {
            return Err(format!("header CRC mismatch at offset {pos}"));
        }
        let head_type = read_vint(bytes, &mut p).ok_or("bad header type")?;
        let flags = read_vint(bytes, &mut p).ok_or("bad header flags")?;
        if flags & 0x01 != 0 {
            read_vint(bytes, &mut p).ok_or("bad extra size")?;
        }
        let data_size = if flags & 0x02 != 0 {
            read_vint(bytes, &mut p).ok_or("bad data size")? as usize
        } else {
            0
        };
        if p > header_end || !(1..=5).contains(&head_type) {
            return Err(format!("malformed header at offset {pos}"));
        }
        let next = header_end
            .checked_add(data_size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format!("data area at offset {pos} runs past end of file"))?;
        blocks += 1;
        pos = next;
        if head_type == V5_END {
            return Ok(pos);
        }
    }
    if blocks == 0 {
        return Err("no archive header".into());
    }
    Ok(pos)
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    match archive_end(bytes) {
        Ok(end) => ParseReport::ok(FormatId::Rar, end),
        Err(e) => ParseReport::invalid(FormatId::Rar, e),
    }
}

/// Forward scan for the first marker that starts a well-formed archive.
pub fn find_archive(bytes: &[u8]) -> Option<(usize, usize)> {
    let mut from = 0;
    while let Some(at) = find_subslice(bytes, SIG_PREFIX, from) {
        if let Ok(end) = archive_end(&bytes[at..]) {
            return Some((at, end));
        }
        from = at + 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(ty: u8, flags: u16, body: &[u8]) -> Vec<u8> {
        let size = (7 + body.len()) as u16;
        let mut rest = vec![ty];
        rest.extend_from_slice(&flags.to_le_bytes());
        rest.extend_from_slice(&size.to_le_bytes());
        rest.extend_from_slice(body);
        let crc = (crc32(&rest) & 0xFFFF) as u16;
        let mut out = crc.to_le_bytes().to_vec();
        out.extend_from_slice(&rest);
        out
    }

    fn tiny_rar() -> Vec<u8> {
        let mut r = SIG_V4.to_vec();
        r.extend(block(V4_MAIN, 0, &[0; 6]));
        r.extend(block(V4_END, 0x4000, &[]));
        r
    }

    #[test]
    fn end_block_bytes_match_reference() {
        assert_eq!(block(V4_END, 0x4000, &[]), [0xC4, 0x3D, 0x7B, 0x00, 0x40, 0x07, 0x00]);
    }

    #[test]
    fn forward_scan_skips_prefix() {
        let mut f = b"junk junk Rar!\x1a\x07 not really".to_vec();
        let at = f.len();
        f.extend(tiny_rar());
        f.extend_from_slice(b"tail");
        assert_eq!(find_archive(&f), Some((at, tiny_rar().len())));
    }

    #[test]
    fn corrupt_header_rejected() {
        let mut r = tiny_rar();
        r[10] ^= 1;
        assert!(!validate(&r).valid);
    }
}
