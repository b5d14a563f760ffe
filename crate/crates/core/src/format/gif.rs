use super::{read_u16_le, FormatId, InsertionKind, ParseReport, Region};

pub const TRAILER: u8 = 0x3B;
pub const EXTENSION: u8 = 0x21;
pub const IMAGE_DESCRIPTOR: u8 = 0x2C;
pub const COMMENT_LABEL: u8 = 0xFE;
pub const GRAPHIC_CONTROL_LABEL: u8 = 0xF9;
pub const SUB_BLOCK_MAX: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Header, logical screen descriptor and global color table.
    Preamble,
    Extension(u8),
    Image,
    Trailer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a")
}

fn color_table_len(packed: u8) -> usize {
    if packed & 0x80 != 0 {
        3 << ((packed & 0x07) + 1)
    } else {
        0
    }
}

/// Skip a chain of data sub-blocks starting at `pos`; returns the offset just
/// past the zero-length terminator.
fn skip_sub_blocks(bytes: &[u8], mut pos: usize) -> Result<usize, String> {
    loop {
        let n = *bytes.get(pos).ok_or_else(|| format!("unterminated sub-block chain at offset {pos}"))? as usize;
        pos += 1;
        if n == 0 {
            return Ok(pos);
        }
        if pos + n > bytes.len() {
            return Err(format!("sub-block at offset {} runs past end of file", pos - 1));
        }
        pos += n;
    }
}

/// Concatenated sub-block data and the span from the first to the last data
/// byte.
pub fn read_sub_blocks(bytes: &[u8], pos: usize) -> Option<(Vec<u8>, usize, usize)> {
    let mut data = Vec::new();
    let mut p = pos;
    let mut first = None;
    let mut last = pos;
    loop {
        let n = *bytes.get(p)? as usize;
        p += 1;
        if n == 0 {
            let start = first.unwrap_or(p - 1);
            return Some((data, start, last.max(start)));
        }
        let chunk = bytes.get(p..p + n)?;
        first.get_or_insert(p);
        data.extend_from_slice(chunk);
        p += n;
        last = p;
    }
}

pub fn parse_blocks(bytes: &[u8]) -> Result<Vec<Block>, String> {
    if !sniff(bytes) {
        return Err("missing GIF signature".into());
    }
    if bytes.len() < 13 {
        return Err("truncated logical screen descriptor".into());
    }
    let width = read_u16_le(bytes, 6).unwrap();
    let height = read_u16_le(bytes, 8).unwrap();
    if width == 0 || height == 0 {
        return Err("zero logical screen dimension".into());
    }
    let mut pos = 13 + color_table_len(bytes[10]);
    if pos > bytes.len() {
        return Err("global color table runs past end of file".into());
    }
    let mut blocks = vec![Block { kind: BlockKind::Preamble, start: 0, end: pos }];
    loop {
        let start = pos;
        let tag = *bytes
            .get(pos)
            .ok_or_else(|| format!("missing trailer: file ends at offset {pos}"))?;
        match tag {
            TRAILER => {
                blocks.push(Block { kind: BlockKind::Trailer, start, end: pos + 1 });
                return Ok(blocks);
            }
            EXTENSION => {
                let label = *bytes.get(pos + 1).ok_or("truncated extension label")?;
                pos = skip_sub_blocks(bytes, pos + 2)?;
                blocks.push(Block { kind: BlockKind::Extension(label), start, end: pos });
            }
            IMAGE_DESCRIPTOR => {
                if pos + 10 > bytes.len() {
                    return Err(format!("truncated image descriptor at offset {pos}"));
                }
                let w = read_u16_le(bytes, pos + 5).unwrap();
                let h = read_u16_le(bytes, pos + 7).unwrap();
                if w == 0 || h == 0 {
                    return Err(format!("zero image dimension at offset {pos}"));
                }
                pos += 10 + color_table_len(bytes[pos + 9]);
                let min_code = *bytes.get(pos).ok_or("missing LZW minimum code size")?;
                if !(2..=8).contains(&min_code) {
                    return Err(format!("LZW minimum code size {min_code} out of range"));
                }
                pos = skip_sub_blocks(bytes, pos + 1)?;
                blocks.push(Block { kind: BlockKind::Image, start, end: pos });
            }
            other => return Err(format!("unexpected block introducer 0x{other:02x} at offset {pos}")),
        }
    }
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    match parse_blocks(bytes) {
        Ok(blocks) if blocks.iter().any(|b| b.kind == BlockKind::Image) => {
            ParseReport::ok(FormatId::Gif, blocks.last().unwrap().end)
        }
        Ok(_) => ParseReport::invalid(FormatId::Gif, "no image descriptor"),
        Err(e) => ParseReport::invalid(FormatId::Gif, e),
    }
}

pub fn comment_regions(bytes: &[u8]) -> Vec<Region> {
    let Ok(blocks) = parse_blocks(bytes) else {
        return Vec::new();
    };
    blocks
        .iter()
        .filter(|b| b.kind == BlockKind::Extension(COMMENT_LABEL))
        .filter_map(|b| {
            let (payload, start, end) = read_sub_blocks(bytes, b.start + 2)?;
            Some(Region { start, length: end - start, via: InsertionKind::CommentExtension, payload })
        })
        .collect()
}

/// Comment extension carrying `payload` in 255-byte sub-blocks.
pub fn comment_extension(payload: &[u8]) -> Vec<u8> {
    let mut out = vec![EXTENSION, COMMENT_LABEL];
    for chunk in payload.chunks(SUB_BLOCK_MAX) {
        out.push(chunk.len() as u8);
        out.extend_from_slice(chunk);
    }
    out.push(0);
    out
}
