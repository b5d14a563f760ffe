use super::checksum::{crc32, Crc32};
use super::{read_u32_be, FormatId, InsertionKind, ParseReport, Region};

pub const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
pub const MAX_CHUNK_LEN: usize = 0x7FFF_FFFF;
/// Private, ancillary, safe-to-copy chunk type used for parasites.
pub const PARASITE_TYPE: [u8; 4] = *b"pyLd";

/// Ancillary chunk types registered by the PNG specification and its
/// extensions. Any other ancillary chunk is treated as opaque payload.
const KNOWN_ANCILLARY: &[[u8; 4]] = &[
    *b"bKGD", *b"cHRM", *b"cICP", *b"dSIG", *b"eXIf", *b"gAMA", *b"hIST", *b"iCCP", *b"mDCv",
    *b"cLLi", *b"pHYs", *b"sBIT", *b"sPLT", *b"sRGB", *b"sTER", *b"tIME", *b"tRNS", *b"acTL",
    *b"fcTL", *b"fdAT", *b"oFFs", *b"pCAL", *b"sCAL", *b"gIFg", *b"gIFx",
];
const TEXT_TYPES: &[[u8; 4]] = &[*b"tEXt", *b"zTXt", *b"iTXt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub ty: [u8; 4],
    /// Offset of the length field.
    pub start: usize,
    pub data_len: usize,
}

impl Chunk {
    pub fn data_start(&self) -> usize {
        self.start + 8
    }

    pub fn end(&self) -> usize {
        self.start + 12 + self.data_len
    }

    pub fn is_critical(&self) -> bool {
        self.ty[0].is_ascii_uppercase()
    }

    pub fn name(&self) -> String {
        String::from_utf8_lossy(&self.ty).into_owned()
    }
}

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.starts_with(&SIGNATURE)
}

/// Walk the chunk list up to and including IEND, checking every CRC.
pub fn parse_chunks(bytes: &[u8]) -> Result<Vec<Chunk>, String> {
    if !sniff(bytes) {
        return Err("missing PNG signature".into());
    }
    let mut chunks = Vec::new();
    let mut pos = SIGNATURE.len();
    loop {
        let len = read_u32_be(bytes, pos).ok_or_else(|| format!("truncated chunk header at offset {pos}"))?
            as usize;
        if len > MAX_CHUNK_LEN {
            return Err(format!("chunk length {len} at offset {pos} exceeds 2^31-1"));
        }
        let ty: [u8; 4] = bytes
            .get(pos + 4..pos + 8)
            .ok_or_else(|| format!("truncated chunk type at offset {pos}"))?
            .try_into()
            .unwrap();
        if !ty.iter().all(|b| b.is_ascii_alphabetic()) {
            return Err(format!("invalid chunk type bytes at offset {pos}"));
        }
        let chunk = Chunk { ty, start: pos, data_len: len };
        let name = chunk.name();
        if chunk.end() > bytes.len() {
            return Err(format!("chunk '{name}' at offset {pos} runs past end of file"));
        }
        let stored = read_u32_be(bytes, pos + 8 + len).unwrap();
        let computed = crc32(&bytes[pos + 4..pos + 8 + len]);
        if stored != computed {
            return Err(format!(
                "CRC mismatch in chunk '{name}' at offset {pos}: stored {stored:08x}, computed {computed:08x}"
            ));
        }
        chunks.push(chunk);
        pos = chunk.end();
        if &ty == b"IEND" {
            return Ok(chunks);
        }
    }
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    let chunks = match parse_chunks(bytes) {
        Ok(c) => c,
        Err(e) => return ParseReport::invalid(FormatId::Png, e),
    };
    let first = chunks[0];
    if &first.ty != b"IHDR" || first.data_len != 13 {
        return ParseReport::invalid(FormatId::Png, "first chunk is not a 13-byte IHDR");
    }
    let ihdr = &bytes[first.data_start()..first.data_start() + 13];
    let width = u32::from_be_bytes(ihdr[0..4].try_into().unwrap());
    let height = u32::from_be_bytes(ihdr[4..8].try_into().unwrap());
    if width == 0 || height == 0 {
        return ParseReport::invalid(FormatId::Png, "zero image dimension in IHDR");
    }
    if !chunks.iter().any(|c| &c.ty == b"IDAT") {
        return ParseReport::invalid(FormatId::Png, "no IDAT chunk");
    }
    if chunks.iter().skip(1).any(|c| &c.ty == b"IHDR") {
        return ParseReport::invalid(FormatId::Png, "duplicate IHDR chunk");
    }
    ParseReport::ok(FormatId::Png, chunks.last().unwrap().end())
}

/// Parasites go directly after IHDR (signature + 25-byte IHDR chunk).
pub fn parasite_insert_offset() -> usize {
    SIGNATURE.len() + 12 + 13
}

pub fn is_opaque_ancillary(ty: &[u8; 4]) -> bool {
    ty[0].is_ascii_lowercase() && (TEXT_TYPES.contains(ty) || !KNOWN_ANCILLARY.contains(ty))
}

pub fn comment_regions(bytes: &[u8]) -> Vec<Region> {
    let Ok(chunks) = parse_chunks(bytes) else {
        return Vec::new();
    };
    chunks
        .iter()
        .filter(|c| is_opaque_ancillary(&c.ty))
        .map(|c| Region {
            start: c.data_start(),
            length: c.data_len,
            via: InsertionKind::AncillaryChunk,
            payload: bytes[c.data_start()..c.data_start() + c.data_len].to_vec(),
        })
        .collect()
}

/// Serialize one chunk with its CRC.
pub fn write_chunk(out: &mut Vec<u8>, ty: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(ty);
    out.extend_from_slice(data);
    out.extend_from_slice(&Crc32::new().update(ty).update(data).finish().to_be_bytes());
}
