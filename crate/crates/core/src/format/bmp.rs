use super::{read_i32_le, read_u16_le, read_u32_le, FormatId, ParseReport};

const DIB_HEADER_SIZES: &[u32] = &[12, 40, 52, 56, 64, 108, 124];
const BI_RGB: u32 = 0;
const BI_BITFIELDS: u32 = 3;
const BI_ALPHABITFIELDS: u32 = 6;

/// Layout facts needed by validation and reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BmpLayout {
    pub declared_size: usize,
    pub pixel_offset: usize,
    pub dib_size: usize,
    /// End of file header, DIB header, bit masks and color table.
    pub headers_end: usize,
    pub pixel_len: usize,
}

impl BmpLayout {
    pub fn pixel_end(&self) -> usize {
        self.pixel_offset + self.pixel_len
    }
}

pub fn sniff(bytes: &[u8]) -> bool {
    bytes.len() >= 26
        && bytes.starts_with(b"BM")
        && read_u32_le(bytes, 14).is_some_and(|s| DIB_HEADER_SIZES.contains(&s))
}

pub fn layout(bytes: &[u8]) -> Result<BmpLayout, String> {
    if !sniff(bytes) {
        return Err("missing BMP signature or unknown DIB header size".into());
    }
    let declared_size = read_u32_le(bytes, 2).unwrap() as usize;
    let pixel_offset = read_u32_le(bytes, 10).unwrap() as usize;
    let dib_size = read_u32_le(bytes, 14).unwrap() as usize;
    if 14 + dib_size > bytes.len() {
        return Err("DIB header runs past end of file".into());
    }
    let (width, height, planes, bpp, compression, image_size, colors_used) = if dib_size == 12 {
        (
            read_u16_le(bytes, 18).unwrap() as i64,
            read_u16_le(bytes, 20).unwrap() as i64,
            read_u16_le(bytes, 22).unwrap(),
            read_u16_le(bytes, 24).unwrap(),
            BI_RGB,
            0u32,
            0u32,
        )
    } else {
        (
            read_i32_le(bytes, 18).unwrap() as i64,
            read_i32_le(bytes, 22).unwrap() as i64,
            read_u16_le(bytes, 26).unwrap(),
            read_u16_le(bytes, 28).unwrap(),
            read_u32_le(bytes, 30).unwrap(),
            read_u32_le(bytes, 34).unwrap(),
            read_u32_le(bytes, 46).unwrap(),
        )
    };
    if width <= 0 || height == 0 {
        return Err(format!("bad dimensions {width}x{height}"));
    }
    if planes != 1 {
        return Err(format!("planes field is {planes}, expected 1"));
    }
    if ![1, 4, 8, 16, 24, 32].contains(&bpp) {
        return Err(format!("unsupported bit depth {bpp}"));
    }
    let masks = match (dib_size, compression) {
        (40, BI_BITFIELDS) => 12,
        (40, BI_ALPHABITFIELDS) => 16,
        _ => 0,
    };
    let palette_entries = if bpp <= 8 {
        if colors_used != 0 { colors_used as usize } else { 1usize << bpp }
    } else {
        colors_used as usize
    };
    if palette_entries > 1 << 16 {
        return Err(format!("color table of {palette_entries} entries"));
    }
    let entry = if dib_size == 12 { 3 } else { 4 };
    let headers_end = 14 + dib_size + masks + palette_entries * entry;
    let pixel_len = match compression {
        BI_RGB | BI_BITFIELDS | BI_ALPHABITFIELDS => {
            let stride = (width as u64 * bpp as u64).div_ceil(32) * 4;
            let len = stride * height.unsigned_abs();
            if len > bytes.len() as u64 {
                return Err(format!("pixel array of {len} bytes exceeds file length"));
            }
            len as usize
        }
        1 | 2 | 4 | 5 if image_size > 0 => image_size as usize,
        other => return Err(format!("unsupported compression {other} or missing image size")),
    };
    if pixel_offset < 14 + dib_size {
        return Err(format!("pixel data offset {pixel_offset} overlaps headers"));
    }
    let layout = BmpLayout { declared_size, pixel_offset, dib_size, headers_end, pixel_len };
    if layout.pixel_end() > bytes.len() {
        return Err("pixel array runs past end of file".into());
    }
    Ok(layout)
}

pub fn validate(bytes: &[u8]) -> ParseReport {
    match layout(bytes) {
        Ok(l) => {
            let mut end = l.pixel_end();
            let mut report = ParseReport::ok(FormatId::Bmp, end);
            if l.declared_size > bytes.len() {
                report.notes.push(format!(
                    "declared file size {} exceeds actual length {}",
                    l.declared_size,
                    bytes.len()
                ));
            } else if l.declared_size > end {
                end = l.declared_size;
                report.logical_end = end;
            }
            report
        }
        Err(e) => ParseReport::invalid(FormatId::Bmp, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bmp_2x2() -> Vec<u8> {
        let row = 8; // 2 px * 3 bytes, padded to 4
        let size = 14 + 40 + row * 2;
        let mut b = Vec::new();
        b.extend_from_slice(b"BM");
        b.extend_from_slice(&(size as u32).to_le_bytes());
        b.extend_from_slice(&[0, 0, 0, 0]);
        b.extend_from_slice(&54u32.to_le_bytes());
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(&2i32.to_le_bytes());
        b.extend_from_slice(&2i32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&[0u8; 24]);
        b.extend_from_slice(&[1u8; 16]);
        b
    }

    #[test]
    fn two_by_two_logical_end_is_declared_size() {
        let b = bmp_2x2();
        let r = validate(&b);
        assert!(r.valid, "{:?}", r.notes);
        assert_eq!(r.logical_end, 70);
        assert_eq!(r.logical_end, b.len());
    }

    #[test]
    fn truncated_pixels_invalid() {
        let mut b = bmp_2x2();
        b.truncate(60);
        assert!(!validate(&b).valid);
    }

    #[test]
    fn huge_dimensions_do_not_overflow() {
        let mut b = bmp_2x2();
        b[18..22].copy_from_slice(&i32::MAX.to_le_bytes());
        b[22..26].copy_from_slice(&i32::MIN.to_le_bytes());
        assert!(!validate(&b).valid);
    }
}
