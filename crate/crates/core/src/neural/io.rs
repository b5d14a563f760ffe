//! Model file layout, all integers little-endian:
//!
//! ```text
//! "PGCNN"  u16 version
//! u32 max_len  u32 embed_dim  u32 window  u32 stride  u32 filters
//! u8 head (0 binary, 1 multi-label)  u8 gated
//! u8 has_head_tail  u32 head_len  u32 tail_len
//! u32 fc_count  u32 fc_size * fc_count
//! u64 parameter count
//! f32 * parameter count, tensors in `ConvNetParams::tensors` order
//! u32 CRC-32 of everything above
//! ```

use super::{ConvNetConfig, ConvNetParams, Head, NeuralError};
use crate::format::crc32;
use crate::Scalar;

pub const MODEL_MAGIC: &[u8; 5] = b"PGCNN";
pub const MODEL_VERSION: u16 = 1;

pub fn save<T: Scalar>(params: &ConvNetParams<T>) -> Vec<u8> {
    let c = &params.config;
    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [c.max_len, c.embed_dim, c.window, c.stride, c.filters] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match c.head {
        Head::Binary => 0,
        Head::Multilabel => 1,
    });
    out.push(c.gated as u8);
    let (h, t) = c.head_tail.unwrap_or((0, 0));
    out.push(c.head_tail.is_some() as u8);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(c.fc_sizes.len() as u32).to_le_bytes());
    for &n in &c.fc_sizes {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.param_count() as u64).to_le_bytes());
    for (_, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NeuralError::Corrupt(format!("truncated at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NeuralError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn load<T: Scalar>(bytes: &[u8]) -> Result<ConvNetParams<T>, NeuralError> {
    if bytes.len() < 7 || &bytes[..5] != MODEL_MAGIC {
        return Err(NeuralError::Corrupt("missing PGCNN magic".into()));
    }
    let version = u16::from_le_bytes([bytes[5], bytes[6]]);
    if version != MODEL_VERSION {
        return Err(NeuralError::VersionMismatch(format!("file version {version}, expected {MODEL_VERSION}")));
    }
    if bytes.len() < 11 {
        return Err(NeuralError::Corrupt("truncated".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(NeuralError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 7 };
    let (max_len, embed_dim, window, stride, filters) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let head = match r.u8()? {
        0 => Head::Binary,
        1 => Head::Multilabel,
        h => return Err(NeuralError::Corrupt(format!("unknown head {h}"))),
    };
    let gated = r.u8()? != 0;
    let has_ht = r.u8()? != 0;
    let (h, t) = (r.u32()?, r.u32()?);
    let n_fc = r.u32()?;
    if n_fc > 64 {
        return Err(NeuralError::Corrupt(format!("{n_fc} dense layers")));
    }
    let fc_sizes = (0..n_fc).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let config = ConvNetConfig {
        max_len,
        embed_dim,
        window,
        stride,
        filters,
        fc_sizes,
        head,
        gated,
        head_tail: has_ht.then_some((h, t)),
    };
    config.validate().map_err(|e| NeuralError::Corrupt(e.to_string()))?;
    let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let mut params = ConvNetParams::<T>::zeros(&config);
    if count != params.param_count() || body.len() - r.pos != count * 4 {
        return Err(NeuralError::Corrupt("parameter count does not match configuration".into()));
    }
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            let x = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            if !x.is_finite() {
                return Err(NeuralError::Corrupt("non-finite parameter".into()));
            }
            *v = T::from_f32(x).unwrap();
        }
    }
    Ok(params)
}

/// [`load`], additionally requiring the stored configuration to equal `config`.
pub fn load_expecting<T: Scalar>(bytes: &[u8], config: &ConvNetConfig) -> Result<ConvNetParams<T>, NeuralError> {
    let p = load(bytes)?;
    if &p.config != config {
        return Err(NeuralError::VersionMismatch(format!("stored {:?}, expected {:?}", p.config, config)));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ConvNetParams<f32> {
        ConvNetParams::init(&ConvNetConfig::tiny(Head::Multilabel), 3).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let p = model();
        let bytes = save(&p);
        let q: ConvNetParams<f32> = load(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(save(&q), bytes);
        let gated = ConvNetParams::<f32>::init(&ConvNetConfig { max_len: 1024, ..ConvNetConfig::malconv(Head::Binary) }, 1).unwrap();
        assert_eq!(save(&load::<f32>(&save(&gated)).unwrap()), save(&gated));
    }

    #[test]
    fn truncation_and_bit_flips_are_corrupt() {
        let bytes = save(&model());
        for cut in [0, 6, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load::<f32>(&bytes[..cut]), Err(NeuralError::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x10;
        assert!(matches!(load::<f32>(&flipped), Err(NeuralError::Corrupt(_))));
    }

    #[test]
    fn version_and_config_mismatch() {
        let mut bytes = save(&model());
        assert!(matches!(
            load_expecting::<f32>(&bytes, &ConvNetConfig::tiny(Head::Binary)),
            Err(NeuralError::VersionMismatch(_))
        ));
        bytes[5] = 9;
        assert!(matches!(load::<f32>(&bytes), Err(NeuralError::VersionMismatch(_))));
    }
}
