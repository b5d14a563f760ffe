//! Polyglot construction by stacking or by parasitic embedding.
//!
//! Only combinations observed in malicious use are generated. Zipper and
//! cavity polyglots (mutual comments, padding space) are not produced.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::format::{
    self, covert_payload, gif, identify_first, jpeg, locate_covert, png, recover_labels, validate, zip,
    CovertLocation, FormatId, InsertionKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Stack,
    Parasite,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stack => "STACK",
            Method::Parasite => "PARASITE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stack" => Ok(Method::Stack),
            "parasite" => Ok(Method::Parasite),
            other => Err(format!("unknown method {other:?} (expected stack or parasite)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combination {
    pub covert: FormatId,
    pub overt: FormatId,
    pub methods: &'static [Method],
}

const BOTH: &[Method] = &[Method::Stack, Method::Parasite];
const STACK: &[Method] = &[Method::Stack];
const PARASITE: &[Method] = &[Method::Parasite];

/// Methods for a script hidden in `overt`: images with comment structures
/// take both, BMP/PE/RAR only stacking, ZIP only its archive comment.
fn script_methods(overt: FormatId) -> &'static [Method] {
    match overt {
        FormatId::Jpeg | FormatId::Png | FormatId::Gif => BOTH,
        FormatId::Zip => PARASITE,
        _ => STACK,
    }
}

/// The in-the-wild combination matrix restricted to the supported formats:
/// 30 (covert, overt) pairs.
pub fn combination_matrix() -> Vec<Combination> {
    use FormatId::*;
    let rows: [(FormatId, &[FormatId]); 8] = [
        (Hta, &[Jpeg, Png, Bmp, Gif, Pe, Rar, Zip]),
        (Php, &[Jpeg, Png, Bmp, Gif, Rar, Zip]),
        (Js, &[Gif, Bmp]),
        (Ps1, &[Jpeg, Bmp, Gif]),
        (Zip, &[Jpeg, Png, Gif]),
        (Jar, &[Jpeg, Png, Gif]),
        (Rar, &[Jpeg, Png, Bmp, Gif]),
        (Bmp, &[Zip, Jar]),
    ];
    rows.iter()
        .flat_map(|(covert, overts)| {
            overts.iter().map(move |&overt| Combination {
                covert: *covert,
                overt,
                methods: if covert.is_script() { script_methods(overt) } else { STACK },
            })
        })
        .collect()
}

pub fn allowed_methods(covert: FormatId, overt: FormatId) -> Option<&'static [Method]> {
    combination_matrix()
        .into_iter()
        .find(|c| c.covert == covert && c.overt == overt)
        .map(|c| c.methods)
}

/// Digest of the canonical text form of the matrix.
pub fn matrix_hash() -> [u8; 32] {
    let mut h = Sha256::new();
    for c in combination_matrix() {
        let methods: Vec<&str> = c.methods.iter().map(|m| m.name()).collect();
        h.update(format!("{}>{}:{}\n", c.covert, c.overt, methods.join(",")).as_bytes());
    }
    h.finalize().into()
}

/// Insertion point used for a method over a given pair.
pub fn canonical_point(covert: FormatId, overt: FormatId, method: Method) -> Option<InsertionKind> {
    match method {
        Method::Stack if overt.is_zip_family() && covert.is_image() => Some(InsertionKind::PrependTolerated),
        Method::Stack => Some(InsertionKind::AppendAfterLogicalEnd),
        Method::Parasite => match overt {
            FormatId::Jpeg => Some(InsertionKind::CommentSegment),
            FormatId::Png => Some(InsertionKind::AncillaryChunk),
            FormatId::Gif => Some(InsertionKind::CommentExtension),
            FormatId::Zip | FormatId::Jar => Some(InsertionKind::ArchiveComment),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub covert: FormatId,
    pub overt: FormatId,
    pub method: Method,
    pub point: InsertionKind,
    pub seed: u64,
}

impl Recipe {
    /// Recipe with the canonical insertion point. Illegal combinations are
    /// rejected later by [`forge`].
    pub fn new(covert: FormatId, overt: FormatId, method: Method, seed: u64) -> Self {
        let point = canonical_point(covert, overt, method).unwrap_or(InsertionKind::AppendAfterLogicalEnd);
        Recipe { covert, overt, method, point, seed }
    }

    pub fn labels(&self) -> BTreeSet<FormatId> {
        [self.covert, self.overt].into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgeResult {
    pub bytes: Vec<u8>,
    pub recipe: Recipe,
    pub covert_location: CovertLocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForgeError {
    #[error("illegal recipe: {0}")]
    IllegalRecipe(String),
    #[error("{role} donor invalid as {format}: {reason}")]
    DonorInvalid { role: &'static str, format: FormatId, reason: String },
    #[error("payload of {size} bytes exceeds {capacity}-byte capacity of {point:?}")]
    PayloadTooLarge { size: usize, capacity: usize, point: InsertionKind },
}

fn check_recipe(recipe: &Recipe) -> Result<(), ForgeError> {
    let methods = allowed_methods(recipe.covert, recipe.overt).ok_or_else(|| {
        ForgeError::IllegalRecipe(format!("({}, {}) is not in the combination matrix", recipe.covert, recipe.overt))
    })?;
    if !methods.contains(&recipe.method) {
        return Err(ForgeError::IllegalRecipe(format!(
            "{} is not allowed for ({}, {})",
            recipe.method, recipe.covert, recipe.overt
        )));
    }
    let expected = canonical_point(recipe.covert, recipe.overt, recipe.method);
    if expected != Some(recipe.point) {
        return Err(ForgeError::IllegalRecipe(format!(
            "insertion point {:?} is not supported for {} over {}",
            recipe.point, recipe.method, recipe.overt
        )));
    }
    Ok(())
}

fn check_donor(role: &'static str, format: FormatId, bytes: &[u8]) -> Result<(), ForgeError> {
    let invalid = |reason: String| ForgeError::DonorInvalid { role, format, reason };
    if bytes.is_empty() {
        return Err(invalid("empty file".into()));
    }
    let report = validate(format, bytes);
    if !report.valid {
        return Err(invalid(report.notes.join("; ")));
    }
    let first = identify_first(bytes);
    if first != format {
        return Err(invalid(format!("identified as {first}")));
    }
    Ok(())
}

fn embed(recipe: &Recipe, covert: &[u8], overt: &[u8]) -> Result<Vec<u8>, ForgeError> {
    let too_large = |capacity: usize| ForgeError::PayloadTooLarge { size: covert.len(), capacity, point: recipe.point };
    Ok(match recipe.point {
        InsertionKind::AppendAfterLogicalEnd => [overt, covert].concat(),
        InsertionKind::PrependTolerated => [covert, overt].concat(),
        InsertionKind::CommentSegment => {
            let at = jpeg::comment_insert_offset(overt);
            [&overt[..at], &jpeg::comment_segments(covert), &overt[at..]].concat()
        }
        InsertionKind::AncillaryChunk => {
            if covert.len() > png::MAX_CHUNK_LEN {
                return Err(too_large(png::MAX_CHUNK_LEN));
            }
            let at = png::parasite_insert_offset();
            let mut out = overt[..at].to_vec();
            png::write_chunk(&mut out, &png::PARASITE_TYPE, covert);
            out.extend_from_slice(&overt[at..]);
            out
        }
        InsertionKind::CommentExtension => {
            let trailer = validate(FormatId::Gif, overt).logical_end - 1;
            [&overt[..trailer], &gif::comment_extension(covert), &overt[trailer..]].concat()
        }
        InsertionKind::ArchiveComment => {
            let archive = zip::parse(overt).map_err(|e| ForgeError::DonorInvalid {
                role: "overt",
                format: recipe.overt,
                reason: e,
            })?;
            if archive.comment_len > 0 {
                return Err(ForgeError::DonorInvalid {
                    role: "overt",
                    format: recipe.overt,
                    reason: "archive already carries a comment".into(),
                });
            }
            if covert.len() > zip::MAX_COMMENT {
                return Err(too_large(zip::MAX_COMMENT));
            }
            zip::with_comment(overt, &archive, covert)
        }
    })
}

fn payload_matches(bytes: &[u8], loc: &CovertLocation, donor: &[u8]) -> bool {
    covert_payload(bytes, loc).is_some_and(|p| p == donor)
}

/// Build a polyglot and check that both formats survive.
pub fn forge(recipe: Recipe, covert_bytes: &[u8], overt_bytes: &[u8]) -> Result<ForgeResult, ForgeError> {
    check_recipe(&recipe)?;
    check_donor("covert", recipe.covert, covert_bytes)?;
    check_donor("overt", recipe.overt, overt_bytes)?;
    let bytes = embed(&recipe, covert_bytes, overt_bytes)?;

    let unrecoverable = |reason: &str| ForgeError::DonorInvalid {
        role: "covert",
        format: recipe.covert,
        reason: reason.to_string(),
    };
    if !validate(recipe.overt, &bytes).valid {
        return Err(ForgeError::DonorInvalid {
            role: "overt",
            format: recipe.overt,
            reason: "overt structure does not survive embedding".into(),
        });
    }
    let loc = locate_covert(recipe.covert, &bytes).ok_or_else(|| unrecoverable("covert payload not locatable"))?;
    if !payload_matches(&bytes, &loc, covert_bytes) {
        return Err(unrecoverable("located payload differs from the donor"));
    }
    if recover_labels(&bytes) != recipe.labels() {
        return Err(unrecoverable("donor content makes the label set ambiguous"));
    }
    Ok(ForgeResult { bytes, recipe, covert_location: loc })
}

/// Recheck a forge result from its bytes alone.
pub fn verify_polyglot(result: &ForgeResult) -> bool {
    let r = &result.recipe;
    if check_recipe(r).is_err() || !validate(r.overt, &result.bytes).valid {
        return false;
    }
    let Some(loc) = locate_covert(r.covert, &result.bytes) else {
        return false;
    };
    if loc != result.covert_location {
        return false;
    }
    let Some(payload) = format::covert_payload(&result.bytes, &loc) else {
        return false;
    };
    validate(r.covert, &payload).valid && recover_labels(&result.bytes) == r.labels()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_has_thirty_pairs() {
        let m = combination_matrix();
        assert_eq!(m.len(), 30);
        let pairs: BTreeSet<_> = m.iter().map(|c| (c.covert, c.overt)).collect();
        assert_eq!(pairs.len(), 30);
        assert_eq!(m, combination_matrix());
    }

    #[test]
    fn matrix_examples() {
        assert_eq!(allowed_methods(FormatId::Hta, FormatId::Jpeg), Some(BOTH));
        assert_eq!(allowed_methods(FormatId::Bmp, FormatId::Zip), Some(STACK));
        assert_eq!(allowed_methods(FormatId::Png, FormatId::Bmp), None);
    }

    #[test]
    fn parasite_only_over_comment_bearing_overts() {
        for c in combination_matrix() {
            if c.methods.contains(&Method::Parasite) {
                assert!(canonical_point(c.covert, c.overt, Method::Parasite).is_some());
            }
        }
    }

    #[test]
    fn illegal_pair_rejected() {
        let r = Recipe::new(FormatId::Png, FormatId::Bmp, Method::Stack, 0);
        assert!(matches!(forge(r, b"x", b"y"), Err(ForgeError::IllegalRecipe(_))));
        let r = Recipe::new(FormatId::Zip, FormatId::Jpeg, Method::Parasite, 0);
        assert!(matches!(forge(r, b"x", b"y"), Err(ForgeError::IllegalRecipe(_))));
    }
}
