//! Token rules for the four script formats.
//!
//! None of these formats carries a required signature, so membership is
//! decided by token presence:
//!
//! * PHP: `<?php` (case-insensitive).
//! * HTA: `<hta:application`, or an `<html` tag together with a `<script`
//!   tag (both case-insensitive).
//! * PS1: at least two distinct entries of [`PS1_TOKENS`] (case-insensitive).
//! * JS: at least two distinct entries of [`JS_TOKENS`] (case-sensitive).
//!
//! When several rules match, the precedence is PHP, HTA, PS1, JS.

use super::{FormatId, ParseReport};

pub const PHP_TOKEN: &[u8] = b"<?php";
pub const HTA_TOKEN: &[u8] = b"<hta:application";
pub const HTML_TAG: &[u8] = b"<html";
pub const SCRIPT_TAG: &[u8] = b"<script";

pub const PS1_TOKENS: &[&str] = &[
    "param(",
    "write-host",
    "write-output",
    "$psscriptroot",
    "-erroraction",
    "get-childitem",
    "get-content",
    "set-content",
    "foreach-object",
    "where-object",
    "[cmdletbinding()]",
    "$env:",
    "new-object",
    "invoke-",
];

pub const JS_TOKENS: &[&str] = &[
    "function ",
    "function(",
    "=>",
    "document.",
    "var ",
    "let ",
    "const ",
    "console.log",
    "window.",
    "JSON.",
];

/// Minimum number of distinct tokens for the PS1 and JS rules.
pub const MIN_DISTINCT_TOKENS: usize = 2;

/// Fraction of bytes that must look like text before any rule is tried.
const MIN_TEXT_RATIO: f64 = 0.85;

fn contains_ci(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty()
        && haystack.len() >= needle.len()
        && haystack
            .windows(needle.len())
            .any(|w| w.eq_ignore_ascii_case(needle))
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn distinct_hits(bytes: &[u8], tokens: &[&str], case_insensitive: bool) -> usize {
    tokens
        .iter()
        .filter(|t| {
            if case_insensitive {
                contains_ci(bytes, t.as_bytes())
            } else {
                contains(bytes, t.as_bytes())
            }
        })
        .count()
}

pub fn looks_like_text(bytes: &[u8]) -> bool {
    if bytes.is_empty() {
        return false;
    }
    let texty = bytes
        .iter()
        .filter(|&&b| matches!(b, b'\t' | b'\n' | b'\r' | 0x20..=0x7E) || b >= 0x80)
        .count();
    texty as f64 / bytes.len() as f64 >= MIN_TEXT_RATIO
}

pub fn is_php(bytes: &[u8]) -> bool {
    contains_ci(bytes, PHP_TOKEN)
}

pub fn is_hta(bytes: &[u8]) -> bool {
    contains_ci(bytes, HTA_TOKEN) || (contains_ci(bytes, HTML_TAG) && contains_ci(bytes, SCRIPT_TAG))
}

pub fn is_ps1(bytes: &[u8]) -> bool {
    distinct_hits(bytes, PS1_TOKENS, true) >= MIN_DISTINCT_TOKENS
}

pub fn is_js(bytes: &[u8]) -> bool {
    distinct_hits(bytes, JS_TOKENS, false) >= MIN_DISTINCT_TOKENS
}

fn rule(format: FormatId) -> fn(&[u8]) -> bool {
    match format {
        FormatId::Php => is_php,
        FormatId::Hta => is_hta,
        FormatId::Ps1 => is_ps1,
        FormatId::Js => is_js,
        _ => |_| false,
    }
}

/// Highest-precedence script rule matching `bytes`.
pub fn classify(bytes: &[u8]) -> Option<FormatId> {
    if !looks_like_text(bytes) {
        return None;
    }
    [FormatId::Php, FormatId::Hta, FormatId::Ps1, FormatId::Js]
        .into_iter()
        .find(|&f| rule(f)(bytes))
}

/// Lenient validation: the format's own token rule, ignoring precedence.
pub fn validate(format: FormatId, bytes: &[u8]) -> ParseReport {
    if !looks_like_text(bytes) {
        return ParseReport::invalid(format, "content is not text");
    }
    if rule(format)(bytes) {
        ParseReport::ok(format, bytes.len())
    } else {
        ParseReport::invalid(format, format!("no {format} tokens found"))
    }
}

/// Any opening token of any script format; used by the comment scanner.
pub fn has_opening_token(bytes: &[u8]) -> bool {
    contains_ci(bytes, b"<?")
        || contains_ci(bytes, HTA_TOKEN)
        || contains_ci(bytes, SCRIPT_TAG)
        || contains_ci(bytes, HTML_TAG)
        || distinct_hits(bytes, PS1_TOKENS, true) > 0
        || distinct_hits(bytes, JS_TOKENS, false) > 0
}
