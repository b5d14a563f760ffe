//! Deterministic donor synthesis for the formats that are cheap to emit
//! correctly: BMP, GIF (literal-code LZW), PNG (stored deflate), ZIP/JAR
//! (stored entries) and template-expanded scripts. JPEG, RAR and PE donors
//! come from validated fixtures instead.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusError;
use crate::format::{adler32, gif, png, zip, FormatId};

const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "jasper", "kilo",
    "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform",
    "victor", "whiskey", "xray", "yankee", "zulu", "amber", "basil", "cedar", "dune", "ember", "fern",
    "grove", "heath", "iris", "jade", "kelp", "lotus", "maple", "nectar", "olive", "pearl", "quartz",
    "reed", "sage", "thistle", "umber", "vale", "willow", "yarrow", "zephyr", "harbor", "lantern",
    "meadow", "orchard", "pebble", "ripple", "summit", "timber", "valley",
];

pub fn is_synthesizable(format: FormatId) -> bool {
    matches!(
        format,
        FormatId::Bmp
            | FormatId::Gif
            | FormatId::Png
            | FormatId::Zip
            | FormatId::Jar
            | FormatId::Hta
            | FormatId::Php
            | FormatId::Js
            | FormatId::Ps1
    )
}

fn rng_for(format: FormatId, seed: u64, size_hint: usize) -> ChaCha8Rng {
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((format.index() as u64) << 48)
        .wrapping_add(size_hint as u64);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Synthesize a donor of roughly `size_hint` bytes that validates as `format`.
pub fn synth_donor(format: FormatId, seed: u64, size_hint: usize) -> Result<Vec<u8>, CorpusError> {
    if !is_synthesizable(format) {
        return Err(CorpusError::UnsupportedSynth(format));
    }
    let mut rng = rng_for(format, seed, size_hint);
    let size_hint = size_hint.max(16);
    Ok(match format {
        FormatId::Bmp => bmp(&mut rng, size_hint),
        FormatId::Gif => gif(&mut rng, size_hint),
        FormatId::Png => png(&mut rng, size_hint),
        FormatId::Zip => zip_archive(&mut rng, size_hint, false),
        FormatId::Jar => zip_archive(&mut rng, size_hint, true),
        FormatId::Hta => hta(&mut rng, size_hint),
        FormatId::Php => php(&mut rng, size_hint),
        FormatId::Js => js(&mut rng, size_hint),
        FormatId::Ps1 => ps1(&mut rng, size_hint),
        _ => unreachable!("checked by is_synthesizable"),
    })
}

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).unwrap()
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

fn ident(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(4..10);
    let mut s: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
    s.push_str(&rng.gen_range(0..100).to_string());
    s
}

fn capitalized(rng: &mut ChaCha8Rng) -> String {
    let w = word(rng);
    let mut c = w.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

/// Dimensions giving roughly `pixels` pixels with a random aspect ratio.
fn dims(rng: &mut ChaCha8Rng, pixels: usize) -> (usize, usize) {
    let pixels = pixels.max(4);
    let w = rng.gen_range(2..=((pixels as f64).sqrt() as usize * 2).max(2)).min(pixels);
    let h = (pixels / w).max(1);
    (w, h)
}

/// Smooth random pattern: two gradients plus a little noise.
fn pattern(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize, levels: u32) -> Vec<u8> {
    let base: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.0..levels as f64)).collect();
    let gx: Vec<f64> = (0..channels).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let gy: Vec<f64> = (0..channels).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut out = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = base[c] + gx[c] * x as f64 + gy[c] * y as f64 + rng.gen_range(-1.5..1.5);
                out.push(v.rem_euclid(levels as f64) as u8);
            }
        }
    }
    out
}

fn bmp(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let (w, h) = dims(rng, size_hint.saturating_sub(54) / 3);
    let stride = (w * 3).div_ceil(4) * 4;
    let pixels = pattern(rng, w, h, 3, 256);
    let size = 54 + stride * h;
    let mut b = Vec::with_capacity(size);
    b.extend_from_slice(b"BM");
    b.extend_from_slice(&(size as u32).to_le_bytes());
    b.extend_from_slice(&[0; 4]);
    b.extend_from_slice(&54u32.to_le_bytes());
    b.extend_from_slice(&40u32.to_le_bytes());
    b.extend_from_slice(&(w as i32).to_le_bytes());
    b.extend_from_slice(&(h as i32).to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&24u16.to_le_bytes());
    b.extend_from_slice(&0u32.to_le_bytes());
    b.extend_from_slice(&((stride * h) as u32).to_le_bytes());
    b.extend_from_slice(&2835u32.to_le_bytes());
    b.extend_from_slice(&2835u32.to_le_bytes());
    b.extend_from_slice(&[0; 8]);
    for row in pixels.chunks(w * 3) {
        b.extend_from_slice(row);
        b.resize(b.len() + stride - w * 3, 0);
    }
    b
}

/// LZW stream that only ever emits literal codes, with a clear code often
/// enough that the code width never grows.
fn lzw_literal(indices: &[u8], min_code_size: u8) -> Vec<u8> {
    let clear = 1u32 << min_code_size;
    let end = clear + 1;
    let width = min_code_size as u32 + 1;
    let run = (1usize << min_code_size) - 2;
    let mut out = Vec::new();
    let (mut acc, mut nbits) = (0u32, 0u32);
    let mut emit = |code: u32, out: &mut Vec<u8>| {
        acc |= code << nbits;
        nbits += width;
        while nbits >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            nbits -= 8;
        }
    };
    for chunk in indices.chunks(run) {
        emit(clear, &mut out);
        for &i in chunk {
            emit(i as u32, &mut out);
        }
    }
    emit(end, &mut out);
    if nbits > 0 {
        out.push(acc as u8);
    }
    out
}

fn gif(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let depth: u8 = rng.gen_range(1..=8);
    let min_code = depth.max(2);
    let bytes_per_px = (min_code as usize + 1) as f64 / 8.0;
    let (w, h) = dims(rng, (size_hint as f64 / bytes_per_px) as usize);
    let colors = 1usize << depth;
    let mut g = b"GIF89a".to_vec();
    g.extend_from_slice(&(w as u16).to_le_bytes());
    g.extend_from_slice(&(h as u16).to_le_bytes());
    g.push(0x80 | ((depth - 1) << 4) | (depth - 1));
    g.extend_from_slice(&[0, 0]);
    for _ in 0..colors {
        g.extend_from_slice(&[rng.gen(), rng.gen(), rng.gen()]);
    }
    g.push(gif::IMAGE_DESCRIPTOR);
    g.extend_from_slice(&[0, 0, 0, 0]);
    g.extend_from_slice(&(w as u16).to_le_bytes());
    g.extend_from_slice(&(h as u16).to_le_bytes());
    g.push(0);
    g.push(min_code);
    let indices = pattern(rng, w, h, 1, colors as u32);
    for block in lzw_literal(&indices, min_code).chunks(gif::SUB_BLOCK_MAX) {
        g.push(block.len() as u8);
        g.extend_from_slice(block);
    }
    g.push(0);
    g.push(gif::TRAILER);
    g
}

fn png(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let (color_type, channels) = if rng.gen_bool(0.5) { (2u8, 3usize) } else { (0u8, 1usize) };
    let (w, h) = dims(rng, size_hint.saturating_sub(60) / channels);
    let pixels = pattern(rng, w, h, channels, 256);
    let mut raw = Vec::with_capacity((w * channels + 1) * h);
    for row in pixels.chunks(w * channels) {
        raw.push(0);
        raw.extend_from_slice(row);
    }
    let mut z = vec![0x78, 0x01];
    let blocks: Vec<&[u8]> = raw.chunks(65535).collect();
    for (i, block) in blocks.iter().enumerate() {
        z.push((i + 1 == blocks.len()) as u8);
        let len = block.len() as u16;
        z.extend_from_slice(&len.to_le_bytes());
        z.extend_from_slice(&(!len).to_le_bytes());
        z.extend_from_slice(block);
    }
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut out = png::SIGNATURE.to_vec();
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(w as u32).to_be_bytes());
    ihdr.extend_from_slice(&(h as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, color_type, 0, 0, 0]);
    png::write_chunk(&mut out, b"IHDR", &ihdr);
    png::write_chunk(&mut out, b"IDAT", &z);
    png::write_chunk(&mut out, b"IEND", &[]);
    out
}

fn text_blob(rng: &mut ChaCha8Rng, approx: usize) -> Vec<u8> {
    let mut s = String::new();
    while s.len() < approx {
        let n = rng.gen_range(4..12);
        s.push_str(&words(rng, n));
        s.push_str(if rng.gen_bool(0.2) { ".\n" } else { " " });
    }
    s.into_bytes()
}

fn zip_archive(rng: &mut ChaCha8Rng, size_hint: usize, jar: bool) -> Vec<u8> {
    let mut entries: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    let mut budget = size_hint.saturating_sub(120);
    if jar {
        let main = format!("com/{}/{}", word(rng), capitalized(rng));
        let manifest = format!(
            "Manifest-Version: 1.0\r\nCreated-By: {}.{} ({})\r\nMain-Class: {}\r\n\r\n",
            rng.gen_range(1..22),
            rng.gen_range(0..9),
            capitalized(rng),
            main.replace('/', ".")
        );
        budget = budget.saturating_sub(manifest.len() + 40);
        entries.push((zip::JAR_MANIFEST.to_vec(), manifest.into_bytes()));
        let mut class = vec![0xCA, 0xFE, 0xBA, 0xBE, 0, 0, 0, rng.gen_range(50..66)];
        let n = (budget / 2).max(16);
        class.extend((0..n).map(|_| rng.gen_range(0u8..0x80)));
        budget = budget.saturating_sub(class.len());
        entries.push((format!("{main}.class").into_bytes(), class));
    }
    let files = rng.gen_range(1..=3);
    for i in 0..files {
        let share = (budget / (files - i)).max(16);
        budget = budget.saturating_sub(share);
        let (name, data) = if rng.gen_bool(0.6) {
            (format!("{}/{}.txt", word(rng), word(rng)), text_blob(rng, share))
        } else {
            (format!("{}_{}.dat", word(rng), i), (0..share).map(|_| rng.gen()).collect())
        };
        entries.push((name.into_bytes(), data));
    }
    let borrowed: Vec<(&[u8], &[u8])> = entries.iter().map(|(n, d)| (n.as_slice(), d.as_slice())).collect();
    zip::build_stored(&borrowed, b"")
}

/// Repeat `filler` lines until the text reaches `size_hint`.
fn pad_lines(mut text: String, size_hint: usize, mut filler: impl FnMut() -> String) -> Vec<u8> {
    while text.len() < size_hint {
        text.push_str(&filler());
        text.push('\n');
    }
    text.into_bytes()
}

fn hta(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let title = words(rng, 3);
    let sub = capitalized(rng) + &capitalized(rng);
    let msg = words(rng, 5);
    let body = words(rng, 8);
    let head = if rng.gen_bool(0.75) {
        format!(
            "<html>\n<head>\n<title>{title}</title>\n<HTA:APPLICATION ID=\"{}\" APPLICATIONNAME=\"{}\" BORDER=\"thin\" SCROLL=\"no\" SINGLEINSTANCE=\"yes\" />\n",
            ident(rng),
            capitalized(rng)
        )
    } else {
        format!("<html>\n<head>\n<title>{title}</title>\n")
    };
    let script = if rng.gen_bool(0.5) {
        format!(
            "<script language=\"VBScript\">\nSub Window_OnLoad\n    window.resizeTo {}, {}\nEnd Sub\nSub {sub}_Click\n    MsgBox \"{msg}\"\nEnd Sub\n</script>\n",
            rng.gen_range(200..900),
            rng.gen_range(150..700)
        )
    } else {
        format!(
            "<script language=\"JScript\">\nfunction {sub}_Click() {{\n    var n = {};\n    alert(\"{msg} \" + n);\n}}\n</script>\n",
            rng.gen_range(1..1000)
        )
    };
    let text = format!(
        "{head}{script}</head>\n<body>\n<p>{body}</p>\n<input type=\"button\" value=\"{}\" onclick=\"{sub}_Click\">\n</body>\n</html>\n",
        capitalized(rng)
    );
    let mut filler_rng = rng.clone();
    pad_lines(text, size_hint, || format!("<!-- {} -->", words(&mut filler_rng, 8)))
}

fn php(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let (v1, v2, f, k) = (ident(rng), ident(rng), ident(rng), ident(rng));
    let mut text = String::from("<?php\n");
    text.push_str(&format!("// {}\n", words(rng, 6)));
    text.push_str(&format!("${v1} = \"{}\";\n", words(rng, 3)));
    text.push_str(&format!(
        "${v2} = array({}, {}, {});\n",
        rng.gen_range(0..100),
        rng.gen_range(0..100),
        rng.gen_range(0..100)
    ));
    text.push_str(&format!("function {f}($a) {{\n    return strtoupper($a) . \"{}\";\n}}\n", word(rng)));
    if rng.gen_bool(0.5) {
        text.push_str(&format!("foreach (${v2} as ${k}) {{\n    echo {f}(${v1}) . ${k} . \"\\n\";\n}}\n"));
    } else {
        text.push_str(&format!("if (isset($_GET['{}'])) {{\n    echo htmlspecialchars({f}(${v1}));\n}}\n", word(rng)));
    }
    let mut filler_rng = rng.clone();
    let mut out = pad_lines(text, size_hint.saturating_sub(3), || format!("// {}", words(&mut filler_rng, 8)));
    out.extend_from_slice(b"?>\n");
    out
}

fn js(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let (c1, l1, f, g) = (ident(rng), ident(rng), ident(rng), ident(rng));
    let mut text = String::from("'use strict';\n");
    text.push_str(&format!("const {c1} = {};\n", rng.gen_range(1..500)));
    text.push_str(&format!("let {l1} = \"{}\";\n", words(rng, 3)));
    text.push_str(&format!("function {f}(a, b) {{\n    return a * b + {c1};\n}}\n"));
    text.push_str(&format!("const {g} = (xs) => xs.map((v) => {f}(v, {}));\n", rng.gen_range(2..9)));
    if rng.gen_bool(0.5) {
        text.push_str(&format!("console.log({g}([1, 2, 3]), {l1});\n"));
    } else {
        text.push_str(&format!(
            "document.title = {l1} + {g}([{}]).join(\",\");\n",
            rng.gen_range(0..50)
        ));
    }
    let mut filler_rng = rng.clone();
    pad_lines(text, size_hint, || format!("// {}", words(&mut filler_rng, 8)))
}

fn ps1(rng: &mut ChaCha8Rng, size_hint: usize) -> Vec<u8> {
    let noun = capitalized(rng);
    let mut text = String::new();
    if rng.gen_bool(0.5) {
        text.push_str("[CmdletBinding()]\n");
    }
    text.push_str(&format!(
        "param(\n    [string]$Path = \"C:\\{}\\{}\",\n    [int]$Count = {}\n)\n",
        capitalized(rng),
        capitalized(rng),
        rng.gen_range(1..50)
    ));
    text.push_str("$ErrorActionPreference = \"Stop\"\n");
    text.push_str(&format!(
        "function Get-{noun} {{\n    param([string]$Name)\n    Write-Output \"{} $Name\"\n}}\n",
        words(rng, 3)
    ));
    text.push_str(&format!(
        "Get-ChildItem -Path $Path -ErrorAction SilentlyContinue | ForEach-Object {{\n    Write-Host \"{}: $($_.Name)\"\n}}\n",
        words(rng, 2)
    ));
    let mut filler_rng = rng.clone();
    pad_lines(text, size_hint, || format!("# {}", words(&mut filler_rng, 8)))
}
