//! Subprocess adapters for `file` and `binwalk`. Invocations are exactly
//! `file --brief --mime-type <path>` and `binwalk <path>`.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::format::FormatId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tool {
    File,
    Binwalk,
}

impl Tool {
    pub fn name(self) -> &'static str {
        match self {
            Tool::File => "file",
            Tool::Binwalk => "binwalk",
        }
    }

    fn args(self, path: &Path) -> Vec<&std::ffi::OsStr> {
        match self {
            Tool::File => vec!["--brief".as_ref(), "--mime-type".as_ref(), path.as_os_str()],
            Tool::Binwalk => vec![path.as_os_str()],
        }
    }

    pub fn parse(self, output: &str) -> Result<BTreeSet<FormatId>, ToolError> {
        match self {
            Tool::File => parse_file_mime(output),
            Tool::Binwalk => parse_binwalk(output),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("{0} is not installed")]
    ToolMissing(String),
    #[error("unparseable output: {raw:?}")]
    ParseFailure { raw: String },
    #[error("{tool} exceeded {seconds}s")]
    Timeout { tool: String, seconds: u64 },
    #[error("{0}")]
    Io(String),
}

/// Plain-text mime types carry no script identity and map to UNKNOWN.
fn mime_format(mime: &str) -> FormatId {
    match mime {
        "image/png" => FormatId::Png,
        "image/jpeg" => FormatId::Jpeg,
        "image/gif" => FormatId::Gif,
        "image/bmp" | "image/x-ms-bmp" => FormatId::Bmp,
        "application/zip" => FormatId::Zip,
        "application/java-archive" | "application/x-java-archive" => FormatId::Jar,
        "application/x-rar" | "application/vnd.rar" | "application/x-rar-compressed" => FormatId::Rar,
        "application/x-dosexec" | "application/vnd.microsoft.portable-executable" => FormatId::Pe,
        "text/x-php" | "application/x-php" => FormatId::Php,
        _ => FormatId::Unknown,
    }
}

pub fn parse_file_mime(output: &str) -> Result<BTreeSet<FormatId>, ToolError> {
    let line = output.trim();
    let well_formed = line.split_once('/').is_some_and(|(a, b)| !a.is_empty() && !b.is_empty() && !line.contains(char::is_whitespace));
    if !well_formed {
        return Err(ToolError::ParseFailure { raw: output.to_string() });
    }
    Ok(BTreeSet::from([mime_format(line)]))
}

fn binwalk_format(description: &str) -> Option<FormatId> {
    let d = description;
    Some(if d.starts_with("PNG image") {
        FormatId::Png
    } else if d.starts_with("JPEG image") {
        FormatId::Jpeg
    } else if d.starts_with("GIF image") {
        FormatId::Gif
    } else if d.starts_with("PC bitmap") {
        FormatId::Bmp
    } else if d.starts_with("Zip archive data") {
        if d.contains("META-INF/") {
            FormatId::Jar
        } else {
            FormatId::Zip
        }
    } else if d.starts_with("RAR archive") {
        FormatId::Rar
    } else if d.starts_with("Microsoft executable") {
        FormatId::Pe
    } else if d.starts_with("HTML document") {
        FormatId::Unknown
    } else {
        return None;
    })
}

/// Signature table rows after the `DECIMAL HEXADECIMAL DESCRIPTION` header.
/// Rows naming no known format (copyright strings, paths, archive
/// trailers) are ignored; a JAR member listing subsumes ZIP.
pub fn parse_binwalk(output: &str) -> Result<BTreeSet<FormatId>, ToolError> {
    let mut lines = output.lines().skip_while(|l| !l.trim_start().starts_with("DECIMAL"));
    if lines.next().is_none() {
        return Err(ToolError::ParseFailure { raw: output.to_string() });
    }
    let mut found = BTreeSet::new();
    for line in lines {
        let mut cols = line.split_whitespace();
        let (Some(dec), Some(hex)) = (cols.next(), cols.next()) else { continue };
        if dec.parse::<u64>().is_err() || !hex.starts_with("0x") {
            continue;
        }
        let desc = line.trim_start()[dec.len()..].trim_start()[hex.len()..].trim();
        if let Some(f) = binwalk_format(desc) {
            found.insert(f);
        }
    }
    if found.contains(&FormatId::Jar) {
        found.remove(&FormatId::Zip);
    }
    Ok(found)
}

/// Whether `program` can be spawned at all.
pub fn probe(program: &str) -> bool {
    Command::new(program)
        .arg("--version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .is_ok()
}

/// Run `tool` (as `program`) on `path` and map its output to formats.
pub fn run_tool(tool: Tool, program: &str, path: &Path, timeout: Duration) -> Result<BTreeSet<FormatId>, ToolError> {
    let mut child = Command::new(program)
        .args(tool.args(path))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ToolError::ToolMissing(program.to_string()),
            _ => ToolError::Io(e.to_string()),
        })?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut s = String::new();
        stdout.read_to_string(&mut s).map(|_| s)
    });
    let started = Instant::now();
    loop {
        match child.try_wait().map_err(|e| ToolError::Io(e.to_string()))? {
            Some(_) => break,
            None if started.elapsed() > timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ToolError::Timeout { tool: tool.name().to_string(), seconds: timeout.as_secs() });
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    }
    let output = reader
        .join()
        .map_err(|_| ToolError::Io("output reader panicked".into()))?
        .map_err(|e| ToolError::Io(e.to_string()))?;
    tool.parse(&output)
}
