//! Line-delimited manifest: a header object followed by one record per sample.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::forge::Method;
use crate::format::FormatId;

pub const MANIFEST_VERSION: u32 = 1;

pub type Digest = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest {
    use sha2::Digest as _;
    sha2::Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Train,
    Test,
    DonorTrain,
    DonorTest,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "TRAIN",
            Role::Test => "TEST",
            Role::DonorTrain => "DONOR_TRAIN",
            Role::DonorTest => "DONOR_TEST",
        }
    }

    /// True for the side of the split that evaluation reads.
    pub fn is_test_side(self) -> bool {
        matches!(self, Role::Test | Role::DonorTest)
    }

    pub fn is_donor(self) -> bool {
        matches!(self, Role::DonorTrain | Role::DonorTest)
    }

    fn parse(s: &str) -> Option<Role> {
        [Role::Train, Role::Test, Role::DonorTrain, Role::DonorTest]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a polyglot sample was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub covert: FormatId,
    pub overt: FormatId,
    pub method: Method,
    /// Covert donor, then overt donor.
    pub donors: [Digest; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSample {
    pub sha256: Digest,
    pub path: String,
    pub labels: BTreeSet<FormatId>,
    pub role: Role,
    pub origin: Option<Origin>,
    pub seed: u64,
}

impl FileSample {
    pub fn is_polyglot(&self) -> bool {
        self.labels.len() > 1
    }

    pub fn sha_hex(&self) -> String {
        hex::encode(self.sha256)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub matrix_hash: Digest,
    pub samples: Vec<FileSample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    matrix_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    sha256: String,
    path: String,
    labels: Vec<String>,
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covert: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    donors: Option<[String; 2]>,
    seed: u64,
}

fn digest_from_hex(s: &str) -> Result<Digest, String> {
    let mut d = [0u8; 32];
    hex::decode_to_slice(s, &mut d).map_err(|e| format!("bad digest {s:?}: {e}"))?;
    Ok(d)
}

fn format_from(s: &str) -> Result<FormatId, String> {
    FormatId::from_str(s).map_err(|_| format!("unknown format {s:?}"))
}

impl Record {
    fn from_sample(s: &FileSample) -> Record {
        Record {
            sha256: s.sha_hex(),
            path: s.path.clone(),
            labels: s.labels.iter().map(|f| f.name().to_string()).collect(),
            role: s.role.name().to_string(),
            covert: s.origin.map(|o| o.covert.name().to_string()),
            overt: s.origin.map(|o| o.overt.name().to_string()),
            method: s.origin.map(|o| o.method.name().to_string()),
            donors: s.origin.map(|o| o.donors.map(hex::encode)),
            seed: s.seed,
        }
    }

    fn into_sample(self) -> Result<FileSample, String> {
        let labels = self.labels.iter().map(|l| format_from(l)).collect::<Result<BTreeSet<_>, _>>()?;
        if labels.is_empty() || labels.len() > 2 || labels.contains(&FormatId::Unknown) {
            return Err(format!("invalid label set {:?}", self.labels));
        }
        let role = Role::parse(&self.role).ok_or_else(|| format!("unknown role {:?}", self.role))?;
        let origin = match (self.covert, self.overt, self.method, self.donors) {
            (Some(c), Some(o), Some(m), Some([dc, dov])) => Some(Origin {
                covert: format_from(&c)?,
                overt: format_from(&o)?,
                method: Method::from_str(&m).map_err(|_| format!("unknown method {m:?}"))?,
                donors: [digest_from_hex(&dc)?, digest_from_hex(&dov)?],
            }),
            (None, None, None, None) => None,
            _ => return Err("origin fields must appear together".into()),
        };
        Ok(FileSample { sha256: digest_from_hex(&self.sha256)?, path: self.path, labels, role, origin, seed: self.seed })
    }
}

impl Manifest {
    pub fn new(seed: u64, matrix_hash: Digest) -> Self {
        Manifest { version: MANIFEST_VERSION, seed, matrix_hash, samples: Vec::new() }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &FileSample> {
        self.samples.iter().filter(move |s| s.role == role)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header { version: self.version, seed: self.seed, matrix_hash: hex::encode(self.matrix_hash) };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, &Record::from_sample(s))?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Manifest, CorpusError> {
        let bad = |line: usize, reason: String| CorpusError::Manifest { line, reason };
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let first = first.map_err(|e| bad(1, e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.version != MANIFEST_VERSION {
            return Err(bad(1, format!("unsupported manifest version {}", header.version)));
        }
        let matrix_hash = digest_from_hex(&header.matrix_hash).map_err(|e| bad(1, e))?;
        let mut m = Manifest::new(header.seed, matrix_hash);
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            let rec: Record = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            m.samples.push(rec.into_sample().map_err(|e| bad(i + 1, e))?);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HoldoutReport {
    /// Digests recorded under more than one role.
    pub role_overlaps: Vec<(Digest, Vec<Role>)>,
    /// Polyglots whose donor is missing or sits on the other side of the split.
    pub donor_violations: Vec<(Digest, Digest, String)>,
}

impl HoldoutReport {
    pub fn passed(&self) -> bool {
        self.role_overlaps.is_empty() && self.donor_violations.is_empty()
    }
}

impl std::fmt::Display for HoldoutReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            return writeln!(f, "holdout ok");
        }
        for (sha, roles) in &self.role_overlaps {
            let roles: Vec<_> = roles.iter().map(|r| r.name()).collect();
            writeln!(f, "overlap {} in roles {}", hex::encode(sha), roles.join(","))?;
        }
        for (sample, donor, why) in &self.donor_violations {
            writeln!(f, "sample {} donor {}: {why}", hex::encode(sample), hex::encode(donor))?;
        }
        Ok(())
    }
}

pub fn verify_holdout(manifest: &Manifest) -> HoldoutReport {
    let mut roles: BTreeMap<Digest, BTreeSet<Role>> = BTreeMap::new();
    for s in &manifest.samples {
        roles.entry(s.sha256).or_default().insert(s.role);
    }
    let mut report = HoldoutReport::default();
    for (sha, rs) in &roles {
        if rs.len() > 1 {
            report.role_overlaps.push((*sha, rs.iter().copied().collect()));
        }
    }
    for s in &manifest.samples {
        let Some(origin) = s.origin else { continue };
        let wanted = match s.role {
            Role::Train => Role::DonorTrain,
            Role::Test => Role::DonorTest,
            r => {
                report.donor_violations.push((s.sha256, origin.donors[0], format!("polyglot recorded as {r}")));
                continue;
            }
        };
        for donor in origin.donors {
            match roles.get(&donor) {
                None => report.donor_violations.push((s.sha256, donor, "donor not in manifest".into())),
                Some(rs) if !rs.contains(&wanted) || rs.len() > 1 => {
                    let got: Vec<_> = rs.iter().map(|r| r.name()).collect();
                    report
                        .donor_violations
                        .push((s.sha256, donor, format!("{} sample uses donor with role {}", s.role, got.join(","))));
                }
                Some(_) => {}
            }
        }
    }
    report
}
