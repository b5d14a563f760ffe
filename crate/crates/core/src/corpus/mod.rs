//! Donor pools, dataset generation over the combination matrix and the
//! donor-holdout split.

mod manifest;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::forge::{combination_matrix, forge, matrix_hash, verify_polyglot, ForgeError, Method, Recipe};
use crate::format::{identify_first, recover_labels, validate, FormatId};

pub use manifest::{sha256, verify_holdout, Digest, FileSample, HoldoutReport, Manifest, Origin, Role, MANIFEST_VERSION};
pub use synth::{is_synthesizable, synth_donor};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0} donors come from fixtures and cannot be synthesized")]
    UnsupportedSynth(FormatId),
    #[error("insufficient donors for {what}: needed {needed}, have {available}")]
    InsufficientDonors { what: String, needed: usize, available: usize },
    #[error("forging {covert} into {overt} via {method} (seed {seed}) failed: {source}")]
    ForgeFailure { covert: FormatId, overt: FormatId, method: Method, seed: u64, source: ForgeError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Bytes plus the provenance needed to record them.
#[derive(Debug, Clone)]
pub struct Donor {
    pub format: FormatId,
    pub sha256: Digest,
    pub bytes: Vec<u8>,
    pub seed: u64,
}

impl Donor {
    pub fn new(format: FormatId, bytes: Vec<u8>, seed: u64) -> Self {
        Donor { format, sha256: sha256(&bytes), bytes, seed }
    }
}

/// A donor is usable when it parses as its label, identifies as its label and
/// carries nothing that would read as a second format.
pub fn donor_acceptable(format: FormatId, bytes: &[u8]) -> Result<(), String> {
    let report = validate(format, bytes);
    if !report.valid {
        return Err(report.notes.join("; "));
    }
    if identify_first(bytes) != format {
        return Err("extension/content mismatch".into());
    }
    if recover_labels(bytes) != BTreeSet::from([format]) {
        return Err("content already reads as more than one format".into());
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    /// Accepted files. `path` is the source path and `role` is provisional
    /// until a dataset build partitions them.
    pub samples: Vec<FileSample>,
    pub rejected: Vec<Rejection>,
}

impl Ingested {
    /// Reread the accepted files as donors.
    pub fn donors(&self) -> Result<Vec<Donor>, CorpusError> {
        self.samples
            .iter()
            .map(|s| {
                let path = Path::new(&s.path);
                let bytes = fs::read(path).map_err(io_err(path))?;
                Ok(Donor::new(*s.labels.first().expect("one label"), bytes, 0))
            })
            .collect()
    }
}

/// Walk `dir` recursively, keeping files whose content agrees with their
/// extension.
pub fn ingest_dir(dir: &Path) -> Result<Ingested, CorpusError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for path in files {
        let reject = |reason: String| Rejection { path: path.clone(), reason };
        let Some(label) = path.extension().and_then(|e| e.to_str()).and_then(FormatId::from_extension) else {
            out.rejected.push(reject("unrecognized extension".into()));
            continue;
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                out.rejected.push(reject(e.to_string()));
                continue;
            }
        };
        let report = validate(label, &bytes);
        if identify_first(&bytes) != label {
            out.rejected.push(reject("extension/content mismatch".into()));
            continue;
        }
        if !report.valid {
            out.rejected.push(reject(report.notes.join("; ")));
            continue;
        }
        let sha = sha256(&bytes);
        if !seen.insert(sha) {
            continue;
        }
        out.samples.push(FileSample {
            sha256: sha,
            path: path.to_string_lossy().into_owned(),
            labels: BTreeSet::from([label]),
            role: Role::DonorTrain,
            origin: None,
            seed: 0,
        });
    }
    Ok(out)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn default_fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Validated fixtures for a fixture-only format, sorted by file name.
pub fn load_fixtures(format: FormatId, root: &Path) -> Result<Vec<Donor>, CorpusError> {
    let dir = root.join(format.name().to_ascii_lowercase());
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    collect_files(&dir, &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let bytes = fs::read(path).map_err(io_err(path))?;
        if donor_acceptable(format, &bytes).is_ok() {
            out.push(Donor::new(format, bytes, i as u64));
        }
    }
    Ok(out)
}

/// File contents with their ground-truth label set.
pub type Labelled = (Vec<u8>, BTreeSet<FormatId>);

/// A manifest record and the bytes to write for it.
pub type Planned = (FileSample, Vec<u8>);

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub monoglots_per_format: usize,
    pub polyglots_per_pair: usize,
    pub monoglot_counts: BTreeMap<FormatId, usize>,
    /// Keyed by (covert, overt).
    pub pair_counts: BTreeMap<(FormatId, FormatId), usize>,
    /// Distinct donors drawn per format for polyglot construction. A small
    /// pool lets a model recognise donors instead of formats.
    pub donors_per_format: usize,
    pub test_fraction: f64,
    /// Size range of synthesized donors.
    pub min_size: usize,
    pub max_size: usize,
    pub fixtures_dir: PathBuf,
    /// Extra donors, typically from [`ingest_dir`].
    pub extra_donors: Vec<Donor>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            monoglots_per_format: 50,
            polyglots_per_pair: 20,
            monoglot_counts: BTreeMap::new(),
            pair_counts: BTreeMap::new(),
            donors_per_format: 180,
            test_fraction: 0.3,
            min_size: 64,
            max_size: 512,
            fixtures_dir: default_fixtures_dir(),
            extra_donors: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn monoglots(&self, f: FormatId) -> usize {
        self.monoglot_counts.get(&f).copied().unwrap_or(self.monoglots_per_format)
    }

    pub fn polyglots(&self, covert: FormatId, overt: FormatId) -> usize {
        self.pair_counts.get(&(covert, overt)).copied().unwrap_or(self.polyglots_per_pair)
    }

    fn total_polyglots(&self) -> usize {
        combination_matrix().iter().map(|c| self.polyglots(c.covert, c.overt)).sum()
    }

    /// Split `n` into (train, test).
    fn split(&self, n: usize) -> (usize, usize) {
        let test = ((n as f64) * self.test_fraction).round() as usize;
        (n - test.min(n), test.min(n))
    }
}

fn sub_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x5851_F42D_4C95_7F2D;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29);
    }
    h
}

/// Every candidate donor of `format` (up to `needed` synthesized ones, or all
/// fixtures), sorted by digest with duplicates removed.
pub fn candidates(format: FormatId, needed: usize, config: &DatasetConfig, seed: u64) -> Result<Vec<Donor>, CorpusError> {
    let mut pool: Vec<Donor> = config.extra_donors.iter().filter(|d| d.format == format).cloned().collect();
    if synth::is_synthesizable(format) {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[format.index() as u64]));
        let mut seen: HashSet<Digest> = pool.iter().map(|d| d.sha256).collect();
        let mut attempts = 0;
        while seen.len() < needed && attempts < needed * 4 + 16 {
            attempts += 1;
            let s: u64 = rng.gen();
            let size = rng.gen_range(config.min_size..=config.max_size.max(config.min_size));
            let bytes = synth_donor(format, s, size)?;
            if donor_acceptable(format, &bytes).is_ok() && seen.insert(sha256(&bytes)) {
                pool.push(Donor::new(format, bytes, s));
            }
        }
    } else {
        pool.extend(load_fixtures(format, &config.fixtures_dir)?);
    }
    pool.retain(|d| donor_acceptable(format, &d.bytes).is_ok());
    pool.sort_by_key(|d| d.sha256);
    pool.dedup_by_key(|d| d.sha256);
    Ok(pool)
}

struct Pools {
    train: Vec<Donor>,
    test: Vec<Donor>,
}

/// A built dataset: the manifest plus the directory holding the files.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset, CorpusError> {
        let path = root.join(MANIFEST_FILE);
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let manifest = Manifest::read_jsonl(BufReader::new(f))?;
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn read(&self, sample: &FileSample) -> Result<Vec<u8>, CorpusError> {
        let path = self.root.join(&sample.path);
        fs::read(&path).map_err(io_err(&path))
    }

    /// Evaluation samples: TRAIN or TEST role only, donors excluded.
    pub fn split(&self, role: Role) -> Vec<&FileSample> {
        self.manifest.with_role(role).collect()
    }

    /// Contents and labels of every sample with `role`.
    pub fn labelled(&self, role: Role) -> Result<Vec<Labelled>, CorpusError> {
        self.split(role).into_iter().map(|s| Ok((self.read(s)?, s.labels.clone()))).collect()
    }

    /// Samples whose recovered labels differ from the recorded ones.
    pub fn verify_labels(&self) -> Result<Vec<(FileSample, BTreeSet<FormatId>)>, CorpusError> {
        let mut bad = Vec::new();
        for s in &self.manifest.samples {
            let bytes = self.read(s)?;
            let got = recover_labels(&bytes);
            if got != s.labels || sha256(&bytes) != s.sha256 {
                bad.push((s.clone(), got));
            }
        }
        Ok(bad)
    }
}

/// Generate donors, partition them, forge polyglots and write everything
/// under `out_dir` (`files/` plus the manifest).
pub fn build_dataset(config: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<Dataset, CorpusError> {
    let (manifest, contents) = plan_dataset(config, seed)?;
    let files = out_dir.join("files");
    fs::create_dir_all(&files).map_err(io_err(&files))?;
    for (sample, bytes) in &contents {
        let path = out_dir.join(&sample.path);
        if !path.exists() {
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    manifest.write_jsonl(std::io::BufWriter::new(f)).map_err(io_err(&path))?;
    Ok(Dataset { root: out_dir.to_path_buf(), manifest })
}

fn file_path(sha: &Digest, bytes: &[u8]) -> String {
    format!("files/{}.{}", hex::encode(sha), identify_first(bytes).default_extension())
}

fn record(donor: &Donor, role: Role) -> (FileSample, Vec<u8>) {
    let s = FileSample {
        sha256: donor.sha256,
        path: file_path(&donor.sha256, &donor.bytes),
        labels: BTreeSet::from([donor.format]),
        role,
        origin: None,
        seed: donor.seed,
    };
    (s, donor.bytes.clone())
}

/// Build the manifest and file contents in memory.
pub fn plan_dataset(config: &DatasetConfig, seed: u64) -> Result<(Manifest, Vec<Planned>), CorpusError> {
    let want_donors = if config.total_polyglots() > 0 { config.donors_per_format } else { 0 };
    // Both sides need at least one donor of every format when polyglots are requested.
    let (donor_train_n, donor_test_n) = match config.split(want_donors) {
        (tr, _) if want_donors >= 2 => {
            let tr = tr.clamp(1, want_donors - 1);
            (tr, want_donors - tr)
        }
        split => split,
    };

    let mut out = Vec::new();
    let mut pools: BTreeMap<FormatId, Pools> = BTreeMap::new();
    let built: Vec<_> = FormatId::KNOWN
        .par_iter()
        .map(|&f| {
            let (mono_train, mono_test) = config.split(config.monoglots(f));
            let needed = want_donors + mono_train + mono_test;
            let mut pool = candidates(f, needed, config, seed)?;
            if pool.len() < needed {
                return Err(CorpusError::InsufficientDonors { what: f.to_string(), needed, available: pool.len() });
            }
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, &[f.index() as u64, 1])));
            pool.truncate(needed);
            let mut rest = pool.into_iter();
            let train: Vec<Donor> = rest.by_ref().take(donor_train_n).collect();
            let test: Vec<Donor> = rest.by_ref().take(donor_test_n).collect();
            let mono_tr: Vec<Donor> = rest.by_ref().take(mono_train).collect();
            let mono_te: Vec<Donor> = rest.collect();
            Ok((f, Pools { train, test }, mono_tr, mono_te))
        })
        .collect::<Result<_, CorpusError>>()?;
    for (f, p, mono_tr, mono_te) in built {
        out.extend(p.train.iter().map(|d| record(d, Role::DonorTrain)));
        out.extend(p.test.iter().map(|d| record(d, Role::DonorTest)));
        out.extend(mono_tr.iter().map(|d| record(d, Role::Train)));
        out.extend(mono_te.iter().map(|d| record(d, Role::Test)));
        pools.insert(f, p);
    }

    let jobs: Vec<_> = combination_matrix()
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| {
            let (tr, te) = config.split(config.polyglots(c.covert, c.overt));
            [(i, c, Role::Train, tr), (i, c, Role::Test, te)]
        })
        .filter(|j| j.3 > 0)
        .collect();
    let forged: Vec<Vec<Planned>> = jobs
        .par_iter()
        .map(|(i, c, role, n)| {
            let side = |f: FormatId| {
                let p = &pools[&f];
                if *role == Role::Train { &p.train } else { &p.test }
            };
            let (covers, overts) = (side(c.covert), side(c.overt));
            let mut combos: Vec<(usize, usize, Method)> = (0..covers.len())
                .flat_map(|a| (0..overts.len()).flat_map(move |b| c.methods.iter().map(move |&m| (a, b, m))))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[*i as u64, *role as u64, 2]));
            combos.shuffle(&mut rng);
            let mut made = Vec::with_capacity(*n);
            let mut seen = HashSet::new();
            for (a, b, method) in combos {
                if made.len() == *n {
                    break;
                }
                let recipe = Recipe::new(c.covert, c.overt, method, rng.gen());
                let result = forge(recipe, &covers[a].bytes, &overts[b].bytes).map_err(|source| CorpusError::ForgeFailure {
                    covert: c.covert,
                    overt: c.overt,
                    method,
                    seed: recipe.seed,
                    source,
                })?;
                debug_assert!(verify_polyglot(&result));
                let sha = sha256(&result.bytes);
                if !seen.insert(sha) {
                    continue;
                }
                let sample = FileSample {
                    sha256: sha,
                    path: file_path(&sha, &result.bytes),
                    labels: recipe.labels(),
                    role: *role,
                    origin: Some(Origin {
                        covert: c.covert,
                        overt: c.overt,
                        method,
                        donors: [covers[a].sha256, overts[b].sha256],
                    }),
                    seed: recipe.seed,
                };
                made.push((sample, result.bytes));
            }
            if made.len() < *n {
                return Err(CorpusError::InsufficientDonors {
                    what: format!("{}>{} {}", c.covert, c.overt, role),
                    needed: *n,
                    available: made.len(),
                });
            }
            Ok(made)
        })
        .collect::<Result<_, CorpusError>>()?;
    out.extend(forged.into_iter().flatten());

    let mut manifest = Manifest::new(seed, matrix_hash());
    manifest.samples = out.iter().map(|(s, _)| s.clone()).collect();
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> DatasetConfig {
        DatasetConfig {
            monoglots_per_format: 3,
            polyglots_per_pair: 2,
            donors_per_format: 4,
            min_size: 96,
            max_size: 400,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn counts_roles_and_holdout() {
        let (m, files) = plan_dataset(&tiny_config(), 11).unwrap();
        let poly = m.samples.iter().filter(|s| s.is_polyglot()).count();
        let mono = m.samples.iter().filter(|s| !s.is_polyglot() && !s.role.is_donor()).count();
        assert_eq!(poly, 60);
        assert_eq!(mono, 36);
        assert_eq!(m.samples.iter().filter(|s| s.role.is_donor()).count(), 48);
        assert!(verify_holdout(&m).passed(), "{}", verify_holdout(&m));
        for (s, bytes) in &files {
            assert_eq!(sha256(bytes), s.sha256);
            assert_eq!(recover_labels(bytes), s.labels, "{}", s.path);
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let a = plan_dataset(&tiny_config(), 4).unwrap().0.to_jsonl();
        let b = plan_dataset(&tiny_config(), 4).unwrap().0.to_jsonl();
        assert_eq!(a, b);
        let c = plan_dataset(&tiny_config(), 5).unwrap().0.to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn monoglot_only_config() {
        let config = DatasetConfig { polyglots_per_pair: 0, ..tiny_config() };
        let (m, _) = plan_dataset(&config, 1).unwrap();
        assert!(m.samples.iter().all(|s| !s.is_polyglot() && !s.role.is_donor()));
        assert_eq!(m.samples.len(), 36);
    }

    #[test]
    fn fixture_shortage_is_reported() {
        let config = DatasetConfig { fixtures_dir: PathBuf::from("/nonexistent"), ..tiny_config() };
        assert!(matches!(plan_dataset(&config, 1), Err(CorpusError::InsufficientDonors { .. })));
    }
}
