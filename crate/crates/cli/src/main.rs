mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use polyglot_core::corpus::{candidates, ingest_dir, sha256, Dataset, Role};
use polyglot_core::eval::{self, Detector, ModelDetector, ScannerDetector, Tool, ToolDetector};
use polyglot_core::forge::{forge, verify_polyglot, Method, Recipe};
use polyglot_core::linear::{self, train_linear_on_samples};
use polyglot_core::neural::{self, train_detector, ConvNetConfig, EpochStats, Head};
use polyglot_core::{identify_first, recover_labels, sanitize, scanner, verify_holdout, ConvNet, FormatId, Linear};

use config::Settings;

#[derive(Parser)]
#[command(name = "polyglot", version, about = "Generate, detect, scan and sanitize polyglot files")]
struct Cli {
    /// Root seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the format presenting at offset zero.
    Identify {
        files: Vec<PathBuf>,
        /// Print every recoverable format instead, joined by `+`.
        #[arg(long)]
        labels: bool,
    },
    /// Combine a covert and an overt donor into a polyglot.
    Forge {
        #[arg(long)]
        covert: FormatId,
        #[arg(long)]
        overt: FormatId,
        #[arg(long, default_value = "stack")]
        method: Method,
        /// Covert donor file; synthesized from the seed when omitted.
        #[arg(long)]
        covert_file: Option<PathBuf>,
        /// Overt donor file; synthesized from the seed when omitted.
        #[arg(long)]
        overt_file: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build or verify a labelled dataset.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train a detector on the TRAIN split of a dataset.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, value_enum, default_value = "binary")]
        head: HeadArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Benchmark detectors on the TEST split of a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        conv_binary: Option<PathBuf>,
        #[arg(long)]
        conv_multi: Option<PathBuf>,
        #[arg(long)]
        linear_binary: Option<PathBuf>,
        #[arg(long)]
        linear_multi: Option<PathBuf>,
        /// Include the rule scanner.
        #[arg(long)]
        scanner: bool,
        /// Include the `file` and `binwalk` adapters.
        #[arg(long)]
        tools: bool,
        /// Directory for `reports.jsonl` and `report.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rule-scan images for extraneous content; exits 1 if any is SUSPECT.
    Scan { files: Vec<PathBuf> },
    /// Rebuild an image from its whitelisted structures and verify it.
    Sanitize {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Benchmark the external `file` and `binwalk` tools alone.
    BenchTools {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "file")]
        file_program: String,
        #[arg(long, default_value = "binwalk")]
        binwalk_program: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    Build {
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check donor holdout and that every recorded label set is recoverable.
    Verify { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Conv,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Binary,
    Multilabel,
}

impl From<HeadArg> for Head {
    fn from(h: HeadArg) -> Head {
        match h {
            HeadArg::Binary => Head::Binary,
            HeadArg::Multilabel => Head::Multilabel,
        }
    }
}

/// A failure with a stable code, reported as one line on standard error.
struct Failure {
    code: &'static str,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

fn fail(code: &'static str) -> impl Fn(&dyn fmt::Display) -> Failure {
    move |e| Failure { code, message: e.to_string() }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure { code: "E_IO", message: format!("{}: {e}", path.display()) }
}

/// Successful outcome: whether the domain answer was positive.
enum Outcome {
    Ok,
    Negative,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Negative) => ExitCode::from(1),
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(2)
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(io(path))?;
        s.apply_text(&text).map_err(|e| fail("E_CONFIG")(&format!("{}: {e}", path.display())))?;
    }
    for o in &cli.overrides {
        s.assign(o).map_err(|e| fail("E_CONFIG")(&e))?;
    }
    Ok(s)
}

fn emit(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().map_err(|e| fail("E_USAGE")(&e))?;
    }
    let s = settings(&cli)?;
    match &cli.command {
        Command::Identify { files, labels } => {
            for path in files {
                let bytes = fs::read(path).map_err(io(path))?;
                let answer = if *labels {
                    let l = recover_labels(&bytes);
                    if l.is_empty() {
                        FormatId::Unknown.to_string()
                    } else {
                        l.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
                    }
                } else {
                    identify_first(&bytes).to_string()
                };
                if files.len() == 1 {
                    println!("{answer}");
                } else {
                    println!("{answer}\t{}", path.display());
                }
            }
            Ok(Outcome::Ok)
        }
        Command::Forge { covert, overt, method, covert_file, overt_file, out } => {
            let donor = |format: FormatId, file: &Option<PathBuf>, salt: u64| -> Result<Vec<u8>, Failure> {
                match file {
                    Some(p) => fs::read(p).map_err(io(p)),
                    None => candidates(format, 1, &s.dataset, cli.seed ^ salt)
                        .map(|mut d| d.swap_remove(0).bytes)
                        .map_err(|e| fail("E_DATA")(&e)),
                }
            };
            let c = donor(*covert, covert_file, 0xc0)?;
            let o = donor(*overt, overt_file, 0x0e)?;
            let result = forge(Recipe::new(*covert, *overt, *method, cli.seed), &c, &o).map_err(|e| fail("E_FORGE")(&e))?;
            fs::write(out, &result.bytes).map_err(io(out))?;
            let verified = verify_polyglot(&result);
            emit(&json!({
                "sha256": hex::encode(sha256(&result.bytes)),
                "recipe": result.recipe,
                "covert_location": result.covert_location,
                "verified": verified,
            }));
            Ok(if verified { Outcome::Ok } else { Outcome::Negative })
        }
        Command::Dataset { action: DatasetAction::Build { out } } => {
            let mut config = s.dataset.clone();
            if let Some(dir) = &s.ingest_dir {
                let ingested = ingest_dir(dir).map_err(|e| fail("E_DATA")(&e))?;
                for r in &ingested.rejected {
                    eprintln!("rejected {}: {}", r.path.display(), r.reason);
                }
                config.extra_donors = ingested.donors().map_err(|e| fail("E_DATA")(&e))?;
            }
            let ds = polyglot_core::build_dataset(&config, cli.seed, out).map_err(|e| fail("E_DATA")(&e))?;
            let count = |r: Role| ds.manifest.with_role(r).count();
            emit(&json!({
                "files": ds.manifest.samples.len(),
                "polyglots": ds.manifest.samples.iter().filter(|x| x.is_polyglot()).count(),
                "train": count(Role::Train),
                "test": count(Role::Test),
                "donor_train": count(Role::DonorTrain),
                "donor_test": count(Role::DonorTest),
            }));
            Ok(Outcome::Ok)
        }
        Command::Dataset { action: DatasetAction::Verify { dir } } => {
            let ds = Dataset::load(dir).map_err(|e| fail("E_DATA")(&e))?;
            let holdout = verify_holdout(&ds.manifest);
            let bad = ds.verify_labels().map_err(|e| fail("E_DATA")(&e))?;
            for (sample, got) in &bad {
                eprintln!("label mismatch {}: recorded {:?}, recovered {:?}", sample.sha_hex(), sample.labels, got);
            }
            emit(&json!({
                "files": ds.manifest.samples.len(),
                "role_overlaps": holdout.role_overlaps.len(),
                "donor_violations": holdout.donor_violations.len(),
                "label_mismatches": bad.len(),
                "passed": holdout.passed() && bad.is_empty(),
            }));
            Ok(if holdout.passed() && bad.is_empty() { Outcome::Ok } else { Outcome::Negative })
        }
        Command::Train { model, head, data, out } => {
            let ds = Dataset::load(data).map_err(|e| fail("E_DATA")(&e))?;
            let samples = ds.labelled(Role::Train).map_err(|e| fail("E_DATA")(&e))?;
            let head = Head::from(*head);
            let log = |st: &EpochStats| emit(st);
            let bytes = match model {
                ModelKind::Conv => {
                    let net = ConvNetConfig { head, ..s.conv.clone() };
                    let train = neural::TrainConfig { seed: cli.seed ^ SHUFFLE_SALT, ..s.train.clone() };
                    let (params, _) = train_detector::<f32>(&net, cli.seed, &samples, &train, log).map_err(|e| fail("E_TRAIN")(&e))?;
                    neural::save(&params)
                }
                ModelKind::Linear => {
                    let config = linear::LinearConfig { seed: cli.seed, ..s.linear.clone() };
                    let (m, history) = train_linear_on_samples::<f32>(&samples, head, s.vocab_size, s.normalize_hist, &config)
                        .map_err(|e| fail("E_TRAIN")(&e))?;
                    history.iter().for_each(log);
                    linear::save_linear(&m)
                }
            };
            fs::write(out, bytes).map_err(io(out))?;
            Ok(Outcome::Ok)
        }
        Command::Eval { data, conv_binary, conv_multi, linear_binary, linear_multi, scanner, tools, out } => {
            let ds = Dataset::load(data).map_err(|e| fail("E_DATA")(&e))?;
            let conv = |p: &Option<PathBuf>| -> Result<Option<ConvNet>, Failure> {
                p.as_ref().map(|p| neural::load(&fs::read(p).map_err(io(p))?).map_err(|e| fail("E_MODEL")(&e))).transpose()
            };
            let lin = |p: &Option<PathBuf>| -> Result<Option<Linear>, Failure> {
                p.as_ref().map(|p| linear::load_linear(&fs::read(p).map_err(io(p))?).map_err(|e| fail("E_MODEL")(&e))).transpose()
            };
            let (cb, cm, lb, lm) = (conv(conv_binary)?, conv(conv_multi)?, lin(linear_binary)?, lin(linear_multi)?);
            let mut owned: Vec<Box<dyn Detector + '_>> = Vec::new();
            if cb.is_some() || cm.is_some() {
                owned.push(Box::new(ModelDetector::conv("conv", cb.as_ref(), cm.as_ref())));
            }
            if lb.is_some() || lm.is_some() {
                owned.push(Box::new(ModelDetector::linear("linear", lb.as_ref(), lm.as_ref())));
            }
            if *scanner {
                owned.push(Box::new(ScannerDetector));
            }
            if *tools {
                for t in [Tool::File, Tool::Binwalk] {
                    owned.push(Box::new(ToolDetector { timeout: s.tool_timeout, ..ToolDetector::new(t) }));
                }
            }
            if owned.is_empty() {
                return Err(fail("E_USAGE")(&"no detectors selected"));
            }
            benchmark(&ds, &owned, out.as_deref())
        }
        Command::Scan { files } => {
            let mut suspect = false;
            for path in files {
                let bytes = fs::read(path).map_err(io(path))?;
                let report = scanner::verdict(&bytes);
                suspect |= report.verdict == scanner::Verdict::Suspect;
                emit(&json!({ "path": path, "report": report }));
            }
            Ok(if suspect { Outcome::Negative } else { Outcome::Ok })
        }
        Command::Sanitize { input, out } => {
            let bytes = fs::read(input).map_err(io(input))?;
            let clean = match sanitize::sanitize_image(&bytes) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}", fail("E_NOT_SANITIZABLE")(&e));
                    return Ok(Outcome::Negative);
                }
            };
            fs::write(out, &clean).map_err(io(out))?;
            let report = sanitize::verify_clean(&bytes, &clean);
            emit(&json!({ "removed_bytes": bytes.len() - clean.len(), "passed": report.passed(), "report": report }));
            Ok(if report.passed() { Outcome::Ok } else { Outcome::Negative })
        }
        Command::BenchTools { data, file_program, binwalk_program, out } => {
            let ds = Dataset::load(data).map_err(|e| fail("E_DATA")(&e))?;
            let owned: Vec<Box<dyn Detector>> = vec![
                Box::new(ToolDetector { tool: Tool::File, program: file_program.clone(), timeout: s.tool_timeout }),
                Box::new(ToolDetector { tool: Tool::Binwalk, program: binwalk_program.clone(), timeout: s.tool_timeout }),
            ];
            benchmark(&ds, &owned, out.as_deref())
        }
    }
}

const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn benchmark(ds: &Dataset, detectors: &[Box<dyn Detector + '_>], out: Option<&Path>) -> Result<Outcome, Failure> {
    let refs: Vec<&dyn Detector> = detectors.iter().map(|d| d.as_ref()).collect();
    let reports = eval::run_benchmark(ds, &refs).map_err(|e| fail("E_EVAL")(&e))?;
    let jsonl = eval::reports_jsonl(&reports);
    let table = eval::reports_table(&reports);
    print!("{jsonl}");
    eprint!("{table}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let (j, t) = (dir.join("reports.jsonl"), dir.join("report.txt"));
        fs::write(&j, jsonl).map_err(io(&j))?;
        fs::write(&t, table).map_err(io(&t))?;
    }
    Ok(Outcome::Ok)
}
