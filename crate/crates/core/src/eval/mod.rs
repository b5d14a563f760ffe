//! Detector benchmarking on the TEST split: binary precision/recall/F1,
//! PR curve and average precision for scoring detectors, and exact-set
//! multi-label match for labelling detectors.

pub mod metrics;
pub mod tools;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{verify_holdout, CorpusError, Dataset, Digest, Role};
use crate::forge::Method;
use crate::format::{identify_first, locate_covert, FormatId};
use crate::linear::LinearModel;
use crate::neural::{ConvNetParams, PAD};
use crate::scanner::{self, Verdict};
use crate::Scalar;

pub use metrics::{multilabel_exact, pr_auc, prf1, Confusion, ExactMatch, MetricError, PrCurve};
pub use tools::{Tool, ToolError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest failed the holdout check: {0}")]
    Holdout(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub polyglot: bool,
    /// Polyglot probability, for detectors that produce one.
    pub score: Option<f64>,
    /// Predicted formats, for detectors that label.
    pub labels: Option<BTreeSet<FormatId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectorError {
    /// The detector cannot run here at all (e.g. tool not installed).
    #[error("skipped: {0}")]
    Skipped(String),
    #[error("failed: {0}")]
    Failed(String),
}

pub trait Detector: Sync {
    fn name(&self) -> &str;
    fn predict(&self, path: &Path, bytes: &[u8]) -> Result<Prediction, DetectorError>;
}

type ScoreFn<'a> = Box<dyn Fn(&[u8]) -> f64 + Sync + 'a>;
type LabelFn<'a> = Box<dyn Fn(&[u8]) -> BTreeSet<FormatId> + Sync + 'a>;

/// A learned detector built from a binary model, a multi-label model, or
/// both. Without a binary model the decision is "more than one label".
pub struct ModelDetector<'a> {
    name: String,
    binary: Option<ScoreFn<'a>>,
    multi: Option<LabelFn<'a>>,
}

impl<'a> ModelDetector<'a> {
    pub fn conv<T: Scalar>(name: &str, binary: Option<&'a ConvNetParams<T>>, multi: Option<&'a ConvNetParams<T>>) -> Self {
        ModelDetector {
            name: name.to_string(),
            binary: binary.map(|m| Box::new(move |b: &[u8]| m.forward(b)[0].to_f64().unwrap()) as ScoreFn<'a>),
            multi: multi.map(|m| Box::new(move |b: &[u8]| m.predict_labels(b)) as LabelFn<'a>),
        }
    }

    pub fn linear<T: Scalar>(name: &str, binary: Option<&'a LinearModel<T>>, multi: Option<&'a LinearModel<T>>) -> Self {
        ModelDetector {
            name: name.to_string(),
            binary: binary.map(|m| Box::new(move |b: &[u8]| m.forward(b)[0].to_f64().unwrap()) as ScoreFn<'a>),
            multi: multi.map(|m| Box::new(move |b: &[u8]| m.predict_labels(b)) as LabelFn<'a>),
        }
    }
}

impl Detector for ModelDetector<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, _: &Path, bytes: &[u8]) -> Result<Prediction, DetectorError> {
        let score = self.binary.as_ref().map(|f| f(bytes));
        let labels = self.multi.as_ref().map(|f| f(bytes));
        let polyglot = match (score, &labels) {
            (Some(s), _) => s > 0.5,
            (None, Some(l)) => l.len() > 1,
            (None, None) => return Err(DetectorError::Failed("detector has no model".into())),
        };
        Ok(Prediction { polyglot, score, labels })
    }
}

/// The rule scanner as a detector: SUSPECT means polyglot; labels are the
/// first format plus every format a finding names.
pub struct ScannerDetector;

impl Detector for ScannerDetector {
    fn name(&self) -> &str {
        "scanner"
    }

    fn predict(&self, _: &Path, bytes: &[u8]) -> Result<Prediction, DetectorError> {
        let report = scanner::verdict(bytes);
        let mut labels = BTreeSet::from([report.format]);
        labels.extend(report.findings.iter().filter_map(|f| f.suspected));
        Ok(Prediction { polyglot: report.verdict == Verdict::Suspect, score: None, labels: Some(labels) })
    }
}

/// An external tool; polyglot when it reports more than one format.
pub struct ToolDetector {
    pub tool: Tool,
    pub program: String,
    pub timeout: Duration,
}

impl ToolDetector {
    pub fn new(tool: Tool) -> Self {
        ToolDetector { tool, program: tool.name().to_string(), timeout: Duration::from_secs(30) }
    }
}

impl Detector for ToolDetector {
    fn name(&self) -> &str {
        self.tool.name()
    }

    fn predict(&self, path: &Path, _: &[u8]) -> Result<Prediction, DetectorError> {
        match tools::run_tool(self.tool, &self.program, path, self.timeout) {
            Ok(labels) => Ok(Prediction { polyglot: labels.len() > 1, score: None, labels: Some(labels) }),
            Err(ToolError::ToolMissing(p)) => Err(DetectorError::Skipped(format!("{p} is not installed"))),
            Err(e) => Err(DetectorError::Failed(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredRecord {
    pub sha256: Digest,
    pub truth: BTreeSet<FormatId>,
    pub score: Option<f64>,
    pub polyglot: bool,
    pub predicted: Option<BTreeSet<FormatId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub detector: String,
    pub status: Status,
    pub reason: Option<String>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (recall, precision), recall ascending.
    pub pr_points: Vec<(f64, f64)>,
    pub pr_auc: Option<f64>,
    pub multilabel_exact_f1: Option<f64>,
    pub records: Vec<PredRecord>,
}

#[derive(Serialize)]
struct ReportLine<'a> {
    detector: &'a str,
    status: &'a Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    precision: f64,
    recall: f64,
    f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pr_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    multilabel_exact_f1: Option<f64>,
    #[serde(flatten)]
    confusion: &'a Confusion,
}

impl EvalReport {
    fn empty(detector: &str, status: Status, reason: String) -> Self {
        EvalReport {
            detector: detector.to_string(),
            status,
            reason: Some(reason),
            confusion: Confusion::default(),
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            pr_points: Vec::new(),
            pr_auc: None,
            multilabel_exact_f1: None,
            records: Vec::new(),
        }
    }

    pub fn from_records(detector: &str, records: Vec<PredRecord>) -> Self {
        let mut confusion = Confusion::default();
        for r in &records {
            confusion.add(r.truth.len() > 1, r.polyglot);
        }
        let (precision, recall, f1) = confusion.prf1();
        let curve = records
            .iter()
            .map(|r| r.score)
            .collect::<Option<Vec<f64>>>()
            .and_then(|scores| {
                let truth: Vec<bool> = records.iter().map(|r| r.truth.len() > 1).collect();
                pr_auc::<f64>(&scores, &truth).ok()
            });
        let exact = records.iter().map(|r| r.predicted.clone()).collect::<Option<Vec<_>>>().map(|preds| {
            let truths: Vec<_> = records.iter().map(|r| r.truth.clone()).collect();
            multilabel_exact(&preds, &truths).f1
        });
        EvalReport {
            detector: detector.to_string(),
            status: Status::Ok,
            reason: None,
            confusion,
            precision,
            recall,
            f1,
            pr_auc: curve.as_ref().map(|c| c.auc),
            pr_points: curve.map(|c| c.points).unwrap_or_default(),
            multilabel_exact_f1: exact,
            records,
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(&ReportLine {
            detector: &self.detector,
            status: &self.status,
            reason: self.reason.as_deref(),
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            pr_auc: self.pr_auc,
            multilabel_exact_f1: self.multilabel_exact_f1,
            confusion: &self.confusion,
        })
        .expect("report serializes")
    }
}

pub fn reports_jsonl(reports: &[EvalReport]) -> String {
    reports.iter().map(|r| r.json_line() + "\n").collect()
}

pub fn reports_table(reports: &[EvalReport]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut out = format!(
        "{:<12} {:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5} {:>5}\n",
        "detector", "status", "precision", "recall", "f1", "pr_auc", "exact_f1", "tp", "fp", "fn", "tn"
    );
    for r in reports {
        let c = &r.confusion;
        let status = match r.status {
            Status::Ok => "OK",
            Status::Skipped => "SKIPPED",
            Status::Failed => "FAILED",
        };
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9} {:>5} {:>5} {:>5} {:>5}",
            r.detector, status, r.precision, r.recall, r.f1, opt(r.pr_auc), opt(r.multilabel_exact_f1), c.tp, c.fp, c.fn_, c.tn
        );
        if let Some(reason) = &r.reason {
            let _ = writeln!(out, "  {reason}");
        }
    }
    out
}

/// Evaluate every detector on the TEST-role samples. Detector failures are
/// recorded in that detector's report and do not stop the run. Files are
/// processed in parallel on the current rayon pool.
pub fn run_benchmark(dataset: &Dataset, detectors: &[&dyn Detector]) -> Result<Vec<EvalReport>, EvalError> {
    let holdout = verify_holdout(&dataset.manifest);
    if !holdout.passed() {
        return Err(EvalError::Holdout(format!("{holdout:?}")));
    }
    let samples = dataset.split(Role::Test);
    let files: Vec<Vec<u8>> = samples.iter().map(|s| dataset.read(s)).collect::<Result<_, _>>()?;
    let reports = detectors
        .iter()
        .map(|d| {
            let outcomes: Vec<Result<Prediction, DetectorError>> = samples
                .par_iter()
                .zip(&files)
                .map(|(s, bytes)| d.predict(&dataset.root.join(&s.path), bytes))
                .collect();
            let failures: Vec<&DetectorError> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
            if let Some(DetectorError::Skipped(why)) = failures.iter().find(|e| matches!(e, DetectorError::Skipped(_))) {
                return EvalReport::empty(d.name(), Status::Skipped, why.clone());
            }
            if let Some(first) = failures.first() {
                return EvalReport::empty(d.name(), Status::Failed, format!("{} of {} files: {first}", failures.len(), samples.len()));
            }
            let records = samples
                .iter()
                .zip(outcomes)
                .map(|(s, o)| {
                    let p = o.expect("failures handled above");
                    PredRecord { sha256: s.sha256, truth: s.labels.clone(), score: p.score, polyglot: p.polyglot, predicted: p.labels }
                })
                .collect();
            EvalReport::from_records(d.name(), records)
        })
        .collect();
    Ok(reports)
}

/// Tokens of `bytes` with `shift` padding tokens inserted at `at`, or `None`
/// when the result would exceed the model's capacity.
pub fn shifted_tokens(max_len: usize, bytes: &[u8], at: usize, shift: usize) -> Option<Vec<u16>> {
    if bytes.len() + shift > max_len || at > bytes.len() {
        return None;
    }
    let mut t: Vec<u16> = bytes.iter().map(|&b| b as u16).collect();
    t.splice(at..at, std::iter::repeat_n(PAD, shift));
    Some(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShiftReport {
    pub cases: usize,
    pub variants: usize,
    pub unchanged: usize,
}

impl ShiftReport {
    pub fn rate(&self) -> f64 {
        if self.variants == 0 {
            0.0
        } else {
            self.unchanged as f64 / self.variants as f64
        }
    }
}

/// For each (file, covert start), compare the binary decision on the file
/// with the decisions after moving the covert payload right by k·stride
/// padding tokens, k = 1..=max_k, counting only variants within capacity.
pub fn shift_robustness<T: Scalar>(net: &ConvNetParams<T>, cases: &[(Vec<u8>, usize)], max_k: usize) -> ShiftReport {
    let half = T::from_f64(0.5).unwrap();
    let (max_len, stride) = (net.config.max_len, net.config.stride);
    let counts: Vec<(usize, usize)> = cases
        .par_iter()
        .map(|(bytes, at)| {
            let base = net.forward_tokens(&net.config.encode(bytes))[0] > half;
            let decisions: Vec<bool> = (1..=max_k)
                .filter_map(|k| shifted_tokens(max_len, bytes, *at, k * stride))
                .map(|t| net.forward_tokens(&t)[0] > half)
                .collect();
            (decisions.len(), decisions.iter().filter(|&&d| d == base).count())
        })
        .collect();
    ShiftReport {
        cases: cases.len(),
        variants: counts.iter().map(|c| c.0).sum(),
        unchanged: counts.iter().map(|c| c.1).sum(),
    }
}

/// Stack polyglots of `role` whose covert payload follows the overt file,
/// with the covert start offset.
pub fn stack_cases(dataset: &Dataset, role: Role) -> Result<Vec<(Vec<u8>, usize)>, CorpusError> {
    let mut out = Vec::new();
    for s in dataset.split(role) {
        let Some(origin) = s.origin.filter(|o| o.method == Method::Stack) else { continue };
        let bytes = dataset.read(s)?;
        if identify_first(&bytes) != origin.overt {
            continue;
        }
        if let Some(loc) = locate_covert(origin.covert, &bytes).filter(|l| l.start > 0) {
            out.push((bytes, loc.start));
        }
    }
    Ok(out)
}
