//! Polyglot file toolkit: format identification, polyglot generation,
//! dataset building, learned and rule-based detectors, image sanitization
//! and evaluation.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub mod corpus;
pub mod eval;
pub mod features;
pub mod forge;
pub mod format;
pub mod linear;
pub mod neural;
pub mod optim;
pub mod sanitize;
pub mod scanner;

/// Real scalar used by the numeric models.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Send + Sync + Debug + Display + Default + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub use corpus::{build_dataset, verify_holdout, Dataset, DatasetConfig, FileSample, Manifest, Role};
pub use eval::{multilabel_exact, pr_auc, prf1, run_benchmark, EvalReport};
pub use format::{identify_first, locate_covert, recover_labels, validate, FormatId};
pub use forge::{forge, verify_polyglot, Method, Recipe};
pub use sanitize::{sanitize_image, verify_clean};
pub use scanner::{scan_parasites, scan_trailing, verdict, Verdict};

pub type ConvNet = neural::ConvNetParams<f32>;
pub type Linear = linear::LinearModel<f32>;
pub type Linear64 = linear::LinearModel<f64>;
pub type ConvNet64 = neural::ConvNetParams<f64>;
