//! Flat `key = value` settings. Keys are `<section>.<field>` and mirror the
//! library config types; later assignments win, so `--set` flags applied
//! after the file override it.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use polyglot_core::linear::LinearConfig;
use polyglot_core::neural::{ConvNetConfig, Head, TrainConfig};
use polyglot_core::DatasetConfig;

#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: DatasetConfig,
    pub ingest_dir: Option<PathBuf>,
    pub conv: ConvNetConfig,
    pub train: TrainConfig,
    pub linear: LinearConfig,
    pub vocab_size: usize,
    pub normalize_hist: bool,
    pub tool_timeout: Duration,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dataset: DatasetConfig::default(),
            ingest_dir: None,
            conv: ConvNetConfig::polyconv(Head::Binary),
            train: TrainConfig::default(),
            linear: LinearConfig::default(),
            vocab_size: 8000,
            normalize_hist: true,
            tool_timeout: Duration::from_secs(30),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "dataset.monoglots_per_format" => self.dataset.monoglots_per_format = parse(key, v)?,
            "dataset.polyglots_per_pair" => self.dataset.polyglots_per_pair = parse(key, v)?,
            "dataset.donors_per_format" => self.dataset.donors_per_format = parse(key, v)?,
            "dataset.test_fraction" => self.dataset.test_fraction = parse(key, v)?,
            "dataset.min_size" => self.dataset.min_size = parse(key, v)?,
            "dataset.max_size" => self.dataset.max_size = parse(key, v)?,
            "dataset.fixtures_dir" => self.dataset.fixtures_dir = PathBuf::from(v),
            "dataset.ingest_dir" => self.ingest_dir = Some(PathBuf::from(v)),
            "conv.max_len" => self.conv.max_len = parse(key, v)?,
            "conv.embed_dim" => self.conv.embed_dim = parse(key, v)?,
            "conv.window" => self.conv.window = parse(key, v)?,
            "conv.stride" => self.conv.stride = parse(key, v)?,
            "conv.filters" => self.conv.filters = parse(key, v)?,
            "conv.fc_sizes" => self.conv.fc_sizes = parse_list(key, v)?,
            "conv.gated" => self.conv.gated = parse(key, v)?,
            "conv.head_tail" => {
                self.conv.head_tail = match v {
                    "none" => None,
                    _ => match parse_list(key, v)?.as_slice() {
                        &[h, t] => Some((h, t)),
                        _ => return Err(format!("{key} takes `head,tail` or `none`")),
                    },
                }
            }
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.pretrain_epochs" => self.train.pretrain_epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.dropout" => self.train.dropout = parse(key, v)?,
            "train.lr" => self.train.adam.lr = parse(key, v)?,
            "train.beta1" => self.train.adam.beta1 = parse(key, v)?,
            "train.beta2" => self.train.adam.beta2 = parse(key, v)?,
            "train.eps" => self.train.adam.eps = parse(key, v)?,
            "train.weight_decay" => self.train.adam.weight_decay = parse(key, v)?,
            "linear.lr" => self.linear.lr = parse(key, v)?,
            "linear.epochs" => self.linear.epochs = parse(key, v)?,
            "linear.batch_size" => self.linear.batch_size = parse(key, v)?,
            "linear.l2" => self.linear.l2 = parse(key, v)?,
            "linear.vocab_size" => self.vocab_size = parse(key, v)?,
            "linear.normalize_hist" => self.normalize_hist = parse(key, v)?,
            "eval.tool_timeout_secs" => self.tool_timeout = Duration::from_secs(parse(key, v)?),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Apply one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<(), String> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| format!("expected key=value, got {assignment:?}"))?;
        self.set(k.trim(), v)
    }

    /// Apply a settings file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                self.assign(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::default();
        s.apply_text("# desk run\ntrain.epochs = 3\nconv.fc_sizes = 8, 4\n\nconv.head_tail = 8192,8192 # split\n").unwrap();
        s.assign("train.epochs=5").unwrap();
        assert_eq!(s.train.epochs, 5);
        assert_eq!(s.conv.fc_sizes, [8, 4]);
        assert_eq!(s.conv.head_tail, Some((8192, 8192)));
    }

    #[test]
    fn errors_name_the_line() {
        let mut s = Settings::default();
        assert_eq!(s.apply_text("train.epochs = 2\nnope = 1"), Err("line 2: unknown key \"nope\"".into()));
        assert!(s.assign("train.lr=fast").unwrap_err().contains("train.lr"));
        assert!(s.assign("train.lr").is_err());
    }
}
