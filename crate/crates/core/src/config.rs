//! Run configuration: a `key = value` text file merged over defaults.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::data::{split_by_date, DailySample, Hemisphere, ProsumerSplit};
use crate::error::{Error, Result};
use crate::eval::KnnK;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// How a dataset is divided into training and test days.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TestSplit {
    /// Whole prosumers are held out.
    #[default]
    Prosumer,
    /// The latest dates are held out.
    Date,
}

impl fmt::Display for TestSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestSplit::Prosumer => "prosumer",
            TestSplit::Date => "date",
        })
    }
}

impl FromStr for TestSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prosumer" => Ok(TestSplit::Prosumer),
            "date" => Ok(TestSplit::Date),
            _ => Err(Error::Config(format!("test split must be 'prosumer' or 'date', got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub test_split: TestSplit,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Share of prosumers treated as net-load-only at ingestion.
    pub p2_fraction: f64,
    pub hemisphere: Hemisphere,
    pub filter_low_pct: f64,
    pub filter_high_pct: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_split: TestSplit::Prosumer,
            test_fraction: 0.2,
            split_seed: 0,
            p2_fraction: 0.2,
            hemisphere: Hemisphere::Southern,
            filter_low_pct: 1.0,
            filter_high_pct: 99.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub knn_k: KnnK,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Sets one model key. Returns `Ok(false)` when the key is not a model key.
pub fn set_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "hi.kernel_sizes" => cfg.hi.kernel_sizes = parse_list(key, value)?,
        "hi.mlp_hidden" => cfg.hi.mlp_hidden = parse_list(key, value)?,
        "hi.embed_dim" => cfg.hi.embed_dim = parse(key, value)?,
        "attn.heads" => cfg.attn.heads = parse(key, value)?,
        "attn.head_dim" => cfg.attn.head_dim = parse(key, value)?,
        "attn.model_dim" => cfg.attn.model_dim = parse(key, value)?,
        "attn.out_hidden" => cfg.attn.out_hidden = parse_list(key, value)?,
        "attn.token_layout" => cfg.attn.token_layout = value.parse()?,
        "pred.hidden" => cfg.pred_hidden = parse_list(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Every model key with its current value, in a fixed order.
pub fn model_entries(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("hi.kernel_sizes", list(&cfg.hi.kernel_sizes)),
        ("hi.mlp_hidden", list(&cfg.hi.mlp_hidden)),
        ("hi.embed_dim", cfg.hi.embed_dim.to_string()),
        ("attn.heads", cfg.attn.heads.to_string()),
        ("attn.head_dim", cfg.attn.head_dim.to_string()),
        ("attn.model_dim", cfg.attn.model_dim.to_string()),
        ("attn.out_hidden", list(&cfg.attn.out_hidden)),
        ("attn.token_layout", cfg.attn.token_layout.to_string()),
        ("pred.hidden", list(&cfg.pred_hidden)),
    ]
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if set_model_key(&mut self.model, key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.repeats" => t.repeats = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.epsilon" => t.epsilon = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.val_fraction" => t.val_fraction = parse(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "data.test_split" => d.test_split = value.parse()?,
            "data.test_fraction" => d.test_fraction = parse(key, value)?,
            "data.split_seed" => d.split_seed = parse(key, value)?,
            "data.p2_fraction" => d.p2_fraction = parse(key, value)?,
            "data.hemisphere" => d.hemisphere = value.parse()?,
            "data.filter_low_pct" => d.filter_low_pct = parse(key, value)?,
            "data.filter_high_pct" => d.filter_high_pct = parse(key, value)?,
            "eval.knn_k" => self.knn_k = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, label: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    path: label.to_path_buf(),
                    line: i as u64 + 1,
                    msg: format!("expected 'key = value', got {line:?}"),
                });
            };
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}:{}: {msg}", label.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(&std::fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::Config(format!("data.test_fraction must lie in (0, 1), got {}", d.test_fraction)));
        }
        if !(0.0..1.0).contains(&d.p2_fraction) {
            return Err(Error::Config(format!("data.p2_fraction must lie in [0, 1), got {}", d.p2_fraction)));
        }
        if !(0.0 <= d.filter_low_pct && d.filter_low_pct < d.filter_high_pct && d.filter_high_pct <= 100.0) {
            return Err(Error::Config(format!(
                "percentile filter bounds must satisfy 0 <= low < high <= 100, got {} and {}",
                d.filter_low_pct, d.filter_high_pct
            )));
        }
        if let KnnK::Fixed(0) = self.knn_k {
            return Err(Error::Config("eval.knn_k must be >= 1".into()));
        }
        Ok(())
    }

    /// Divides `samples` into (train, test) per `data.test_split`.
    ///
    /// Prosumer splits are seeded by `data.split_seed` and hold out at least
    /// one prosumer whenever there are two or more.
    pub fn partition(&self, samples: &[DailySample]) -> Result<(Vec<DailySample>, Vec<DailySample>)> {
        let d = &self.data;
        match d.test_split {
            TestSplit::Date => Ok(split_by_date(samples, d.test_fraction)),
            TestSplit::Prosumer => {
                let ids: BTreeSet<&str> = samples.iter().map(|s| s.prosumer_id.as_str()).collect();
                let n = ids.len();
                let mut frac = d.test_fraction;
                if n >= 2 && (frac * n as f64).round() < 1.0 {
                    frac = 1.0 / n as f64;
                }
                let split = ProsumerSplit::by_fraction(ids, frac, d.split_seed)?;
                Ok(samples.iter().cloned().partition(|s| !split.p2.contains(&s.prosumer_id)))
            }
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = model_entries(&self.model);
        let t = &self.train;
        let d = &self.data;
        out.extend([
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.repeats", t.repeats.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.val_fraction", t.val_fraction.to_string()),
            ("data.test_split", d.test_split.to_string()),
            ("data.test_fraction", d.test_fraction.to_string()),
            ("data.split_seed", d.split_seed.to_string()),
            ("data.p2_fraction", d.p2_fraction.to_string()),
            ("data.hemisphere", d.hemisphere.to_string()),
            ("data.filter_low_pct", d.filter_low_pct.to_string()),
            ("data.filter_high_pct", d.filter_high_pct.to_string()),
            ("eval.knn_k", self.knn_k.to_string()),
            ("threads", t.threads.to_string()),
        ]);
        out
    }

    /// Full `key = value` listing that [`merge_text`](Self::merge_text) reads back.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::TokenLayout;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.merge_text(
            "# tuned\ntrain.epochs = 7\nhi.kernel_sizes = 1, 3\npred.hidden =\nattn.token_layout = channel # note\neval.knn_k = 3\n",
            Path::new("run.cfg"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.model.hi.kernel_sizes, vec![1, 3]);
        assert!(cfg.model.pred_hidden.is_empty());
        assert_eq!(cfg.model.attn.token_layout, TokenLayout::Channel);
        assert_eq!(cfg.knn_k, KnnK::Fixed(3));
        let mut back = RunConfig::default();
        back.merge_text(&cfg.snapshot(), Path::new("snap")).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn partitions_are_disjoint_and_seeded() {
        use crate::data::synth::{synth_generate, SynthConfig};
        let data = synth_generate(&SynthConfig::new(5, 4, 2));
        let cfg = RunConfig::default();
        let (tr, te) = cfg.partition(&data).unwrap();
        assert_eq!(tr.len() + te.len(), data.len());
        assert_eq!(te.len(), 4);
        assert!(tr.iter().all(|s| te.iter().all(|t| t.prosumer_id != s.prosumer_id)));
        assert_eq!(cfg.partition(&data).unwrap().1, te);
        let mut by_date = cfg.clone();
        by_date.data.test_split = TestSplit::Date;
        by_date.data.test_fraction = 0.25;
        let (tr, te) = by_date.partition(&data).unwrap();
        assert_eq!((tr.len(), te.len()), (15, 5));
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = RunConfig::default();
        let err = cfg.merge_text("\ntrain.epoch = 3\n", Path::new("a.cfg")).unwrap_err();
        assert!(err.to_string().contains("a.cfg:2"), "{err}");
        assert!(cfg.merge_text("train.epochs 3", Path::new("a.cfg")).is_err());
        assert!(cfg.merge_text("train.epochs = x", Path::new("a.cfg")).is_err());
        cfg.merge_text("data.filter_low_pct = 99", Path::new("a.cfg")).unwrap();
        assert!(cfg.validate().is_err());
    }
}
