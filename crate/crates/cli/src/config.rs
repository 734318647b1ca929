//! Run configuration from a line-oriented `key = value` file plus overrides.
//!
//! Every key has exactly one command-line flag: the key with `_` replaced by
//! `-`. Lists are comma-separated. Lines starting with `#` are comments.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use paee_core::eval::{Architecture, ExperimentConfig, ModelVariant};
use paee_core::optim::TrainConfig;
use paee_core::preprocess::AggregationFn;
use paee_core::sequencing::{
    paper_grid, LabelEncoding, SequenceSpec, PAPER_SEQ_SIZES, PAPER_WINDOWS_SEC,
};
use paee_core::synth::SynthConfig;

pub const KEYS: &[&str] = &[
    "data",
    "out",
    "seed",
    "workers",
    "subjects",
    "duration_sec",
    "indoor_only_fraction",
    "lag_tau",
    "noise_sd",
    "variant",
    "agg",
    "seq_size",
    "window_sec",
    "paper_grid",
    "label_encoding",
    "gru_hidden",
    "static_hidden",
    "head_hidden",
    "dropout",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "early_stop",
    "micro_batch",
    "model",
    "recording",
    "window",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub subjects: usize,
    pub duration_sec: f64,
    pub indoor_only_fraction: f64,
    pub lag_tau: f64,
    pub noise_sd: f64,
    pub variant: Vec<ModelVariant>,
    pub agg: Vec<AggregationFn>,
    pub seq_size: Vec<usize>,
    pub window_sec: Vec<f64>,
    pub paper_grid: bool,
    pub label_encoding: LabelEncoding,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub model: Option<PathBuf>,
    pub recording: Option<PathBuf>,
    /// Prediction output resolution in seconds; per breath when absent.
    pub window: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            data: None,
            out: PathBuf::from("out"),
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            subjects: synth.n_subjects,
            duration_sec: synth.duration_sec,
            indoor_only_fraction: synth.indoor_only_fraction,
            lag_tau: synth.lag_tau,
            noise_sd: synth.noise_sd,
            variant: vec![ModelVariant::GaId],
            agg: vec![AggregationFn::Sd],
            seq_size: vec![50],
            window_sec: vec![120.0],
            paper_grid: false,
            label_encoding: LabelEncoding::Ordinal,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            model: None,
            recording: None,
            window: None,
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        bail!("empty list");
    }
    Ok(items)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    Ok(v.trim().parse::<T>()?)
}

fn fixed<const N: usize>(v: &str) -> Result<[usize; N]> {
    let items = list(v, num::<usize>)?;
    items
        .try_into()
        .map_err(|_| anyhow!("expected {N} comma-separated widths"))
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "data" => self.data = opt_path(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(v)?,
            "workers" => {
                self.workers = num(v)?;
                if self.workers == 0 {
                    bail!("workers must be positive");
                }
            }
            "subjects" => self.subjects = num(v)?,
            "duration_sec" => self.duration_sec = num(v)?,
            "indoor_only_fraction" => self.indoor_only_fraction = num(v)?,
            "lag_tau" => self.lag_tau = num(v)?,
            "noise_sd" => self.noise_sd = num(v)?,
            "variant" => self.variant = list(v, |s| Ok(s.parse::<ModelVariant>()?))?,
            "agg" => self.agg = list(v, |s| Ok(s.parse::<AggregationFn>()?))?,
            "seq_size" => self.seq_size = list(v, num::<usize>)?,
            "window_sec" => self.window_sec = list(v, num::<f64>)?,
            "paper_grid" => self.paper_grid = num(v)?,
            "label_encoding" => {
                self.label_encoding = match v {
                    "ordinal" => LabelEncoding::Ordinal,
                    "onehot" | "one_hot" => LabelEncoding::OneHot,
                    other => bail!("unknown label encoding `{other}` (ordinal, onehot)"),
                }
            }
            "gru_hidden" => self.arch.gru_hidden = fixed::<3>(v)?,
            "static_hidden" => self.arch.static_hidden = num(v)?,
            "head_hidden" => self.arch.head_hidden = fixed::<2>(v)?,
            "dropout" => self.arch.dropout = num(v)?,
            "epochs" => self.train.epochs = num(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "lr" => self.train.lr = num(v)?,
            "beta1" => self.train.beta1 = num(v)?,
            "beta2" => self.train.beta2 = num(v)?,
            "eps" => self.train.eps = num(v)?,
            "early_stop" => {
                self.train.early_stop = match v {
                    "" | "none" | "off" => None,
                    n => Some(num(n)?),
                }
            }
            "micro_batch" => self.train.micro_batch = num(v)?,
            "model" => self.model = opt_path(v),
            "recording" => self.recording = opt_path(v),
            "window" => {
                self.window = match v {
                    "" | "breath" => None,
                    n => Some(num(n)?),
                }
            }
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => path_or_empty(&self.data),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "workers" => self.workers.to_string(),
            "subjects" => self.subjects.to_string(),
            "duration_sec" => self.duration_sec.to_string(),
            "indoor_only_fraction" => self.indoor_only_fraction.to_string(),
            "lag_tau" => self.lag_tau.to_string(),
            "noise_sd" => self.noise_sd.to_string(),
            "variant" => join(&self.variant),
            "agg" => join(&self.agg),
            "seq_size" => join(&self.seq_size),
            "window_sec" => join(&self.window_sec),
            "paper_grid" => self.paper_grid.to_string(),
            "label_encoding" => match self.label_encoding {
                LabelEncoding::Ordinal => "ordinal".into(),
                LabelEncoding::OneHot => "onehot".into(),
            },
            "gru_hidden" => join(&self.arch.gru_hidden),
            "static_hidden" => self.arch.static_hidden.to_string(),
            "head_hidden" => join(&self.arch.head_hidden),
            "dropout" => self.arch.dropout.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "lr" => self.train.lr.to_string(),
            "beta1" => self.train.beta1.to_string(),
            "beta2" => self.train.beta2.to_string(),
            "eps" => self.train.eps.to_string(),
            "early_stop" => self
                .train
                .early_stop
                .map_or("none".into(), |p| p.to_string()),
            "micro_batch" => self.train.micro_batch.to_string(),
            "model" => path_or_empty(&self.model),
            "recording" => path_or_empty(&self.recording),
            "window" => self.window.map_or("breath".into(), |w| w.to_string()),
            _ => return None,
        })
    }

    /// Applies a `key = value` document.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_str(&text, &path.display().to_string())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_subjects: self.subjects,
            indoor_only_fraction: self.indoor_only_fraction,
            seed: self.seed,
            duration_sec: self.duration_sec,
            lag_tau: self.lag_tau,
            noise_sd: self.noise_sd,
            ..SynthConfig::default()
        }
    }

    /// Sequence specs of the sweep: the cartesian product of the configured
    /// lists, or the 7 × 4 reference grid per aggregation with `paper_grid`.
    pub fn specs(&self) -> Result<Vec<SequenceSpec>> {
        let mut out = Vec::new();
        for &agg in &self.agg {
            if self.paper_grid {
                out.extend(paper_grid(agg));
                continue;
            }
            for &size in &self.seq_size {
                for &window in &self.window_sec {
                    out.push(SequenceSpec::new(size, window, agg)?);
                }
            }
        }
        for s in &mut out {
            s.label_encoding = self.label_encoding;
        }
        Ok(out)
    }

    pub fn experiments(&self) -> Result<Vec<ExperimentConfig>> {
        let specs = self.specs()?;
        let mut out = Vec::with_capacity(specs.len() * self.variant.len());
        for &variant in &self.variant {
            for spec in &specs {
                let mut cfg = ExperimentConfig::new(spec.clone(), variant);
                cfg.arch = self.arch.clone();
                cfg.train = TrainConfig {
                    seed: self.seed,
                    ..self.train.clone()
                };
                cfg.model_seed = self.seed;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key} = {}", self.get(key).unwrap_or_default())?;
        }
        Ok(())
    }
}

/// The paper grid sizes, for help text.
pub fn paper_grid_help() -> String {
    format!(
        "sequence sizes {} x windows {} s",
        join(&PAPER_SEQ_SIZES),
        join(&PAPER_WINDOWS_SEC)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = RunConfig::default();
        cfg.apply_str(
            "# sweep\nseed = 7\nagg = sd, mean\nseq_size = 4,50\ngru_hidden = 8,16,8\nearly_stop = 3\nwindow = 60\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.agg, vec![AggregationFn::Sd, AggregationFn::Mean]);
        assert_eq!(cfg.arch.gru_hidden, [8, 16, 8]);
        assert_eq!(cfg.window, Some(60.0));
        let mut back = RunConfig::default();
        back.apply_str(&cfg.to_string(), "rendered").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_str("colour = red\n", "x").is_err());
        assert!(cfg.apply_str("seed = -1\n", "x").is_err());
        assert!(cfg.apply_str("gru_hidden = 1,2\n", "x").is_err());
        assert!(cfg.apply_str("no equals sign\n", "x").is_err());
        for key in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn grid_sizes() {
        let mut cfg = RunConfig {
            paper_grid: true,
            ..RunConfig::default()
        };
        assert_eq!(cfg.experiments().unwrap().len(), 28);
        cfg.paper_grid = false;
        cfg.seq_size = vec![4, 10];
        cfg.variant = vec![ModelVariant::Ga, ModelVariant::GaId];
        assert_eq!(cfg.experiments().unwrap().len(), 4);
    }
}
