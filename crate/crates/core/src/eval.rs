//! Leave-one-subject-out evaluation, metrics, window aggregation, paired
//! t-tests and configuration sweeps.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data_model::{Place, Recording};
use crate::error::{Error, Result};
use crate::nn::model::{PAPER_DROPOUT, PAPER_GRU_HIDDEN, PAPER_HEAD_HIDDEN, PAPER_STATIC_HIDDEN};
use crate::nn::{init_params, HybridModel, ModelConfig};
use crate::optim::{predict, train, TrainConfig};
use crate::sequencing::{
    build_eval_set, build_training_set, fit_normalizer, Normalizer, SequenceSpec, TrainingExample,
    STATIC_FEATURES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Accelerometer sequence only.
    Ga,
    /// Plus the static participant branch.
    GaId,
    /// Plus the activity-class channel.
    GaAc,
    GaIdAc,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::Ga,
        ModelVariant::GaId,
        ModelVariant::GaAc,
        ModelVariant::GaIdAc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Ga => "GA",
            ModelVariant::GaId => "GA_ID",
            ModelVariant::GaAc => "GA_AC",
            ModelVariant::GaIdAc => "GA_ID_AC",
        }
    }

    pub fn uses_static(self) -> bool {
        matches!(self, ModelVariant::GaId | ModelVariant::GaIdAc)
    }

    pub fn uses_labels(self) -> bool {
        matches!(self, ModelVariant::GaAc | ModelVariant::GaIdAc)
    }

    /// `spec` with the static and label switches set for this variant.
    pub fn apply(self, spec: &SequenceSpec) -> SequenceSpec {
        SequenceSpec {
            use_static: self.uses_static(),
            use_labels: self.uses_labels(),
            ..spec.clone()
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub test_subject: String,
    /// `[indoor-only, with outdoor data]`
    pub validation_subjects: [String; 2],
    pub train_subjects: Vec<String>,
}

/// Subject id and whether it has outdoor data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectInfo {
    pub id: String,
    pub has_outdoor: bool,
}

impl SubjectInfo {
    pub fn of(recordings: &[Recording]) -> Vec<SubjectInfo> {
        recordings
            .iter()
            .map(|r| SubjectInfo {
                id: r.id.clone(),
                has_outdoor: r.has_outdoor(),
            })
            .collect()
    }
}

/// One fold per subject. The validation pair of each fold is drawn from its
/// own stream of a generator seeded by `seed`, so it does not depend on the
/// model variant or configuration being evaluated.
pub fn loso_folds(subjects: &[SubjectInfo], seed: u64) -> Result<Vec<FoldSpec>> {
    if subjects.len() < 4 {
        return Err(Error::InsufficientSubjects(format!(
            "{} subjects, LOSO with a validation pair needs at least 4",
            subjects.len()
        )));
    }
    let mut sorted: Vec<&SubjectInfo> = subjects.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidConfig("duplicate subject ids".into()));
    }
    let mut folds = Vec::with_capacity(sorted.len());
    for (k, test) in sorted.iter().enumerate() {
        let indoor: Vec<&str> = sorted
            .iter()
            .filter(|s| s.id != test.id && !s.has_outdoor)
            .map(|s| s.id.as_str())
            .collect();
        let outdoor: Vec<&str> = sorted
            .iter()
            .filter(|s| s.id != test.id && s.has_outdoor)
            .map(|s| s.id.as_str())
            .collect();
        if indoor.is_empty() || outdoor.is_empty() {
            return Err(Error::InsufficientSubjects(format!(
                "fold {} lacks an indoor-only or an outdoor validation candidate",
                test.id
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let v_in = indoor[rng.random_range(0..indoor.len())].to_string();
        let v_out = outdoor[rng.random_range(0..outdoor.len())].to_string();
        let train_subjects = sorted
            .iter()
            .map(|s| s.id.clone())
            .filter(|id| *id != test.id && *id != v_in && *id != v_out)
            .collect();
        folds.push(FoldSpec {
            test_subject: test.id.clone(),
            validation_subjects: [v_in, v_out],
            train_subjects,
        });
    }
    Ok(folds)
}

/// Seeded validation pair (indoor-only, with outdoor data) and the remaining
/// training subjects, for fitting one model on a whole dataset.
pub fn train_validation_split(
    subjects: &[SubjectInfo],
    seed: u64,
) -> Result<([String; 2], Vec<String>)> {
    let mut sorted: Vec<&SubjectInfo> = subjects.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let indoor: Vec<&str> = sorted
        .iter()
        .filter(|s| !s.has_outdoor)
        .map(|s| s.id.as_str())
        .collect();
    let outdoor: Vec<&str> = sorted
        .iter()
        .filter(|s| s.has_outdoor)
        .map(|s| s.id.as_str())
        .collect();
    if indoor.is_empty() || outdoor.is_empty() || sorted.len() < 3 {
        return Err(Error::InsufficientSubjects(
            "need an indoor-only subject, an outdoor subject and one to train on".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = [
        indoor[rng.random_range(0..indoor.len())].to_string(),
        outdoor[rng.random_range(0..outdoor.len())].to_string(),
    ];
    let train = sorted
        .iter()
        .map(|s| s.id.clone())
        .filter(|id| !pair.contains(id))
        .collect();
    Ok((pair, train))
}

fn check_pair(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let ss: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Coefficient of determination, `1 − SS_res / SS_tot`.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Median; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Evaluation resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvalWindow {
    /// Per breath, no aggregation.
    Breath,
    Seconds(f64),
}

impl EvalWindow {
    /// Breath, 10 s, 30 s, 60 s, 5 min and 60 min.
    pub const STANDARD: [EvalWindow; 6] = [
        EvalWindow::Breath,
        EvalWindow::Seconds(10.0),
        EvalWindow::Seconds(30.0),
        EvalWindow::Seconds(60.0),
        EvalWindow::Seconds(300.0),
        EvalWindow::Seconds(3600.0),
    ];

    pub fn label(self) -> String {
        match self {
            EvalWindow::Breath => "breath".into(),
            EvalWindow::Seconds(s) if s >= 60.0 && s % 60.0 == 0.0 => format!("{}min", s / 60.0),
            EvalWindow::Seconds(s) => format!("{s}s"),
        }
    }
}

/// `k` with `k·w <= t < (k+1)·w`; the division alone can round across an
/// edge.
fn bin_index(t: f64, w: f64) -> i64 {
    let mut k = (t / w).floor();
    if k * w > t {
        k -= 1.0;
    } else if (k + 1.0) * w <= t {
        k += 1.0;
    }
    k as i64
}

/// Mean-aggregates aligned series into wall-clock bins `[k·w, (k+1)·w)` of
/// the recording epoch. Non-finite values count as missing, and bins empty in
/// either series are dropped from both.
pub fn aggregate_eval(
    times: &[f64],
    truth: &[f64],
    pred: &[f64],
    window: EvalWindow,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if times.len() != truth.len() || truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let w = match window {
        EvalWindow::Breath => {
            let keep: Vec<usize> = (0..truth.len())
                .filter(|&i| truth[i].is_finite() && pred[i].is_finite())
                .collect();
            return Ok((
                keep.iter().map(|&i| truth[i]).collect(),
                keep.iter().map(|&i| pred[i]).collect(),
            ));
        }
        EvalWindow::Seconds(w) if w > 0.0 => w,
        EvalWindow::Seconds(w) => return Err(Error::NonPositiveInput(w)),
    };
    // bin -> (truth sum, truth count, pred sum, pred count)
    let mut bins: BTreeMap<i64, (f64, usize, f64, usize)> = BTreeMap::new();
    for i in 0..times.len() {
        let e = bins.entry(bin_index(times[i], w)).or_default();
        if truth[i].is_finite() {
            e.0 += truth[i];
            e.1 += 1;
        }
        if pred[i].is_finite() {
            e.2 += pred[i];
            e.3 += 1;
        }
    }
    let mut t_out = Vec::with_capacity(bins.len());
    let mut p_out = Vec::with_capacity(bins.len());
    for (ts, tn, ps, pn) in bins.into_values() {
        if tn > 0 && pn > 0 {
            t_out.push(ts / tn as f64);
            p_out.push(ps / pn as f64);
        }
    }
    Ok((t_out, p_out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub n: usize,
}

/// Paired Student t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateDifferences);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateDifferences);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, n })
}

/// Metrics of one held-out subject at one evaluation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window: EvalWindow,
    pub n: usize,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub subject: String,
    pub has_outdoor: bool,
    /// Non-finite training loss; all metrics are absent.
    pub diverged: bool,
    pub n_breaths: usize,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub in_rmse: Option<f64>,
    pub in_r2: Option<f64>,
    /// Absent for indoor-only subjects.
    pub out_rmse: Option<f64>,
    pub out_r2: Option<f64>,
    pub windows: Vec<WindowMetrics>,
    pub best_epoch: usize,
}

fn metrics(truth: &[f64], pred: &[f64]) -> (Option<f64>, Option<f64>) {
    (rmse(truth, pred).ok(), r2(truth, pred).ok())
}

impl FoldReport {
    fn diverged(subject: &str, has_outdoor: bool) -> Self {
        Self {
            subject: subject.to_string(),
            has_outdoor,
            diverged: true,
            n_breaths: 0,
            rmse: None,
            r2: None,
            in_rmse: None,
            in_r2: None,
            out_rmse: None,
            out_r2: None,
            windows: Vec::new(),
            best_epoch: 0,
        }
    }

    /// Scores per-breath predictions of one subject.
    pub fn score(
        subject: &str,
        has_outdoor: bool,
        examples: &[TrainingExample],
        pred: &[f64],
        best_epoch: usize,
    ) -> Result<Self> {
        if examples.len() != pred.len() {
            return Err(Error::LengthMismatch(examples.len(), pred.len()));
        }
        let truth: Vec<f64> = examples.iter().map(|e| e.target).collect();
        let times: Vec<f64> = examples.iter().map(|e| e.meta.t).collect();
        let (rmse_all, r2_all) = metrics(&truth, pred);
        let split = |place: Place| -> (Vec<f64>, Vec<f64>) {
            examples
                .iter()
                .zip(pred)
                .filter(|(e, _)| e.meta.place == place)
                .map(|(e, p)| (e.target, *p))
                .unzip()
        };
        let (t_in, p_in) = split(Place::Indoor);
        let (in_rmse, in_r2) = metrics(&t_in, &p_in);
        let (out_rmse, out_r2) = if has_outdoor {
            let (t_out, p_out) = split(Place::Outdoor);
            metrics(&t_out, &p_out)
        } else {
            (None, None)
        };
        let mut windows = Vec::with_capacity(EvalWindow::STANDARD.len());
        for w in EvalWindow::STANDARD {
            let (ta, pa) = aggregate_eval(&times, &truth, pred, w)?;
            let (rmse, r2) = metrics(&ta, &pa);
            windows.push(WindowMetrics {
                window: w,
                n: ta.len(),
                rmse,
                r2,
            });
        }
        Ok(Self {
            subject: subject.to_string(),
            has_outdoor,
            diverged: false,
            n_breaths: examples.len(),
            rmse: rmse_all,
            r2: r2_all,
            in_rmse,
            in_r2,
            out_rmse,
            out_r2,
            windows,
            best_epoch,
        })
    }

    pub fn window(&self, w: EvalWindow) -> Option<&WindowMetrics> {
        self.windows.iter().find(|m| m.window == w)
    }
}

/// Layer widths of the hybrid model, shared by all folds of a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub gru_hidden: [usize; 3],
    pub static_hidden: usize,
    pub head_hidden: [usize; 2],
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            gru_hidden: PAPER_GRU_HIDDEN,
            static_hidden: PAPER_STATIC_HIDDEN,
            head_hidden: PAPER_HEAD_HIDDEN,
            dropout: PAPER_DROPOUT,
        }
    }
}

impl Architecture {
    pub fn model_config(&self, spec: &SequenceSpec) -> ModelConfig {
        ModelConfig {
            input_dim: spec.input_width(),
            gru_hidden: self.gru_hidden,
            static_dim: spec.use_static.then_some(STATIC_FEATURES),
            static_hidden: self.static_hidden,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
        }
    }
}

/// One row of a sweep: sequence layout, variant, model and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SequenceSpec,
    pub variant: ModelVariant,
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Parameter initialization seed, identical for every fold.
    pub model_seed: u64,
}

impl ExperimentConfig {
    pub fn new(spec: SequenceSpec, variant: ModelVariant) -> Self {
        Self {
            spec: variant.apply(&spec),
            variant,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            model_seed: 0,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}-{}{}-{}s",
            self.variant,
            self.spec.agg.name().to_uppercase(),
            self.spec.seq_size,
            self.spec.window_sec
        )
    }
}

fn select<'a>(dataset: &'a [Recording], ids: &[String]) -> Result<Vec<&'a Recording>> {
    ids.iter()
        .map(|id| {
            dataset
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown subject {id}")))
        })
        .collect()
}

/// Normalization statistics of a fold, computed from its train subjects.
pub fn fold_normalizer(
    dataset: &[Recording],
    fold: &FoldSpec,
    spec: &SequenceSpec,
) -> Result<Normalizer> {
    fit_normalizer(&select(dataset, &fold.train_subjects)?, spec)
}

/// Everything a fold produced.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub report: FoldReport,
    pub normalizer: Normalizer,
    pub model: Option<HybridModel>,
}

/// Trains on the fold's train subjects, selects the checkpoint on its
/// validation pair and scores the held-out subject per breath.
pub fn run_fold(
    dataset: &[Recording],
    fold: &FoldSpec,
    cfg: &ExperimentConfig,
    fold_index: usize,
) -> Result<FoldRun> {
    let spec = cfg.variant.apply(&cfg.spec);
    let train_recs = select(dataset, &fold.train_subjects)?;
    let val_recs = select(dataset, &fold.validation_subjects)?;
    let test = select(dataset, std::slice::from_ref(&fold.test_subject))?[0];
    let normalizer = fit_normalizer(&train_recs, &spec)?;

    let mut train_set = Vec::new();
    for r in &train_recs {
        train_set.extend(build_training_set(r, &spec, &normalizer)?.0);
    }
    let mut val_set = Vec::new();
    for r in &val_recs {
        val_set.extend(build_training_set(r, &spec, &normalizer)?.0);
    }
    let (test_set, _) = build_eval_set(test, &spec, &normalizer)?;

    let model = init_params(cfg.arch.model_config(&spec), cfg.model_seed)?;
    let train_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(fold_index as u64),
        ..cfg.train.clone()
    };
    let outcome = match train(model, &train_set, &val_set, &train_cfg) {
        Ok(o) => o,
        Err(Error::Diverged(msg)) => {
            log::warn!("fold {} diverged: {msg}", fold.test_subject);
            return Ok(FoldRun {
                report: FoldReport::diverged(&fold.test_subject, test.has_outdoor()),
                normalizer,
                model: None,
            });
        }
        Err(e) => return Err(e),
    };
    let pred = predict(&outcome.model, &test_set, train_cfg.micro_batch)?;
    let report = if pred.iter().all(|p| p.is_finite()) {
        FoldReport::score(
            &fold.test_subject,
            test.has_outdoor(),
            &test_set,
            &pred,
            outcome.best_epoch,
        )?
    } else {
        FoldReport::diverged(&fold.test_subject, test.has_outdoor())
    };
    Ok(FoldRun {
        report,
        normalizer,
        model: Some(outcome.model),
    })
}

/// Median summary of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub in_rmse: Option<f64>,
    pub in_r2: Option<f64>,
    pub out_rmse: Option<f64>,
    pub out_r2: Option<f64>,
    /// Median RMSE and R² per evaluation window.
    pub windows: Vec<(EvalWindow, Option<f64>, Option<f64>)>,
}

fn median_of<'a>(
    folds: &'a [FoldReport],
    f: impl Fn(&'a FoldReport) -> Option<f64>,
) -> Option<f64> {
    let v: Vec<f64> = folds.iter().filter_map(f).collect();
    median(&v)
}

impl ConfigSummary {
    pub fn of(folds: &[FoldReport]) -> Self {
        let windows = EvalWindow::STANDARD
            .iter()
            .map(|&w| {
                (
                    w,
                    median_of(folds, |f| f.window(w).and_then(|m| m.rmse)),
                    median_of(folds, |f| f.window(w).and_then(|m| m.r2)),
                )
            })
            .collect();
        Self {
            rmse: median_of(folds, |f| f.rmse),
            r2: median_of(folds, |f| f.r2),
            in_rmse: median_of(folds, |f| f.in_rmse),
            in_r2: median_of(folds, |f| f.in_r2),
            out_rmse: median_of(folds, |f| f.out_rmse),
            out_r2: median_of(folds, |f| f.out_r2),
            windows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub config: ExperimentConfig,
    /// Ordered by subject id.
    pub folds: Vec<FoldReport>,
    pub summary: ConfigSummary,
    /// Per-breath R² against the first configuration, over subjects scored
    /// in both.
    pub vs_baseline: Option<TTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ConfigReport>,
}

/// Paired per-subject breath-level R² of two configurations.
pub fn compare(a: &ConfigReport, b: &ConfigReport) -> Result<TTest> {
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for fa in &a.folds {
        if let Some(fb) = b.folds.iter().find(|f| f.subject == fa.subject) {
            if let (Some(ra), Some(rb)) = (fa.r2, fb.r2) {
                xa.push(ra);
                xb.push(rb);
            }
        }
    }
    paired_t_test(&xa, &xb)
}

/// Runs LOSO for every configuration. All (configuration, fold) jobs share
/// one pool of `workers` threads; results are merged in configuration and
/// subject order, so the report does not depend on the worker count.
pub fn run_experiment(
    dataset: &[Recording],
    configs: &[ExperimentConfig],
    fold_seed: u64,
    workers: usize,
) -> Result<ExperimentReport> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("empty configuration grid".into()));
    }
    let folds = loso_folds(&SubjectInfo::of(dataset), fold_seed)?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<FoldReport>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, f)| {
                log::info!("{} fold {}/{}", configs[c].label(), f + 1, folds.len());
                run_fold(dataset, &folds[f], &configs[c], f).map(|r| r.report)
            })
            .collect()
    });
    let mut reports = results.into_iter();
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let fold_reports = reports
            .by_ref()
            .take(folds.len())
            .collect::<Result<Vec<_>>>()?;
        rows.push(ConfigReport {
            config: cfg.clone(),
            summary: ConfigSummary::of(&fold_reports),
            folds: fold_reports,
            vs_baseline: None,
        });
    }
    for i in 1..rows.len() {
        rows[i].vs_baseline = compare(&rows[i], &rows[0]).ok();
    }
    Ok(ExperimentReport { rows })
}

type CsvLine<'a> = (&'a str, String, String, Option<f64>, Option<f64>);

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn fixed(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.prec$}"))
}

impl ExperimentReport {
    pub fn any_diverged(&self) -> bool {
        self.rows.iter().any(|r| r.folds.iter().any(|f| f.diverged))
    }

    /// One row per configuration, fold, split and evaluation window.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let fmt_err = |e: csv::Error| Error::Format(e.to_string());
        out.write_record([
            "config",
            "variant",
            "agg",
            "seq_size",
            "window_sec",
            "sr_hz",
            "subject",
            "split",
            "eval_window",
            "n",
            "rmse",
            "r2",
            "diverged",
        ])
        .map_err(fmt_err)?;
        for row in &self.rows {
            let c = &row.config;
            let head = [
                c.label(),
                c.variant.name().to_string(),
                c.spec.agg.name().to_string(),
                c.spec.seq_size.to_string(),
                c.spec.window_sec.to_string(),
                c.spec.sr().to_string(),
            ];
            for f in &row.folds {
                // (split, window, n, rmse, r2)
                let mut lines: Vec<CsvLine> =
                    vec![("indoor", "breath".into(), String::new(), f.in_rmse, f.in_r2)];
                if f.has_outdoor {
                    lines.push((
                        "outdoor",
                        "breath".into(),
                        String::new(),
                        f.out_rmse,
                        f.out_r2,
                    ));
                }
                for m in &f.windows {
                    lines.push(("all", m.window.label(), m.n.to_string(), m.rmse, m.r2));
                }
                if f.diverged {
                    lines = vec![("all", "breath".into(), "0".into(), None, None)];
                }
                for (split, window, n, rmse, r2) in lines {
                    let mut rec: Vec<String> = head.to_vec();
                    rec.extend([
                        f.subject.clone(),
                        split.to_string(),
                        window,
                        n,
                        opt(rmse),
                        opt(r2),
                        f.diverged.to_string(),
                    ]);
                    out.write_record(&rec).map_err(fmt_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Median RMSE/R² overall and by place, with a paired t-test against the
    /// first row (`*` when p < 0.05).
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>9}",
            "config", "SR(Hz)", "RMSE", "R2", "in_RMSE", "in_R2", "out_RMSE", "out_R2", "t-test"
        );
        for row in &self.rows {
            let sm = &row.summary;
            let tt = match &row.vs_baseline {
                Some(t) => format!("{:.3}{}", t.p, if t.p < 0.05 { "*" } else { "" }),
                None => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<28} {:>7.2} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>9}",
                row.config.label(),
                row.config.spec.sr(),
                fixed(sm.rmse, 3),
                fixed(sm.r2, 3),
                fixed(sm.in_rmse, 3),
                fixed(sm.in_r2, 3),
                fixed(sm.out_rmse, 3),
                fixed(sm.out_r2, 3),
                tt
            );
        }
        s
    }

    /// Median R² and RMSE per evaluation window, one column pair per
    /// configuration.
    pub fn window_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "window");
        for row in &self.rows {
            let _ = write!(s, " {:>28}", format!("{} R2/RMSE", row.config.label()));
        }
        s.push('\n');
        for (i, w) in EvalWindow::STANDARD.iter().enumerate() {
            let _ = write!(s, "{:<8}", w.label());
            for row in &self.rows {
                let (_, rm, r2) = row.summary.windows[i];
                let _ = write!(s, " {:>28}", format!("{} / {}", fixed(r2, 3), fixed(rm, 3)));
            }
            s.push('\n');
        }
        s
    }
}
