//! Fixed-size input sequences ending at each target timestamp, fused with
//! the participant's static features.
//!
//! Channel layout of every timestep: `[wrist x, y, z, ankle x, y, z]`,
//! followed by the activity label when enabled (one ordinal column, or seven
//! one-hot columns).

use serde::{Deserialize, Serialize};

use crate::data_model::{Place, Recording};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::preprocess::{
    bin_count, mode_label_bin, resample_stream, smooth_target, AggregationFn, NormAccumulator,
    NormStats,
};

pub const ACCEL_CHANNELS: usize = 6;
/// `[age, sex, height, weight, bmi]`
pub const STATIC_FEATURES: usize = 5;
pub const N_CLASSES: usize = 7;

pub const PAPER_SEQ_SIZES: [usize; 7] = [4, 10, 50, 160, 240, 360, 480];
pub const PAPER_WINDOWS_SEC: [f64; 4] = [60.0, 120.0, 240.0, 480.0];

/// Sampling rate implied by a sequence size spread over a window.
pub fn derive_sr(seq_size: usize, window_sec: f64) -> Result<f64> {
    if seq_size == 0 {
        return Err(Error::NonPositiveInput(0.0));
    }
    if !(window_sec > 0.0) {
        return Err(Error::NonPositiveInput(window_sec));
    }
    Ok(seq_size as f64 / window_sec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelEncoding {
    Ordinal,
    OneHot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub seq_size: usize,
    pub window_sec: f64,
    pub agg: AggregationFn,
    pub use_static: bool,
    pub use_labels: bool,
    pub label_encoding: LabelEncoding,
}

impl SequenceSpec {
    pub fn new(seq_size: usize, window_sec: f64, agg: AggregationFn) -> Result<Self> {
        derive_sr(seq_size, window_sec)?;
        Ok(Self {
            seq_size,
            window_sec,
            agg,
            use_static: false,
            use_labels: false,
            label_encoding: LabelEncoding::Ordinal,
        })
    }

    pub fn sr(&self) -> f64 {
        self.seq_size as f64 / self.window_sec
    }

    pub fn label_width(&self) -> usize {
        match (self.use_labels, self.label_encoding) {
            (false, _) => 0,
            (true, LabelEncoding::Ordinal) => 1,
            (true, LabelEncoding::OneHot) => N_CLASSES,
        }
    }

    pub fn input_width(&self) -> usize {
        ACCEL_CHANNELS + self.label_width()
    }

    /// Whether size and window both come from the reference sweep grid.
    pub fn in_paper_grid(&self) -> bool {
        PAPER_SEQ_SIZES.contains(&self.seq_size) && PAPER_WINDOWS_SEC.contains(&self.window_sec)
    }
}

/// The 7 × 4 sequence-size × window grid for one aggregation function.
pub fn paper_grid(agg: AggregationFn) -> Vec<SequenceSpec> {
    let mut out = Vec::with_capacity(28);
    for &size in &PAPER_SEQ_SIZES {
        for &window in &PAPER_WINDOWS_SEC {
            out.push(SequenceSpec::new(size, window, agg).expect("grid values are positive"));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub subject: String,
    /// Target timestamp: the window ends here.
    pub t: f64,
    pub place: Place,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    /// `seq_size × 6`, aggregated and normalized.
    pub accel: Matrix,
    /// Label code per timestep.
    pub labels: Option<Vec<usize>>,
    pub label_encoding: LabelEncoding,
    pub static_features: Option<Vec<f64>>,
    /// kcal/min
    pub target: f64,
    pub meta: ExampleMeta,
}

impl TrainingExample {
    pub fn steps(&self) -> usize {
        self.accel.rows()
    }

    pub fn input_width(&self) -> usize {
        ACCEL_CHANNELS
            + match (&self.labels, self.label_encoding) {
                (None, _) => 0,
                (Some(_), LabelEncoding::Ordinal) => 1,
                (Some(_), LabelEncoding::OneHot) => N_CLASSES,
            }
    }

    /// Writes timestep `t` into `row` (length [`Self::input_width`]).
    pub fn write_step(&self, t: usize, row: &mut [f64]) {
        row[..ACCEL_CHANNELS].copy_from_slice(self.accel.row(t));
        if let Some(labels) = &self.labels {
            match self.label_encoding {
                LabelEncoding::Ordinal => row[ACCEL_CHANNELS] = labels[t] as f64,
                LabelEncoding::OneHot => {
                    let tail = &mut row[ACCEL_CHANNELS..];
                    tail.fill(0.0);
                    tail[labels[t]] = 1.0;
                }
            }
        }
    }
}

/// Normalization statistics, fitted on training subjects only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub accel: NormStats,
    pub statics: Option<NormStats>,
}

impl Normalizer {
    pub fn identity(with_static: bool) -> Self {
        Self {
            accel: NormStats::identity(ACCEL_CHANNELS),
            statics: with_static.then(|| NormStats::identity(STATIC_FEATURES)),
        }
    }
}

/// Common start of the two accelerometer streams.
fn accel_start(rec: &Recording) -> f64 {
    let w = rec.wrist.time_range().map_or(0.0, |r| r.0);
    let a = rec.ankle.time_range().map_or(0.0, |r| r.0);
    w.max(a)
}

/// Fits accelerometer statistics over the aggregated streams of `train`
/// (whole recordings, resampled at the spec's rate) and static statistics
/// over their profiles.
pub fn fit_normalizer(train: &[&Recording], spec: &SequenceSpec) -> Result<Normalizer> {
    let sr = spec.sr();
    let mut acc = NormAccumulator::new(ACCEL_CHANNELS);
    for rec in train {
        let start = accel_start(rec);
        let bins = (rec.duration() * sr).floor();
        if bins < 1.0 {
            continue;
        }
        let end = start + bins / sr;
        for (offset, stream) in [(0, &rec.wrist), (3, &rec.ankle)] {
            let axes = resample_stream(stream, sr, spec.agg, start, end)?;
            for (a, values) in axes.iter().enumerate() {
                for &v in values {
                    acc.push(offset + a, v);
                }
            }
        }
    }
    let accel = acc.finish()?;
    let statics = if spec.use_static {
        let mut acc = NormAccumulator::new(STATIC_FEATURES);
        for rec in train {
            let p = rec.profile.as_ref().ok_or_else(|| {
                Error::StaticBranchMissing(format!("subject {} has no profile", rec.id))
            })?;
            for (c, v) in p.static_features().into_iter().enumerate() {
                acc.push(c, v);
            }
        }
        // small folds can hold one sex only
        Some(acc.finish_lenient())
    } else {
        None
    };
    Ok(Normalizer { accel, statics })
}

/// Counts of emitted and dropped targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub emitted: usize,
    pub dropped: usize,
}

fn static_vector(
    rec: &Recording,
    spec: &SequenceSpec,
    norm: &Normalizer,
) -> Result<Option<Vec<f64>>> {
    if !spec.use_static {
        return Ok(None);
    }
    let profile = rec.profile.as_ref().ok_or_else(|| {
        Error::StaticBranchMissing(format!("subject {} has no participant profile", rec.id))
    })?;
    let stats = norm
        .statics
        .as_ref()
        .ok_or_else(|| Error::StaticBranchMissing("normalizer has no static statistics".into()))?;
    Ok(Some(
        profile
            .static_features()
            .iter()
            .enumerate()
            .map(|(c, &v)| stats.normalize(c, v))
            .collect(),
    ))
}

/// Builds one example ending at `t`, or `None` when the window is not fully
/// covered by data.
fn build_example(
    rec: &Recording,
    spec: &SequenceSpec,
    norm: &Normalizer,
    statics: &Option<Vec<f64>>,
    t: f64,
    target: f64,
) -> Result<Option<TrainingExample>> {
    let t0 = t - spec.window_sec;
    if t0 < accel_start(rec) || t > accel_start(rec) + rec.duration() {
        return Ok(None);
    }
    let sr = spec.sr();
    let steps = bin_count(t0, t, sr)?;
    if steps != spec.seq_size {
        return Err(Error::NonIntegralBinCount(steps as f64));
    }
    let mut accel = Matrix::zeros(steps, ACCEL_CHANNELS);
    for (offset, stream) in [(0, &rec.wrist), (3, &rec.ankle)] {
        let axes = match resample_stream(stream, sr, spec.agg, t0, t) {
            Ok(a) => a,
            Err(Error::EmptyWindow) => return Ok(None),
            Err(e) => return Err(e),
        };
        for (a, values) in axes.iter().enumerate() {
            let c = offset + a;
            for (k, &v) in values.iter().enumerate() {
                accel.set(k, c, norm.accel.normalize(c, v));
            }
        }
    }
    let labels = if spec.use_labels {
        let mut codes = Vec::with_capacity(steps);
        for k in 0..steps {
            let b0 = t0 + k as f64 / sr;
            let b1 = t0 + (k + 1) as f64 / sr;
            let code = match mode_label_bin(&rec.annotations, b0, b1) {
                Ok(c) => c,
                // bins narrower than the 1 Hz label grid inherit the last label
                Err(Error::EmptyWindow) => match rec.annotation_at(b1) {
                    Some(a) => a.label as usize,
                    None => return Ok(None),
                },
                Err(e) => return Err(e),
            };
            codes.push(code);
        }
        Some(codes)
    } else {
        None
    };
    Ok(Some(TrainingExample {
        accel,
        labels,
        label_encoding: spec.label_encoding,
        static_features: statics.clone(),
        target,
        meta: ExampleMeta {
            subject: rec.id.clone(),
            t,
            place: rec.place_at(t),
        },
    }))
}

fn check_labels(rec: &Recording, spec: &SequenceSpec) -> Result<()> {
    if spec.use_labels && rec.annotations.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "activity labels requested but subject {} has no annotations",
            rec.id
        )));
    }
    Ok(())
}

/// One example per 10 s target bin (timestamped at the bin midpoint) whose
/// full look-back window lies inside the recording.
pub fn build_training_set(
    rec: &Recording,
    spec: &SequenceSpec,
    norm: &Normalizer,
) -> Result<(Vec<TrainingExample>, BuildReport)> {
    check_labels(rec, spec)?;
    let statics = static_vector(rec, spec, norm)?;
    let smoothed = smooth_target(&rec.breaths);
    let mut out = Vec::with_capacity(smoothed.bins.len());
    let mut report = BuildReport::default();
    for bin in &smoothed.bins {
        let t = bin.midpoint(smoothed.bin_width);
        match build_example(rec, spec, norm, &statics, t, bin.eem_mean)? {
            Some(ex) => out.push(ex),
            None => report.dropped += 1,
        }
    }
    report.emitted = out.len();
    Ok((out, report))
}

/// One example per breath, targeting that breath's EEm.
pub fn build_eval_set(
    rec: &Recording,
    spec: &SequenceSpec,
    norm: &Normalizer,
) -> Result<(Vec<TrainingExample>, BuildReport)> {
    check_labels(rec, spec)?;
    let statics = static_vector(rec, spec, norm)?;
    let mut out = Vec::with_capacity(rec.breaths.len());
    let mut report = BuildReport::default();
    for b in &rec.breaths {
        match build_example(rec, spec, norm, &statics, b.t, b.eem)? {
            Some(ex) => out.push(ex),
            None => report.dropped += 1,
        }
    }
    report.emitted = out.len();
    Ok((out, report))
}

/// Examples ending on a regular grid (no target), for breath-free prediction.
pub fn build_grid_set(
    rec: &Recording,
    spec: &SequenceSpec,
    norm: &Normalizer,
    step_sec: f64,
) -> Result<Vec<TrainingExample>> {
    check_labels(rec, spec)?;
    let statics = static_vector(rec, spec, norm)?;
    let start = accel_start(rec);
    let end = start + rec.duration();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = start + (k as f64 + 0.5) * step_sec;
        if t > end {
            break;
        }
        if let Some(ex) = build_example(rec, spec, norm, &statics, t, f64::NAN)? {
            out.push(ex);
        }
        k += 1;
    }
    Ok(out)
}
