//! Window aggregation, z-normalization, label encoding and target smoothing.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_model::{AccelStream, ActivityAnnotation, ActivityLabel, BreathRecord};
use crate::error::{Error, Result};

/// Width of the target smoothing bins, in seconds (0.1 Hz).
pub const TARGET_BIN_SEC: f64 = 10.0;

/// Samples within this fraction of a bin below an edge belong to the next bin,
/// so grid-aligned timestamps survive floating-point rounding.
const BIN_EDGE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationFn {
    Mean,
    Sd,
    Iqr,
    /// 95th minus 5th percentile.
    Pd,
}

impl AggregationFn {
    pub const ALL: [AggregationFn; 4] = [
        AggregationFn::Mean,
        AggregationFn::Sd,
        AggregationFn::Iqr,
        AggregationFn::Pd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationFn::Mean => "mean",
            AggregationFn::Sd => "sd",
            AggregationFn::Iqr => "iqr",
            AggregationFn::Pd => "pd",
        }
    }
}

impl fmt::Display for AggregationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregation `{s}`")))
    }
}

/// Percentile of sorted data by linear interpolation between closest ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Aggregates `buf` in place; IQR and PD sort the buffer.
fn aggregate_in_place(buf: &mut [f64], agg: AggregationFn) -> Result<f64> {
    if buf.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = buf.len() as f64;
    Ok(match agg {
        AggregationFn::Mean => buf.iter().sum::<f64>() / n,
        AggregationFn::Sd => {
            let mean = buf.iter().sum::<f64>() / n;
            let var = buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            var.sqrt()
        }
        AggregationFn::Iqr => {
            buf.sort_unstable_by(f64::total_cmp);
            percentile_sorted(buf, 0.75) - percentile_sorted(buf, 0.25)
        }
        AggregationFn::Pd => {
            buf.sort_unstable_by(f64::total_cmp);
            percentile_sorted(buf, 0.95) - percentile_sorted(buf, 0.05)
        }
    })
}

/// Mean, population SD, IQR or P95−P05 of one window.
pub fn resample_window(samples: &[f64], agg: AggregationFn) -> Result<f64> {
    let mut buf = samples.to_vec();
    aggregate_in_place(&mut buf, agg)
}

/// Number of bins of width `1/sr` in `[t0, t1)`, which must be integral.
pub fn bin_count(t0: f64, t1: f64, sr: f64) -> Result<usize> {
    if !(sr > 0.0) {
        return Err(Error::NonPositiveInput(sr));
    }
    if !(t1 > t0) {
        return Err(Error::NonPositiveInput(t1 - t0));
    }
    let n = (t1 - t0) * sr;
    let rounded = n.round();
    if (n - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded < 1.0 {
        return Err(Error::NonIntegralBinCount(n));
    }
    Ok(rounded as usize)
}

/// Resamples the three axes of `stream` over `[t0, t1)` into equal bins at
/// `target_sr`. Returns `[x, y, z]`, each of length `bins`.
pub fn resample_stream(
    stream: &AccelStream,
    target_sr: f64,
    agg: AggregationFn,
    t0: f64,
    t1: f64,
) -> Result<[Vec<f64>; 3]> {
    let bins = bin_count(t0, t1, target_sr)?;
    let window = stream.window(t0, t1);
    let mut out = [
        Vec::with_capacity(bins),
        Vec::with_capacity(bins),
        Vec::with_capacity(bins),
    ];
    let mut buf = Vec::new();
    let mut start = 0;
    for k in 0..bins {
        let mut end = start;
        while end < window.len() {
            let idx = (((window[end].t - t0) * target_sr + BIN_EDGE_SLACK).floor() as usize)
                .min(bins - 1);
            if idx > k {
                break;
            }
            end += 1;
        }
        let members = &window[start..end];
        if members.is_empty() {
            return Err(Error::EmptyWindow);
        }
        for (axis, col) in out.iter_mut().enumerate() {
            buf.clear();
            buf.extend(members.iter().map(|s| s.axis(axis)));
            col.push(aggregate_in_place(&mut buf, agg)?);
        }
        start = end;
    }
    Ok(out)
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    #[inline]
    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// Streaming accumulator so statistics can be fitted over data that never
/// sits in one buffer.
#[derive(Clone, Debug)]
pub struct NormAccumulator {
    count: Vec<usize>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    first: Vec<Option<f64>>,
    distinct: Vec<bool>,
}

impl NormAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            count: vec![0; channels],
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
            first: vec![None; channels],
            distinct: vec![false; channels],
        }
    }

    pub fn push(&mut self, channel: usize, v: f64) {
        match self.first[channel] {
            None => self.first[channel] = Some(v),
            Some(f) if f != v => self.distinct[channel] = true,
            _ => {}
        }
        self.count[channel] += 1;
        let n = self.count[channel] as f64;
        let delta = v - self.mean[channel];
        self.mean[channel] += delta / n;
        self.m2[channel] += delta * (v - self.mean[channel]);
    }

    /// Like [`finish`](Self::finish), but a constant channel keeps its mean
    /// and gets unit scale, so it normalizes to zero.
    pub fn finish_lenient(self) -> NormStats {
        let std = (0..self.mean.len())
            .map(|c| {
                let s = (self.m2[c] / self.count[c].max(1) as f64).sqrt();
                if self.distinct[c] && s > 0.0 {
                    s
                } else {
                    log::warn!("static channel {c} is constant in the training set");
                    1.0
                }
            })
            .collect();
        NormStats {
            mean: self.mean,
            std,
        }
    }

    pub fn finish(self) -> Result<NormStats> {
        let mut std = Vec::with_capacity(self.mean.len());
        for c in 0..self.mean.len() {
            if !self.distinct[c] {
                return Err(Error::DegenerateChannel(c));
            }
            let s = (self.m2[c] / self.count[c] as f64).sqrt();
            if !(s > 0.0) {
                return Err(Error::DegenerateChannel(c));
            }
            std.push(s);
        }
        Ok(NormStats {
            mean: self.mean,
            std,
        })
    }
}

/// Fits per-channel statistics; each channel needs two distinct values.
pub fn znorm_fit(channels: &[Vec<f64>]) -> Result<NormStats> {
    let mut acc = NormAccumulator::new(channels.len());
    for (c, values) in channels.iter().enumerate() {
        for &v in values {
            acc.push(c, v);
        }
    }
    acc.finish()
}

pub fn znorm_apply(channels: &[Vec<f64>], stats: &NormStats) -> Vec<Vec<f64>> {
    channels
        .iter()
        .enumerate()
        .map(|(c, values)| values.iter().map(|&v| stats.normalize(c, v)).collect())
        .collect()
}

/// Alphabetical label encoder over an observed vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEncoder {
    classes: Vec<ActivityLabel>,
}

impl LabelEncoder {
    /// Encoder over the full seven-class vocabulary.
    pub fn full() -> Self {
        Self {
            classes: ActivityLabel::ALL.to_vec(),
        }
    }

    pub fn fit(labels: &[&str]) -> Result<Self> {
        let set: BTreeSet<ActivityLabel> = labels
            .iter()
            .map(|l| ActivityLabel::from_name(l))
            .collect::<Result<_>>()?;
        Ok(Self {
            classes: set.into_iter().collect(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn encode(&self, label: ActivityLabel) -> Result<usize> {
        self.classes
            .binary_search(&label)
            .map_err(|_| Error::UnknownLabel(label.name().to_string()))
    }

    pub fn decode(&self, code: usize) -> Option<ActivityLabel> {
        self.classes.get(code).copied()
    }
}

/// Integer codes for `labels`, assigned alphabetically over the labels seen.
pub fn encode_labels(labels: &[&str]) -> Result<Vec<usize>> {
    let enc = LabelEncoder::fit(labels)?;
    labels
        .iter()
        .map(|l| enc.encode(ActivityLabel::from_name(l)?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetBin {
    pub start: f64,
    pub eem_mean: f64,
    pub count: usize,
}

impl TargetBin {
    pub fn midpoint(&self, width: f64) -> f64 {
        self.start + 0.5 * width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedTarget {
    pub bins: Vec<TargetBin>,
    pub bin_width: f64,
}

/// Means breath EEm over 10 s bins aligned to the recording epoch.
/// Bins without breaths are omitted.
pub fn smooth_target(breaths: &[BreathRecord]) -> SmoothedTarget {
    let mut bins: Vec<TargetBin> = Vec::new();
    let mut current: Option<(i64, f64, usize)> = None;
    let flush = |cur: Option<(i64, f64, usize)>, bins: &mut Vec<TargetBin>| {
        if let Some((k, sum, n)) = cur {
            bins.push(TargetBin {
                start: k as f64 * TARGET_BIN_SEC,
                eem_mean: sum / n as f64,
                count: n,
            });
        }
    };
    for b in breaths {
        let k = (b.t / TARGET_BIN_SEC).floor() as i64;
        match current {
            Some((ck, sum, n)) if ck == k => current = Some((ck, sum + b.eem, n + 1)),
            _ => {
                flush(current, &mut bins);
                current = Some((k, b.eem, 1));
            }
        }
    }
    flush(current, &mut bins);
    SmoothedTarget {
        bins,
        bin_width: TARGET_BIN_SEC,
    }
}

/// Most frequent label code among annotations in `[start, end)`; ties go to
/// the lower code.
pub fn mode_label_bin(annotations: &[ActivityAnnotation], start: f64, end: f64) -> Result<usize> {
    let lo = annotations.partition_point(|a| a.t < start);
    let hi = annotations.partition_point(|a| a.t < end);
    let mut counts = [0usize; 7];
    for a in &annotations[lo..hi.max(lo)] {
        counts[a.label as usize] += 1;
    }
    let (code, n) = counts.iter().enumerate().fold(
        (0, 0),
        |best, (c, &n)| if n > best.1 { (c, n) } else { best },
    );
    if n == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(code)
}
