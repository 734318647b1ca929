//! Synthetic recordings with a known energy-expenditure mechanism.
//!
//! Each subject follows a random schedule of activity segments. Segment
//! intensity (in METs) drives two things: the amplitude of zero-mean band
//! noise on top of a fixed gravity offset in both accelerometers, and a
//! latent metabolic demand that is affine in intensity and in the static
//! profile features. Observed EEm lags the demand through first-order
//! exponential smoothing and is sampled at breath times with Gaussian noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    AccelSample, AccelStream, ActivityAnnotation, ActivityLabel, BodyLocation, BreathRecord,
    ParticipantProfile, Place, Recording, Sex, NOMINAL_SR_HZ,
};
use crate::error::{Error, Result};

/// Respiratory exchange ratio used to split EEm into gas volumes.
const RER: f64 = 0.85;
/// Band-noise components; multiples of 4 Hz average out over any 0.25 s span.
const BAND_HZ: [f64; 3] = [4.0, 8.0, 12.0];
const BAND_WEIGHT: [f64; 3] = [0.8, 0.5, 0.3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityIntensity {
    pub label: ActivityLabel,
    pub met: f64,
    /// Whether subjects with outdoor data may perform it outside.
    pub outdoor: bool,
}

/// The default schedule vocabulary.
pub fn default_schedule() -> Vec<ActivityIntensity> {
    use ActivityLabel::*;
    [
        (LyingDown, 1.0, false),
        (Sitting, 1.3, false),
        (Standing, 1.8, false),
        (Household, 2.8, false),
        (Walking, 3.8, true),
        (Jumping, 5.0, false),
        (Cycling, 6.0, true),
    ]
    .into_iter()
    .map(|(label, met, outdoor)| ActivityIntensity {
        label,
        met,
        outdoor,
    })
    .collect()
}

/// Coefficients of the affine demand function, in kcal/min.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub intercept: f64,
    pub per_met: f64,
    /// Per year above 70.
    pub per_year: f64,
    pub male: f64,
    /// Per cm above 170.
    pub per_cm: f64,
    /// Per kg/m² above 29.
    pub per_bmi: f64,
}

impl Default for DemandModel {
    fn default() -> Self {
        Self {
            intercept: 0.2,
            per_met: 1.0,
            per_year: -0.02,
            male: 0.6,
            per_cm: 0.015,
            per_bmi: 0.1,
        }
    }
}

impl DemandModel {
    /// Subject-level part of the demand.
    pub fn offset(&self, p: &ParticipantProfile) -> f64 {
        self.intercept
            + self.per_year * (p.age - 70.0)
            + self.male * p.sex.code()
            + self.per_cm * (p.height_cm - 170.0)
            + self.per_bmi * (p.bmi - 29.0)
    }

    pub fn demand(&self, met: f64, p: &ParticipantProfile) -> f64 {
        self.offset(p) + self.per_met * met
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub indoor_only_fraction: f64,
    pub seed: u64,
    pub duration_sec: f64,
    pub schedule: Vec<ActivityIntensity>,
    /// Segment length range in seconds.
    pub segment_sec: (f64, f64),
    /// Relative per-segment intensity jitter.
    pub met_jitter: f64,
    /// EEm smoothing time constant, seconds.
    pub lag_tau: f64,
    /// Per-breath EEm noise, kcal/min.
    pub noise_sd: f64,
    pub demand: DemandModel,
    pub accel_sr: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            indoor_only_fraction: 0.35,
            seed: 0,
            duration_sec: 1200.0,
            schedule: default_schedule(),
            segment_sec: (60.0, 240.0),
            met_jitter: 0.15,
            lag_tau: 30.0,
            noise_sd: 0.4,
            demand: DemandModel::default(),
            accel_sr: NOMINAL_SR_HZ,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_subjects < 4 {
            return Err(Error::InsufficientSubjects(format!(
                "{} subjects requested, at least 4 are needed",
                self.n_subjects
            )));
        }
        if !(0.0..=1.0).contains(&self.indoor_only_fraction) {
            return bad("indoor_only_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.met_jitter) {
            return bad("met_jitter must lie in [0, 1]");
        }
        if !(self.lag_tau > 0.0) {
            return bad("lag_tau must be positive");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        if !(self.duration_sec > 0.0) || !(self.accel_sr > 0.0) {
            return bad("duration and sampling rate must be positive");
        }
        let (lo, hi) = self.segment_sec;
        if !(lo > 0.0 && hi >= lo) {
            return bad("segment_sec must be a positive range");
        }
        if self.schedule.len() < 2 {
            return bad("schedule needs at least two activities");
        }
        if self.schedule.iter().any(|a| !(a.met > 0.0)) {
            return bad("activity intensities must be positive");
        }
        if self.indoor_only_fraction < 1.0 && !self.schedule.iter().any(|a| a.outdoor) {
            return bad("outdoor subjects need an outdoor-capable activity");
        }
        Ok(())
    }

    /// Number of indoor-only subjects. Fractional settings keep at least two
    /// subjects of each kind so every LOSO fold has both validators.
    pub fn indoor_only_count(&self) -> usize {
        let n = self.n_subjects;
        let f = self.indoor_only_fraction;
        if f <= 0.0 {
            0
        } else if f >= 1.0 {
            n
        } else {
            ((f * n as f64).round() as usize).clamp(2, n - 2)
        }
    }
}

/// One constant-intensity stretch of a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: ActivityLabel,
    pub met: f64,
    pub place: Place,
}

/// Ground truth retained alongside each generated recording.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTruth {
    pub segments: Vec<Segment>,
    /// Subject-level demand offset, kcal/min.
    pub offset: f64,
    pub per_met: f64,
    pub lag_tau: f64,
    /// Smoothed EEm at t = 0.
    pub initial_eem: f64,
}

impl LatentTruth {
    pub fn segment_at(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.end <= t);
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    /// Instantaneous demand, kcal/min.
    pub fn demand_at(&self, t: f64) -> f64 {
        self.offset + self.per_met * self.segment_at(t).met
    }

    /// Noise-free lagged EEm.
    pub fn eem_at(&self, t: f64) -> f64 {
        let mut e = self.initial_eem;
        for s in &self.segments {
            if s.start >= t {
                break;
            }
            let d = self.offset + self.per_met * s.met;
            let dt = t.min(s.end) - s.start;
            e = d + (e - d) * (-dt / self.lag_tau).exp();
        }
        e
    }
}

#[derive(Clone, Debug)]
pub struct SynthSubject {
    pub recording: Recording,
    pub truth: LatentTruth,
}

fn schedule(cfg: &SynthConfig, has_outdoor: bool, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut t = 0.0;
    while t < cfg.duration_sec {
        let prev = segments.last().map(|s| s.label);
        let choices: Vec<&ActivityIntensity> = cfg
            .schedule
            .iter()
            .filter(|a| Some(a.label) != prev)
            .collect();
        let act = choices[rng.random_range(0..choices.len())];
        let (lo, hi) = cfg.segment_sec;
        let len = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let jitter = if cfg.met_jitter > 0.0 {
            rng.random_range(1.0 - cfg.met_jitter..1.0 + cfg.met_jitter)
        } else {
            1.0
        };
        let place = if has_outdoor && act.outdoor && rng.random_bool(0.5) {
            Place::Outdoor
        } else {
            Place::Indoor
        };
        let end = (t + len).min(cfg.duration_sec);
        segments.push(Segment {
            start: t,
            end,
            label: act.label,
            met: act.met * jitter,
            place,
        });
        t = end;
    }
    if has_outdoor && !segments.iter().any(|s| s.place == Place::Outdoor) {
        // guarantee the subject really has outdoor data
        let capable: Vec<ActivityIntensity> =
            cfg.schedule.iter().filter(|a| a.outdoor).cloned().collect();
        let act = &capable[rng.random_range(0..capable.len())];
        let mid = segments.len() / 2;
        let s = &mut segments[mid];
        s.met *= act.met
            / cfg
                .schedule
                .iter()
                .find(|a| a.label == s.label)
                .unwrap()
                .met;
        s.label = act.label;
        s.place = Place::Outdoor;
    }
    segments
}

fn profile(id: &str, sex: Sex, has_outdoor: bool, rng: &mut ChaCha8Rng) -> ParticipantProfile {
    let age = rng.random_range(60.0..85.0);
    let mean_height: f64 = if sex == Sex::Male { 176.0 } else { 163.0 };
    let height_cm = Normal::new(mean_height, 6.0).unwrap().sample(rng);
    let bmi_target: f64 = rng.random_range(23.0..35.0);
    let weight_kg = bmi_target * (height_cm / 100.0).powi(2);
    ParticipantProfile {
        id: id.to_string(),
        age,
        sex,
        height_cm,
        weight_kg,
        bmi: ParticipantProfile::bmi_of(height_cm, weight_kg),
        has_outdoor,
    }
}

/// Unit gravity vector tilted by up to `max_tilt` radians from `base`.
fn tilted(base: [f64; 3], max_tilt: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut v = base;
    for c in &mut v {
        *c += rng.random_range(-max_tilt..max_tilt);
    }
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.map(|c| c / n)
}

fn accel_stream(
    cfg: &SynthConfig,
    location: BodyLocation,
    segments: &[Segment],
    rng: &mut ChaCha8Rng,
) -> Result<AccelStream> {
    let (base, gain) = match location {
        BodyLocation::Wrist => ([0.0, -0.3, 0.95], 1.0),
        BodyLocation::Ankle => ([0.9, 0.1, 0.4], 1.5),
    };
    let norm = (BAND_WEIGHT.iter().map(|w| w * w).sum::<f64>() / 2.0).sqrt();
    let floor = Normal::new(0.0, 0.01).unwrap();
    let n = (cfg.duration_sec * cfg.accel_sr).floor() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut seg_idx = 0;
    let mut state = None;
    for i in 0..n {
        let t = i as f64 / cfg.accel_sr;
        while seg_idx + 1 < segments.len() && t >= segments[seg_idx].end {
            seg_idx += 1;
            state = None;
        }
        let seg = &segments[seg_idx];
        let (g, phases, mod_phase) = *state.get_or_insert_with(|| {
            let g = tilted(base, 0.15, rng);
            let mut phases = [[0.0; 3]; 3];
            for axis in &mut phases {
                for p in axis.iter_mut() {
                    *p = rng.random_range(0.0..2.0 * PI);
                }
            }
            (g, phases, rng.random_range(0.0..2.0 * PI))
        });
        let amp = gain * (0.03 + 0.1 * (seg.met - 1.0).max(0.0)) / norm
            * (1.0 + 0.1 * (2.0 * PI * t / 5.0 + mod_phase).sin());
        let mut xyz = [0.0; 3];
        for (axis, v) in xyz.iter_mut().enumerate() {
            let band: f64 = (0..3)
                .map(|k| BAND_WEIGHT[k] * (2.0 * PI * BAND_HZ[k] * t + phases[axis][k]).sin())
                .sum();
            *v = g[axis] + amp * band + floor.sample(rng);
        }
        samples.push(AccelSample {
            t,
            x: xyz[0],
            y: xyz[1],
            z: xyz[2],
        });
    }
    AccelStream::new(location, samples)
}

fn breaths(
    cfg: &SynthConfig,
    truth: &LatentTruth,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BreathRecord>> {
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let gap = |met: f64, rng: &mut ChaCha8Rng| rng.random_range(0.7..1.3) / (0.18 + 0.04 * met);
    let mut out = Vec::new();
    let mut t = rng.random_range(0.0..1.0) * gap(truth.segments[0].met, rng);
    // walk segments forward alongside the breath clock
    let mut seg = 0;
    let mut e = truth.initial_eem;
    let mut e_t = 0.0;
    while t < cfg.duration_sec {
        while truth.segments[seg].end <= t && seg + 1 < truth.segments.len() {
            let s = &truth.segments[seg];
            let d = truth.offset + truth.per_met * s.met;
            e = d + (e - d) * (-(s.end - e_t) / truth.lag_tau).exp();
            e_t = s.end;
            seg += 1;
        }
        let s = &truth.segments[seg];
        let d = truth.offset + truth.per_met * s.met;
        e = d + (e - d) * (-(t - e_t) / truth.lag_tau).exp();
        e_t = t;
        let eem = (e + noise.sample(rng)).max(0.05);
        let vo2 = eem * 1000.0 / (3.94 + 1.11 * RER);
        out.push(BreathRecord {
            t,
            vo2,
            vco2: RER * vo2,
            eem,
        });
        t += gap(s.met, rng);
    }
    Ok(out)
}

fn subject(
    cfg: &SynthConfig,
    index: usize,
    id: String,
    sex: Sex,
    has_outdoor: bool,
) -> Result<SynthSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let profile = profile(&id, sex, has_outdoor, &mut rng);
    let segments = schedule(cfg, has_outdoor, &mut rng);
    let offset = cfg.demand.offset(&profile);
    let truth = LatentTruth {
        initial_eem: offset + cfg.demand.per_met * segments[0].met,
        segments,
        offset,
        per_met: cfg.demand.per_met,
        lag_tau: cfg.lag_tau,
    };
    let wrist = accel_stream(cfg, BodyLocation::Wrist, &truth.segments, &mut rng)?;
    let ankle = accel_stream(cfg, BodyLocation::Ankle, &truth.segments, &mut rng)?;
    let breaths = breaths(cfg, &truth, &mut rng)?;
    let annotations = (0..)
        .map(|s| s as f64)
        .take_while(|&t| t < cfg.duration_sec)
        .map(|t| {
            let seg = truth.segment_at(t);
            ActivityAnnotation {
                t,
                label: seg.label,
                place: seg.place,
            }
        })
        .collect();
    Ok(SynthSubject {
        recording: Recording {
            id,
            profile: Some(profile),
            wrist,
            ankle,
            breaths,
            annotations,
        },
        truth,
    })
}

/// Generates `cfg.n_subjects` subjects. Output is identical for a given
/// config regardless of thread scheduling: each subject draws from its own
/// stream of the seeded generator.
pub fn generate_subjects(cfg: &SynthConfig) -> Result<Vec<SynthSubject>> {
    cfg.validate()?;
    let n = cfg.n_subjects;
    let width = n.to_string().len().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let indoor = cfg.indoor_only_count();
    let mut has_outdoor = vec![true; n];
    for &i in &order[..indoor] {
        has_outdoor[i] = false;
    }
    // balanced sexes, alternating within each indoor/outdoor group
    let mut sexes = vec![Sex::Female; n];
    for (rank, &i) in order.iter().enumerate() {
        let in_group = if rank < indoor { rank } else { rank - indoor };
        sexes[i] = if in_group % 2 == 0 {
            Sex::Male
        } else {
            Sex::Female
        };
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            subject(
                cfg,
                i,
                format!("S{:0width$}", i + 1),
                sexes[i],
                has_outdoor[i],
            )
        })
        .collect()
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    Ok(generate_subjects(cfg)?
        .into_iter()
        .map(|s| s.recording)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{resample_window, AggregationFn};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: 4,
            duration_sec: 600.0,
            seed,
            ..SynthConfig::default()
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(&small(3)).unwrap();
        let b = generate_dataset(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(0);
        cfg.n_subjects = 2;
        assert!(matches!(
            generate_dataset(&cfg),
            Err(Error::InsufficientSubjects(_))
        ));
        let mut cfg = small(0);
        cfg.lag_tau = 0.0;
        assert!(matches!(
            generate_dataset(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = small(0);
        cfg.indoor_only_fraction = 1.5;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn degenerate_smoothing_recovers_demand() {
        let cfg = SynthConfig {
            noise_sd: 0.0,
            lag_tau: 1e-9,
            ..small(5)
        };
        for s in generate_subjects(&cfg).unwrap() {
            let p = s.recording.profile.as_ref().unwrap();
            for b in &s.recording.breaths {
                let seg = s.truth.segment_at(b.t);
                let direct = cfg.demand.offset(p) + cfg.demand.per_met * seg.met;
                assert!((b.eem - direct).abs() < 1e-12, "{} vs {}", b.eem, direct);
            }
        }
    }

    #[test]
    fn breath_eem_follows_latent_trace() {
        let cfg = SynthConfig {
            noise_sd: 0.0,
            ..small(6)
        };
        for s in generate_subjects(&cfg).unwrap() {
            for b in &s.recording.breaths {
                assert!((b.eem - s.truth.eem_at(b.t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn structure_and_profiles() {
        let cfg = SynthConfig {
            n_subjects: 10,
            duration_sec: 400.0,
            ..SynthConfig::default()
        };
        let recs = generate_dataset(&cfg).unwrap();
        assert_eq!(recs.len(), 10);
        let indoor = recs.iter().filter(|r| !r.has_outdoor()).count();
        assert_eq!(indoor, cfg.indoor_only_count());
        assert_eq!(indoor, 4);
        let males = recs
            .iter()
            .filter(|r| r.profile.as_ref().unwrap().sex == Sex::Male)
            .count();
        assert_eq!(males, 5);
        for r in &recs {
            let p = r.profile.as_ref().unwrap();
            assert!((60.0..85.0).contains(&p.age));
            assert!((23.0 - 1e-9..35.0 + 1e-9).contains(&p.bmi));
            assert!(p.bmi_consistent());
            assert_eq!(p.has_outdoor, r.has_outdoor());
            assert!(r.breaths.windows(2).all(|w| w[0].t < w[1].t));
            assert_eq!(r.annotations.len(), 400);
            let rate = r.breaths.len() as f64 / 400.0;
            assert!((0.2..0.45).contains(&rate), "breath rate {rate}");
            assert_eq!(r.wrist.len(), (400.0 * 83.0) as usize);
        }
    }

    #[test]
    fn eem_ordering_follows_intensity() {
        let cfg = SynthConfig {
            n_subjects: 12,
            duration_sec: 2400.0,
            ..SynthConfig::default()
        };
        let mut sums = std::collections::HashMap::new();
        for s in generate_subjects(&cfg).unwrap() {
            for b in &s.recording.breaths {
                let e = sums
                    .entry(s.truth.segment_at(b.t).label)
                    .or_insert((0.0, 0usize));
                e.0 += b.eem;
                e.1 += 1;
            }
        }
        let mean = |l| {
            let (s, n) = sums[&l];
            s / n as f64
        };
        use ActivityLabel::*;
        assert!(mean(Cycling) > mean(Walking));
        assert!(mean(Walking) > mean(Sitting));
        assert!(mean(Sitting) > 0.0);
    }

    /// Window SD tracks intensity; window mean does not.
    #[test]
    fn dispersion_carries_intensity() {
        for s in generate_subjects(&small(8)).unwrap() {
            let (mut sd, mut mean, mut met) = (Vec::new(), Vec::new(), Vec::new());
            for seg in &s.truth.segments {
                let mut t = seg.start;
                while t + 10.0 <= seg.end {
                    let x: Vec<f64> = s
                        .recording
                        .wrist
                        .window(t, t + 10.0)
                        .iter()
                        .map(|a| a.x)
                        .collect();
                    sd.push(resample_window(&x, AggregationFn::Sd).unwrap());
                    let m: Vec<f64> = s
                        .recording
                        .wrist
                        .window(t, t + 0.25)
                        .iter()
                        .map(|a| a.x)
                        .collect();
                    mean.push(resample_window(&m, AggregationFn::Mean).unwrap());
                    met.push(seg.met);
                    t += 10.0;
                }
            }
            let r_sd = pearson(&sd, &met);
            let r_mean = pearson(&mean, &met).abs();
            assert!(r_sd > 0.9, "sd correlation {r_sd}");
            assert!(r_sd - r_mean > 0.3, "gap {r_sd} vs {r_mean}");
        }
    }
}
