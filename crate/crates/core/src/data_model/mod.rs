//! Domain types for accelerometer streams, breath-by-breath calorimetry,
//! participant profiles and activity annotations.
//!
//! Gas volumes are carried in ml/min as exported by the calorimeter and
//! converted to L/min only when the Weir formula is applied.

mod csv_io;

pub use csv_io::{
    load_dataset, load_recording, parse_accel_csv, parse_annotations_csv, parse_breath_csv,
    parse_participants_csv, read_accel_csv, read_annotations_csv, read_breath_csv,
    read_participants_csv, write_accel_csv, write_annotations_csv, write_breath_csv, write_dataset,
    write_participants_csv,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Device range of the accelerometers, in g.
pub const ACCEL_RANGE_G: f64 = 8.0;

/// Nominal accelerometer sampling rate, in Hz.
pub const NOMINAL_SR_HZ: f64 = 83.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {axis} out of range"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BodyLocation {
    Wrist,
    Ankle,
}

impl BodyLocation {
    pub fn name(self) -> &'static str {
        match self {
            BodyLocation::Wrist => "wrist",
            BodyLocation::Ankle => "ankle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccelStream {
    pub location: BodyLocation,
    pub samples: Vec<AccelSample>,
    pub nominal_sr: f64,
}

impl AccelStream {
    /// Builds a stream, checking the device range and strict time ordering.
    pub fn new(location: BodyLocation, samples: Vec<AccelSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            let line = i as u64 + 2;
            if !(s.t.is_finite() && s.t >= 0.0) {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("invalid timestamp {}", s.t),
                });
            }
            for v in [s.x, s.y, s.z] {
                if !v.is_finite() {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("non-finite acceleration {v}"),
                    });
                }
                if v.abs() > ACCEL_RANGE_G {
                    return Err(Error::OutOfRange { line, value: v });
                }
            }
            if i > 0 && samples[i - 1].t >= s.t {
                return Err(Error::NonMonotonicTime { line });
            }
        }
        Ok(Self {
            location,
            samples,
            nominal_sr: NOMINAL_SR_HZ,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// `(first t, last t)`, or `None` for an empty stream.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> &[AccelSample] {
        let lo = self.samples.partition_point(|s| s.t < t0);
        let hi = self.samples.partition_point(|s| s.t < t1);
        &self.samples[lo..hi.max(lo)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreathRecord {
    pub t: f64,
    /// ml/min
    pub vo2: f64,
    /// ml/min
    pub vco2: f64,
    /// kcal/min
    pub eem: f64,
}

impl BreathRecord {
    /// Record with EEm derived from the gas volumes via Weir.
    pub fn from_gas(t: f64, vo2_ml: f64, vco2_ml: f64) -> Result<Self> {
        let eem = eem_from_weir(vo2_ml / 1000.0, vco2_ml / 1000.0)?;
        Ok(Self {
            t,
            vo2: vo2_ml,
            vco2: vco2_ml,
            eem,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn code(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantProfile {
    pub id: String,
    pub age: f64,
    pub sex: Sex,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub bmi: f64,
    pub has_outdoor: bool,
}

impl ParticipantProfile {
    pub fn bmi_of(height_cm: f64, weight_kg: f64) -> f64 {
        let h = height_cm / 100.0;
        weight_kg / (h * h)
    }

    pub fn bmi_consistent(&self) -> bool {
        let expected = Self::bmi_of(self.height_cm, self.weight_kg);
        ((self.bmi - expected) / expected).abs() <= 1e-6
    }

    /// `[age, sex, height, weight, bmi]`, unnormalized.
    pub fn static_features(&self) -> [f64; 5] {
        [
            self.age,
            self.sex.code(),
            self.height_cm,
            self.weight_kg,
            self.bmi,
        ]
    }
}

/// The seven activity classes, in alphabetical order of their names so that
/// the discriminant doubles as the label code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLabel {
    Cycling,
    Household,
    Jumping,
    LyingDown,
    Sitting,
    Standing,
    Walking,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 7] = [
        ActivityLabel::Cycling,
        ActivityLabel::Household,
        ActivityLabel::Jumping,
        ActivityLabel::LyingDown,
        ActivityLabel::Sitting,
        ActivityLabel::Standing,
        ActivityLabel::Walking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivityLabel::Cycling => "cycling",
            ActivityLabel::Household => "household",
            ActivityLabel::Jumping => "jumping",
            ActivityLabel::LyingDown => "lying_down",
            ActivityLabel::Sitting => "sitting",
            ActivityLabel::Standing => "standing",
            ActivityLabel::Walking => "walking",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Place {
    Indoor,
    Outdoor,
}

impl Place {
    pub fn name(self) -> &'static str {
        match self {
            Place::Indoor => "indoor",
            Place::Outdoor => "outdoor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivityAnnotation {
    pub t: f64,
    pub label: ActivityLabel,
    pub place: Place,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub id: String,
    /// Absent when the dataset ships no participants table.
    pub profile: Option<ParticipantProfile>,
    pub wrist: AccelStream,
    pub ankle: AccelStream,
    pub breaths: Vec<BreathRecord>,
    /// 1 Hz activity labels; may be empty.
    pub annotations: Vec<ActivityAnnotation>,
}

impl Recording {
    /// Whether the subject has any outdoor data. The annotation stream wins
    /// over the profile flag when present.
    pub fn has_outdoor(&self) -> bool {
        if !self.annotations.is_empty() {
            return self.annotations.iter().any(|a| a.place == Place::Outdoor);
        }
        self.profile.as_ref().is_some_and(|p| p.has_outdoor)
    }

    /// Length of the common time range of both accelerometer streams.
    pub fn duration(&self) -> f64 {
        match (self.wrist.time_range(), self.ankle.time_range()) {
            (Some((a0, a1)), Some((b0, b1))) => (a1.min(b1) - a0.max(b0)).max(0.0),
            _ => 0.0,
        }
    }

    /// Latest annotation at or before `t`.
    pub fn annotation_at(&self, t: f64) -> Option<&ActivityAnnotation> {
        let idx = self.annotations.partition_point(|a| a.t <= t);
        if idx == 0 {
            None
        } else {
            self.annotations.get(idx - 1)
        }
    }

    pub fn place_at(&self, t: f64) -> Place {
        self.annotation_at(t)
            .map(|a| a.place)
            .unwrap_or(Place::Indoor)
    }
}

/// Weir-type energy expenditure in kcal/min from gas volumes in L/min.
pub fn eem_from_weir(vo2_l: f64, vco2_l: f64) -> Result<f64> {
    for v in [vo2_l, vco2_l] {
        if v < 0.0 || v.is_nan() {
            return Err(Error::NegativeGasVolume(v));
        }
    }
    Ok(3.94 * vo2_l + 1.11 * vco2_l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetBand {
    Sedentary,
    Light,
    Moderate,
    Vigorous,
}

impl MetBand {
    pub const ALL: [MetBand; 4] = [
        MetBand::Sedentary,
        MetBand::Light,
        MetBand::Moderate,
        MetBand::Vigorous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetBand::Sedentary => "sedentary",
            MetBand::Light => "light",
            MetBand::Moderate => "moderate",
            MetBand::Vigorous => "vigorous",
        }
    }
}

/// Intensity band; every boundary is left-closed.
pub fn met_band(mets: f64) -> Result<MetBand> {
    if mets < 0.0 || mets.is_nan() {
        return Err(Error::NegativeInput(mets));
    }
    Ok(if mets < 1.5 {
        MetBand::Sedentary
    } else if mets < 4.0 {
        MetBand::Light
    } else if mets < 6.0 {
        MetBand::Moderate
    } else {
        MetBand::Vigorous
    })
}

/// METs from kcal/min and body mass (1 MET = 1 kcal/kg/h).
pub fn mets_from_eem(eem: f64, weight_kg: f64) -> f64 {
    eem * 60.0 / weight_kg
}

/// Trims every stream to the common time range and re-zeroes the epoch to
/// its start.
pub fn align_recording(rec: &Recording) -> Result<Recording> {
    let (w0, w1) = rec.wrist.time_range().ok_or(Error::NoOverlap)?;
    let (a0, a1) = rec.ankle.time_range().ok_or(Error::NoOverlap)?;
    let (b0, b1) = match (rec.breaths.first(), rec.breaths.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::NoOverlap),
    };
    let lo = w0.max(a0).max(b0);
    let hi = w1.min(a1).min(b1);
    if lo > hi {
        return Err(Error::NoOverlap);
    }
    let inside = |t: f64| t >= lo && t <= hi;

    let shift_stream = |s: &AccelStream| AccelStream {
        location: s.location,
        nominal_sr: s.nominal_sr,
        samples: s
            .samples
            .iter()
            .filter(|p| inside(p.t))
            .map(|p| AccelSample { t: p.t - lo, ..*p })
            .collect(),
    };

    Ok(Recording {
        id: rec.id.clone(),
        profile: rec.profile.clone(),
        wrist: shift_stream(&rec.wrist),
        ankle: shift_stream(&rec.ankle),
        breaths: rec
            .breaths
            .iter()
            .filter(|b| inside(b.t))
            .map(|b| BreathRecord { t: b.t - lo, ..*b })
            .collect(),
        annotations: rec
            .annotations
            .iter()
            .filter(|a| inside(a.t))
            .map(|a| ActivityAnnotation { t: a.t - lo, ..*a })
            .collect(),
    })
}
