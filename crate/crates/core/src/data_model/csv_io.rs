//! CSV ingestion and serialization for the on-disk dataset layout:
//!
//! ```text
//! <root>/participants.csv            (optional)
//! <root>/<id>/accel_wrist.csv
//! <root>/<id>/accel_ankle.csv
//! <root>/<id>/breaths.csv
//! <root>/<id>/annotations.csv        (optional)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parse/write/parse cycle reproduces every value bit for bit.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::{
    AccelSample, AccelStream, ActivityAnnotation, ActivityLabel, BodyLocation, BreathRecord,
    ParticipantProfile, Place, Recording, Sex,
};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
    header: Vec<String>,
}

impl<R: Read> Rows<R> {
    fn open(input: R, required: &[&str], optional: &[&str]) -> Result<Self> {
        let mut reader = ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(input);
        let header: Vec<String> = match reader.headers() {
            Ok(h) => h.iter().map(str::to_string).collect(),
            Err(e) => return Err(csv_err(e)),
        };
        // An empty input yields an empty header; callers treat it as "no rows".
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Ok(Self {
                reader,
                header: Vec::new(),
            });
        }
        let expected_min = required.len();
        let ok_prefix = header.len() >= expected_min
            && header.iter().zip(required).all(|(h, r)| h == r)
            && header[expected_min..]
                .iter()
                .zip(optional)
                .all(|(h, o)| h == o)
            && header.len() <= expected_min + optional.len();
        if !ok_prefix {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!(
                    "expected header `{}`, found `{}`",
                    required.join(","),
                    header.join(",")
                ),
            });
        }
        Ok(Self { reader, header })
    }

    fn has(&self, col: &str) -> bool {
        self.header.iter().any(|h| h == col)
    }

    fn is_empty_input(&self) -> bool {
        self.header.is_empty()
    }

    fn for_each(&mut self, mut f: impl FnMut(u64, &StringRecord) -> Result<()>) -> Result<()> {
        if self.header.is_empty() {
            return Ok(());
        }
        let mut record = StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(true) => {
                    let line = record.position().map(|p| p.line()).unwrap_or(0);
                    f(line, &record)?;
                }
                Ok(false) => return Ok(()),
                Err(e) => return Err(csv_err(e)),
            }
        }
    }
}

fn field(rec: &StringRecord, idx: usize, line: u64) -> Result<&str> {
    rec.get(idx).ok_or_else(|| Error::MalformedRow {
        line,
        reason: format!("missing column {idx}"),
    })
}

fn num(rec: &StringRecord, idx: usize, line: u64) -> Result<f64> {
    let s = field(rec, idx, line)?;
    let v: f64 = s.parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("`{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("non-finite value `{s}`"),
        });
    }
    Ok(v)
}

pub fn read_accel_csv<R: Read>(input: R, location: BodyLocation) -> Result<AccelStream> {
    let mut rows = Rows::open(input, &["t", "x", "y", "z"], &[])?;
    let mut samples = Vec::new();
    rows.for_each(|line, rec| {
        let s = AccelSample {
            t: num(rec, 0, line)?,
            x: num(rec, 1, line)?,
            y: num(rec, 2, line)?,
            z: num(rec, 3, line)?,
        };
        if s.t < 0.0 {
            return Err(Error::MalformedRow {
                line,
                reason: "negative timestamp".into(),
            });
        }
        for v in [s.x, s.y, s.z] {
            if v.abs() > super::ACCEL_RANGE_G {
                return Err(Error::OutOfRange { line, value: v });
            }
        }
        if let Some(prev) = samples.last() {
            let prev: &AccelSample = prev;
            if prev.t >= s.t {
                return Err(Error::NonMonotonicTime { line });
            }
        }
        samples.push(s);
        Ok(())
    })?;
    AccelStream::new(location, samples)
}

pub fn parse_accel_csv(path: impl AsRef<Path>, location: BodyLocation) -> Result<AccelStream> {
    read_accel_csv(File::open(path)?, location)
}

pub fn write_accel_csv<W: Write>(out: W, stream: &AccelStream) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,x,y,z")?;
    for s in &stream.samples {
        writeln!(w, "{},{},{},{}", s.t, s.x, s.y, s.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `t,vo2,vco2[,eem]`. Missing EEm is filled in with Weir.
pub fn read_breath_csv<R: Read>(input: R) -> Result<Vec<BreathRecord>> {
    let mut rows = Rows::open(input, &["t", "vo2", "vco2"], &["eem"])?;
    if rows.is_empty_input() {
        log::warn!("breath file is empty");
        return Ok(Vec::new());
    }
    let has_eem = rows.has("eem");
    let mut out: Vec<BreathRecord> = Vec::new();
    rows.for_each(|line, rec| {
        let t = num(rec, 0, line)?;
        let vo2 = num(rec, 1, line)?;
        let vco2 = num(rec, 2, line)?;
        if vo2 < 0.0 {
            return Err(Error::NegativeGasVolume(vo2));
        }
        if vco2 < 0.0 {
            return Err(Error::NegativeGasVolume(vco2));
        }
        let eem_field = if has_eem {
            Some(field(rec, 3, line)?)
        } else {
            None
        };
        let b = match eem_field {
            Some(s) if !s.is_empty() => {
                let eem = num(rec, 3, line)?;
                if eem < 0.0 {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("negative eem {eem}"),
                    });
                }
                BreathRecord { t, vo2, vco2, eem }
            }
            _ => BreathRecord::from_gas(t, vo2, vco2)?,
        };
        if let Some(prev) = out.last() {
            if prev.t >= t {
                return Err(Error::NonMonotonicTime { line });
            }
        }
        out.push(b);
        Ok(())
    })?;
    if out.is_empty() {
        log::warn!("breath file has no records");
    }
    Ok(out)
}

pub fn parse_breath_csv(path: impl AsRef<Path>) -> Result<Vec<BreathRecord>> {
    read_breath_csv(File::open(path)?)
}

pub fn write_breath_csv<W: Write>(out: W, breaths: &[BreathRecord]) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,vo2,vco2,eem")?;
    for b in breaths {
        writeln!(w, "{},{},{},{}", b.t, b.vo2, b.vco2, b.eem)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_flag(s: &str, line: u64) -> Result<bool> {
    match s {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        _ => Err(Error::MalformedRow {
            line,
            reason: format!("`{s}` is not a flag"),
        }),
    }
}

pub fn read_participants_csv<R: Read>(input: R) -> Result<Vec<ParticipantProfile>> {
    let mut rows = Rows::open(
        input,
        &["id", "age", "sex", "height_cm", "weight_kg", "bmi"],
        &["has_outdoor"],
    )?;
    let has_flag = rows.has("has_outdoor");
    let mut out = Vec::new();
    rows.for_each(|line, rec| {
        let sex = match field(rec, 2, line)? {
            "F" => Sex::Female,
            "M" => Sex::Male,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("sex must be F or M, got `{other}`"),
                })
            }
        };
        let p = ParticipantProfile {
            id: field(rec, 0, line)?.to_string(),
            age: num(rec, 1, line)?,
            sex,
            height_cm: num(rec, 3, line)?,
            weight_kg: num(rec, 4, line)?,
            bmi: num(rec, 5, line)?,
            has_outdoor: if has_flag {
                parse_flag(field(rec, 6, line)?, line)?
            } else {
                false
            },
        };
        if !p.bmi_consistent() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("bmi {} inconsistent with height/weight", p.bmi),
            });
        }
        out.push(p);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_participants_csv(path: impl AsRef<Path>) -> Result<Vec<ParticipantProfile>> {
    read_participants_csv(File::open(path)?)
}

pub fn write_participants_csv<W: Write>(out: W, profiles: &[ParticipantProfile]) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "id,age,sex,height_cm,weight_kg,bmi,has_outdoor")?;
    for p in profiles {
        let sex = match p.sex {
            Sex::Female => "F",
            Sex::Male => "M",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.id,
            p.age,
            sex,
            p.height_cm,
            p.weight_kg,
            p.bmi,
            u8::from(p.has_outdoor)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations_csv<R: Read>(input: R) -> Result<Vec<ActivityAnnotation>> {
    let mut rows = Rows::open(input, &["t", "label", "location"], &[])?;
    let mut out: Vec<ActivityAnnotation> = Vec::new();
    rows.for_each(|line, rec| {
        let t = num(rec, 0, line)?;
        let label = ActivityLabel::from_name(field(rec, 1, line)?)?;
        let place = match field(rec, 2, line)? {
            "indoor" => Place::Indoor,
            "outdoor" => Place::Outdoor,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("location must be indoor or outdoor, got `{other}`"),
                })
            }
        };
        if let Some(prev) = out.last() {
            if prev.t >= t {
                return Err(Error::NonMonotonicTime { line });
            }
        }
        out.push(ActivityAnnotation { t, label, place });
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_annotations_csv(path: impl AsRef<Path>) -> Result<Vec<ActivityAnnotation>> {
    read_annotations_csv(File::open(path)?)
}

pub fn write_annotations_csv<W: Write>(out: W, annotations: &[ActivityAnnotation]) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,label,location")?;
    for a in annotations {
        writeln!(w, "{},{},{}", a.t, a.label.name(), a.place.name())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every recording in the directory layout described above. The
/// participants table is written only when every recording carries a profile.
pub fn write_dataset(root: impl AsRef<Path>, recordings: &[Recording]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    for rec in recordings {
        let dir = root.join(&rec.id);
        fs::create_dir_all(&dir)?;
        write_accel_csv(File::create(dir.join("accel_wrist.csv"))?, &rec.wrist)?;
        write_accel_csv(File::create(dir.join("accel_ankle.csv"))?, &rec.ankle)?;
        write_breath_csv(File::create(dir.join("breaths.csv"))?, &rec.breaths)?;
        if !rec.annotations.is_empty() {
            write_annotations_csv(File::create(dir.join("annotations.csv"))?, &rec.annotations)?;
        }
    }
    let profiles: Option<Vec<ParticipantProfile>> =
        recordings.iter().map(|r| r.profile.clone()).collect();
    if let Some(profiles) = profiles {
        write_participants_csv(File::create(root.join("participants.csv"))?, &profiles)?;
    }
    Ok(())
}

/// Loads every subject directory under `root`, sorted by id.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Recording>> {
    let root = root.as_ref();
    let participants_path = root.join("participants.csv");
    let mut profiles: HashMap<String, ParticipantProfile> = if participants_path.exists() {
        parse_participants_csv(&participants_path)?
            .into_iter()
            .map(|p| (p.id.clone(), p))
            .collect()
    } else {
        HashMap::new()
    };

    let mut ids: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir() && e.path().join("breaths.csv").exists())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();

    ids.into_iter()
        .map(|id| {
            let profile = profiles.remove(&id);
            load_subject(&root.join(&id), id, profile)
        })
        .collect()
}

fn load_subject(dir: &Path, id: String, profile: Option<ParticipantProfile>) -> Result<Recording> {
    let annotations_path = dir.join("annotations.csv");
    let annotations = if annotations_path.exists() {
        parse_annotations_csv(&annotations_path)?
    } else {
        Vec::new()
    };
    Ok(Recording {
        profile,
        wrist: parse_accel_csv(dir.join("accel_wrist.csv"), BodyLocation::Wrist)?,
        ankle: parse_accel_csv(dir.join("accel_ankle.csv"), BodyLocation::Ankle)?,
        breaths: parse_breath_csv(dir.join("breaths.csv"))?,
        annotations,
        id,
    })
}

/// Loads one subject directory. Its profile comes from `participants.csv` in
/// the parent directory when that file exists and lists the subject.
pub fn load_recording(dir: impl AsRef<Path>) -> Result<Recording> {
    let dir = dir.as_ref();
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("{} is not a subject directory", dir.display())))?
        .to_string();
    let profile = match dir.parent().map(|p| p.join("participants.csv")) {
        Some(path) if path.exists() => parse_participants_csv(&path)?
            .into_iter()
            .find(|p| p.id == id),
        _ => None,
    };
    load_subject(dir, id, profile)
}
