//! In-browser views of three pieces of the pipeline, compiled to WebAssembly.
//! Each export returns a JSON string for the page in `www/` to draw.
//!
//! The plain functions are usable natively; the `wasm_bindgen` wrappers only
//! convert errors.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use paee_core::data_model::{eem_from_weir, met_band, mets_from_eem, ActivityLabel, Place};
use paee_core::preprocess::{resample_stream, AggregationFn};
use paee_core::sequencing::derive_sr;
use paee_core::synth::{generate_subjects, ActivityIntensity, LatentTruth, Segment, SynthConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

pub type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// One window of synthetic accelerometry at a fixed intensity, raw and
/// resampled to `seq_size` bins with `agg`.
pub fn resample_view(
    met: f64,
    agg: &str,
    seq_size: usize,
    window_sec: f64,
    ankle: bool,
    seed: u64,
) -> Result<Value> {
    let agg: AggregationFn = agg.parse().map_err(err)?;
    let sr = derive_sr(seq_size, window_sec).map_err(err)?;
    let steady = |label| ActivityIntensity {
        label,
        met,
        outdoor: false,
    };
    let cfg = SynthConfig {
        n_subjects: 4,
        indoor_only_fraction: 1.0,
        seed,
        duration_sec: window_sec + 5.0,
        schedule: vec![
            steady(ActivityLabel::Walking),
            steady(ActivityLabel::Cycling),
        ],
        met_jitter: 0.0,
        ..SynthConfig::default()
    };
    let subject = generate_subjects(&cfg).map_err(err)?.swap_remove(0);
    let stream = if ankle {
        &subject.recording.ankle
    } else {
        &subject.recording.wrist
    };
    let t0 = stream.samples.first().ok_or("empty stream")?.t;
    let t1 = t0 + window_sec;
    let [x, y, z] = resample_stream(stream, sr, agg, t0, t1).map_err(err)?;
    let raw = stream.window(t0, t1);
    Ok(json!({
        "sr_hz": sr,
        "raw_t": raw.iter().map(|s| s.t - t0).collect::<Vec<_>>(),
        "raw": [
            raw.iter().map(|s| s.x).collect::<Vec<_>>(),
            raw.iter().map(|s| s.y).collect::<Vec<_>>(),
            raw.iter().map(|s| s.z).collect::<Vec<_>>(),
        ],
        "bin_t": (0..seq_size).map(|k| (k as f64 + 0.5) / sr).collect::<Vec<_>>(),
        "bins": [x, y, z],
    }))
}

/// Demand and lagged EEm for back-to-back activities of `segment_sec` each,
/// starting from the steady state of the first.
pub fn lag_curve(
    mets: &[f64],
    segment_sec: f64,
    lag_tau: f64,
    per_met: f64,
    offset: f64,
    step_sec: f64,
) -> Result<Value> {
    if mets.is_empty() {
        return Err("no activities given".into());
    }
    if !(segment_sec > 0.0 && lag_tau > 0.0 && step_sec > 0.0) {
        return Err("segment length, time constant and step must be positive".into());
    }
    let segments: Vec<Segment> = mets
        .iter()
        .enumerate()
        .map(|(i, &met)| Segment {
            start: i as f64 * segment_sec,
            end: (i + 1) as f64 * segment_sec,
            label: ActivityLabel::Standing,
            met,
            place: Place::Indoor,
        })
        .collect();
    let truth = LatentTruth {
        initial_eem: offset + per_met * mets[0],
        segments,
        offset,
        per_met,
        lag_tau,
    };
    let end = mets.len() as f64 * segment_sec;
    let n = (end / step_sec).floor() as usize;
    let t: Vec<f64> = (0..=n).map(|k| k as f64 * step_sec).collect();
    Ok(json!({
        "t": t,
        "demand": t.iter().map(|&t| truth.demand_at(t)).collect::<Vec<_>>(),
        "eem": t.iter().map(|&t| truth.eem_at(t)).collect::<Vec<_>>(),
    }))
}

/// Energy expenditure from gas exchange in ml/min, and its MET band.
pub fn weir(vo2_ml_min: f64, vco2_ml_min: f64, weight_kg: f64) -> Result<Value> {
    if !(weight_kg > 0.0) {
        return Err("body mass must be positive".into());
    }
    let eem = eem_from_weir(vo2_ml_min / 1000.0, vco2_ml_min / 1000.0).map_err(err)?;
    let mets = mets_from_eem(eem, weight_kg);
    let band = met_band(mets).map_err(err)?;
    Ok(json!({ "eem_kcal_min": eem, "mets": mets, "band": band.name() }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = resampleView)]
pub fn resample_view_js(
    met: f64,
    agg: &str,
    seq_size: usize,
    window_sec: f64,
    ankle: bool,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(resample_view(
        met,
        agg,
        seq_size,
        window_sec,
        ankle,
        seed.into(),
    ))
}

#[wasm_bindgen(js_name = lagCurve)]
pub fn lag_curve_js(
    mets: &str,
    segment_sec: f64,
    lag_tau: f64,
    per_met: f64,
    offset: f64,
    step_sec: f64,
) -> std::result::Result<String, JsError> {
    let parsed: std::result::Result<Vec<f64>, _> =
        mets.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let mets = parsed.map_err(|e| JsError::new(&format!("activity list: {e}")))?;
    to_js(lag_curve(
        &mets,
        segment_sec,
        lag_tau,
        per_met,
        offset,
        step_sec,
    ))
}

#[wasm_bindgen(js_name = weir)]
pub fn weir_js(
    vo2_ml_min: f64,
    vco2_ml_min: f64,
    weight_kg: f64,
) -> std::result::Result<String, JsError> {
    to_js(weir(vo2_ml_min, vco2_ml_min, weight_kg))
}
