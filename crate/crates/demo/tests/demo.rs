use paee_demo::{lag_curve, resample_view, weir};

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn weir_calculator() {
    let v = weir(1000.0, 800.0, 70.0).unwrap();
    let eem = 3.94 + 1.11 * 0.8;
    assert!((v["eem_kcal_min"].as_f64().unwrap() - eem).abs() < 1e-12);
    assert!((v["mets"].as_f64().unwrap() - eem * 60.0 / 70.0).abs() < 1e-12);
    assert_eq!(v["band"], "moderate");
    assert_eq!(weir(250.0, 200.0, 70.0).unwrap()["band"], "sedentary");
    assert!(weir(-1.0, 200.0, 70.0).is_err());
    assert!(weir(300.0, 200.0, 0.0).is_err());
}

#[test]
fn lag_curve_follows_first_order_response() {
    let (tau, seg) = (30.0, 300.0);
    let v = lag_curve(&[1.0, 6.0], seg, tau, 1.0, 0.5, 1.0).unwrap();
    let t = floats(&v["t"]);
    let eem = floats(&v["eem"]);
    let demand = floats(&v["demand"]);
    assert_eq!(t.len(), 601);
    assert!((eem[0] - 1.5).abs() < 1e-12);
    assert!((eem[299] - 1.5).abs() < 1e-12);
    assert_eq!(demand[350], 6.5);
    // one time constant after the step
    let k = (seg + tau) as usize;
    let want = 6.5 + (1.5 - 6.5) * (-1.0f64).exp();
    assert!((eem[k] - want).abs() < 1e-12);
    assert!(lag_curve(&[], seg, tau, 1.0, 0.5, 1.0).is_err());
    assert!(lag_curve(&[1.0], seg, 0.0, 1.0, 0.5, 1.0).is_err());
}

#[test]
fn resample_view_matches_bin_means() {
    let v = resample_view(3.0, "mean", 10, 20.0, false, 1).unwrap();
    assert_eq!(v["sr_hz"].as_f64().unwrap(), 0.5);
    let raw_t = floats(&v["raw_t"]);
    for axis in 0..3 {
        let raw = floats(&v["raw"][axis]);
        let bins = floats(&v["bins"][axis]);
        assert_eq!(bins.len(), 10);
        for (k, b) in bins.iter().enumerate() {
            let members: Vec<f64> = raw_t
                .iter()
                .zip(&raw)
                .filter(|(t, _)| **t >= 2.0 * k as f64 && **t < 2.0 * (k + 1) as f64)
                .map(|(_, x)| *x)
                .collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((b - mean).abs() < 1e-9, "axis {axis} bin {k}");
        }
    }
    let sd = resample_view(6.0, "sd", 50, 120.0, true, 2).unwrap();
    assert_eq!(floats(&sd["bins"][0]).len(), 50);
    assert!(resample_view(3.0, "median", 10, 20.0, false, 1).is_err());
    assert!(resample_view(3.0, "sd", 0, 20.0, false, 1).is_err());
}
