use gampi_wasm_demo::{parse_matrix, peel_text, penalty_curve, recover};

#[test]
fn curve_matches_closed_forms() {
    let (tau, lambda) = (1.0, 0.5);
    let c = penalty_curve(tau, lambda, 3.0).unwrap();
    let z: Vec<f64> = serde_json::from_value(c["z"].clone()).unwrap();
    let pen: Vec<f64> = serde_json::from_value(c["tlp"].clone()).unwrap();
    let thr: Vec<f64> = serde_json::from_value(c["tlp_threshold"].clone()).unwrap();
    let lasso: Vec<f64> = serde_json::from_value(c["lasso_threshold"].clone()).unwrap();
    assert_eq!(z.len(), 241);
    assert_eq!(z[0], -3.0);
    assert_eq!(z[240], 3.0);
    for i in 0..z.len() {
        assert!((pen[i] - lambda * (z[i].abs() / tau).min(1.0)).abs() < 1e-12);
        // Brute-force minimizer on a fine grid.
        let obj = |b: f64| 0.5 * (z[i] - b).powi(2) + lambda * (b.abs() / tau).min(1.0);
        let best = (-4000..=4000).map(|k| k as f64 * 1e-3).fold(f64::INFINITY, |m, b| m.min(obj(b)));
        assert!(obj(thr[i]) <= best + 1e-9, "z={} b={}", z[i], thr[i]);
        // Large inputs are left unshrunk, unlike the lasso.
        if z[i].abs() > 2.0 {
            assert_eq!(thr[i], z[i]);
            assert!((lasso[i].abs() - (z[i].abs() - 0.5)).abs() < 1e-12);
        }
    }
    assert!(penalty_curve(0.0, 1.0, 1.0).is_err());
}

#[test]
fn peel_recovers_chain_and_reports_stall() {
    // Chain 1 -> 2 -> 3 with one instrument per node; V marks descendants.
    let v = "1 1 1\n0 1 1\n0 0 1\n";
    let out = peel_text(v).unwrap();
    assert_eq!(out["order"], serde_json::json!([1, 2, 3]));
    assert_eq!(out["ancestral"], serde_json::json!([[1, 2], [1, 3], [2, 3]]));
    assert_eq!(out["instruments"], serde_json::json!([[1], [2], [3]]));

    let err = peel_text("1,1\n1,1").unwrap_err();
    assert!(err.contains("stalled"), "{err}");
    assert!(parse_matrix("1 2\n3").unwrap_err().contains("row 2"));
    assert!(parse_matrix("1 x").is_err());
}

#[test]
fn recover_small_hub() {
    let out = recover("hub", "gaussian", "dri", 5, 300, 7).unwrap();
    assert_eq!(out["truth"].as_array().unwrap().len(), 4);
    let f = out["metrics"]["fscore"].as_f64().unwrap();
    assert!(f >= 0.75, "{out}");
    assert!(recover("hub", "binary", "dri", 50, 300, 7).is_err());
    assert!(recover("star", "binary", "dri", 5, 300, 7).is_err());
}
