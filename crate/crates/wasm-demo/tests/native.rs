use kspec_wasm_demo::{certify_json, maximize_json, mode_labels_json, spectrum_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn labels_follow_model_order() {
    let v = parse(mode_labels_json("sphere", 4, 4));
    assert_eq!(v, serde_json::json!(["Y(1,-1)", "Y(1,0)", "Y(1,1)", "Y(2,-2)"]));
    let t = parse(mode_labels_json("square", 2, 2));
    assert_eq!(t, serde_json::json!(["cos(0,1)", "sin(0,1)"]));
}

#[test]
fn round_sphere_spectrum() {
    let v = parse(spectrum_json("sphere", 6, &[], 10));
    assert!((v["eigenvalues"][1].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert!((v["lambda1_area"].as_f64().unwrap() - 8.0 * std::f64::consts::PI).abs() < 1e-9);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 7 * 14);
    assert_eq!(v["factor_min"], 1.0);
}

#[test]
fn bumped_sphere_has_lower_first_eigenvalue() {
    let v = parse(spectrum_json("sphere", 6, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.05], 10));
    assert!(v["lambda1_area"].as_f64().unwrap() < 8.0 * std::f64::consts::PI);
}

#[test]
fn certificates() {
    let v = parse(certify_json("sphere", 6, &[], 1));
    assert_eq!(v["verdict"], "CertifiedExtremal");
    let t = parse(certify_json("equilateral", 4, &[], 1));
    assert_eq!(t["cluster_dim"], 6);
    assert_eq!(t["verdict"], "CertifiedExtremal");
}

#[test]
fn ascent_from_bump_improves() {
    let v = parse(maximize_json("sphere", 6, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.02], 30));
    let h = v["history"].as_array().unwrap();
    let first = h[0]["lambda1_area"].as_f64().unwrap();
    assert!(v["lambda1_area"].as_f64().unwrap() > first);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(spectrum_json("cube", 4, &[], 4).is_err());
    assert!(spectrum_json("sphere", 40, &[], 4).is_err());
    assert!(spectrum_json("sphere", 2, &[0.0; 20], 4).is_err());
    assert!(spectrum_json("sphere", 2, &[0.0, 5.0], 4).is_err());
}
