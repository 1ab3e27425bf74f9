use std::fs;
use std::path::Path;

use kspec::surface::{Mode, Parity, SurfaceKind};
use kspec::SurfaceModel;
use kspec_cli::{run_with, EXIT_NUMERICAL, EXIT_OK, EXIT_PRECONDITION, EXIT_USAGE};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["kspec"];
    argv.extend_from_slice(args);
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &[&str]) -> Value {
    let (code, out, err) = run(args);
    assert_eq!(code, EXIT_OK, "{err}");
    serde_json::from_str(&out).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sphere_spectrum_json() {
    let v = json(&["spectrum", "--model", "sphere", "--lmax", "8", "--n", "10"]);
    let ev: Vec<f64> = v["eigenvalues"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let expected = [0.0, 2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0, 12.0];
    for (a, b) in ev.iter().zip(expected) {
        assert!((a - b).abs() < 1e-8 * b.max(1.0));
    }
    assert_eq!(v["clusters"][0]["dim"], 3);
    assert_eq!(v["clusters"][1]["dim"], 5);
    assert_eq!(v["trusted_below"], 36.0);
}

#[test]
fn spectrum_csv_and_deterministic_json() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let csv = dir.path().join("s.csv");
    for p in [&a, &b] {
        let (code, _, _) = run(&["spectrum", "--model", "torus", "--lmax", "4", "--n", "6", "--csv", path_str(&csv), "--out", path_str(p)]);
        assert_eq!(code, EXIT_OK);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("index,eigenvalue,cluster_id,trusted\n0,0,0,true\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn toric_single_function_is_not_affine() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("affine.json");
    fs::write(&p, r#"[{"u":["1","0"],"lam":"0"}]"#).unwrap();
    let v = json(&["toric", "--in", path_str(&p)]);
    assert_eq!(v["verdict"], "NotAffine");
    assert_eq!(v["Q"], serde_json::json!([["1", "0"], ["0", "0"]]));
}

#[test]
fn toric_constants_give_only_trivial_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("affine.json");
    fs::write(&p, r#"[{"u":["0","0"],"lam":"3"},{"u":["0","0"],"lam":"-1"}]"#).unwrap();
    let v = json(&["toric", "--in", path_str(&p)]);
    assert_eq!(v["verdict"], "AffineSum");
    assert_eq!(v["lam"], "10");
    assert_eq!(v["only_trivial"], true);
}

#[test]
fn toric_rejects_malformed_rationals() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("affine.json");
    fs::write(&p, r#"[{"u":["one"],"lam":"0"}]"#).unwrap();
    assert_eq!(run(&["toric", "--in", path_str(&p)]).0, EXIT_PRECONDITION);
}

#[test]
fn round_sphere_is_certified() {
    let v = json(&["certify", "--model", "sphere", "--lmax", "6", "--k", "1"]);
    assert_eq!(v["verdict"], "CertifiedExtremal");
    assert!(v["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["cluster_dim"], 3);
    assert_eq!(v["necessary_only"], false);
}

#[test]
fn rectangular_torus_first_eigenspace_is_double_and_certified() {
    // λ_1 = 1/4 is spanned by cos(y/2) and sin(y/2).
    let v = json(&["certify", "--model", "torus", "--lattice", "rect2", "--lmax", "6", "--k", "1"]);
    assert_eq!(v["cluster_dim"], 2);
    assert!((v["lambda"].as_f64().unwrap() - 0.25).abs() < 1e-10);
    assert_eq!(v["verdict"], "CertifiedExtremal");
}

#[test]
fn simple_eigenvalue_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let m = SurfaceModel::new(SurfaceKind::rectangular_torus(), 6).unwrap();
    let i = m
        .modes()
        .iter()
        .position(|&md| md == Mode::Fourier { n1: 0, n2: 2, parity: Parity::Cos })
        .unwrap();
    let mut phi = vec![0.0; m.dim() - 1];
    phi[i - 1] = 0.5;
    let p = dir.path().join("phi.json");
    fs::write(&p, serde_json::to_string(&phi).unwrap()).unwrap();
    let v = json(&["certify", "--model", "torus", "--lattice", "rect2", "--lmax", "6", "--potential", path_str(&p)]);
    assert_eq!(v["cluster_dim"], 1);
    assert_eq!(v["verdict"], "NotCertified");
    assert!(v["residual"].as_f64().unwrap() > 0.01);
    assert!(v["witness_margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn higher_clusters_report_necessary_condition_only() {
    let v = json(&["certify", "--model", "sphere", "--lmax", "8", "--k", "4"]);
    assert_eq!(v["cluster_dim"], 5);
    assert_eq!(v["necessary_only"], true);
}

#[test]
fn non_positive_metric_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("phi.json");
    let mut phi = vec![0.0; 8];
    phi[1] = 5.0;
    fs::write(&p, serde_json::to_string(&phi).unwrap()).unwrap();
    let (code, _, err) = run(&["spectrum", "--lmax", "2", "--potential", path_str(&p)]);
    assert_eq!(code, EXIT_PRECONDITION);
    assert!(err.contains("not positive") || err.contains("positive"), "{err}");
}

#[test]
fn untrusted_cluster_is_a_numerical_failure() {
    let (code, _, _) = run(&["certify", "--lmax", "2", "--k", "4"]);
    assert_eq!(code, EXIT_NUMERICAL);
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["spectrum", "--no-such-flag"]).0, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&[]).0, EXIT_USAGE);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("verify-identities"));
    assert_eq!(run(&["certify", "--tol-cert=0"]).0, EXIT_PRECONDITION);
}

#[test]
fn variation_report_matches_gram() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dir.json");
    let mut d = vec![0.0; 35];
    d[5] = 1.0; // Y_20
    fs::write(&p, serde_json::to_string(&d).unwrap()).unwrap();
    let v = json(&["variation", "--lmax", "5", "--direction", path_str(&p), "--h", "1e-3,5e-4,2.5e-4"]);
    assert_eq!(v["cluster_dim"], 3);
    assert_eq!(v["contract_holds"], true);
}

#[test]
fn maximize_from_round_metric_stops_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let v = json(&["maximize", "--lmax", "6", "--out", path_str(&out)]);
    assert_eq!(v["steps"], 0);
    assert_eq!(v["stop"], "Stationary");
    let hist = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(hist.starts_with("step,lambda1_area,step_size,cluster_dim\n0,"));
    let phi: Vec<f64> = serde_json::from_str(&fs::read_to_string(out.join("potential.json")).unwrap()).unwrap();
    assert_eq!(phi.len(), 48);
    assert!(out.join("summary.json").exists());
}

#[test]
fn product_of_spheres_with_lift() {
    let v = json(&["product", "--lmax", "6", "--lmax2", "6", "--n", "7", "--lift"]);
    assert!((v["lambda1"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert_eq!(v["levels"][1]["multiplicity"], 6);
    assert_eq!(v["lifted"]["cluster_dim"], 6);
    assert!(v["lifted"]["residual"].as_f64().unwrap() <= 1e-7);
}

#[test]
fn lift_onto_smaller_first_eigenvalue_is_refused() {
    let (code, _, err) = run(&["product", "--lmax", "6", "--lmax2", "6", "--radius2", "2", "--lift"]);
    assert_eq!(code, EXIT_PRECONDITION);
    assert!(err.contains("lift refused"), "{err}");
}

#[test]
fn identities_on_unit_sphere() {
    let v = json(&["verify-identities", "--lmax", "6"]);
    assert!(v["full_basis_distance"].as_f64().unwrap() < 1e-8);
    for d in v["single_function_distances"].as_array().unwrap() {
        assert!(d.as_f64().unwrap() > 0.1);
    }
    assert_eq!(run(&["verify-identities", "--model", "torus", "--lmax", "4"]).0, EXIT_PRECONDITION);
}

#[test]
fn model_descriptor_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.json");
    fs::write(&p, r#"{"kind":"torus","l_max":3,"lattice":[[6.283185307179586,0.0],[0.0,12.566370614359172]]}"#).unwrap();
    let v = json(&["spectrum", "--model", path_str(&p), "--n", "3"]);
    assert!((v["eigenvalues"][1].as_f64().unwrap() - 0.25).abs() < 1e-10);
}
