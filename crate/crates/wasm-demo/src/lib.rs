//! Browser bindings. Every export returns a JSON string; the `*_json`
//! functions carry the logic and run natively too.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use kspec::certificate::{certify, polarize, CertifyOptions, Verdict};
use kspec::flow::{ascend, FlowOptions};
use kspec::spectral::{cluster, cluster_summaries, solve_spectrum, ClusterSummary, DEFAULT_CLUSTER_TOL};
use kspec::surface::{Mode, Parity};
use kspec::{KahlerPotential, SurfaceKind, SurfaceModel};

/// Highest truncation the page may request.
pub const MAX_LMAX: u32 = 10;

fn surface(kind: &str) -> Result<SurfaceKind, String> {
    Ok(match kind {
        "sphere" => SurfaceKind::unit_sphere(),
        "square" => SurfaceKind::square_torus(),
        "rect2" => SurfaceKind::rectangular_torus(),
        "equilateral" => SurfaceKind::equilateral_torus(),
        other => return Err(format!("unknown surface {other:?}")),
    })
}

fn model(kind: &str, lmax: u32) -> Result<SurfaceModel, String> {
    if lmax > MAX_LMAX {
        return Err(format!("lmax is capped at {MAX_LMAX} in the browser"));
    }
    SurfaceModel::new(surface(kind)?, lmax as usize).map_err(|e| e.to_string())
}

/// Potential with `bumps[i]` on the `(i+1)`-th non-constant mode.
fn potential(m: &SurfaceModel, bumps: &[f64]) -> Result<KahlerPotential, String> {
    if bumps.len() >= m.dim() {
        return Err("more bumps than modes".into());
    }
    let mut v = vec![0.0; m.dim() - 1];
    v[..bumps.len()].copy_from_slice(bumps);
    Ok(KahlerPotential::from_vec(v))
}

fn label(mode: &Mode) -> String {
    match *mode {
        Mode::Harmonic { degree, order } => format!("Y({degree},{order})"),
        Mode::Fourier { n1, n2, parity } => {
            let p = if parity == Parity::Cos { "cos" } else { "sin" };
            format!("{p}({n1},{n2})")
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Labels of the first `n` non-constant modes.
pub fn mode_labels_json(kind: &str, lmax: u32, n: u32) -> Result<String, String> {
    let m = model(kind, lmax)?;
    let labels: Vec<String> = m.modes().iter().skip(1).take(n as usize).map(label).collect();
    to_json(&labels)
}

#[derive(Serialize)]
struct SpectrumView {
    eigenvalues: Vec<f64>,
    clusters: Vec<ClusterSummary>,
    lambda1_area: f64,
    area: f64,
    factor_min: f64,
    factor_max: f64,
    /// Native coordinates and conformal factor at each node, for plotting.
    nodes: Vec<[f64; 3]>,
}

pub fn spectrum_json(kind: &str, lmax: u32, bumps: &[f64], n: u32) -> Result<String, String> {
    let m = model(kind, lmax)?;
    let phi = potential(&m, bumps)?;
    let spec = solve_spectrum(&m, &phi, (n as usize).clamp(2, m.dim())).map_err(|e| e.to_string())?;
    let f = &spec.factor.values;
    to_json(&SpectrumView {
        clusters: cluster_summaries(&spec, DEFAULT_CLUSTER_TOL),
        lambda1_area: spec.lambda1() * m.area(),
        area: m.area(),
        factor_min: f.min(),
        factor_max: f.max(),
        nodes: m.coords().iter().zip(f.iter()).map(|(c, v)| [c[0], c[1], *v]).collect(),
        eigenvalues: spec.eigenvalues,
    })
}

#[derive(Serialize)]
struct CertificateView {
    verdict: Verdict,
    lambda: f64,
    cluster_dim: usize,
    residual: f64,
    tolerance: f64,
    b: Vec<Vec<f64>>,
    iterations: usize,
}

pub fn certify_json(kind: &str, lmax: u32, bumps: &[f64], k: u32) -> Result<String, String> {
    let m = model(kind, lmax)?;
    let phi = potential(&m, bumps)?;
    let k = k.max(1) as usize;
    let spec = solve_spectrum(&m, &phi, m.dim().min(k + 24)).map_err(|e| e.to_string())?;
    let c = cluster(&spec, k, DEFAULT_CLUSTER_TOL).map_err(|e| e.to_string())?;
    let cert = certify(&polarize(&m, &c), &CertifyOptions::default()).map_err(|e| e.to_string())?;
    to_json(&CertificateView {
        verdict: cert.verdict,
        lambda: c.lambda,
        cluster_dim: c.dim(),
        residual: cert.residual,
        tolerance: cert.tolerance,
        b: cert.b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        iterations: cert.iterations,
    })
}

#[derive(Serialize)]
struct FlowView {
    history: Vec<kspec::flow::HistoryEntry>,
    stop: kspec::flow::StopReason,
    lambda1_area: f64,
    /// Bumps of the final potential on the same leading modes.
    bumps: Vec<f64>,
}

pub fn maximize_json(kind: &str, lmax: u32, bumps: &[f64], max_steps: u32) -> Result<String, String> {
    let m = model(kind, lmax)?;
    let phi = potential(&m, bumps)?;
    let opts = FlowOptions {
        max_steps: max_steps as usize,
        ..FlowOptions::default()
    };
    let st = ascend(&m, &phi, &opts).map_err(|e| e.to_string())?;
    to_json(&FlowView {
        stop: st.stop,
        lambda1_area: st.lambda1_area(),
        bumps: st.phi.coeffs.iter().take(bumps.len()).copied().collect(),
        history: st.history,
    })
}

#[wasm_bindgen]
pub fn mode_labels(kind: &str, lmax: u32, n: u32) -> Result<String, JsValue> {
    mode_labels_json(kind, lmax, n).map_err(|e| JsValue::from_str(&e))
}

/// Eigenvalues, clusters and conformal factor of the bumped metric.
#[wasm_bindgen]
pub fn spectrum(kind: &str, lmax: u32, bumps: &[f64], n: u32) -> Result<String, JsValue> {
    spectrum_json(kind, lmax, bumps, n).map_err(|e| JsValue::from_str(&e))
}

/// Extremality certificate for the cluster of `λ_k`.
#[wasm_bindgen]
pub fn certify_cluster(kind: &str, lmax: u32, bumps: &[f64], k: u32) -> Result<String, JsValue> {
    certify_json(kind, lmax, bumps, k).map_err(|e| JsValue::from_str(&e))
}

/// `λ_1` ascent from the bumped metric.
#[wasm_bindgen]
pub fn maximize(kind: &str, lmax: u32, bumps: &[f64], max_steps: u32) -> Result<String, JsValue> {
    maximize_json(kind, lmax, bumps, max_steps).map_err(|e| JsValue::from_str(&e))
}
