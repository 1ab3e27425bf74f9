//! JSON artifacts and CSV plot data.
//!
//! Potentials are JSON arrays of the non-constant coefficients in model
//! order: on the sphere by degree, then order `-l..=l` (negative orders are
//! the sine harmonics); on a torus by `(n1, n2)` lexicographically over the
//! half lattice `n1 > 0 or (n1 = 0, n2 > 0)`, cosine before sine.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certificate::{model_functions, ExtremalityCertificate, Verdict};
use crate::error::{Error, Result};
use crate::flow::HistoryEntry;
use crate::spectral::{cluster_summaries, ClusterSummary, EigenspaceCluster, SpectralData};
use crate::surface::{KahlerPotential, SurfaceKind, SurfaceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindName {
    Sphere,
    Torus,
}

/// `{"kind": "sphere" | "torus", "l_max": n, "lattice": [[a, b], [c, d]]?, "radius": r?}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: ModelKindName,
    pub l_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl ModelDescriptor {
    pub fn surface_kind(&self) -> Result<SurfaceKind> {
        match self.kind {
            ModelKindName::Sphere => {
                if self.lattice.is_some() {
                    return Err(Error::InvalidInput("a sphere takes no lattice".into()));
                }
                let radius = self.radius.unwrap_or(1.0);
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
                }
                Ok(SurfaceKind::RoundSphere { radius })
            }
            ModelKindName::Torus => {
                if self.radius.is_some() {
                    return Err(Error::InvalidInput("a torus takes no radius".into()));
                }
                Ok(match self.lattice {
                    Some(lattice) => SurfaceKind::FlatTorus { lattice },
                    None => SurfaceKind::square_torus(),
                })
            }
        }
    }

    pub fn build(&self) -> Result<SurfaceModel> {
        SurfaceModel::new(self.surface_kind()?, self.l_max)
    }

    pub fn of(model: &SurfaceModel) -> Self {
        match model.kind() {
            SurfaceKind::RoundSphere { radius } => Self {
                kind: ModelKindName::Sphere,
                l_max: model.l_max(),
                lattice: None,
                radius: (*radius != 1.0).then_some(*radius),
            },
            SurfaceKind::FlatTorus { lattice } => Self {
                kind: ModelKindName::Torus,
                l_max: model.l_max(),
                lattice: Some(*lattice),
                radius: None,
            },
        }
    }
}

/// `square`, `rect2`, `equilateral`, or four comma-separated numbers
/// `a,b,c,d` for the lattice rows `(a, b)` and `(c, d)`.
pub fn parse_lattice(s: &str) -> Result<[[f64; 2]; 2]> {
    let named = match s.trim() {
        "square" => Some(SurfaceKind::square_torus()),
        "rect2" => Some(SurfaceKind::rectangular_torus()),
        "equilateral" => Some(SurfaceKind::equilateral_torus()),
        _ => None,
    };
    if let Some(SurfaceKind::FlatTorus { lattice }) = named {
        return Ok(lattice);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("cannot parse lattice {s:?}")))?;
    match v.as_slice() {
        &[a, b, c, d] => Ok([[a, b], [c, d]]),
        _ => Err(Error::InvalidInput(format!("lattice needs four numbers, got {}", v.len()))),
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn potential_to_json(phi: &KahlerPotential) -> Result<String> {
    Ok(serde_json::to_string(phi.coeffs.as_slice())?)
}

/// Parse a potential and check its length against `model`.
pub fn potential_from_json(model: &SurfaceModel, s: &str) -> Result<KahlerPotential> {
    let v: Vec<f64> = serde_json::from_str(s)?;
    if v.len() != model.dim() - 1 {
        return Err(Error::LengthMismatch {
            expected: model.dim() - 1,
            got: v.len(),
        });
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite coefficient {bad}")));
    }
    Ok(KahlerPotential::from_vec(v))
}

pub fn read_potential(model: &SurfaceModel, path: &Path) -> Result<KahlerPotential> {
    potential_from_json(model, &read_to_string(path)?)
}

pub fn write_potential(path: &Path, phi: &KahlerPotential) -> Result<()> {
    write_json(path, phi.coeffs.as_slice())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub trusted_below: f64,
}

impl SpectrumReport {
    pub fn new(spec: &SpectralData, tol: f64) -> Self {
        Self {
            eigenvalues: spec.eigenvalues.clone(),
            clusters: cluster_summaries(spec, tol),
            trusted_below: spec.trusted_below,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub verdict: Verdict,
    /// Only the necessary condition is established (cluster is not `λ_1`).
    pub necessary_only: bool,
    pub k: usize,
    pub lambda: f64,
    pub cluster_dim: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub inconclusive: bool,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    /// Model-basis coefficients of the extracted functions.
    pub functions: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_margin: Option<f64>,
    pub iterations: usize,
}

impl CertificateReport {
    pub fn new(cluster: &EigenspaceCluster, cert: &ExtremalityCertificate) -> Self {
        Self {
            verdict: cert.verdict,
            necessary_only: !cert.sufficient,
            k: cluster.k,
            lambda: cluster.lambda,
            cluster_dim: cluster.dim(),
            residual: cert.residual,
            tolerance: cert.tolerance,
            inconclusive: cert.inconclusive,
            b: cert.b.row_iter().map(|r| r.iter().copied().collect()).collect(),
            functions: model_functions(cluster, cert)
                .iter()
                .map(|f| f.as_slice().to_vec())
                .collect(),
            witness: cert.witness.as_ref().map(|w| w.as_slice().to_vec()),
            witness_margin: cert.witness_margin,
            iterations: cert.iterations,
        }
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub const HISTORY_HEADER: [&str; 4] = ["step", "lambda1_area", "step_size", "cluster_dim"];
pub const SPECTRUM_HEADER: [&str; 4] = ["index", "eigenvalue", "cluster_id", "trusted"];

/// Flow history; an empty history gives a header-only file.
pub fn write_history_csv<W: Write>(w: W, history: &[HistoryEntry]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(HISTORY_HEADER)?;
    for h in history {
        out.write_record([
            h.step.to_string(),
            h.lambda1_area.to_string(),
            h.step_size.to_string(),
            h.cluster_dim.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per eigenvalue. `cluster_id` is 0 for the constant, then counts
/// resolved clusters; `-1` marks eigenvalues outside any resolved cluster.
pub fn write_spectrum_csv<W: Write>(w: W, spec: &SpectralData, tol: f64) -> Result<()> {
    let mut ids = vec![-1i64; spec.len()];
    if !ids.is_empty() {
        ids[0] = 0;
    }
    for (c, s) in cluster_summaries(spec, tol).iter().enumerate() {
        for id in &mut ids[s.k..s.k + s.dim] {
            *id = c as i64 + 1;
        }
    }
    let mut out = csv_writer(w);
    out.write_record(SPECTRUM_HEADER)?;
    for (i, (l, id)) in spec.eigenvalues.iter().zip(&ids).enumerate() {
        out.write_record([
            i.to_string(),
            l.to_string(),
            id.to_string(),
            spec.is_trusted(i).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Coefficients as a plain vector, for JSON.
pub fn coeffs(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}
