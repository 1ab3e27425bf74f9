//! `kspec` command line.
//!
//! Exit status: 0 on success, 2 when a precondition fails (bad input,
//! non-positive metric, refused lift), 3 when numerical trust is lost
//! (untrusted cluster, violated identity, insufficient depth), 64 on usage
//! errors. `KSPEC_THREADS` caps the worker pool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kspec::certificate::{certify, polarize, CertifyOptions, DEFAULT_CERT_TOL};
use kspec::einstein::{ke_criterion_numeric, matrix_strings, toric_extremality_test, verify_einstein_identities, AffineFunction, IdentityReport, ToricVerdict};
use kspec::flow::{ascend, FlowOptions, StopReason};
use kspec::io::{parse_lattice, read_json, read_potential, write_history_csv, write_json, write_potential, write_spectrum_csv, CertificateReport, ModelDescriptor, ModelKindName, SpectrumReport};
use kspec::product::{lift_certificate, product_spectrum, AbstractSpectrum, SurfaceFactor};
use kspec::spectral::{cluster, solve_spectrum, DEFAULT_CLUSTER_TOL};
use kspec::variation::{eigenvalue_derivatives, DEFAULT_STEPS};
use kspec::{Error, KahlerPotential, Result, SurfaceModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "kspec", version, about = "Laplace eigenvalue extremality in Kähler classes of surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lowest eigenvalues and their clusters.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of eigenvalues.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Also write the spectrum as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-sided derivatives of a cluster against the Gram spectrum.
    Variation {
        #[command(flatten)]
        model: ModelArgs,
        /// Direction potential (JSON array).
        #[arg(long)]
        direction: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Finite-difference steps, comma separated, decreasing.
        #[arg(long, value_delimiter = ',')]
        h: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extremality certificate for the cluster containing λ_k.
    Certify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Certification threshold relative to the largest ‖L(f_a)‖.
        #[arg(long, default_value_t = DEFAULT_CERT_TOL)]
        tol_cert: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ascend λ_1 from the given potential.
    Maximize {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
        /// Stationarity threshold on the max-min directional derivative.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Directory for history.csv, potential.json and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact sum-of-squares test for affine functions.
    Toric {
        /// JSON list of {"u": [rationals], "lam": rational}.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Product spectrum of two surfaces, optionally lifting a certificate of
    /// the first factor.
    Product {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        second: SecondModelArgs,
        /// Number of product eigenvalues.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Certify λ_1 of the first factor and lift it.
        #[arg(long)]
        lift: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pointwise identities and the sum-of-squares criterion on the unit sphere.
    VerifyIdentities {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// `sphere`, `torus`, or a model descriptor JSON file.
    #[arg(long, default_value = "sphere")]
    model: String,
    #[arg(long, default_value_t = 8)]
    lmax: usize,
    /// Torus lattice: square, rect2, equilateral or a,b,c,d.
    #[arg(long)]
    lattice: Option<String>,
    /// Sphere radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Kähler potential (JSON array); zero when omitted.
    #[arg(long)]
    potential: Option<PathBuf>,
    /// Relative gap that separates clusters.
    #[arg(long, default_value_t = DEFAULT_CLUSTER_TOL)]
    tol_cluster: f64,
}

#[derive(Args, Debug, Clone)]
struct SecondModelArgs {
    #[arg(long, default_value = "sphere")]
    model2: String,
    #[arg(long, default_value_t = 8)]
    lmax2: usize,
    #[arg(long)]
    lattice2: Option<String>,
    #[arg(long)]
    radius2: Option<f64>,
    #[arg(long)]
    potential2: Option<PathBuf>,
}

impl SecondModelArgs {
    fn as_model_args(&self, tol_cluster: f64) -> ModelArgs {
        ModelArgs {
            model: self.model2.clone(),
            lmax: self.lmax2,
            lattice: self.lattice2.clone(),
            radius: self.radius2,
            potential: self.potential2.clone(),
            tol_cluster,
        }
    }
}

impl ModelArgs {
    fn descriptor(&self) -> Result<ModelDescriptor> {
        let kind = match self.model.as_str() {
            "sphere" => ModelKindName::Sphere,
            "torus" => ModelKindName::Torus,
            path => return read_json(Path::new(path)),
        };
        let lattice = match (&kind, &self.lattice) {
            (ModelKindName::Torus, Some(s)) => Some(parse_lattice(s)?),
            (ModelKindName::Torus, None) => Some(parse_lattice("square")?),
            (ModelKindName::Sphere, Some(_)) => {
                return Err(Error::InvalidInput("--lattice applies to tori only".into()))
            }
            (ModelKindName::Sphere, None) => None,
        };
        Ok(ModelDescriptor {
            kind,
            l_max: self.lmax,
            lattice,
            radius: self.radius,
        })
    }

    fn build(&self) -> Result<(SurfaceModel, KahlerPotential)> {
        positive("tol-cluster", self.tol_cluster)?;
        let model = self.descriptor()?.build()?;
        let phi = match &self.potential {
            Some(p) => read_potential(&model, p)?,
            None => KahlerPotential::zero(&model),
        };
        Ok((model, phi))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("--{name} must be positive, got {v}")))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_PRECONDITION
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("KSPEC_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        if n > 0 {
            // A second call in the same process keeps the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Run with process stdout/stderr.
pub fn run<S: AsRef<str>>(argv: &[S]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<S: AsRef<str>>(argv: &[S], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(AsRef::as_ref)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    configure_threads();
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn n_eigs_for(model: &SurfaceModel, k: usize) -> usize {
    model.dim().min(k + 24)
}

#[derive(Serialize)]
struct MaximizeSummary {
    steps: usize,
    stop: StopReason,
    lambda1: f64,
    lambda1_area: f64,
    slope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<Vec<kspec::flow::HistoryEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    potential: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ToricReport {
    verdict: &'static str,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lam: Option<String>,
    only_trivial: bool,
    summary: String,
}

#[derive(Serialize)]
struct LevelReport {
    value: f64,
    multiplicity: usize,
}

#[derive(Serialize)]
struct LiftReport {
    verdict: kspec::certificate::Verdict,
    cluster_dim: usize,
    residual: f64,
    term_residual: f64,
    factor_residual: f64,
    predicted_residual: f64,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ProductReport {
    lambda1: Option<f64>,
    area: f64,
    levels: Vec<LevelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lifted: Option<LiftReport>,
}

#[derive(Serialize)]
struct IdentitiesReport {
    identities: IdentityReport,
    /// Distance of the zero-mean part of Σ f_i² to E_1 for a full basis.
    full_basis_distance: f64,
    /// Same for each basis function alone.
    single_function_distances: Vec<f64>,
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Spectrum { model, n, csv, out: path } => {
            let (m, phi) = model.build()?;
            let spec = solve_spectrum(&m, &phi, n)?;
            if let Some(p) = csv {
                write_spectrum_csv(kspec::io::create(&p)?, &spec, model.tol_cluster)?;
            }
            emit(&SpectrumReport::new(&spec, model.tol_cluster), path.as_deref(), out)
        }
        Command::Variation {
            model,
            direction,
            k,
            h,
            out: path,
        } => {
            let (m, phi) = model.build()?;
            let dir = read_potential(&m, &direction)?;
            let steps = h.unwrap_or_else(|| DEFAULT_STEPS.to_vec());
            for &s in &steps {
                positive("h", s)?;
            }
            let report = eigenvalue_derivatives(&m, &phi, k, &dir, &steps, model.tol_cluster)?;
            emit(&report, path.as_deref(), out)
        }
        Command::Certify {
            model,
            k,
            tol_cert,
            max_iters,
            out: path,
        } => {
            positive("tol-cert", tol_cert)?;
            let (m, phi) = model.build()?;
            let spec = solve_spectrum(&m, &phi, n_eigs_for(&m, k))?;
            let c = cluster(&spec, k, model.tol_cluster)?;
            let opts = CertifyOptions {
                tol_rel: tol_cert,
                tol_abs: None,
                max_iters,
            };
            let cert = certify(&polarize(&m, &c), &opts)?;
            emit(&CertificateReport::new(&c, &cert), path.as_deref(), out)
        }
        Command::Maximize {
            model,
            max_steps,
            tol,
            out: dir,
        } => {
            positive("tol", tol)?;
            let (m, phi) = model.build()?;
            let opts = FlowOptions {
                max_steps,
                tol,
                ..FlowOptions::default()
            };
            let st = ascend(&m, &phi, &opts)?;
            let mut summary = MaximizeSummary {
                steps: st.steps(),
                stop: st.stop,
                lambda1: st.lambda1,
                lambda1_area: st.lambda1_area(),
                slope: st.slope,
                history: None,
                potential: None,
            };
            match dir {
                Some(d) => {
                    fs::create_dir_all(&d)?;
                    write_history_csv(kspec::io::create(&d.join("history.csv"))?, &st.history)?;
                    write_potential(&d.join("potential.json"), &st.phi)?;
                    write_json(&d.join("summary.json"), &summary)?;
                }
                None => {
                    summary.history = Some(st.history.clone());
                    summary.potential = Some(st.phi.coeffs.as_slice().to_vec());
                }
            }
            emit(&summary, None, out)
        }
        Command::Toric { input, out: path } => {
            let fs: Vec<AffineFunction> = read_json(&input)?;
            let verdict = toric_extremality_test(&fs)?;
            let summary = verdict.to_string();
            let report = match verdict {
                ToricVerdict::AffineSum { u, lam, only_trivial } => ToricReport {
                    verdict: "AffineSum",
                    q: None,
                    u: Some(u.iter().map(ToString::to_string).collect()),
                    lam: Some(lam.to_string()),
                    only_trivial,
                    summary,
                },
                ToricVerdict::NotAffine { q } => ToricReport {
                    verdict: "NotAffine",
                    q: Some(matrix_strings(&q)),
                    u: None,
                    lam: None,
                    only_trivial: false,
                    summary,
                },
            };
            emit(&report, path.as_deref(), out)
        }
        Command::Product {
            model,
            second,
            n,
            lift,
            out: path,
        } => {
            let tol = model.tol_cluster;
            let (ma, pa) = model.build()?;
            let (mb, pb) = second.as_model_args(tol).build()?;
            let sa = AbstractSpectrum::from_model(&ma, &pa, ma.dim(), tol)?;
            let sb = AbstractSpectrum::from_model(&mb, &pb, mb.dim(), tol)?;
            let prod = product_spectrum(&sa, &sb, n, tol)?;
            let lifted = if lift {
                let fa = SurfaceFactor::new(ma, &pa, 16, tol)?;
                let fb = SurfaceFactor::new(mb, &pb, 16, tol)?;
                let cert = certify(&polarize(&fa.model, &fa.cluster), &CertifyOptions::default())?;
                if cert.verdict != kspec::certificate::Verdict::CertifiedExtremal {
                    return Err(Error::InvalidInput(format!(
                        "first factor is not certified (residual {:.3e})",
                        cert.residual
                    )));
                }
                let l = lift_certificate(&cert, &fa, &fb, tol)?;
                Some(LiftReport {
                    verdict: l.certificate.verdict,
                    cluster_dim: l.cluster_dim,
                    residual: l.certificate.residual,
                    term_residual: l.term_residual,
                    factor_residual: l.factor_residual,
                    predicted_residual: l.predicted_residual,
                    b: l.certificate.b.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
            } else {
                None
            };
            let report = ProductReport {
                lambda1: prod.lambda1(),
                area: prod.area,
                levels: prod
                    .levels
                    .iter()
                    .map(|l| LevelReport {
                        value: l.value,
                        multiplicity: l.multiplicity,
                    })
                    .collect(),
                lifted,
            };
            emit(&report, path.as_deref(), out)
        }
        Command::VerifyIdentities { model, out: path } => {
            let (m, phi) = model.build()?;
            let spec = solve_spectrum(&m, &phi, n_eigs_for(&m, 1))?;
            let c = cluster(&spec, 1, model.tol_cluster)?;
            let identities = verify_einstein_identities(&m, &c)?;
            let members: Vec<_> = (0..c.dim()).map(|a| c.member(a)).collect();
            let full = ke_criterion_numeric(&m, &c, &members)?.distance;
            let single = members
                .iter()
                .map(|f| ke_criterion_numeric(&m, &c, std::slice::from_ref(f)).map(|r| r.distance))
                .collect::<Result<Vec<_>>>()?;
            let report = IdentitiesReport {
                identities,
                full_basis_distance: full,
                single_function_distances: single,
            };
            emit(&report, path.as_deref(), out)
        }
    }
}
