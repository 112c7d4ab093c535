//! Controller bundle files.
//!
//! A bundle file is a JSON object:
//!
//! | field | content |
//! |---|---|
//! | `format` | always `"dpo-mpc-bundle"` |
//! | `version` | always `1` |
//! | `n_x`, `n_u` | state and input dimensions |
//! | `sigma` | terminal level `σ` |
//! | `k` | gains `K[mode][controller rule]`, `n_u × n_x` |
//! | `p` | terminal shapes `P[mode][plant rule]`, `n_x × n_x` |
//! | `a_pred`, `c_pred` | perturbation dynamics `𝒜` and output `𝒞` per mode and controller rule |
//! | `l`, `m`, `e`, `f` | prediction-stage blocks `L`, `M` and the factors with `E Fᵀ = M − L` |
//! | `big_p`, `big_p_inv` | augmented shape `𝒫` and its inverse, `2n_x × 2n_x` |
//! | `psi_xx`, `psi_eta` | diagonal blocks of the cost bound `Ψ` |
//! | `provenance` | stage reports, options and condition numbers of `G` |
//!
//! Matrices are nested arrays of rows. Per-mode, per-rule collections are
//! indexed `[mode][rule]`, both starting at the first mode and rule.
//! Non-finite numbers are written as the strings `"inf"`, `"-inf"`, `"nan"`.

use std::path::Path;

use dpo_mpc_core::synthesis::{Coupling, Provenance, Stage, StageReport};
use dpo_mpc_core::{ControllerBundle, Mat};
use serde::{Deserialize, Serialize};

use crate::real::{floats, matrix_in, matrix_out, reals, vector_in, vector_out, Real};

pub const BUNDLE_FORMAT: &str = "dpo-mpc-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse bundle: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a bundle file (format {found:?}, version {version})")]
    Format { found: String, version: u32 },
    #[error("malformed bundle: {0}")]
    Shape(String),
}

type Grid = Vec<Vec<Vec<Vec<Real>>>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleDoc {
    format: String,
    version: u32,
    n_x: usize,
    n_u: usize,
    sigma: Real,
    k: Grid,
    p: Grid,
    a_pred: Grid,
    c_pred: Grid,
    l: Grid,
    m: Grid,
    e: Grid,
    f: Grid,
    big_p: Grid,
    big_p_inv: Grid,
    psi_xx: Grid,
    psi_eta: Grid,
    provenance: ProvenanceDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    stages: Vec<StageDoc>,
    margin: Real,
    prediction_margin: Real,
    coupling: String,
    mode_robust: bool,
    anchors: Vec<Vec<Real>>,
    feas_tol: Real,
    duality_tol: Real,
    max_iters: usize,
    g_cond: Vec<Vec<Real>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    stage: String,
    objective: Real,
    worst_violation: Real,
    iterations: usize,
    unknowns: usize,
    constraints: usize,
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Terminal => "terminal",
        Stage::Prediction => "prediction",
        Stage::Cost => "cost",
    }
}

fn grid_out(g: &[Vec<Mat>]) -> Grid {
    g.iter().map(|rules| rules.iter().map(matrix_out).collect()).collect()
}

fn grid_in(what: &str, g: &Grid) -> Result<Vec<Vec<Mat>>, BundleError> {
    g.iter()
        .enumerate()
        .map(|(i, rules)| {
            rules
                .iter()
                .enumerate()
                .map(|(h, m)| matrix_in(&format!("{what}[{}][{}]", i + 1, h + 1), m).map_err(BundleError::Shape))
                .collect()
        })
        .collect()
}

fn doc_of(b: &ControllerBundle) -> BundleDoc {
    let p = &b.provenance;
    BundleDoc {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        n_x: b.n_x,
        n_u: b.n_u,
        sigma: Real(b.sigma),
        k: grid_out(&b.k),
        p: grid_out(&b.p),
        a_pred: grid_out(&b.a_pred),
        c_pred: grid_out(&b.c_pred),
        l: grid_out(&b.l),
        m: grid_out(&b.m),
        e: grid_out(&b.e),
        f: grid_out(&b.f),
        big_p: grid_out(&b.big_p),
        big_p_inv: grid_out(&b.big_p_inv),
        psi_xx: grid_out(&b.psi_xx),
        psi_eta: grid_out(&b.psi_eta),
        provenance: ProvenanceDoc {
            stages: p
                .stages
                .iter()
                .map(|s| StageDoc {
                    stage: stage_name(s.stage).into(),
                    objective: Real(s.objective),
                    worst_violation: Real(s.worst_violation),
                    iterations: s.iterations,
                    unknowns: s.unknowns,
                    constraints: s.constraints,
                })
                .collect(),
            margin: Real(p.margin),
            prediction_margin: Real(p.prediction_margin),
            coupling: match p.coupling {
                Coupling::Consistent => "consistent",
                Coupling::Independent => "independent",
            }
            .into(),
            mode_robust: p.mode_robust,
            anchors: p.anchors.iter().map(vector_out).collect(),
            feas_tol: Real(p.feas_tol),
            duality_tol: Real(p.duality_tol),
            max_iters: p.max_iters,
            g_cond: p.g_cond.iter().map(|r| reals(r)).collect(),
        },
    }
}

fn bundle_of(d: BundleDoc) -> Result<ControllerBundle, BundleError> {
    if d.format != BUNDLE_FORMAT || d.version != BUNDLE_VERSION {
        return Err(BundleError::Format { found: d.format, version: d.version });
    }
    let p = d.provenance;
    let stages = p
        .stages
        .into_iter()
        .map(|s| {
            let stage = match s.stage.as_str() {
                "terminal" => Stage::Terminal,
                "prediction" => Stage::Prediction,
                "cost" => Stage::Cost,
                other => return Err(BundleError::Shape(format!("unknown stage {other:?}"))),
            };
            Ok(StageReport {
                stage,
                objective: s.objective.0,
                worst_violation: s.worst_violation.0,
                iterations: s.iterations,
                unknowns: s.unknowns,
                constraints: s.constraints,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let coupling = match p.coupling.as_str() {
        "consistent" => Coupling::Consistent,
        "independent" => Coupling::Independent,
        other => return Err(BundleError::Shape(format!("unknown coupling {other:?}"))),
    };
    Ok(ControllerBundle {
        n_x: d.n_x,
        n_u: d.n_u,
        k: grid_in("k", &d.k)?,
        p: grid_in("p", &d.p)?,
        sigma: d.sigma.0,
        a_pred: grid_in("a_pred", &d.a_pred)?,
        c_pred: grid_in("c_pred", &d.c_pred)?,
        l: grid_in("l", &d.l)?,
        m: grid_in("m", &d.m)?,
        e: grid_in("e", &d.e)?,
        f: grid_in("f", &d.f)?,
        big_p: grid_in("big_p", &d.big_p)?,
        big_p_inv: grid_in("big_p_inv", &d.big_p_inv)?,
        psi_xx: grid_in("psi_xx", &d.psi_xx)?,
        psi_eta: grid_in("psi_eta", &d.psi_eta)?,
        provenance: Provenance {
            stages,
            margin: p.margin.0,
            prediction_margin: p.prediction_margin.0,
            coupling,
            mode_robust: p.mode_robust,
            anchors: p.anchors.iter().map(|a| vector_in(a)).collect(),
            feas_tol: p.feas_tol.0,
            duality_tol: p.duality_tol.0,
            max_iters: p.max_iters,
            g_cond: p.g_cond.iter().map(|r| floats(r)).collect(),
        },
    })
}

pub fn to_json(bundle: &ControllerBundle) -> String {
    let mut text = serde_json::to_string_pretty(&doc_of(bundle)).expect("bundle documents always serialize");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<ControllerBundle, BundleError> {
    bundle_of(serde_json::from_str(text)?)
}

pub fn write(path: &Path, bundle: &ControllerBundle) -> Result<(), BundleError> {
    std::fs::write(path, to_json(bundle)).map_err(|source| BundleError::Io { path: path.display().to_string(), source })
}

pub fn read(path: &Path) -> Result<ControllerBundle, BundleError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}
