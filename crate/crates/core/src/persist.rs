//! JSON documents for fitted models and simulation truth.
//!
//! Matrices are stored row-major as flat arrays; their shapes follow from the scalar
//! fields of the document. Floats are written in the shortest form that reads back
//! to the identical binary64 value, so a save/load cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{make_raw_basis, OrthoSplineBasis};
use crate::data::TimeMap;
use crate::error::{FafpcaError, Result};
use crate::estimator::{FaFpcaModel, FactorBlock, FitConfig, LoadingMatrix};
use crate::metrics::{SimTruth, TruthEigenfunctions};

pub const MODEL_VERSION: &str = "fafpca-model/1";
pub const TRUTH_VERSION: &str = "fafpca-truth/1";

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(FafpcaError::DimensionMismatch(format!(
            "{what}: expected {rows}x{cols} = {} entries, found {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    theta: Vec<f64>,
    eigvals: Vec<f64>,
    scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    version: String,
    p: usize,
    q: usize,
    #[serde(rename = "K")]
    k: usize,
    n: usize,
    tau_n: usize,
    degree: usize,
    knots: Vec<f64>,
    n_quad: usize,
    transform: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    loading_eigvals: Vec<f64>,
    blocks: Vec<BlockDoc>,
    ridge: f64,
    time_map: TimeMap,
    centers: Vec<f64>,
    var_labels: Vec<String>,
    subject_ids: Vec<String>,
    config: FitConfig,
    seed: Option<u64>,
}

fn basis_from(degree: usize, knots: &[f64], n_quad: usize, transform: &[f64]) -> Result<OrthoSplineBasis> {
    let interior = knots
        .len()
        .checked_sub(2 * (degree + 1))
        .ok_or_else(|| FafpcaError::InvalidArgument("knot vector too short".into()))?;
    let raw = make_raw_basis(degree, interior)?;
    if raw.knots() != knots {
        return Err(FafpcaError::InvalidArgument(
            "stored knots are not a clamped uniform knot vector".into(),
        ));
    }
    let tau = raw.tau_n();
    let t = from_row_major(tau, tau, transform, "transform")?;
    OrthoSplineBasis::from_parts(raw, t, n_quad)
}

impl FaFpcaModel {
    pub fn to_json_writer<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.blocks.first().map_or(0, |b| b.scores.nrows());
        let doc = ModelDoc {
            version: MODEL_VERSION.into(),
            p: self.p(),
            q: self.q(),
            k: self.k(),
            n,
            tau_n: self.tau_n(),
            degree: self.basis.raw().degree(),
            knots: self.basis.raw().knots().to_vec(),
            n_quad: self.basis.n_quad(),
            transform: row_major(self.basis.transform()),
            b: row_major(&self.loadings.b),
            loading_eigvals: self.loadings.eigvals.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    theta: row_major(&b.theta),
                    eigvals: b.eigvals.clone(),
                    scores: row_major(&b.scores),
                })
                .collect(),
            ridge: self.ridge,
            time_map: self.time_map,
            centers: self.centers.clone(),
            var_labels: self.var_labels.clone(),
            subject_ids: self.subject_ids.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_json_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_reader(reader)?;
        if doc.version != MODEL_VERSION {
            return Err(FafpcaError::InvalidArgument(format!(
                "unsupported model version {:?}",
                doc.version
            )));
        }
        let basis = basis_from(doc.degree, &doc.knots, doc.n_quad, &doc.transform)?;
        if basis.tau_n() != doc.tau_n {
            return Err(FafpcaError::DimensionMismatch(format!(
                "tau_n {} does not match the knot vector ({})",
                doc.tau_n,
                basis.tau_n()
            )));
        }
        if doc.blocks.len() != doc.q {
            return Err(FafpcaError::DimensionMismatch(format!(
                "{} blocks for q = {}",
                doc.blocks.len(),
                doc.q
            )));
        }
        if doc.centers.len() != doc.p || doc.var_labels.len() != doc.p {
            return Err(FafpcaError::DimensionMismatch(
                "centers or labels do not have length p".into(),
            ));
        }
        let blocks = doc
            .blocks
            .iter()
            .map(|b| {
                Ok(FactorBlock {
                    theta: from_row_major(doc.k, doc.tau_n, &b.theta, "theta")?,
                    scores: from_row_major(doc.n, doc.k, &b.scores, "scores")?,
                    eigvals: b.eigvals.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FaFpcaModel {
            loadings: LoadingMatrix {
                b: from_row_major(doc.p, doc.q, &doc.b, "B")?,
                eigvals: doc.loading_eigvals,
            },
            basis,
            blocks,
            ridge: doc.ridge,
            time_map: doc.time_map,
            centers: doc.centers,
            var_labels: doc.var_labels,
            subject_ids: doc.subject_ids,
            config: doc.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FafpcaError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.to_json_writer(&mut w)?;
        w.flush().map_err(|e| FafpcaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| FafpcaError::io(path, e))?;
        Self::from_json_reader(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum EigenDoc {
    Trig,
    Spline {
        degree: usize,
        knots: Vec<f64>,
        n_quad: usize,
        transform: Vec<f64>,
        theta: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthDoc {
    version: String,
    n: usize,
    p: usize,
    q: usize,
    #[serde(rename = "K")]
    k: usize,
    sigma: f64,
    time_domain: (f64, f64),
    #[serde(rename = "B0")]
    b0: Vec<f64>,
    zeta0: Vec<f64>,
    eigenfunctions: EigenDoc,
}

impl SimTruth {
    pub fn to_json_writer<W: Write>(&self, writer: W) -> Result<()> {
        let eigenfunctions = match &self.eigenfunctions {
            TruthEigenfunctions::Trig => EigenDoc::Trig,
            TruthEigenfunctions::Spline { basis, theta } => EigenDoc::Spline {
                degree: basis.raw().degree(),
                knots: basis.raw().knots().to_vec(),
                n_quad: basis.n_quad(),
                transform: row_major(basis.transform()),
                theta: theta.iter().map(row_major).collect(),
            },
        };
        let doc = TruthDoc {
            version: TRUTH_VERSION.into(),
            n: self.zeta0.nrows(),
            p: self.b0.nrows(),
            q: self.q(),
            k: self.k,
            sigma: self.sigma,
            time_domain: crate::simulate::DOMAIN,
            b0: row_major(&self.b0),
            zeta0: row_major(&self.zeta0),
            eigenfunctions,
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let doc: TruthDoc = serde_json::from_reader(reader)?;
        if doc.version != TRUTH_VERSION {
            return Err(FafpcaError::InvalidArgument(format!(
                "unsupported truth version {:?}",
                doc.version
            )));
        }
        let eigenfunctions = match doc.eigenfunctions {
            EigenDoc::Trig => TruthEigenfunctions::Trig,
            EigenDoc::Spline {
                degree,
                knots,
                n_quad,
                transform,
                theta,
            } => {
                let basis = basis_from(degree, &knots, n_quad, &transform)?;
                let tau = basis.tau_n();
                let theta = theta
                    .iter()
                    .map(|t| from_row_major(doc.k, tau, t, "theta"))
                    .collect::<Result<Vec<_>>>()?;
                TruthEigenfunctions::Spline { basis, theta }
            }
        };
        Ok(SimTruth {
            b0: from_row_major(doc.p, doc.q, &doc.b0, "B0")?,
            zeta0: from_row_major(doc.n, doc.k * doc.q, &doc.zeta0, "zeta0")?,
            k: doc.k,
            eigenfunctions,
            sigma: doc.sigma,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FafpcaError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.to_json_writer(&mut w)?;
        w.flush().map_err(|e| FafpcaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| FafpcaError::io(path, e))?;
        Self::from_json_reader(std::io::BufReader::new(file))
    }
}
