//! Factor-guided functional principal component analysis.

pub mod basis;
pub mod data;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod persist;
pub mod quadrature;
pub mod selection;
pub mod simulate;
pub mod spectra;

pub use basis::{OrthoSplineBasis, RawSplineBasis};
pub use data::{FunctionalDataset, IngestOptions, SubjectRecord, TimeMap};
pub use error::{FafpcaError, Result};
pub use estimator::{fit, FaFpcaModel, FactorBlock, FitConfig, LoadingMatrix};
pub use metrics::{SimTruth, TruthEigenfunctions};
pub use selection::SelectionReport;
pub use simulate::{ReplicateOptions, ReplicateRow, ScenarioSpec};
pub use spectra::EigenResult;
