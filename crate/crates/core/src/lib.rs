//! Influence dynamics and accuracy analysis for groups producing numeric
//! estimates.
//!
//! * [`netcore`] builds weighted influence networks and their centralities.
//! * [`dynamics`] runs DeGroot revision and scores group error.
//! * [`heuristic`] holds the two-point reduced model and the φ rule.
//! * [`statkit`] provides the statistics used in trial analyses.
//! * [`simlab`] simulates trials and ensembles.
//! * [`pipeline`] ingests long-format trial data and builds reports.

pub mod dynamics;
pub mod error;
pub mod heuristic;
pub mod netcore;
pub mod pipeline;
pub mod simlab;
pub mod statkit;

pub use dynamics::{BeliefState, Outcome, Trajectory};
pub use error::{Error, Result};
pub use heuristic::{CriticalInfluence, Majority, PhiSummary, Prediction, ReducedGroup};
pub use netcore::{CentralityKind, CentralityProfile, InfluenceNetwork};
pub use pipeline::{AnalysisReport, TrialDataset, TrialMetrics};
pub use simlab::{Condition, EnsembleReport, TrialRecord, TrialSpec};
pub use statkit::{LogisticFit, ProportionTestResult};
