//! The two-point reduction of a centralized group and the φ heuristic.
//!
//! A group is reduced to one high-influence member with estimate `H` and
//! `N − 1` low-influence members with mean `L̄`. With centrality `C` for the
//! high-influence member the post-communication mean is `C·H + (1 − C)·L̄`,
//! which moves away from the pre-communication mean by
//! `(C − 1/N)(H − L̄)`. The group improves when that movement points toward
//! the truth and stops short of twice the pre-communication distance.
//!
//! φ is the share of members whose estimate sits strictly on the truth side
//! of the mean. When influence is independent of estimates, φ is the chance
//! that a randomly chosen hub pulls the group toward the truth.

use serde::{Deserialize, Serialize};

use crate::dynamics::mean;
use crate::error::{Error, Result};

const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Two-point reduction of a group around its most influential member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedGroup {
    pub n: usize,
    pub high_estimate: f64,
    pub low_mean: f64,
    pub influence: f64,
    pub truth: f64,
}

impl ReducedGroup {
    pub fn new(n: usize, high_estimate: f64, low_mean: f64, influence: f64, truth: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooSmall { min: 2, got: n });
        }
        let floor = 1.0 / n as f64;
        if !(influence >= floor - BOUNDARY_TOLERANCE && influence <= 1.0 + BOUNDARY_TOLERANCE) {
            return Err(Error::OutOfRange {
                name: "influence",
                value: influence,
            });
        }
        for (name, v) in [("high_estimate", high_estimate), ("low_mean", low_mean), ("truth", truth)] {
            if !v.is_finite() {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        Ok(ReducedGroup {
            n,
            high_estimate,
            low_mean,
            influence,
            truth,
        })
    }

    /// Reduction of a full estimate vector around member `high`.
    pub fn from_estimates(estimates: &[f64], high: usize, influence: f64, truth: f64) -> Result<Self> {
        let n = estimates.len();
        if high >= n {
            return Err(Error::OutOfRange {
                name: "high index",
                value: high as f64,
            });
        }
        if n < 2 {
            return Err(Error::TooSmall { min: 2, got: n });
        }
        let others: f64 = estimates
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != high)
            .map(|(_, x)| x)
            .sum();
        ReducedGroup::new(n, estimates[high], others / (n - 1) as f64, influence, truth)
    }

    pub fn with_influence(self, influence: f64) -> Result<Self> {
        ReducedGroup::new(self.n, self.high_estimate, self.low_mean, influence, self.truth)
    }

    fn floor(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn mu_pre(&self) -> f64 {
        let n = self.n as f64;
        self.high_estimate / n + (n - 1.0) * self.low_mean / n
    }

    /// Whether the hub lies strictly on the truth side of the pre-mean.
    pub fn hub_toward_truth(&self) -> bool {
        let mu = self.mu_pre();
        let toward = (self.high_estimate - mu).signum();
        let truth_side = self.truth - mu;
        truth_side != 0.0 && self.high_estimate != mu && toward == truth_side.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Majority {
    Toward,
    Away,
    Split,
}

impl Majority {
    pub fn as_str(self) -> &'static str {
        match self {
            Majority::Toward => "toward",
            Majority::Away => "away",
            Majority::Split => "split",
        }
    }

    pub fn from_phi(phi: f64) -> Majority {
        if phi > 0.5 {
            Majority::Toward
        } else if phi < 0.5 {
            Majority::Away
        } else {
            Majority::Split
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSummary {
    pub phi: f64,
    pub label: Majority,
    /// True when the truth equals the mean; φ is then 0.5 by convention.
    pub degenerate: bool,
}

/// Share of estimates strictly on the same side of the mean as the truth.
///
/// Estimates exactly at the mean are not counted as on the truth side.
pub fn phi(estimates: &[f64], truth: f64) -> Result<PhiSummary> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mu = mean(estimates);
    if truth == mu {
        return Ok(PhiSummary {
            phi: 0.5,
            label: Majority::Split,
            degenerate: true,
        });
    }
    let truth_above = truth > mu;
    let toward = estimates
        .iter()
        .filter(|&&x| if truth_above { x > mu } else { x < mu })
        .count();
    let phi = toward as f64 / estimates.len() as f64;
    Ok(PhiSummary {
        phi,
        label: Majority::from_phi(phi),
        degenerate: false,
    })
}

/// Pre- and post-communication means of the reduced group.
///
/// `mu_post` is evaluated as `mu_pre + (C − 1/N)(H − L̄)`, algebraically equal
/// to `C·H + (1 − C)·L̄`, so that `C = 1/N` reproduces `mu_pre` bit for bit.
pub fn project_means(g: &ReducedGroup) -> (f64, f64) {
    let mu_pre = g.mu_pre();
    let mu_post = mu_pre + (g.influence - g.floor()) * (g.high_estimate - g.low_mean);
    (mu_pre, mu_post)
}

/// Influence level beyond which the group overshoots the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticalInfluence {
    /// `value` is clamped to `[1/N, 1]`; `unclamped` keeps the raw solution.
    Threshold { value: f64, unclamped: f64 },
    /// The hub pulls away from the truth, so no influence level helps.
    NoImprovementPossible,
}

impl CriticalInfluence {
    /// True when every admissible `C > 1/N` improves the group.
    pub fn improves_for_all(&self) -> bool {
        matches!(self, CriticalInfluence::Threshold { unclamped, .. } if *unclamped >= 1.0)
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            CriticalInfluence::Threshold { value, .. } => Some(*value),
            CriticalInfluence::NoImprovementPossible => None,
        }
    }
}

/// Solves `(C′ − 1/N)(H − L̄) = 2(θ − μ_pre)` for `C′`.
pub fn critical_c(g: &ReducedGroup) -> Result<CriticalInfluence> {
    if g.high_estimate == g.low_mean {
        return Err(Error::DegenerateGroup);
    }
    if !g.hub_toward_truth() {
        return Ok(CriticalInfluence::NoImprovementPossible);
    }
    let floor = g.floor();
    let unclamped = floor + 2.0 * (g.truth - g.mu_pre()) / (g.high_estimate - g.low_mean);
    Ok(CriticalInfluence::Threshold {
        value: unclamped.clamp(floor, 1.0),
        unclamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Improves,
    Worsens,
    Boundary,
}

/// Reduced-model prediction of whether the group improves at its influence
/// level `C`.
pub fn predict_outcome(g: &ReducedGroup) -> Result<Prediction> {
    let critical = critical_c(g)?;
    if (g.influence - g.floor()).abs() <= BOUNDARY_TOLERANCE {
        return Ok(Prediction::Boundary);
    }
    Ok(match critical {
        CriticalInfluence::NoImprovementPossible => Prediction::Worsens,
        CriticalInfluence::Threshold { unclamped, .. } => {
            if (g.influence - unclamped).abs() <= BOUNDARY_TOLERANCE {
                Prediction::Boundary
            } else if g.influence < unclamped {
                Prediction::Improves
            } else {
                Prediction::Worsens
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaDirection {
    OmegaToC,
    CToOmega,
}

/// Converts between centralization `ω` and hub centrality
/// `C = 1/N + (N − 1)/N · ω`.
pub fn omega_c_convert(n: usize, value: f64, direction: OmegaDirection) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooSmall { min: 2, got: n });
    }
    let nf = n as f64;
    let floor = 1.0 / nf;
    let slope = (nf - 1.0) / nf;
    match direction {
        OmegaDirection::OmegaToC => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { name: "omega", value });
            }
            Ok(floor + slope * value)
        }
        OmegaDirection::CToOmega => {
            if !(value >= floor - BOUNDARY_TOLERANCE && value <= 1.0) {
                return Err(Error::OutOfRange { name: "influence", value });
            }
            Ok(((value - floor) / slope).max(0.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiPrediction {
    ExpectImprove,
    ExpectWorsen,
    NoPrediction,
}

/// Centralized groups improve in expectation when φ > ½ and worsen when φ < ½.
pub fn phi_rule(summary: &PhiSummary) -> PhiPrediction {
    if summary.degenerate {
        return PhiPrediction::NoPrediction;
    }
    match summary.label {
        Majority::Toward => PhiPrediction::ExpectImprove,
        Majority::Away => PhiPrediction::ExpectWorsen,
        Majority::Split => PhiPrediction::NoPrediction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(c: f64, theta: f64) -> ReducedGroup {
        ReducedGroup::new(5, 10.0, 2.0, c, theta).unwrap()
    }

    #[test]
    fn phi_examples() {
        let s = phi(&[1.0, 2.0, 3.0, 4.0, 10.0], 3.0).unwrap();
        assert_eq!(s.phi, 0.6);
        assert_eq!(s.label, Majority::Toward);
        assert!(!s.degenerate);

        let s = phi(&[1.0, 3.0], 2.0).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.phi, 0.5);
        assert_eq!(s.label, Majority::Split);

        let s = phi(&[2.0, 2.0, 2.0, 10.0], 1.0).unwrap();
        assert_eq!(s.phi, 0.75);
        assert_eq!(s.label, Majority::Toward);

        assert_eq!(phi(&[], 1.0), Err(Error::EmptyInput));
    }

    #[test]
    fn phi_excludes_estimates_at_the_mean() {
        // mean 2; the middle estimate is on neither side
        let s = phi(&[1.0, 2.0, 3.0], 5.0).unwrap();
        assert!((s.phi - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.label, Majority::Away);
    }

    #[test]
    fn project_means_examples() {
        let (pre, post) = project_means(&group(0.2, 5.0));
        assert_eq!(pre, post);
        assert!((pre - 3.6).abs() < 1e-12);
        let (_, post) = project_means(&group(1.0, 5.0));
        assert!((post - 10.0).abs() < 1e-12);
        let (_, post) = project_means(&group(0.5, 5.0));
        assert!((post - 6.0).abs() < 1e-12);
    }

    #[test]
    fn critical_c_examples() {
        match critical_c(&group(0.3, 5.0)).unwrap() {
            CriticalInfluence::Threshold { value, unclamped } => {
                assert!((value - 0.55).abs() < 1e-12);
                assert_eq!(value, unclamped);
                let (pre, post) = project_means(&group(value, 5.0));
                assert!((post - 6.4).abs() < 1e-12);
                assert!(((post - 5.0).abs() - (pre - 5.0).abs()).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            critical_c(&group(0.3, 2.0)).unwrap(),
            CriticalInfluence::NoImprovementPossible
        );
        let c = critical_c(&group(0.3, 10.0)).unwrap();
        match c {
            CriticalInfluence::Threshold { value, unclamped } => {
                assert_eq!(value, 1.0);
                assert!((unclamped - 1.8).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(c.improves_for_all());
        let degenerate = ReducedGroup::new(5, 2.0, 2.0, 0.3, 4.0).unwrap();
        assert_eq!(critical_c(&degenerate), Err(Error::DegenerateGroup));
    }

    #[test]
    fn truth_at_pre_mean_allows_no_improvement() {
        assert_eq!(
            critical_c(&group(0.5, 3.6)).unwrap(),
            CriticalInfluence::NoImprovementPossible
        );
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_outcome(&group(0.4, 5.0)).unwrap(), Prediction::Improves);
        assert_eq!(predict_outcome(&group(0.7, 5.0)).unwrap(), Prediction::Worsens);
        for c in [0.21, 0.5, 0.9, 1.0] {
            assert_eq!(predict_outcome(&group(c, 2.0)).unwrap(), Prediction::Worsens);
        }
        assert_eq!(predict_outcome(&group(0.2, 5.0)).unwrap(), Prediction::Boundary);
        assert_eq!(predict_outcome(&group(0.55, 5.0)).unwrap(), Prediction::Boundary);
        assert_eq!(predict_outcome(&group(1.0, 10.0)).unwrap(), Prediction::Improves);
    }

    #[test]
    fn omega_examples() {
        use OmegaDirection::*;
        assert!((omega_c_convert(5, 0.0, OmegaToC).unwrap() - 0.2).abs() < 1e-15);
        assert!((omega_c_convert(5, 1.0, OmegaToC).unwrap() - 1.0).abs() < 1e-15);
        let c = omega_c_convert(5, 0.5, OmegaToC).unwrap();
        assert!((c - 0.6).abs() < 1e-15);
        assert!((omega_c_convert(5, c, CToOmega).unwrap() - 0.5).abs() < 1e-15);
        assert!(omega_c_convert(5, 1.5, OmegaToC).is_err());
        assert!(omega_c_convert(5, 0.1, CToOmega).is_err());
    }

    #[test]
    fn phi_rule_examples() {
        let mk = |phi: f64| PhiSummary {
            phi,
            label: Majority::from_phi(phi),
            degenerate: false,
        };
        assert_eq!(phi_rule(&mk(0.6)), PhiPrediction::ExpectImprove);
        assert_eq!(phi_rule(&mk(0.36)), PhiPrediction::ExpectWorsen);
        assert_eq!(phi_rule(&mk(0.5)), PhiPrediction::NoPrediction);
        let degenerate = phi(&[1.0, 3.0], 2.0).unwrap();
        assert_eq!(phi_rule(&degenerate), PhiPrediction::NoPrediction);
    }

    #[test]
    fn reduced_group_validation() {
        assert!(ReducedGroup::new(5, 1.0, 2.0, 0.1, 0.0).is_err());
        assert!(ReducedGroup::new(5, 1.0, 2.0, 1.1, 0.0).is_err());
        assert!(ReducedGroup::new(1, 1.0, 2.0, 1.0, 0.0).is_err());
        let g = ReducedGroup::from_estimates(&[10.0, 1.0, 2.0, 3.0], 0, 0.5, 4.0).unwrap();
        assert_eq!(g.low_mean, 2.0);
        assert_eq!(g.high_estimate, 10.0);
    }
}
