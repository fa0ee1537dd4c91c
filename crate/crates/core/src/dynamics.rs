//! Synchronous DeGroot revision and group-error scoring.
//!
//! Every agent sees the round-`k` estimates of everyone else when producing
//! its round-`k + 1` estimate, so one round is a single matrix-vector
//! product `x ← W x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::InfluenceNetwork;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ROUNDS: usize = 1_000_000;

/// Ties in group error closer than this count as unchanged.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Estimates of a group together with the true answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub estimates: Vec<f64>,
    pub truth: f64,
}

impl BeliefState {
    pub fn new(estimates: Vec<f64>, truth: f64) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = estimates.iter().copied().find(|x| !x.is_finite()) {
            return Err(Error::OutOfRange {
                name: "estimate",
                value: bad,
            });
        }
        if !truth.is_finite() {
            return Err(Error::OutOfRange {
                name: "truth",
                value: truth,
            });
        }
        Ok(BeliefState { estimates, truth })
    }

    pub fn mean(&self) -> f64 {
        mean(&self.estimates)
    }
}

/// Estimates after each round; `states[0]` holds the independent estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub rounds: usize,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Consensus reached by [`converge_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub value: f64,
    pub state: Vec<f64>,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Improved,
    Worsened,
    Unchanged,
}

impl Outcome {
    pub fn improved(self) -> bool {
        self == Outcome::Improved
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Improved => "improved",
            Outcome::Worsened => "worsened",
            Outcome::Unchanged => "unchanged",
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_len(net: &InfluenceNetwork, len: usize) -> Result<()> {
    if net.n() != len {
        return Err(Error::LengthMismatch {
            expected: net.n(),
            got: len,
        });
    }
    Ok(())
}

/// One revision round: `W x`.
pub fn step(net: &InfluenceNetwork, estimates: &[f64]) -> Result<Vec<f64>> {
    check_len(net, estimates.len())?;
    Ok(net.right_multiply(estimates))
}

/// Applies `rounds` revisions and keeps every intermediate state.
pub fn run_rounds(net: &InfluenceNetwork, state: &BeliefState, rounds: usize) -> Result<Trajectory> {
    check_len(net, state.estimates.len())?;
    let mut states = Vec::with_capacity(rounds + 1);
    states.push(state.estimates.clone());
    for k in 0..rounds {
        let next = net.right_multiply(&states[k]);
        states.push(next);
    }
    Ok(Trajectory { states, rounds })
}

fn spread(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Iterates until all estimates agree within `tol` and returns the consensus.
pub fn converge(net: &InfluenceNetwork, state: &BeliefState, tol: f64, max_rounds: usize) -> Result<f64> {
    converge_state(net, state, tol, max_rounds).map(|c| c.value)
}

/// Like [`converge`] but also returns the final state and round count.
///
/// The stopping threshold is `tol`, floored at a few ulps of the largest
/// estimate magnitude: below that the spread is rounding noise and cannot
/// shrink further.
pub fn converge_state(
    net: &InfluenceNetwork,
    state: &BeliefState,
    tol: f64,
    max_rounds: usize,
) -> Result<Consensus> {
    check_len(net, state.estimates.len())?;
    let scale = state.estimates.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let threshold = tol.max(8.0 * f64::EPSILON * scale);
    let mut x = state.estimates.clone();
    let (lo, hi) = spread(&x);
    if hi - lo <= threshold {
        return Ok(Consensus {
            value: 0.5 * (lo + hi),
            state: x,
            rounds: 0,
        });
    }
    if !net.is_ergodic() {
        return Err(Error::NotErgodic);
    }
    for round in 1..=max_rounds {
        x = net.right_multiply(&x);
        let (lo, hi) = spread(&x);
        if hi - lo <= threshold {
            return Ok(Consensus {
                value: 0.5 * (lo + hi),
                state: x,
                rounds: round,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_rounds,
    })
}

/// `|mean(estimates) − truth|`.
pub fn group_error(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((mean(estimates) - truth).abs())
}

/// Compares the error of the group mean before and after influence.
pub fn improvement(pre: &[f64], post: &[f64], truth: f64) -> Result<Outcome> {
    let before = group_error(pre, truth)?;
    let after = group_error(post, truth)?;
    Ok(compare_errors(before, after))
}

pub(crate) fn compare_errors(before: f64, after: f64) -> Outcome {
    if (after - before).abs() <= TIE_TOLERANCE {
        Outcome::Unchanged
    } else if after < before {
        Outcome::Improved
    } else {
        Outcome::Worsened
    }
}
