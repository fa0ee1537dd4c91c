//! Weighted influence networks.
//!
//! An [`InfluenceNetwork`] is a row-stochastic `n × n` matrix: row `i` holds
//! the weights agent `i` places on every agent, itself included. The diagonal
//! entry is the agent's self-weight (stubbornness). Repeated averaging with
//! such a matrix converges, when the network is ergodic, to a weighted
//! average of the initial estimates whose weights are the left fixed vector
//! of the matrix; that vector is the asymptotic [`CentralityProfile`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statkit;

/// Maximum row-sum deviation accepted (and silently renormalized) on input.
pub const INPUT_TOLERANCE: f64 = 1e-9;
/// Tolerance for invariants that hold after construction.
pub const INVARIANT_TOLERANCE: f64 = 1e-12;

const POWER_ITERATION_TOL: f64 = 1e-13;
const POWER_ITERATION_MAX: usize = 100_000;

/// Row-stochastic influence matrix with self-loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkJson", into = "NetworkJson")]
pub struct InfluenceNetwork {
    n: usize,
    // row-major, n * n
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    n: usize,
    weights: Vec<Vec<f64>>,
}

impl TryFrom<NetworkJson> for InfluenceNetwork {
    type Error = Error;

    fn try_from(value: NetworkJson) -> Result<Self> {
        if value.weights.len() != value.n {
            return Err(Error::LengthMismatch {
                expected: value.n,
                got: value.weights.len(),
            });
        }
        build_network(&value.weights)
    }
}

impl From<InfluenceNetwork> for NetworkJson {
    fn from(net: InfluenceNetwork) -> Self {
        NetworkJson {
            n: net.n,
            weights: net.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl InfluenceNetwork {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.weight(i, i)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.n)
    }

    /// Agents permuted so that new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<InfluenceNetwork> {
        if perm.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: perm.len(),
            });
        }
        let n = self.n;
        let mut weights = vec![0.0; n * n];
        for (a, &i) in perm.iter().enumerate() {
            for (b, &j) in perm.iter().enumerate() {
                weights[a * n + b] = self.weight(i, j);
            }
        }
        Ok(InfluenceNetwork { n, weights })
    }

    /// Whether repeated averaging reaches consensus from every start.
    ///
    /// Holds when the positive-entry graph has exactly one closed
    /// communicating class and that class is aperiodic. Agents outside the
    /// class (e.g. silent peers nobody listens to) are transient and get zero
    /// asymptotic centrality.
    pub fn is_ergodic(&self) -> bool {
        let n = self.n;
        let reach = self.reachability();
        // agents whose reachable set is contained in their own class are closed
        let mut closed_root = None;
        for i in 0..n {
            let closed = (0..n).all(|j| !reach[i * n + j] || reach[j * n + i]);
            if closed {
                match closed_root {
                    None => closed_root = Some(i),
                    Some(r) => {
                        if !(reach[r * n + i] && reach[i * n + r]) {
                            return false;
                        }
                    }
                }
            }
        }
        match closed_root {
            Some(r) => self.class_period(r, &reach) == 1,
            None => false,
        }
    }

    fn reachability(&self) -> Vec<bool> {
        let n = self.n;
        let mut reach = vec![false; n * n];
        let mut stack = Vec::with_capacity(n);
        for s in 0..n {
            reach[s * n + s] = true;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if self.weight(u, v) > 0.0 && !reach[s * n + v] {
                        reach[s * n + v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        reach
    }

    fn class_period(&self, root: usize, reach: &[bool]) -> usize {
        let n = self.n;
        let in_class = |v: usize| reach[root * n + v] && reach[v * n + root];
        let mut level = vec![usize::MAX; n];
        level[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if self.weight(u, v) > 0.0 && in_class(v) && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut period = 0usize;
        for u in (0..n).filter(|&u| in_class(u)) {
            for v in (0..n).filter(|&v| in_class(v) && self.weight(u, v) > 0.0) {
                let diff = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, diff);
            }
        }
        period
    }

    /// Row vector times matrix: `v W`.
    pub fn left_multiply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, row) in self.rows().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += vi * w;
            }
        }
        out
    }

    /// Matrix times column vector: `W x`.
    pub fn right_multiply(&self, x: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum())
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Validates a dense weight matrix and renormalizes rows that are
/// stochastic up to [`INPUT_TOLERANCE`].
pub fn build_network<R: AsRef<[f64]>>(weights: &[R]) -> Result<InfluenceNetwork> {
    let n = weights.len();
    if n < 2 {
        return Err(Error::TooSmall { min: 2, got: n });
    }
    let mut flat = Vec::with_capacity(n * n);
    for (i, row) in weights.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != n {
            return Err(Error::NotSquare {
                row: i,
                len: row.len(),
                n,
            });
        }
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NegativeWeight {
                    row: i,
                    col: j,
                    value: w,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > INPUT_TOLERANCE {
            return Err(Error::NonStochasticRow { row: i, sum });
        }
        if (sum - 1.0).abs() <= INVARIANT_TOLERANCE {
            flat.extend_from_slice(row);
        } else {
            flat.extend(row.iter().map(|w| w / sum));
        }
    }
    Ok(InfluenceNetwork { n, weights: flat })
}

fn check_unit(name: &'static str, value: f64, allow_one: bool) -> Result<()> {
    let ok = value.is_finite() && value >= 0.0 && (value < 1.0 || (allow_one && value == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::WeightOutOfRange { name, value })
    }
}

/// Star with agent 0 at the center.
///
/// Peripherals put `peripheral_self_weight` on themselves and the rest on the
/// center. The center keeps `center_self_weight` and splits the remainder
/// evenly over the peripherals.
pub fn star_network(
    n: usize,
    peripheral_self_weight: f64,
    center_self_weight: f64,
) -> Result<InfluenceNetwork> {
    if n < 3 {
        return Err(Error::TooSmall { min: 3, got: n });
    }
    check_unit("peripheral_self_weight", peripheral_self_weight, true)?;
    check_unit("center_self_weight", center_self_weight, true)?;
    let mut weights = vec![0.0; n * n];
    let spoke = (1.0 - center_self_weight) / (n - 1) as f64;
    weights[0] = center_self_weight;
    for j in 1..n {
        weights[j] = spoke;
        weights[j * n] = 1.0 - peripheral_self_weight;
        weights[j * n + j] = peripheral_self_weight;
    }
    Ok(InfluenceNetwork { n, weights })
}

/// Everyone keeps `self_weight` and spreads the rest evenly over peers.
pub fn uniform_network(n: usize, self_weight: f64) -> Result<InfluenceNetwork> {
    if n < 2 {
        return Err(Error::TooSmall { min: 2, got: n });
    }
    check_unit("self_weight", self_weight, false)?;
    let peer = (1.0 - self_weight) / (n - 1) as f64;
    let mut weights = vec![peer; n * n];
    for i in 0..n {
        weights[i * n + i] = self_weight;
    }
    Ok(InfluenceNetwork { n, weights })
}

/// Per-agent self-weights with the remainder spread evenly over peers.
///
/// Equal self-weights give [`uniform_network`].
pub fn stubbornness_network(self_weights: &[f64]) -> Result<InfluenceNetwork> {
    let n = self_weights.len();
    if n < 2 {
        return Err(Error::TooSmall { min: 2, got: n });
    }
    for &s in self_weights {
        check_unit("self_weight", s, false)?;
    }
    let mut weights = Vec::with_capacity(n * n);
    for (i, &s) in self_weights.iter().enumerate() {
        let peer = (1.0 - s) / (n - 1) as f64;
        weights.extend((0..n).map(|j| if j == i { s } else { peer }));
    }
    Ok(InfluenceNetwork { n, weights })
}

/// Peer weight proportional to how much each peer talks.
///
/// Agent `i` keeps `self_weight` and distributes the remainder over peers in
/// proportion to their talkativeness. Silent peers receive nothing; an agent
/// whose peers are all silent keeps full weight on itself.
pub fn talkativeness_network(talkativeness: &[f64], self_weight: f64) -> Result<InfluenceNetwork> {
    let n = talkativeness.len();
    if n < 2 {
        return Err(Error::TooSmall { min: 2, got: n });
    }
    check_unit("self_weight", self_weight, false)?;
    for (j, &t) in talkativeness.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::NegativeWeight {
                row: j,
                col: j,
                value: t,
            });
        }
    }
    if talkativeness.iter().all(|&t| t == 0.0) {
        return Err(Error::AllZero);
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut weights[i * n..(i + 1) * n];
        // summed directly rather than total - t_i, which leaves rounding residue
        let peers: f64 = talkativeness
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t)
            .sum();
        if peers == 0.0 {
            row[i] = 1.0;
            continue;
        }
        for (j, w) in row.iter_mut().enumerate() {
            *w = if j == i {
                self_weight
            } else {
                (1.0 - self_weight) * talkativeness[j] / peers
            };
        }
    }
    Ok(InfluenceNetwork { n, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentralityKind {
    OneStep,
    Asymptotic,
}

/// Each agent's share of influence; non-negative, sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityProfile {
    scores: Vec<f64>,
    kind: CentralityKind,
}

impl CentralityProfile {
    /// Wraps raw scores, renormalizing when they sum to one up to
    /// [`INPUT_TOLERANCE`].
    pub fn from_scores(scores: Vec<f64>, kind: CentralityKind) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, &s) in scores.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::NegativeWeight {
                    row: i,
                    col: i,
                    value: s,
                });
            }
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > INPUT_TOLERANCE {
            return Err(Error::NonStochasticRow { row: 0, sum });
        }
        Ok(CentralityProfile {
            scores: scores.into_iter().map(|s| s / sum).collect(),
            kind,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kind(&self) -> CentralityKind {
        self.kind
    }

    /// Index of the most central agent; ties go to the lowest index.
    pub fn top(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// One-step (column sums over `n`) or asymptotic (left fixed vector)
/// centrality.
pub fn centrality(net: &InfluenceNetwork, kind: CentralityKind) -> Result<CentralityProfile> {
    let scores = match kind {
        CentralityKind::OneStep => {
            let inv_n = 1.0 / net.n as f64;
            let ones = vec![inv_n; net.n];
            net.left_multiply(&ones)
        }
        CentralityKind::Asymptotic => stationary_vector(net)?,
    };
    let sum: f64 = scores.iter().sum();
    Ok(CentralityProfile {
        scores: scores.into_iter().map(|s| s / sum).collect(),
        kind,
    })
}

fn stationary_vector(net: &InfluenceNetwork) -> Result<Vec<f64>> {
    if !net.is_ergodic() {
        return Err(Error::NotErgodic);
    }
    let n = net.n;
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..POWER_ITERATION_MAX {
        let mut next = net.left_multiply(&v);
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta <= POWER_ITERATION_TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_ITERATION_MAX,
    })
}

/// Gini coefficient of the centrality scores.
pub fn centralization(profile: &CentralityProfile) -> f64 {
    // scores sum to one, so the all-zero and empty cases cannot occur
    statkit::gini(&profile.scores).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn build_accepts_identity_and_symmetric() {
        let id = build_network(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(id.n(), 2);
        assert!(build_network(&[[0.5, 0.5], [0.5, 0.5]]).is_ok());
    }

    #[test]
    fn build_rejects_bad_rows() {
        assert!(matches!(
            build_network(&[[0.5, 0.4], [0.5, 0.5]]),
            Err(Error::NonStochasticRow { row: 0, .. })
        ));
        assert!(matches!(
            build_network(&[[1.5, -0.5], [0.5, 0.5]]),
            Err(Error::NegativeWeight { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            build_network(&[[1.0]]),
            Err(Error::TooSmall { .. })
        ));
        assert!(matches!(
            build_network(&[vec![1.0, 0.0], vec![1.0]]),
            Err(Error::NotSquare { row: 1, .. })
        ));
    }

    #[test]
    fn build_renormalizes_near_stochastic_rows() {
        let net = build_network(&[[0.5 + 5e-10, 0.5], [0.5, 0.5]]).unwrap();
        let s: f64 = net.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(net.row(0)[0] < 0.5 + 5e-10);
    }

    #[test]
    fn star_rows() {
        let net = star_network(3, 0.5, 0.5).unwrap();
        assert_eq!(net.row(0), &[0.5, 0.25, 0.25]);
        assert_eq!(net.row(1), &[0.5, 0.5, 0.0]);
        assert_eq!(net.row(2), &[0.5, 0.0, 0.5]);
        assert!(matches!(star_network(2, 0.5, 0.5), Err(Error::TooSmall { .. })));
        assert!(matches!(
            star_network(4, 1.2, 0.5),
            Err(Error::WeightOutOfRange { .. })
        ));
    }

    #[test]
    fn star_with_stubborn_peripherals_is_not_ergodic() {
        let net = star_network(3, 1.0, 0.5).unwrap();
        assert_eq!(net.row(1), &[0.0, 1.0, 0.0]);
        assert!(!net.is_ergodic());
        assert_eq!(
            centrality(&net, CentralityKind::Asymptotic),
            Err(Error::NotErgodic)
        );
    }

    #[test]
    fn star_asymptotic_centrality() {
        let net = star_network(3, 0.5, 0.5).unwrap();
        let c = centrality(&net, CentralityKind::Asymptotic).unwrap();
        assert_close(c.scores(), &[0.5, 0.25, 0.25], 1e-12);
        assert_eq!(c.top(), 0);
    }

    #[test]
    fn uniform_construction() {
        let net = uniform_network(4, 0.25).unwrap();
        assert!(net.rows().flatten().all(|&w| w == 0.25));
        let net = uniform_network(2, 0.6).unwrap();
        assert_close(net.row(0), &[0.6, 0.4], 1e-15);
        assert_close(net.row(1), &[0.4, 0.6], 1e-15);
        assert!(matches!(
            uniform_network(3, 1.0),
            Err(Error::WeightOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_centralities_are_flat() {
        let net = uniform_network(5, 0.2).unwrap();
        let a = centrality(&net, CentralityKind::Asymptotic).unwrap();
        let o = centrality(&net, CentralityKind::OneStep).unwrap();
        assert_close(a.scores(), &[0.2; 5], 1e-12);
        assert_close(o.scores(), &[0.2; 5], 1e-15);
        assert_eq!(centralization(&a), centralization(&a));
        assert!(centralization(&a) < 1e-12);
    }

    #[test]
    fn talkativeness_equal_is_uniform() {
        let t = talkativeness_network(&[1.0, 1.0, 1.0], 0.5).unwrap();
        let u = uniform_network(3, 0.5).unwrap();
        for (a, b) in t.rows().flatten().zip(u.rows().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn stubbornness_network_rows() {
        let net = stubbornness_network(&[0.1, 0.5, 0.9]).unwrap();
        assert_close(net.row(0), &[0.1, 0.45, 0.45], 1e-15);
        assert_close(net.row(2), &[0.05, 0.05, 0.9], 1e-15);
        let eq = stubbornness_network(&[0.3; 4]).unwrap();
        assert_eq!(eq, uniform_network(4, 0.3).unwrap());
        // centrality is proportional to 1 / (1 - s)
        let c = centrality(&net, CentralityKind::Asymptotic).unwrap();
        let raw = [1.0 / 0.9, 1.0 / 0.5, 1.0 / 0.1];
        let total: f64 = raw.iter().sum();
        let expect: Vec<f64> = raw.iter().map(|r| r / total).collect();
        assert_close(c.scores(), &expect, 1e-12);
    }

    #[test]
    fn talkativeness_silent_peers() {
        let net = talkativeness_network(&[4.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(net.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(net.row(1), &[0.5, 0.5, 0.0]);
        assert_eq!(net.row(2), &[0.5, 0.0, 0.5]);
        // single closed class {0}: consensus still reached
        assert!(net.is_ergodic());
        let c = centrality(&net, CentralityKind::Asymptotic).unwrap();
        assert_close(c.scores(), &[1.0, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn talkativeness_proportional_split() {
        let net = talkativeness_network(&[2.0, 1.0, 1.0], 0.0).unwrap();
        assert_close(net.row(0), &[0.0, 0.5, 0.5], 1e-15);
        assert_close(net.row(1), &[2.0 / 3.0, 0.0, 1.0 / 3.0], 1e-15);
        assert_close(net.row(2), &[2.0 / 3.0, 1.0 / 3.0, 0.0], 1e-15);
        assert_eq!(talkativeness_network(&[0.0, 0.0], 0.5), Err(Error::AllZero));
    }

    #[test]
    fn identity_is_not_ergodic() {
        let id = build_network(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            centrality(&id, CentralityKind::Asymptotic),
            Err(Error::NotErgodic)
        );
    }

    #[test]
    fn periodic_network_is_not_ergodic() {
        let flip = build_network(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(!flip.is_ergodic());
        let lazy = build_network(&[[0.1, 0.9], [1.0, 0.0]]).unwrap();
        assert!(lazy.is_ergodic());
    }

    #[test]
    fn centralization_of_star_profile() {
        let p = CentralityProfile::from_scores(vec![0.5, 0.25, 0.25], CentralityKind::Asymptotic)
            .unwrap();
        assert!((centralization(&p) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn centralization_approaches_one() {
        let mut last = 0.0;
        for n in [10usize, 100, 1000] {
            let mut scores = vec![0.0; n];
            scores[0] = 1.0;
            let p = CentralityProfile::from_scores(scores, CentralityKind::OneStep).unwrap();
            let g = centralization(&p);
            assert!(g > last && g < 1.0);
            last = g;
        }
        assert!(last > 0.99);
    }

    #[test]
    fn json_round_trip() {
        let net = star_network(4, 0.3, 0.6).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.starts_with("{\"n\":4,\"weights\":[["));
        let back: InfluenceNetwork = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
        let bad = r#"{"n":2,"weights":[[0.5,0.4],[0.5,0.5]]}"#;
        assert!(serde_json::from_str::<InfluenceNetwork>(bad).is_err());
    }
}
