//! Monte-Carlo trials of group estimation under influence.
//!
//! A trial draws independent estimates, builds an influence network for the
//! communication format, runs the revision dynamics and scores the change in
//! the accuracy of the group mean.
//!
//! * **Delphi** (numeric exchange): everyone weighs peers evenly; influence
//!   differs only through self-weight. Self-weights lie in a bounded range
//!   and are rank-coupled to each agent's initial error through a Gaussian
//!   copula with correlation `stubbornness_error_rho`.
//! * **Discussion**: peers are weighted by message counts drawn
//!   independently of the estimates, so centralization emerges from
//!   unequal talkativeness. Runs to consensus by default.
//! * **Star** influence (either condition): one hub chosen uniformly at
//!   random gets centrality `C` drawn strictly between `1/N` and the
//!   overshoot threshold `C′`.
//!
//! Each trial owns two ChaCha streams derived from its seed, one for
//! estimates and one for influence, so varying influence parameters with a
//! fixed seed keeps the estimate draws identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, BeliefState, Outcome};
use crate::error::{Error, Result};
use crate::heuristic::{self, CriticalInfluence, Majority, ReducedGroup};
use crate::netcore::{self, CentralityKind, InfluenceNetwork};
use crate::statkit::{self, ProportionTestResult};

/// Message counts are `round(MESSAGES_PER_UNIT · t)` for a talkativeness draw `t`.
pub const MESSAGES_PER_UNIT: f64 = 10.0;
/// Half-width of the φ window used by the φ-bucket sweep axis.
pub const PHI_BUCKET_HALF_WIDTH: f64 = 0.05;
const STAR_FRACTION: (f64, f64) = (0.05, 0.95);
const STAR_LAZINESS: f64 = 0.5;
const STUB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Delphi,
    Discussion,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Delphi => "delphi",
            Condition::Discussion => "discussion",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "delphi" | "numeric" | "numeric-exchange" => Ok(Condition::Delphi),
            "discussion" => Ok(Condition::Discussion),
            other => Err(Error::Schema(format!("unknown condition `{other}`"))),
        }
    }
}

/// Generator for independent estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimateDistribution {
    LogNormal { mu: f64, sigma: f64 },
    Normal { mu: f64, sigma: f64 },
    Empirical { values: Vec<f64> },
}

impl Default for EstimateDistribution {
    fn default() -> Self {
        EstimateDistribution::LogNormal { mu: 0.0, sigma: 1.0 }
    }
}

fn parse_params(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::BadDistributionParams(format!("`{s}` is not a number")))
        })
        .collect()
}

fn two_params(name: &str, params: &[f64]) -> Result<(f64, f64)> {
    match params {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::BadDistributionParams(format!(
            "{name} takes two parameters, got {}",
            params.len()
        ))),
    }
}

impl std::str::FromStr for EstimateDistribution {
    type Err = Error;

    /// `lognormal:MU,SIGMA`, `normal:MU,SIGMA` or `empirical:V1,V2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = parse_params(rest)?;
        let dist = match kind.trim().to_ascii_lowercase().as_str() {
            "lognormal" => {
                let (mu, sigma) = two_params("lognormal", &params)?;
                EstimateDistribution::LogNormal { mu, sigma }
            }
            "normal" => {
                let (mu, sigma) = two_params("normal", &params)?;
                EstimateDistribution::Normal { mu, sigma }
            }
            "empirical" => EstimateDistribution::Empirical { values: params },
            other => {
                return Err(Error::BadDistributionParams(format!(
                    "unknown distribution `{other}`"
                )))
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

fn check_location_scale(mu: f64, sigma: f64) -> Result<()> {
    if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::BadDistributionParams(format!(
            "need finite mu and sigma >= 0, got ({mu}, {sigma})"
        )));
    }
    Ok(())
}

impl EstimateDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            EstimateDistribution::LogNormal { mu, sigma }
            | EstimateDistribution::Normal { mu, sigma } => check_location_scale(*mu, *sigma),
            EstimateDistribution::Empirical { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    Err(Error::BadDistributionParams(
                        "empirical distribution needs finite values".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self {
            EstimateDistribution::LogNormal { mu, sigma } => {
                let d = LogNormal::new(*mu, *sigma)
                    .map_err(|e| Error::BadDistributionParams(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            EstimateDistribution::Normal { mu, sigma } => {
                let d = Normal::new(*mu, *sigma)
                    .map_err(|e| Error::BadDistributionParams(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            EstimateDistribution::Empirical { values } => (0..n)
                .map(|_| values[rng.random_range(0..values.len())])
                .collect(),
        })
    }
}

/// Generator for per-agent talkativeness in discussion trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TalkativenessDistribution {
    LogNormal { mu: f64, sigma: f64 },
    Constant { value: f64 },
}

impl Default for TalkativenessDistribution {
    fn default() -> Self {
        TalkativenessDistribution::LogNormal { mu: 0.0, sigma: 1.0 }
    }
}

impl std::str::FromStr for TalkativenessDistribution {
    type Err = Error;

    /// `lognormal:MU,SIGMA` or `constant:VALUE`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = parse_params(rest)?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "lognormal" => {
                let (mu, sigma) = two_params("lognormal", &params)?;
                check_location_scale(mu, sigma)?;
                Ok(TalkativenessDistribution::LogNormal { mu, sigma })
            }
            "constant" => match params.as_slice() {
                [v] if v.is_finite() && *v > 0.0 => Ok(TalkativenessDistribution::Constant { value: *v }),
                _ => Err(Error::BadDistributionParams(
                    "constant talkativeness needs one positive value".into(),
                )),
            },
            other => Err(Error::BadDistributionParams(format!(
                "unknown talkativeness distribution `{other}`"
            ))),
        }
    }
}

impl TalkativenessDistribution {
    fn messages<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<u32>> {
        let raw: Vec<f64> = match self {
            TalkativenessDistribution::LogNormal { mu, sigma } => {
                check_location_scale(*mu, *sigma)?;
                let d = LogNormal::new(*mu, *sigma)
                    .map_err(|e| Error::BadDistributionParams(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            TalkativenessDistribution::Constant { value } => vec![*value; n],
        };
        Ok(raw
            .into_iter()
            .map(|t| (MESSAGES_PER_UNIT * t).round().min(u32::MAX as f64) as u32)
            .collect())
    }
}

/// How influence weights are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfluenceModel {
    /// Stubbornness for delphi, talkativeness for discussion.
    #[default]
    Emergent,
    /// A random hub with centrality strictly below the overshoot threshold.
    Star,
}

impl std::str::FromStr for InfluenceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "emergent" => Ok(InfluenceModel::Emergent),
            "star" => Ok(InfluenceModel::Star),
            other => Err(Error::Schema(format!("unknown influence model `{other}`"))),
        }
    }
}

/// Parameters of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub group_size: usize,
    pub condition: Condition,
    pub estimates: EstimateDistribution,
    pub truth: f64,
    /// Revision rounds; `None` runs to consensus. Delphi defaults to 4.
    pub rounds: Option<usize>,
    pub stubbornness_error_rho: f64,
    /// Bounds of delphi self-weights. Equal bounds give equal self-weights.
    pub stubbornness_range: (f64, f64),
    pub talkativeness: TalkativenessDistribution,
    /// Self-weight used by discussion networks.
    pub self_weight: f64,
    pub influence: InfluenceModel,
    pub seed: u64,
}

impl TrialSpec {
    pub fn delphi() -> Self {
        TrialSpec {
            group_size: 20,
            condition: Condition::Delphi,
            estimates: EstimateDistribution::default(),
            truth: 1.0,
            rounds: Some(4),
            stubbornness_error_rho: 0.0,
            stubbornness_range: (0.1, 0.9),
            talkativeness: TalkativenessDistribution::default(),
            self_weight: 0.5,
            influence: InfluenceModel::Emergent,
            seed: 0,
        }
    }

    pub fn discussion() -> Self {
        TrialSpec {
            condition: Condition::Discussion,
            rounds: None,
            ..TrialSpec::delphi()
        }
    }

    pub fn for_condition(condition: Condition) -> Self {
        match condition {
            Condition::Delphi => TrialSpec::delphi(),
            Condition::Discussion => TrialSpec::discussion(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::TooSmall { min: 2, got: self.group_size });
        }
        if self.condition == Condition::Delphi && self.rounds == Some(0) {
            return Err(Error::OutOfRange { name: "rounds", value: 0.0 });
        }
        if !self.truth.is_finite() {
            return Err(Error::OutOfRange { name: "truth", value: self.truth });
        }
        if !(-1.0..=1.0).contains(&self.stubbornness_error_rho) {
            return Err(Error::OutOfRange {
                name: "stubbornness_error_rho",
                value: self.stubbornness_error_rho,
            });
        }
        let (lo, hi) = self.stubbornness_range;
        if !(lo >= 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::BadDistributionParams(format!(
                "stubbornness range ({lo}, {hi}) must satisfy 0 <= lo <= hi < 1"
            )));
        }
        if !(0.0..1.0).contains(&self.self_weight) {
            return Err(Error::WeightOutOfRange { name: "self_weight", value: self.self_weight });
        }
        self.estimates.validate()
    }
}

/// Everything recorded about one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Position in the ensemble (0 for a lone trial).
    pub trial: usize,
    pub seed: u64,
    pub condition: Condition,
    pub truth: f64,
    pub pre_estimates: Vec<f64>,
    pub post_estimates: Vec<f64>,
    /// Every revision state; the first is `pre_estimates`, the last `post_estimates`.
    pub trajectory: Vec<Vec<f64>>,
    pub phi: f64,
    pub majority: Majority,
    pub phi_degenerate: bool,
    pub outcome: Outcome,
    pub centrality: Vec<f64>,
    pub gini_influence: f64,
    pub top_influencer: usize,
    pub top_influencer_toward: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stubbornness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub messages: Option<Vec<u32>>,
}

impl TrialRecord {
    /// True when every agent but the top one has the same centrality.
    pub fn is_star_profile(&self, tol: f64) -> bool {
        let top = self.top_influencer;
        let mut others = self
            .centrality
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &c)| c);
        let Some(first) = others.next() else { return true };
        others.all(|c| (c - first).abs() <= tol)
    }

    /// Reduced model centred on the most central agent.
    pub fn reduced_group(&self) -> Result<ReducedGroup> {
        let c = self.centrality[self.top_influencer].max(1.0 / self.centrality.len() as f64);
        ReducedGroup::from_estimates(&self.pre_estimates, self.top_influencer, c.min(1.0), self.truth)
    }
}

/// Influence assignment for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Influence {
    pub network: InfluenceNetwork,
    pub stubbornness: Option<Vec<f64>>,
    pub messages: Option<Vec<u32>>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// SplitMix64 finalizer applied to `base_seed + index`.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed.wrapping_add(index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `group_size` independent estimates.
pub fn sample_estimates<R: Rng + ?Sized>(spec: &TrialSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.estimates.draw(spec.group_size, rng)
}

/// Self-weights in `range` whose ranks follow a Gaussian copula with
/// correlation `rho` against the ranks of `errors`.
fn coupled_stubbornness<R: Rng + ?Sized>(errors: &[f64], rho: f64, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let n = errors.len();
    let (lo, hi) = range;
    if hi - lo <= STUB_TOL {
        return vec![lo; n];
    }
    let ranks = statkit::average_ranks(errors);
    let noise_scale = (1.0 - rho * rho).max(0.0).sqrt();
    let latent: Vec<f64> = ranks
        .iter()
        .map(|&r| {
            let score = statkit::normal_quantile((r - 0.5) / n as f64);
            let z: f64 = StandardNormal.sample(rng);
            rho * score + noise_scale * z
        })
        .collect();
    let latent_ranks = statkit::average_ranks(&latent);
    latent_ranks
        .into_iter()
        .map(|r| lo + (hi - lo) * (r - 1.0) / (n - 1) as f64)
        .collect()
}

/// Star network with `hub` at centrality `c`.
///
/// Peripherals keep `1 − λc` and the hub keeps `1 − λ(1 − c)`, which puts
/// the hub's share of the left fixed vector at exactly `c`.
fn star_with_centrality(n: usize, hub: usize, c: f64) -> Result<InfluenceNetwork> {
    let peripheral_self = 1.0 - STAR_LAZINESS * c;
    let center_self = 1.0 - STAR_LAZINESS * (1.0 - c);
    let star = netcore::star_network(n, peripheral_self, center_self)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.swap(0, hub);
    star.permuted(&perm)
}

/// Builds the influence network for a trial.
pub fn assign_influence<R: Rng + ?Sized>(spec: &TrialSpec, estimates: &[f64], rng: &mut R) -> Result<Influence> {
    let n = estimates.len();
    if spec.influence == InfluenceModel::Star {
        let hub = rng.random_range(0..n);
        let floor = 1.0 / n as f64;
        let ceiling = match ReducedGroup::from_estimates(estimates, hub, floor, spec.truth)
            .and_then(|g| heuristic::critical_c(&g))
        {
            Ok(CriticalInfluence::Threshold { value, .. }) => value,
            Ok(CriticalInfluence::NoImprovementPossible) | Err(Error::DegenerateGroup) => 1.0,
            Err(e) => return Err(e),
        };
        let u = rng.random_range(STAR_FRACTION.0..STAR_FRACTION.1);
        let c = floor + u * (ceiling - floor);
        return Ok(Influence {
            network: star_with_centrality(n, hub, c)?,
            stubbornness: None,
            messages: None,
        });
    }
    match spec.condition {
        Condition::Delphi => {
            let errors: Vec<f64> = estimates.iter().map(|x| (x - spec.truth).abs()).collect();
            let s = coupled_stubbornness(&errors, spec.stubbornness_error_rho, spec.stubbornness_range, rng);
            Ok(Influence {
                network: netcore::stubbornness_network(&s)?,
                stubbornness: Some(s),
                messages: None,
            })
        }
        Condition::Discussion => {
            let messages = spec.talkativeness.messages(n, rng)?;
            let t: Vec<f64> = messages.iter().map(|&m| f64::from(m)).collect();
            Ok(Influence {
                network: netcore::talkativeness_network(&t, spec.self_weight)?,
                stubbornness: None,
                messages: Some(messages),
            })
        }
    }
}

/// Runs the trial described by `spec` with `spec.seed`.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialRecord> {
    run_trial_seeded(spec, spec.seed, 0)
}

fn run_trial_seeded(spec: &TrialSpec, seed: u64, trial: usize) -> Result<TrialRecord> {
    spec.validate()?;
    let mut estimate_rng = stream(seed, 0);
    let mut influence_rng = stream(seed, 1);
    let pre = sample_estimates(spec, &mut estimate_rng)?;
    let influence = assign_influence(spec, &pre, &mut influence_rng)?;
    simulate(spec, pre, influence, seed, trial)
}

/// Runs the dynamics of `spec` on given estimates and influence, skipping
/// the random draws. The record carries `spec.seed`.
pub fn run_trial_with(spec: &TrialSpec, pre: Vec<f64>, influence: Influence) -> Result<TrialRecord> {
    spec.validate()?;
    if pre.len() != spec.group_size || influence.network.n() != spec.group_size {
        return Err(Error::LengthMismatch {
            expected: spec.group_size,
            got: if pre.len() != spec.group_size { pre.len() } else { influence.network.n() },
        });
    }
    simulate(spec, pre, influence, spec.seed, 0)
}

fn simulate(spec: &TrialSpec, pre: Vec<f64>, influence: Influence, seed: u64, trial: usize) -> Result<TrialRecord> {
    let state = BeliefState::new(pre.clone(), spec.truth)?;

    let rounds = match (spec.condition, spec.rounds) {
        (_, Some(r)) => Some(r),
        (Condition::Delphi, None) => Some(4),
        (Condition::Discussion, None) => None,
    };
    let trajectory = match rounds {
        Some(r) => dynamics::run_rounds(&influence.network, &state, r)?.states,
        None => {
            let consensus = dynamics::converge_state(
                &influence.network,
                &state,
                dynamics::DEFAULT_TOLERANCE,
                dynamics::DEFAULT_MAX_ROUNDS,
            )?;
            vec![pre.clone(), consensus.state]
        }
    };
    let post = trajectory.last().cloned().unwrap_or_else(|| pre.clone());

    let summary = heuristic::phi(&pre, spec.truth)?;
    let outcome = dynamics::improvement(&pre, &post, spec.truth)?;
    let profile = netcore::centrality(&influence.network, CentralityKind::Asymptotic)?;
    let top = profile.top();
    let mu = state.mean();
    let top_toward = (pre[top] - mu) != 0.0
        && (spec.truth - mu) != 0.0
        && (pre[top] - mu).signum() == (spec.truth - mu).signum();

    Ok(TrialRecord {
        trial,
        seed,
        condition: spec.condition,
        truth: spec.truth,
        pre_estimates: pre,
        post_estimates: post,
        trajectory,
        phi: summary.phi,
        majority: summary.label,
        phi_degenerate: summary.degenerate,
        outcome,
        gini_influence: netcore::centralization(&profile),
        top_influencer: top,
        top_influencer_toward: top_toward,
        centrality: profile.scores().to_vec(),
        stubbornness: influence.stubbornness,
        messages: influence.messages,
    })
}

/// Revision-implied self-weight: `1 − (post − pre)/(peer_mean − pre)`,
/// clamped to `[0, 1]`. `None` when the peers agree with the agent.
pub fn empirical_stubbornness(pre: f64, post: f64, peer_mean: f64) -> Option<f64> {
    let gap = peer_mean - pre;
    if gap.abs() < STUB_TOL {
        return None;
    }
    Some((1.0 - (post - pre) / gap).clamp(0.0, 1.0))
}

/// Improvement rate of the trials in one majority bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub majority: Majority,
    pub trials: usize,
    pub improved: usize,
    pub proportion: Option<f64>,
    pub mean_phi: Option<f64>,
    /// One-sample test of the improvement rate against 0.5.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<ProportionTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub spec: TrialSpec,
    pub base_seed: u64,
    pub trials: usize,
    pub improved: usize,
    pub worsened: usize,
    pub unchanged: usize,
    pub improvement_proportion: f64,
    /// 95% Clopper–Pearson interval for the improvement proportion.
    pub improvement_ci: (f64, f64),
    pub improvement_test: ProportionTestResult,
    pub mean_phi: f64,
    pub median_gini_influence: f64,
    pub buckets: Vec<BucketSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toward_vs_away: Option<ProportionTestResult>,
    /// Linear-probability slope of improvement on φ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_slope: Option<f64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl EnsembleReport {
    /// Aggregates records; they must be non-empty.
    pub fn from_records(spec: &TrialSpec, base_seed: u64, records: Vec<TrialRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput);
        }
        let trials = records.len();
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let improved = count(Outcome::Improved);
        let buckets: Vec<BucketSummary> = [Majority::Toward, Majority::Away, Majority::Split]
            .into_iter()
            .map(|m| {
                let inside: Vec<&TrialRecord> = records.iter().filter(|r| r.majority == m).collect();
                let k = inside.iter().filter(|r| r.outcome.improved()).count();
                let n = inside.len();
                BucketSummary {
                    majority: m,
                    trials: n,
                    improved: k,
                    proportion: (n > 0).then(|| k as f64 / n as f64),
                    mean_phi: (n > 0).then(|| inside.iter().map(|r| r.phi).sum::<f64>() / n as f64),
                    test: (n > 0).then(|| statkit::proportion_test(k as u64, n as u64, 0.5)).transpose().ok().flatten(),
                }
            })
            .collect();
        let toward_vs_away = match (&buckets[0], &buckets[1]) {
            (t, a) if t.trials > 0 && a.trials > 0 => Some(statkit::proportion_test_2(
                t.improved as u64,
                t.trials as u64,
                a.improved as u64,
                a.trials as u64,
            )?),
            _ => None,
        };
        let phis: Vec<f64> = records.iter().map(|r| r.phi).collect();
        let hits: Vec<f64> = records.iter().map(|r| f64::from(u8::from(r.outcome.improved()))).collect();
        let mut ginis: Vec<f64> = records.iter().map(|r| r.gini_influence).collect();
        Ok(EnsembleReport {
            spec: spec.clone(),
            base_seed,
            trials,
            improved,
            worsened: count(Outcome::Worsened),
            unchanged: count(Outcome::Unchanged),
            improvement_proportion: improved as f64 / trials as f64,
            improvement_ci: statkit::exact_binomial_ci(improved as u64, trials as u64, 0.05)?,
            improvement_test: statkit::proportion_test(improved as u64, trials as u64, 0.5)?,
            mean_phi: phis.iter().sum::<f64>() / trials as f64,
            median_gini_influence: median(&mut ginis),
            buckets,
            toward_vs_away,
            phi_slope: statkit::ols_slope(&phis, &hits).ok(),
            records,
        })
    }

    pub fn bucket(&self, majority: Majority) -> &BucketSummary {
        self.buckets
            .iter()
            .find(|b| b.majority == majority)
            .expect("all three buckets are always present")
    }
}

/// Runs trials `0..trials` of `indices` in parallel, preserving order.
fn run_indices(spec: &TrialSpec, base_seed: u64, indices: std::ops::Range<usize>) -> Result<Vec<TrialRecord>> {
    indices
        .into_par_iter()
        .map(|i| run_trial_seeded(spec, derive_seed(base_seed, i as u64), i))
        .collect()
}

/// Independent trials with seeds derived from `base_seed` and the trial
/// index. The result does not depend on thread count.
pub fn run_ensemble(spec: &TrialSpec, trials: usize, base_seed: u64) -> Result<EnsembleReport> {
    if trials == 0 {
        return Err(Error::TooFew { min: 1, got: 0 });
    }
    spec.validate()?;
    let records = run_indices(spec, base_seed, 0..trials)?;
    EnsembleReport::from_records(spec, base_seed, records)
}

/// Trials whose φ lies within [`PHI_BUCKET_HALF_WIDTH`] of `center`, taken in
/// index order until `trials` are found.
pub fn run_phi_bucket(spec: &TrialSpec, center: f64, trials: usize, base_seed: u64) -> Result<EnsembleReport> {
    if trials == 0 {
        return Err(Error::TooFew { min: 1, got: 0 });
    }
    spec.validate()?;
    let max_attempts = trials.saturating_mul(1000);
    let chunk = trials.max(256);
    let mut kept = Vec::with_capacity(trials);
    let mut next = 0usize;
    while kept.len() < trials {
        if next >= max_attempts {
            return Err(Error::BadDistributionParams(format!(
                "only {} of {trials} trials landed in the phi bucket around {center} after {max_attempts} attempts",
                kept.len()
            )));
        }
        let batch = run_indices(spec, base_seed, next..next + chunk)?;
        next += chunk;
        kept.extend(
            batch
                .into_iter()
                .filter(|r| (r.phi - center).abs() <= PHI_BUCKET_HALF_WIDTH + 1e-9),
        );
    }
    kept.truncate(trials);
    EnsembleReport::from_records(spec, base_seed, kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Level is a φ bucket centre.
    PhiBucket,
    /// Level is the stubbornness–error correlation.
    Rho,
    /// Level is the talkativeness log-sd (discussion) or the stubbornness
    /// spread in `[0, 1]` around 0.5 (delphi).
    Centralization,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "phi_bucket" | "phi" => Ok(SweepAxis::PhiBucket),
            "rho" => Ok(SweepAxis::Rho),
            "centralization" => Ok(SweepAxis::Centralization),
            other => Err(Error::Schema(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PhiBucket => "phi_bucket",
            SweepAxis::Rho => "rho",
            SweepAxis::Centralization => "centralization",
        }
    }

    /// Spec for one level of the sweep.
    pub fn apply(self, template: &TrialSpec, level: f64) -> Result<TrialSpec> {
        let mut spec = template.clone();
        match self {
            SweepAxis::PhiBucket => {}
            SweepAxis::Rho => spec.stubbornness_error_rho = level,
            SweepAxis::Centralization => match spec.condition {
                Condition::Discussion => {
                    if !(level >= 0.0 && level.is_finite()) {
                        return Err(Error::OutOfRange { name: "centralization", value: level });
                    }
                    let mu = match spec.talkativeness {
                        TalkativenessDistribution::LogNormal { mu, .. } => mu,
                        TalkativenessDistribution::Constant { value } => value.ln(),
                    };
                    spec.talkativeness = TalkativenessDistribution::LogNormal { mu, sigma: level };
                }
                Condition::Delphi => {
                    if !(0.0..=1.0).contains(&level) {
                        return Err(Error::OutOfRange { name: "centralization", value: level });
                    }
                    spec.stubbornness_range = (0.5 - 0.4 * level, 0.5 + 0.4 * level);
                }
            },
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub level: f64,
    pub report: EnsembleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub levels: Vec<SweepLevel>,
}

/// One ensemble per level, all sharing `base_seed`.
pub fn sweep(
    template: &TrialSpec,
    axis: SweepAxis,
    levels: &[f64],
    trials: usize,
    base_seed: u64,
) -> Result<SweepResult> {
    if levels.is_empty() {
        return Err(Error::TooFew { min: 1, got: 0 });
    }
    let levels = levels
        .iter()
        .map(|&level| {
            let spec = axis.apply(template, level)?;
            let report = match axis {
                SweepAxis::PhiBucket => run_phi_bucket(&spec, level, trials, base_seed)?,
                _ => run_ensemble(&spec, trials, base_seed)?,
            };
            Ok(SweepLevel { level, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis, levels })
}

impl SweepResult {
    /// Tidy CSV: one row per level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,level,trials,improved,improvement_proportion,ci_low,ci_high,mean_phi,\
             p_improve_toward,p_improve_away,phi_slope,median_gini_influence\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for l in &self.levels {
            let r = &l.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.axis.as_str(),
                l.level,
                r.trials,
                r.improved,
                r.improvement_proportion,
                r.improvement_ci.0,
                r.improvement_ci.1,
                r.mean_phi,
                opt(r.bucket(Majority::Toward).proportion),
                opt(r.bucket(Majority::Away).proportion),
                opt(r.phi_slope),
                r.median_gini_influence,
            ));
        }
        out
    }
}
