//! Synthetic groups with piecewise-constant loss rates, so the routed risk of
//! any threshold policy is known in closed form, plus repeated-trial
//! experiments that measure coverage, efficiency, and test-set violations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    route, Action, Assigner, CalibrationTarget, GroupKey, Mode, RoutingPolicy, Threshold,
};
use crate::clustering::{calibrate, ClusterConfig, Grouping};
use crate::data::ResolvedRecord;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::rng::{child_seed, substream};

const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCosts {
    pub thinking: u64,
    pub cheap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub weight: f64,
    /// Bin edges, starting at 0 and ending at 1.
    pub breakpoints: Vec<f64>,
    /// Loss probability inside each bin.
    pub loss_prob: Vec<f64>,
    /// Probability of each bin. Defaults to the bin widths (uniform scores).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_mass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenCosts>,
}

impl GroupSpec {
    pub fn bins(&self) -> usize {
        self.breakpoints.len().saturating_sub(1)
    }

    pub fn masses(&self) -> Vec<f64> {
        match &self.bin_mass {
            Some(m) => m.clone(),
            None => self.breakpoints.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(format!("group {:?}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Spec("group name must be non-empty".into()));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return fail(format!("weight {} outside (0, 1]", self.weight));
        }
        let bp = &self.breakpoints;
        if bp.len() < 2 || bp[0] != 0.0 || bp[bp.len() - 1] != 1.0 {
            return fail("breakpoints must start at 0 and end at 1".into());
        }
        if bp.iter().any(|x| x.is_nan()) || bp.windows(2).any(|w| w[0] >= w[1]) {
            return fail("breakpoints must be strictly ascending".into());
        }
        if self.loss_prob.len() != self.bins() {
            return fail(format!(
                "{} loss probabilities for {} bins",
                self.loss_prob.len(),
                self.bins()
            ));
        }
        if self.loss_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("loss probabilities must lie in [0, 1]".into());
        }
        if let Some(mass) = &self.bin_mass {
            if mass.len() != self.bins() {
                return fail(format!(
                    "{} bin masses for {} bins",
                    mass.len(),
                    self.bins()
                ));
            }
            if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return fail("bin masses must be nonnegative".into());
            }
            if (mass.iter().sum::<f64>() - 1.0).abs() > MASS_TOLERANCE {
                return fail("bin masses must sum to 1".into());
            }
        }
        Ok(())
    }

    /// Probability that a score from this group falls in `[a, b]`, and the
    /// expected loss carried by that event.
    fn mass_and_loss(&self, a: f64, b: f64) -> (f64, f64) {
        let mut mass = 0.0;
        let mut loss = 0.0;
        if b <= a {
            return (0.0, 0.0);
        }
        for ((w, p), m) in self
            .breakpoints
            .windows(2)
            .zip(&self.loss_prob)
            .zip(self.masses())
        {
            let overlap = (b.min(w[1]) - a.max(w[0])).max(0.0) / (w[1] - w[0]);
            mass += m * overlap;
            loss += m * p * overlap;
        }
        (mass, loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub groups: Vec<GroupSpec>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Spec("at least one group is required".into()));
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            g.validate()?;
            if !names.insert(g.name.as_str()) {
                return Err(Error::Spec(format!("duplicate group name {:?}", g.name)));
            }
        }
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Spec(format!("group weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Group names in sorted order, as label assigners list them.
    pub fn labels(&self) -> Vec<String> {
        let names: BTreeSet<&str> = self.groups.iter().map(|g| g.name.as_str()).collect();
        names.into_iter().map(str::to_owned).collect()
    }
}

/// Expected routed loss `E[loss * 1{U <= u}]` within group `group`.
pub fn true_risk(spec: &SyntheticSpec, group: usize, u: f64) -> f64 {
    spec.groups[group].mass_and_loss(f64::NEG_INFINITY, u).1
}

/// Probability that a score in group `group` is at most `u`.
pub fn cheap_probability(spec: &SyntheticSpec, group: usize, u: f64) -> f64 {
    spec.groups[group].mass_and_loss(f64::NEG_INFINITY, u).0
}

fn draw_from<R: Rng + ?Sized>(
    group: &GroupSpec,
    bins: &WeightedIndex<f64>,
    id: String,
    rng: &mut R,
) -> ResolvedRecord {
    let b = bins.sample(rng);
    let (lo, hi) = (group.breakpoints[b], group.breakpoints[b + 1]);
    let u = lo + (hi - lo) * rng.gen::<f64>();
    let loss = if rng.gen::<f64>() < group.loss_prob[b] {
        1.0
    } else {
        0.0
    };
    let rec = ResolvedRecord::new(id, u, loss).with_group(group.name.clone());
    match group.tokens {
        Some(t) => rec.with_tokens(t.thinking, t.cheap),
        None => rec,
    }
}

fn bin_sampler(group: &GroupSpec) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(group.masses())
        .map_err(|e| Error::Spec(format!("group {:?}: {e}", group.name)))
}

/// Draws `n` labeled records from the mixture.
pub fn generate<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ResolvedRecord>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::input("sample size must be at least 1"));
    }
    let groups = WeightedIndex::new(spec.groups.iter().map(|g| g.weight))
        .map_err(|e| Error::Spec(e.to_string()))?;
    let bins = spec
        .groups
        .iter()
        .map(bin_sampler)
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|i| {
            let j = groups.sample(rng);
            draw_from(&spec.groups[j], &bins[j], format!("r{i}"), rng)
        })
        .collect())
}

/// Draws `n` records from group `group` alone.
pub fn generate_group<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    group: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ResolvedRecord>> {
    spec.validate()?;
    let g = spec
        .groups
        .get(group)
        .ok_or_else(|| Error::input(format!("no group with index {group}")))?;
    let bins = bin_sampler(g)?;
    Ok((0..n)
        .map(|i| draw_from(g, &bins, format!("{}-{i}", g.name), rng))
        .collect())
}

/// Score intervals `[a, b]` that a policy sends to the cheap model, for
/// inputs of the named true group.
fn cheap_intervals(policy: &RoutingPolicy, group: &str) -> Vec<(f64, f64)> {
    let by_group = policy.thresholds_by_group();
    let below = |key: &GroupKey, lo: f64, hi: f64| match by_group.get(key) {
        Some(Threshold::Value(t)) if *t >= lo => Some((lo, t.min(hi))),
        _ => None,
    };
    match &policy.assigner {
        Assigner::Trivial | Assigner::Labels(_) => policy
            .assigner
            .resolve(Some(group), 0.0)
            .and_then(|k| below(&k, f64::NEG_INFINITY, f64::INFINITY))
            .into_iter()
            .collect(),
        Assigner::Partition(p) => (0..p.k())
            .filter_map(|i| {
                let (lo, hi) = learned_interval(p.boundaries(), i);
                below(&GroupKey::Cluster(i), lo, hi)
            })
            .collect(),
    }
}

fn learned_interval(boundaries: &[f64], i: usize) -> (f64, f64) {
    let lo = if i == 0 {
        f64::NEG_INFINITY
    } else {
        boundaries[i - 1]
    };
    let hi = boundaries.get(i).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

/// Exact performance of a policy on the synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    /// Routed risk per policy group: true groups for marginal and labeled
    /// policies, learned groups for partition policies.
    pub risk: BTreeMap<GroupKey, f64>,
    /// Probability of routing to the cheap model, over the whole mixture.
    pub efficiency: f64,
}

pub fn policy_outcome(spec: &SyntheticSpec, policy: &RoutingPolicy) -> PolicyOutcome {
    let per_group: Vec<(f64, f64)> = spec
        .groups
        .iter()
        .map(|g| {
            cheap_intervals(policy, &g.name)
                .into_iter()
                .map(|(a, b)| g.mass_and_loss(a, b))
                .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
        })
        .collect();
    let efficiency = spec
        .groups
        .iter()
        .zip(&per_group)
        .map(|(g, (mass, _))| g.weight * mass)
        .sum();

    let risk = match &policy.assigner {
        Assigner::Partition(p) => {
            let by_group = policy.thresholds_by_group();
            (0..p.k())
                .map(|i| {
                    let (lo, hi) = learned_interval(p.boundaries(), i);
                    let cut = match by_group.get(&GroupKey::Cluster(i)) {
                        Some(Threshold::Value(t)) => t.min(hi),
                        _ => f64::NEG_INFINITY,
                    };
                    let (mass, loss) = spec.groups.iter().fold((0.0, 0.0), |acc, g| {
                        let m = g.mass_and_loss(lo, hi).0;
                        let l = g.mass_and_loss(lo, cut).1;
                        (acc.0 + g.weight * m, acc.1 + g.weight * l)
                    });
                    let r = if mass > 0.0 { loss / mass } else { 0.0 };
                    (GroupKey::Cluster(i), r)
                })
                .collect()
        }
        _ => spec
            .groups
            .iter()
            .zip(&per_group)
            .map(|(g, (_, loss))| (GroupKey::from(g.name.as_str()), *loss))
            .collect(),
    };
    PolicyOutcome { risk, efficiency }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMethod {
    Marginal,
    Gpac,
    Cpac,
}

impl From<SimMethod> for Mode {
    fn from(m: SimMethod) -> Mode {
        match m {
            SimMethod::Marginal => Mode::Marginal,
            SimMethod::Gpac => Mode::Gpac,
            SimMethod::Cpac => Mode::Cpac,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: SimMethod,
    /// Calibration records per trial, over all groups.
    pub n_cal: usize,
    pub trials: usize,
    pub target: CalibrationTarget,
    pub estimator: EstimatorConfig,
    /// Required for `SimMethod::Cpac`.
    pub cluster: Option<ClusterConfig>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(
        method: SimMethod,
        n_cal: usize,
        trials: usize,
        target: CalibrationTarget,
        estimator: EstimatorConfig,
    ) -> Self {
        let seed = estimator.seed;
        ExperimentConfig {
            method,
            n_cal,
            trials,
            target,
            estimator,
            cluster: None,
            seed,
        }
    }

    pub fn with_cluster(mut self, cluster: ClusterConfig) -> Self {
        self.cluster = Some(cluster);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("at least one trial is required"));
        }
        if self.n_cal == 0 {
            return Err(Error::config("calibration size must be at least 1"));
        }
        if self.method == SimMethod::Cpac && self.cluster.is_none() {
            return Err(Error::config(
                "learned grouping needs a cluster configuration",
            ));
        }
        self.target.validate()?;
        self.estimator.validate()
    }

    fn grouping(&self, spec: &SyntheticSpec, trial_seed: u64) -> Grouping {
        match self.method {
            SimMethod::Marginal => Grouping::Marginal,
            SimMethod::Gpac => Grouping::Labels(spec.labels()),
            SimMethod::Cpac => {
                let mut cluster = self.cluster.expect("validated");
                cluster.seed = child_seed(trial_seed, "cluster");
                Grouping::Learned(cluster)
            }
        }
    }
}

/// Calibrates on a fresh synthetic sample for trial `trial`.
pub fn calibrate_trial(
    spec: &SyntheticSpec,
    config: &ExperimentConfig,
    trial: usize,
) -> Result<RoutingPolicy> {
    let trial_seed = child_seed(config.seed, &format!("trial:{trial}"));
    let records = generate(
        spec,
        config.n_cal,
        &mut substream(trial_seed, "calibration-data"),
    )?;
    let estimator = EstimatorConfig {
        seed: trial_seed,
        ..config.estimator.clone()
    };
    let grouping = config.grouping(spec, trial_seed);
    Ok(calibrate(&records, &grouping, &config.target, &estimator)?.policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub method: SimMethod,
    pub epsilon: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub trials: usize,
    /// Fraction of trials whose exact group risk is at most epsilon.
    pub per_group_coverage: BTreeMap<GroupKey, f64>,
    pub per_group_mean_risk: BTreeMap<GroupKey, f64>,
    /// Mean probability of routing to the cheap model.
    pub efficiency: f64,
}

impl CoverageReport {
    pub fn min_coverage(&self) -> f64 {
        self.per_group_coverage
            .values()
            .copied()
            .fold(1.0, f64::min)
    }
}

/// Repeats calibration on fresh samples and scores each resulting policy
/// against the exact population risk.
pub fn coverage_experiment(
    spec: &SyntheticSpec,
    config: &ExperimentConfig,
) -> Result<CoverageReport> {
    spec.validate()?;
    config.validate()?;
    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|t| calibrate_trial(spec, config, t).map(|p| policy_outcome(spec, &p)))
        .collect::<Result<Vec<_>>>()?;

    let eps = config.target.epsilon;
    let trials = outcomes.len() as f64;
    let mut covered: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut risk_sum: BTreeMap<GroupKey, f64> = BTreeMap::new();
    for o in &outcomes {
        for (k, r) in &o.risk {
            *covered.entry(k.clone()).or_default() += usize::from(*r <= eps);
            *risk_sum.entry(k.clone()).or_default() += r;
        }
    }
    Ok(CoverageReport {
        method: config.method,
        epsilon: eps,
        alpha: config.estimator.alpha,
        n_cal: config.n_cal,
        trials: outcomes.len(),
        per_group_coverage: covered
            .into_iter()
            .map(|(k, c)| (k, c as f64 / trials))
            .collect(),
        per_group_mean_risk: risk_sum.into_iter().map(|(k, s)| (k, s / trials)).collect(),
        efficiency: outcomes.iter().map(|o| o.efficiency).sum::<f64>() / trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRate {
    pub margin: f64,
    /// Fraction of trials with test-set group error above `epsilon + margin`.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRiskReport {
    pub epsilon: f64,
    pub n_test: usize,
    pub trials: usize,
    pub per_group: BTreeMap<GroupKey, Vec<ViolationRate>>,
}

/// Calibrates as in [`coverage_experiment`], then draws `n_test` fresh records
/// from every true group and measures how often the empirical routed error
/// exceeds `epsilon + margin`.
pub fn test_risk_experiment(
    spec: &SyntheticSpec,
    config: &ExperimentConfig,
    n_test: usize,
    margins: &[f64],
) -> Result<TestRiskReport> {
    spec.validate()?;
    config.validate()?;
    if n_test == 0 {
        return Err(Error::config("test size must be at least 1"));
    }
    let eps = config.target.epsilon;
    let errors = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let policy = calibrate_trial(spec, config, t)?;
            let seed = child_seed(config.seed, &format!("trial:{t}"));
            spec.groups
                .iter()
                .enumerate()
                .map(|(j, g)| {
                    let mut rng = substream(seed, &format!("test:{}", g.name));
                    let test = generate_group(spec, j, n_test, &mut rng)?;
                    let routed: f64 = test
                        .iter()
                        .map(|r| {
                            let cheap = route(&policy, r.group_label.as_deref(), r.uncertainty)?
                                .action
                                == Action::Cheap;
                            Ok(if cheap { r.loss } else { 0.0 })
                        })
                        .sum::<Result<f64>>()?;
                    Ok(routed / n_test as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let per_group = spec
        .groups
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let rates = margins
                .iter()
                .map(|&margin| {
                    let violations = errors.iter().filter(|e| e[j] > eps + margin).count();
                    ViolationRate {
                        margin,
                        rate: violations as f64 / errors.len() as f64,
                    }
                })
                .collect();
            (GroupKey::from(g.name.as_str()), rates)
        })
        .collect();
    Ok(TestRiskReport {
        epsilon: eps,
        n_test,
        trials: errors.len(),
        per_group,
    })
}
