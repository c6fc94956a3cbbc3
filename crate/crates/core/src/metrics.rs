//! Test-time metrics: routed error (marginal and per group), the group error
//! gap over repeated trials, and the saved-token fraction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{route, Action, GroupKey, RoutingPolicy};
use crate::data::ResolvedRecord;
use crate::error::{Error, Result};
use crate::rng::{child_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    /// Mean over all records of `loss * 1{cheap}`.
    pub error: f64,
    /// Same mean restricted to each group's records; groups with no records are absent.
    pub per_group_error: BTreeMap<GroupKey, f64>,
    pub n_per_group: BTreeMap<GroupKey, usize>,
    /// Records whose group could not be resolved (routed to the thinking model).
    pub unresolved: usize,
}

fn decisions(
    records: &[ResolvedRecord],
    policy: &RoutingPolicy,
) -> Result<Vec<(Option<GroupKey>, Action)>> {
    records
        .iter()
        .map(|r| {
            route(policy, r.group_label.as_deref(), r.uncertainty).map(|d| (d.group_key, d.action))
        })
        .collect()
}

pub fn trial_error(records: &[ResolvedRecord], policy: &RoutingPolicy) -> Result<TrialError> {
    if records.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let mut sums: BTreeMap<GroupKey, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    let mut unresolved = 0;
    for (rec, (key, action)) in records.iter().zip(decisions(records, policy)?) {
        let routed = if action == Action::Cheap {
            rec.loss
        } else {
            0.0
        };
        total += routed;
        match key {
            Some(k) => {
                let e = sums.entry(k).or_insert((0.0, 0));
                e.0 += routed;
                e.1 += 1;
            }
            None => unresolved += 1,
        }
    }
    Ok(TrialError {
        error: total / records.len() as f64,
        per_group_error: sums
            .iter()
            .map(|(k, (s, n))| (k.clone(), s / *n as f64))
            .collect(),
        n_per_group: sums.into_iter().map(|(k, (_, n))| (k, n)).collect(),
        unresolved,
    })
}

/// Per-group mean over trials. A trial without samples for a group is
/// skipped for that group rather than counted as zero.
pub fn group_means(trials: &[BTreeMap<GroupKey, f64>]) -> BTreeMap<GroupKey, f64> {
    let mut acc: BTreeMap<GroupKey, (f64, usize)> = BTreeMap::new();
    for trial in trials {
        for (k, e) in trial {
            let a = acc.entry(k.clone()).or_insert((0.0, 0));
            a.0 += e;
            a.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Sum over groups of the trial-averaged error's excess over `epsilon`.
pub fn error_gap(trials: &[BTreeMap<GroupKey, f64>], epsilon: f64) -> f64 {
    group_means(trials)
        .values()
        .filter(|&&e| e > epsilon)
        .fold(0.0, |acc, e| acc + (e - epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StpVariant {
    /// The cheap answer is always generated; thinking is paid on top when routed.
    Cascade,
    /// An external router decides first; the cheap model runs only when chosen.
    Router,
}

/// Mean saved-token fraction relative to always thinking. Can be negative.
pub fn stp(records: &[ResolvedRecord], policy: &RoutingPolicy, variant: StpVariant) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let mut total = 0.0;
    for (rec, (_, action)) in records.iter().zip(decisions(records, policy)?) {
        let think = match rec.tokens_thinking {
            Some(t) if t > 0 => t as f64,
            _ => {
                return Err(Error::MissingTokens {
                    id: rec.id.clone(),
                    field: "tokens_thinking",
                })
            }
        };
        let cheap = rec.tokens_cheap.ok_or_else(|| Error::MissingTokens {
            id: rec.id.clone(),
            field: "tokens_cheap",
        })? as f64;
        let spent = match (variant, action) {
            (StpVariant::Cascade, Action::Cheap) => cheap,
            (StpVariant::Cascade, Action::Think) => cheap + think,
            (StpVariant::Router, Action::Cheap) => cheap,
            (StpVariant::Router, Action::Think) => think,
        };
        total += 1.0 - spent / think;
    }
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epsilon: f64,
    pub trials: usize,
    /// Marginal error averaged over trials.
    pub error: f64,
    /// Per-group error averaged over the trials in which the group had samples.
    pub per_group_error: BTreeMap<GroupKey, f64>,
    pub error_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stp_variant: Option<StpVariant>,
    /// Test records per group, summed over trials.
    pub n_per_group: BTreeMap<GroupKey, usize>,
    /// Groups missing from at least one trial's test split.
    pub flagged_groups: Vec<GroupKey>,
    pub unresolved: usize,
}

fn assemble(
    epsilon: f64,
    per_trial: Vec<(TrialError, Option<f64>)>,
    stp_variant: Option<StpVariant>,
    expected_groups: &[GroupKey],
) -> MetricsReport {
    let trials = per_trial.len();
    let group_errors: Vec<BTreeMap<GroupKey, f64>> = per_trial
        .iter()
        .map(|(t, _)| t.per_group_error.clone())
        .collect();
    let mut n_per_group: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for (t, _) in &per_trial {
        for (k, n) in &t.n_per_group {
            *n_per_group.entry(k.clone()).or_default() += n;
        }
    }
    let mut flagged: BTreeSet<GroupKey> = BTreeSet::new();
    for t in &group_errors {
        for g in expected_groups {
            if !t.contains_key(g) {
                flagged.insert(g.clone());
            }
        }
    }
    let stp =
        stp_variant.map(|_| per_trial.iter().filter_map(|(_, s)| *s).sum::<f64>() / trials as f64);
    MetricsReport {
        epsilon,
        trials,
        error: per_trial.iter().map(|(t, _)| t.error).sum::<f64>() / trials as f64,
        per_group_error: group_means(&group_errors),
        error_gap: error_gap(&group_errors, epsilon),
        stp,
        stp_variant,
        n_per_group,
        flagged_groups: flagged.into_iter().collect(),
        unresolved: per_trial.iter().map(|(t, _)| t.unresolved).sum(),
    }
}

/// Single-trial metrics of a fixed policy on a test set.
pub fn evaluate_policy(
    records: &[ResolvedRecord],
    policy: &RoutingPolicy,
    stp_variant: Option<StpVariant>,
) -> Result<MetricsReport> {
    let trial = trial_error(records, policy)?;
    let s = stp_variant.map(|v| stp(records, policy, v)).transpose()?;
    Ok(assemble(
        policy.epsilon,
        vec![(trial, s)],
        stp_variant,
        &policy.assigner.groups(),
    ))
}

/// Repeated random calibration/test splits. Each trial shuffles `records`,
/// calibrates on the first `cal_fraction` with a trial-specific seed, and
/// evaluates on the rest.
pub fn repeated_split<F>(
    records: &[ResolvedRecord],
    cal_fraction: f64,
    trials: usize,
    seed: u64,
    stp_variant: Option<StpVariant>,
    calibrate: F,
) -> Result<MetricsReport>
where
    F: Fn(&[ResolvedRecord], u64) -> Result<RoutingPolicy> + Sync,
{
    if trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::config(format!(
            "calibration fraction {cal_fraction} outside (0, 1)"
        )));
    }
    let n_cal = (cal_fraction * records.len() as f64).floor() as usize;
    if n_cal == 0 || n_cal == records.len() {
        return Err(Error::input(
            "split leaves an empty calibration or test side",
        ));
    }
    let outcomes: Vec<Result<(TrialError, Option<f64>, RoutingPolicy)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut substream(seed, &format!("split:{t}")));
            let cal: Vec<ResolvedRecord> =
                order[..n_cal].iter().map(|&i| records[i].clone()).collect();
            let test: Vec<ResolvedRecord> =
                order[n_cal..].iter().map(|&i| records[i].clone()).collect();
            let policy = calibrate(&cal, child_seed(seed, &format!("calibrate:{t}")))?;
            let trial = trial_error(&test, &policy)?;
            let s = stp_variant.map(|v| stp(&test, &policy, v)).transpose()?;
            Ok((trial, s, policy))
        })
        .collect();
    let mut per_trial = Vec::with_capacity(trials);
    let mut groups: BTreeSet<GroupKey> = BTreeSet::new();
    let mut epsilon = f64::NAN;
    for o in outcomes {
        let (trial, s, policy) = o?;
        groups.extend(policy.assigner.groups());
        epsilon = policy.epsilon;
        per_trial.push((trial, s));
    }
    let groups: Vec<GroupKey> = groups.into_iter().collect();
    Ok(assemble(epsilon, per_trial, stp_variant, &groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{Assigner, GroupThreshold, Mode, Provenance, Threshold};
    use proptest::prelude::*;

    fn policy(groups: &[(&str, Threshold)]) -> RoutingPolicy {
        RoutingPolicy {
            mode: Mode::Gpac,
            epsilon: 0.05,
            alpha: 0.05,
            assigner: Assigner::Labels(groups.iter().map(|(g, _)| g.to_string()).collect()),
            thresholds: groups
                .iter()
                .map(|(g, t)| GroupThreshold {
                    group_key: (*g).into(),
                    threshold: *t,
                    ucb_at_threshold: t.value().map(|_| 0.0),
                    n_calibration: 100,
                })
                .collect(),
            provenance: Provenance {
                config_hash: String::new(),
                seed: 0,
            },
        }
    }

    fn rec(id: &str, group: &str, u: f64, loss: f64) -> ResolvedRecord {
        ResolvedRecord::new(id, u, loss).with_group(group)
    }

    #[test]
    fn all_think_has_zero_error() {
        let p = policy(&[("a", Threshold::AlwaysThink)]);
        let recs = vec![rec("1", "a", 0.1, 1.0), rec("2", "a", 0.2, 1.0)];
        assert_eq!(trial_error(&recs, &p).unwrap().error, 0.0);
    }

    #[test]
    fn marginal_and_group_means() {
        let p = policy(&[("a", Threshold::Value(1.0))]);
        let recs: Vec<_> = [1.0, 0.0, 1.0, 0.0]
            .iter()
            .enumerate()
            .map(|(i, &l)| rec(&i.to_string(), "a", 0.5, l))
            .collect();
        assert_eq!(trial_error(&recs, &p).unwrap().error, 0.5);

        let p = policy(&[("a", Threshold::Value(1.0)), ("b", Threshold::Value(1.0))]);
        let recs = vec![
            rec("1", "a", 0.5, 1.0),
            rec("2", "a", 0.5, 0.0),
            rec("3", "b", 0.5, 0.0),
            rec("4", "b", 0.5, 0.0),
        ];
        let t = trial_error(&recs, &p).unwrap();
        assert_eq!(t.per_group_error[&"a".into()], 0.5);
        assert_eq!(t.per_group_error[&"b".into()], 0.0);
        assert_eq!(t.error, 0.25);
        assert!(trial_error(&[], &p).is_err());
    }

    #[test]
    fn gap_examples() {
        let trial = |vals: &[f64]| -> BTreeMap<GroupKey, f64> {
            vals.iter()
                .enumerate()
                .map(|(i, v)| (GroupKey::Cluster(i), *v))
                .collect()
        };
        assert_eq!(error_gap(&[trial(&[0.03, 0.04])], 0.05), 0.0);
        assert_eq!(error_gap(&[trial(&[0.03, 0.07, 0.10])], 0.05), 0.07);
        assert_eq!(error_gap(&[trial(&[0.05])], 0.05), 0.0);
        assert!(error_gap(&[trial(&[0.01])], 0.05).is_sign_positive());
    }

    #[test]
    fn gap_skips_missing_trials() {
        let t1: BTreeMap<GroupKey, f64> =
            [("a".into(), 0.1), ("b".into(), 0.0)].into_iter().collect();
        let t2: BTreeMap<GroupKey, f64> = [("b".into(), 0.0)].into_iter().collect();
        let means = group_means(&[t1, t2]);
        assert_eq!(means[&"a".into()], 0.1);
    }

    #[test]
    fn stp_examples() {
        let cheap = policy(&[("a", Threshold::Value(1.0))]);
        let think = policy(&[("a", Threshold::AlwaysThink)]);
        let recs = vec![rec("1", "a", 0.5, 0.0).with_tokens(100, 10)];
        for v in [StpVariant::Cascade, StpVariant::Router] {
            assert!((stp(&recs, &cheap, v).unwrap() - 0.9).abs() < 1e-12);
        }
        assert!((stp(&recs, &think, StpVariant::Cascade).unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(stp(&recs, &think, StpVariant::Router).unwrap(), 0.0);

        let no_tokens = vec![rec("1", "a", 0.5, 0.0)];
        assert!(matches!(
            stp(&no_tokens, &cheap, StpVariant::Router),
            Err(Error::MissingTokens { .. })
        ));
        let zero = vec![rec("1", "a", 0.5, 0.0).with_tokens(0, 5)];
        assert!(stp(&zero, &cheap, StpVariant::Router).is_err());
    }

    #[test]
    fn evaluate_flags_absent_groups() {
        let p = policy(&[("a", Threshold::Value(1.0)), ("b", Threshold::Value(1.0))]);
        let recs = vec![rec("1", "a", 0.5, 1.0), rec("2", "x", 0.5, 1.0)];
        let r = evaluate_policy(&recs, &p, None).unwrap();
        assert_eq!(r.flagged_groups, vec![GroupKey::from("b")]);
        assert_eq!(r.unresolved, 1);
        assert_eq!(r.error, 0.5);
        assert_eq!(r.error_gap, 0.95);
    }

    fn fixture() -> impl Strategy<Value = (Vec<ResolvedRecord>, f64, f64)> {
        (
            prop::collection::vec(
                (0usize..3, 0.0f64..=1.0, 0.0f64..=1.0, 1u64..500, 0u64..500),
                1..40,
            ),
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
            .prop_map(|(rows, ta, tb)| {
                let recs = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (g, u, l, lt, lc))| {
                        rec(&i.to_string(), ["a", "b", "c"][g], u, l).with_tokens(lt, lc)
                    })
                    .collect();
                (recs, ta, tb)
            })
    }

    proptest! {
        #[test]
        fn router_never_below_cascade((recs, ta, tb) in fixture()) {
            let p = policy(&[("a", Threshold::Value(ta)), ("b", Threshold::Value(tb))]);
            let r = stp(&recs, &p, StpVariant::Router).unwrap();
            let c = stp(&recs, &p, StpVariant::Cascade).unwrap();
            prop_assert!(r >= c);
        }

        #[test]
        fn marginal_is_weighted_group_mean((recs, ta, tb) in fixture()) {
            let p = policy(&[("a", Threshold::Value(ta)), ("b", Threshold::Value(tb)), ("c", Threshold::AlwaysThink)]);
            let t = trial_error(&recs, &p).unwrap();
            let n = recs.len() as f64;
            let weighted: f64 = t.per_group_error.iter()
                .map(|(k, e)| t.n_per_group[k] as f64 / n * e).sum();
            prop_assert!((t.error - weighted).abs() <= 1e-12);
        }

        #[test]
        fn gap_monotone_in_tolerance(errs in prop::collection::vec(0.0f64..0.3, 1..6), e1 in 0.0f64..0.3, e2 in 0.0f64..0.3) {
            let trial: BTreeMap<GroupKey, f64> = errs.iter().enumerate().map(|(i, v)| (GroupKey::Cluster(i), *v)).collect();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(error_gap(std::slice::from_ref(&trial), hi) <= error_gap(&[trial], lo));
        }
    }
}
