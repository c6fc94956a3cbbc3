//! Per-group threshold selection and the routing policy it produces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::Partition;
use crate::data::ResolvedRecord;
use crate::error::{Error, Result};
use crate::estimator::{estimate_curve, EstimatorConfig, SamplingWeights, UcbCurve};
use crate::rng::{substream, StreamRng};

/// Policy file schema version.
pub const SCHEMA_VERSION: &str = "pac-route/1";

/// Key of the single group used by marginal calibration.
pub const TRIVIAL_GROUP: &str = "all";

/// Minimum group size below which a group always thinks.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupKey {
    Cluster(usize),
    Label(String),
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Cluster(i) => write!(f, "{i}"),
            GroupKey::Label(s) => f.write_str(s),
        }
    }
}

impl From<&str> for GroupKey {
    fn from(s: &str) -> Self {
        GroupKey::Label(s.to_owned())
    }
}

impl From<usize> for GroupKey {
    fn from(i: usize) -> Self {
        GroupKey::Cluster(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Route to the cheap model iff `uncertainty <= value`.
    Value(f64),
    /// No feasible threshold: every input in the group goes to the thinking model.
    AlwaysThink,
}

impl Threshold {
    pub fn value(&self) -> Option<f64> {
        match self {
            Threshold::Value(u) => Some(*u),
            Threshold::AlwaysThink => None,
        }
    }

    pub fn admits(&self, uncertainty: f64) -> bool {
        matches!(self, Threshold::Value(u) if uncertainty <= *u)
    }
}

const ALWAYS_THINK: &str = "always_think";

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Value(u) => s.serialize_f64(*u),
            Threshold::AlwaysThink => s.serialize_str(ALWAYS_THINK),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Value(u) if (0.0..=1.0).contains(&u) => Ok(Threshold::Value(u)),
            Repr::Value(u) => Err(serde::de::Error::custom(format!(
                "threshold {u} outside [0, 1]"
            ))),
            Repr::Tag(t) if t == ALWAYS_THINK => Ok(Threshold::AlwaysThink),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown threshold tag {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThreshold {
    pub group_key: GroupKey,
    pub threshold: Threshold,
    /// Upper bound at the chosen candidate (absent when always thinking).
    #[serde(rename = "ucb")]
    pub ucb_at_threshold: Option<f64>,
    #[serde(rename = "n")]
    pub n_calibration: usize,
}

/// Maps an input to its calibration group.
#[derive(Debug, Clone, PartialEq)]
pub enum Assigner {
    /// One group containing everything (marginal calibration).
    Trivial,
    /// Known labels; inputs carrying any other label are unresolved.
    Labels(Vec<String>),
    /// Learned partition of the uncertainty axis.
    Partition(Partition),
}

impl Assigner {
    /// Label assigner over the distinct labels present in `records`, sorted.
    pub fn labels_from(records: &[ResolvedRecord]) -> Self {
        let labels: BTreeSet<&str> = records
            .iter()
            .filter_map(|r| r.group_label.as_deref())
            .collect();
        Assigner::Labels(labels.into_iter().map(str::to_owned).collect())
    }

    pub fn groups(&self) -> Vec<GroupKey> {
        match self {
            Assigner::Trivial => vec![GroupKey::from(TRIVIAL_GROUP)],
            Assigner::Labels(labels) => labels.iter().map(|l| GroupKey::from(l.as_str())).collect(),
            Assigner::Partition(p) => (0..p.k()).map(GroupKey::Cluster).collect(),
        }
    }

    pub fn resolve(&self, group_hint: Option<&str>, uncertainty: f64) -> Option<GroupKey> {
        match self {
            Assigner::Trivial => Some(GroupKey::from(TRIVIAL_GROUP)),
            Assigner::Labels(labels) => {
                let hint = group_hint?;
                labels
                    .iter()
                    .any(|l| l == hint)
                    .then(|| GroupKey::from(hint))
            }
            Assigner::Partition(p) => Some(GroupKey::Cluster(p.assign(uncertainty))),
        }
    }

    fn mode(&self) -> Mode {
        match self {
            Assigner::Trivial => Mode::Marginal,
            Assigner::Labels(_) => Mode::Gpac,
            Assigner::Partition(_) => Mode::Cpac,
        }
    }

    fn describe(&self) -> String {
        match self {
            Assigner::Trivial => "trivial".into(),
            Assigner::Labels(l) => format!("labels:{}", l.join(",")),
            Assigner::Partition(p) => format!("centroids:{:?}", p.centroids()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Marginal,
    Gpac,
    Cpac,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Marginal => "marginal",
            Mode::Gpac => "gpac",
            Mode::Cpac => "cpac",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Cheap,
    Think,
}

/// Tolerance and fallback rules applied when picking a group's threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub epsilon: f64,
    pub min_group_size: usize,
    /// Added to every upper bound before comparing with `epsilon`.
    pub ucb_slack: f64,
}

impl CalibrationTarget {
    pub fn new(epsilon: f64) -> Self {
        CalibrationTarget {
            epsilon,
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            ucb_slack: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "tolerance {} must be positive",
                self.epsilon
            )));
        }
        if !(self.ucb_slack.is_finite() && self.ucb_slack >= 0.0) {
            return Err(Error::config(format!(
                "slack {} must be nonnegative",
                self.ucb_slack
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingPolicy {
    pub mode: Mode,
    pub epsilon: f64,
    pub alpha: f64,
    pub assigner: Assigner,
    pub thresholds: Vec<GroupThreshold>,
    pub provenance: Provenance,
}

/// Outcome of routing one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub group_key: Option<GroupKey>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub id: String,
    pub group_key: Option<GroupKey>,
    pub action: Action,
}

impl RoutingPolicy {
    /// Action taken for inputs whose group cannot be resolved.
    pub const DEFAULT_ACTION: Action = Action::Think;

    pub fn threshold_for(&self, key: &GroupKey) -> Option<&GroupThreshold> {
        self.thresholds.iter().find(|t| &t.group_key == key)
    }

    pub fn thresholds_by_group(&self) -> BTreeMap<GroupKey, Threshold> {
        self.thresholds
            .iter()
            .map(|t| (t.group_key.clone(), t.threshold))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(&PolicyFile::from(self)).expect("policy serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::input(format!("policy: {e}")))?;
        let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: version.to_owned(),
                expected: SCHEMA_VERSION.to_owned(),
            });
        }
        let file: PolicyFile =
            serde_json::from_value(value).map_err(|e| Error::input(format!("policy: {e}")))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum AssignerRepr {
    Trivial,
    Labels { labels: Vec<String> },
    Centroids { centroids: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: String,
    mode: Mode,
    epsilon: f64,
    alpha: f64,
    seed: u64,
    config_hash: String,
    assigner: AssignerRepr,
    thresholds: Vec<GroupThreshold>,
}

impl From<&RoutingPolicy> for PolicyFile {
    fn from(p: &RoutingPolicy) -> Self {
        PolicyFile {
            version: SCHEMA_VERSION.to_owned(),
            mode: p.mode,
            epsilon: p.epsilon,
            alpha: p.alpha,
            seed: p.provenance.seed,
            config_hash: p.provenance.config_hash.clone(),
            assigner: match &p.assigner {
                Assigner::Trivial => AssignerRepr::Trivial,
                Assigner::Labels(labels) => AssignerRepr::Labels {
                    labels: labels.clone(),
                },
                Assigner::Partition(part) => AssignerRepr::Centroids {
                    centroids: part.centroids().to_vec(),
                },
            },
            thresholds: p.thresholds.clone(),
        }
    }
}

impl TryFrom<PolicyFile> for RoutingPolicy {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        let assigner = match f.assigner {
            AssignerRepr::Trivial => Assigner::Trivial,
            AssignerRepr::Labels { labels } => Assigner::Labels(labels),
            AssignerRepr::Centroids { centroids } => {
                Assigner::Partition(Partition::from_centroids(centroids)?)
            }
        };
        let policy = RoutingPolicy {
            mode: f.mode,
            epsilon: f.epsilon,
            alpha: f.alpha,
            assigner,
            thresholds: f.thresholds,
            provenance: Provenance {
                config_hash: f.config_hash,
                seed: f.seed,
            },
        };
        let groups = policy.assigner.groups();
        let complete = groups.len() == policy.thresholds.len()
            && groups.iter().all(|g| {
                policy
                    .thresholds
                    .iter()
                    .filter(|t| &t.group_key == g)
                    .count()
                    == 1
            });
        if !complete {
            return Err(Error::input(
                "policy thresholds do not match the assigner's groups one-to-one",
            ));
        }
        Ok(policy)
    }
}

/// Routes one input: cheap iff its group resolves, has a real threshold, and
/// `uncertainty <= threshold`.
pub fn route(
    policy: &RoutingPolicy,
    group_hint: Option<&str>,
    uncertainty: f64,
) -> Result<Routing> {
    if !(0.0..=1.0).contains(&uncertainty) {
        return Err(Error::input(format!(
            "uncertainty {uncertainty} outside [0, 1]"
        )));
    }
    let group_key = policy.assigner.resolve(group_hint, uncertainty);
    let action = match group_key.as_ref().and_then(|k| policy.threshold_for(k)) {
        Some(t) if t.threshold.admits(uncertainty) => Action::Cheap,
        Some(_) => Action::Think,
        None => RoutingPolicy::DEFAULT_ACTION,
    };
    Ok(Routing { group_key, action })
}

pub fn route_record(policy: &RoutingPolicy, record: &ResolvedRecord) -> Result<RouteDecision> {
    let r = route(policy, record.group_label.as_deref(), record.uncertainty)?;
    Ok(RouteDecision {
        id: record.id.clone(),
        group_key: r.group_key,
        action: r.action,
    })
}

/// Threshold and (when estimated) bound curve for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCalibration {
    pub threshold: GroupThreshold,
    pub curve: Option<UcbCurve>,
}

/// Selects the largest candidate whose bound stays within tolerance.
pub fn calibrate_group(
    group_key: GroupKey,
    records: &[ResolvedRecord],
    target: &CalibrationTarget,
    config: &EstimatorConfig,
    rng: &mut StreamRng,
) -> Result<GroupCalibration> {
    let n = records.len();
    let always_think = |curve| GroupCalibration {
        threshold: GroupThreshold {
            group_key: group_key.clone(),
            threshold: Threshold::AlwaysThink,
            ucb_at_threshold: None,
            n_calibration: n,
        },
        curve,
    };
    if n == 0 || n < target.min_group_size {
        return Ok(always_think(None));
    }
    let curve = estimate_curve(records, config, rng)?;
    Ok(
        match curve.largest_feasible(target.epsilon, target.ucb_slack) {
            Some(i) => GroupCalibration {
                threshold: GroupThreshold {
                    group_key: group_key.clone(),
                    threshold: Threshold::Value(curve.candidates[i]),
                    ucb_at_threshold: Some(curve.ucb[i] + target.ucb_slack),
                    n_calibration: n,
                },
                curve: Some(curve),
            },
            None => always_think(Some(curve)),
        },
    )
}

/// A calibrated policy plus the per-group detail behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub policy: RoutingPolicy,
    pub curves: BTreeMap<GroupKey, UcbCurve>,
    /// Records whose group could not be resolved and were left out.
    pub excluded: usize,
}

fn config_hash(
    mode: Mode,
    assigner: &Assigner,
    target: &CalibrationTarget,
    config: &EstimatorConfig,
) -> String {
    let weights = match &config.weights {
        SamplingWeights::Uniform(pi) => format!("uniform:{pi:?}"),
        SamplingWeights::PerRecord(map) => {
            let sorted: BTreeMap<_, _> = map.iter().collect();
            format!("per-record:{sorted:?}")
        }
    };
    let canonical = format!(
        "mode={mode};assigner={};epsilon={:?};slack={:?};n_min={};method={};alpha={:?};weights={weights};m={:?};bound={:?};seed={}",
        assigner.describe(),
        target.epsilon,
        target.ucb_slack,
        target.min_group_size,
        config.method,
        config.alpha,
        config.sample_size,
        config.loss_bound,
        config.seed,
    );
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Calibrates one threshold per group of `assigner`. Each group draws from its
/// own substream of `config.seed`, keyed by the group.
pub fn calibrate_gpac(
    records: &[ResolvedRecord],
    assigner: &Assigner,
    target: &CalibrationTarget,
    config: &EstimatorConfig,
) -> Result<Calibration> {
    target.validate()?;
    config.validate()?;

    let groups = assigner.groups();
    let mut members: BTreeMap<GroupKey, Vec<ResolvedRecord>> =
        groups.iter().map(|g| (g.clone(), Vec::new())).collect();
    let mut excluded = 0;
    for rec in records {
        match assigner
            .resolve(rec.group_label.as_deref(), rec.uncertainty)
            .and_then(|k| members.get_mut(&k))
        {
            Some(bucket) => bucket.push(rec.clone()),
            None => excluded += 1,
        }
    }
    if excluded == records.len() {
        return Err(Error::NoResolvableRecords);
    }

    let mut thresholds = Vec::with_capacity(groups.len());
    let mut curves = BTreeMap::new();
    for key in groups {
        let mut rng = substream(config.seed, &format!("group:{key}"));
        let cal = calibrate_group(key.clone(), &members[&key], target, config, &mut rng)?;
        if let Some(curve) = cal.curve {
            curves.insert(key, curve);
        }
        thresholds.push(cal.threshold);
    }

    let mode = assigner.mode();
    Ok(Calibration {
        policy: RoutingPolicy {
            mode,
            epsilon: target.epsilon,
            alpha: config.alpha,
            assigner: assigner.clone(),
            thresholds,
            provenance: Provenance {
                config_hash: config_hash(mode, assigner, target, config),
                seed: config.seed,
            },
        },
        curves,
        excluded,
    })
}

/// Marginal calibration: a single threshold shared by every input.
pub fn calibrate_marginal(
    records: &[ResolvedRecord],
    target: &CalibrationTarget,
    config: &EstimatorConfig,
) -> Result<Calibration> {
    calibrate_gpac(records, &Assigner::Trivial, target, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::UcbMethod;

    fn group(label: &str, n: usize, loss: f64, offset: usize) -> Vec<ResolvedRecord> {
        (0..n)
            .map(|i| {
                ResolvedRecord::new(
                    format!("{label}{}", i + offset),
                    0.4 + 0.6 * (i as f64) / (n as f64),
                    loss,
                )
                .with_group(label)
            })
            .collect()
    }

    fn cfg(method: UcbMethod, pi: f64) -> EstimatorConfig {
        EstimatorConfig::new(method, 0.05, pi, 11)
    }

    #[test]
    fn zero_loss_takes_largest_candidate() {
        let recs = group("a", 100, 0.0, 0);
        let max_u = recs.iter().map(|r| r.uncertainty).fold(0.0, f64::max);
        let cal = calibrate_group(
            "a".into(),
            &recs,
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Clt, 0.5),
            &mut substream(1, "x"),
        )
        .unwrap();
        assert_eq!(cal.threshold.threshold, Threshold::Value(max_u));
        assert_eq!(cal.threshold.ucb_at_threshold, Some(0.0));
    }

    #[test]
    fn unit_loss_falls_back_to_zero_candidate() {
        let recs: Vec<_> = (0..100)
            .map(|i| ResolvedRecord::new(i.to_string(), 0.4, 1.0).with_group("a"))
            .collect();
        let cal = calibrate_group(
            "a".into(),
            &recs,
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Clt, 1.0),
            &mut substream(1, "x"),
        )
        .unwrap();
        assert_eq!(cal.threshold.threshold, Threshold::Value(0.0));
        assert_eq!(cal.threshold.ucb_at_threshold, Some(0.0));
    }

    #[test]
    fn small_or_empty_groups_always_think() {
        let target = CalibrationTarget::new(0.05);
        for n in [0, 9] {
            let cal = calibrate_group(
                "a".into(),
                &group("a", n, 0.0, 0),
                &target,
                &cfg(UcbMethod::Clt, 0.5),
                &mut substream(1, "x"),
            )
            .unwrap();
            assert_eq!(cal.threshold.threshold, Threshold::AlwaysThink);
            assert_eq!(cal.threshold.n_calibration, n);
        }
    }

    #[test]
    fn infeasible_everywhere_always_thinks() {
        // Every record sits at U = 0 with loss 1, so even the 0 candidate fails.
        let recs: Vec<_> = (0..50)
            .map(|i| ResolvedRecord::new(i.to_string(), 0.0, 1.0))
            .collect();
        let cal = calibrate_group(
            "a".into(),
            &recs,
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Clt, 1.0),
            &mut substream(1, "x"),
        )
        .unwrap();
        assert_eq!(cal.threshold.threshold, Threshold::AlwaysThink);
        assert!(cal.curve.is_some());
    }

    #[test]
    fn gpac_two_groups_compose() {
        let mut recs = group("easy", 200, 0.0, 0);
        recs.extend(
            (0..200).map(|i| ResolvedRecord::new(format!("h{i}"), 0.4, 1.0).with_group("hard")),
        );
        let max_u = recs.iter().map(|r| r.uncertainty).fold(0.0, f64::max);
        let cal = calibrate_gpac(
            &recs,
            &Assigner::labels_from(&recs),
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Clt, 1.0),
        )
        .unwrap();
        let by = cal.policy.thresholds_by_group();
        assert_eq!(by[&"easy".into()], Threshold::Value(max_u));
        assert_eq!(by[&"hard".into()], Threshold::Value(0.0));
        assert_eq!(cal.policy.mode, Mode::Gpac);
    }

    #[test]
    fn known_but_empty_group_always_thinks() {
        let recs = group("a", 300, 0.0, 0);
        let assigner = Assigner::Labels(vec!["a".into(), "b".into()]);
        let cal = calibrate_gpac(
            &recs,
            &assigner,
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Clt, 0.5),
        )
        .unwrap();
        let b = cal.policy.threshold_for(&"b".into()).unwrap();
        assert_eq!(b.threshold, Threshold::AlwaysThink);
        assert_eq!(b.n_calibration, 0);
    }

    #[test]
    fn unresolvable_records_are_excluded_or_rejected() {
        let mut recs = group("a", 50, 0.0, 0);
        recs.push(ResolvedRecord::new("nolabel", 0.5, 1.0));
        let target = CalibrationTarget::new(0.05);
        let c = cfg(UcbMethod::Clt, 0.5);
        let cal = calibrate_gpac(&recs, &Assigner::labels_from(&recs), &target, &c).unwrap();
        assert_eq!(cal.excluded, 1);

        let unlabeled = vec![ResolvedRecord::new("x", 0.5, 0.0)];
        assert!(matches!(
            calibrate_gpac(&unlabeled, &Assigner::Labels(vec!["a".into()]), &target, &c),
            Err(Error::NoResolvableRecords)
        ));
    }

    #[test]
    fn marginal_equals_trivial_gpac() {
        let mut recs = group("a", 120, 0.0, 0);
        recs.extend(group("b", 120, 1.0, 0));
        let target = CalibrationTarget::new(0.1);
        let c = cfg(UcbMethod::Clt, 0.5);
        let m = calibrate_marginal(&recs, &target, &c).unwrap();
        let g = calibrate_gpac(&recs, &Assigner::Trivial, &target, &c).unwrap();
        assert_eq!(m, g);
        assert_eq!(m.policy.mode, Mode::Marginal);
        assert_eq!(m.policy.thresholds.len(), 1);
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let recs = group("a", 20, 0.0, 0);
        let c = cfg(UcbMethod::Clt, 0.5);
        for eps in [0.0, -0.1, f64::NAN] {
            assert!(matches!(
                calibrate_marginal(&recs, &CalibrationTarget::new(eps), &c),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn route_rules() {
        let policy = RoutingPolicy {
            mode: Mode::Gpac,
            epsilon: 0.05,
            alpha: 0.05,
            assigner: Assigner::Labels(vec!["a".into(), "z".into()]),
            thresholds: vec![
                GroupThreshold {
                    group_key: "a".into(),
                    threshold: Threshold::Value(0.5),
                    ucb_at_threshold: Some(0.04),
                    n_calibration: 100,
                },
                GroupThreshold {
                    group_key: "z".into(),
                    threshold: Threshold::AlwaysThink,
                    ucb_at_threshold: None,
                    n_calibration: 3,
                },
            ],
            provenance: Provenance {
                config_hash: "h".into(),
                seed: 1,
            },
        };
        assert_eq!(
            route(&policy, Some("a"), 0.3).unwrap().action,
            Action::Cheap
        );
        assert_eq!(
            route(&policy, Some("a"), 0.5).unwrap().action,
            Action::Cheap
        );
        assert_eq!(
            route(&policy, Some("a"), 0.50001).unwrap().action,
            Action::Think
        );
        let unseen = route(&policy, Some("q"), 0.0).unwrap();
        assert_eq!(unseen.action, Action::Think);
        assert_eq!(unseen.group_key, None);
        assert_eq!(route(&policy, None, 0.0).unwrap().action, Action::Think);
        assert_eq!(
            route(&policy, Some("z"), 0.0).unwrap().action,
            Action::Think
        );
        assert!(route(&policy, Some("a"), 1.2).is_err());

        let back = RoutingPolicy::from_json(&policy.to_json()).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn policy_file_schema() {
        let recs = group("a", 40, 0.0, 0);
        let cal = calibrate_gpac(
            &recs,
            &Assigner::labels_from(&recs),
            &CalibrationTarget::new(0.05),
            &cfg(UcbMethod::Hoeffding, 0.5),
        )
        .unwrap();
        let json: serde_json::Value = serde_json::from_str(&cal.policy.to_json()).unwrap();
        assert_eq!(json["version"], SCHEMA_VERSION);
        assert_eq!(json["assigner"]["kind"], "labels");
        assert_eq!(json["thresholds"][0]["group_key"], "a");
        assert_eq!(json["thresholds"][0]["threshold"], "always_think");
        assert_eq!(json["thresholds"][0]["n"], 40);

        let mut bumped = json.clone();
        bumped["version"] = "pac-route/9".into();
        assert!(matches!(
            RoutingPolicy::from_json(&bumped.to_string()),
            Err(Error::SchemaVersion { .. })
        ));

        let mut missing = json;
        missing["thresholds"] = serde_json::json!([]);
        assert!(RoutingPolicy::from_json(&missing.to_string()).is_err());
    }

    #[test]
    fn config_hash_tracks_configuration() {
        let recs = group("a", 40, 0.0, 0);
        let target = CalibrationTarget::new(0.05);
        let a = calibrate_marginal(&recs, &target, &cfg(UcbMethod::Clt, 0.5)).unwrap();
        let b = calibrate_marginal(&recs, &target, &cfg(UcbMethod::Clt, 0.25)).unwrap();
        assert_ne!(
            a.policy.provenance.config_hash,
            b.policy.provenance.config_hash
        );
        assert_eq!(a.policy.provenance.config_hash.len(), 64);
    }
}
