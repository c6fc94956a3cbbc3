use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pacroute::calibration::{
    route, Action, Calibration, CalibrationTarget, GroupKey, RoutingPolicy, DEFAULT_MIN_GROUP_SIZE,
};
use pacroute::clustering::{
    calibrate, fit_kmeans_1d, partition_gap, ClusterConfig, ClusterMode, Grouping,
};
use pacroute::data::{resolve_all, LossKind, LossSpec, ResolvedRecord};
use pacroute::estimator::{EstimatorConfig, SamplingWeights, UcbMethod};
use pacroute::io::{read_records, write_json, write_jsonl};
use pacroute::metrics::{evaluate_policy, repeated_split, MetricsReport, StpVariant};
use pacroute::simulation::{
    coverage_experiment, test_risk_experiment, CoverageReport, ExperimentConfig, SimMethod,
    SyntheticSpec, TestRiskReport,
};
use pacroute::{Error, Result};

/// Risk-controlled routing between a thinking and a non-thinking model.
///
/// Exit codes: 0 success, 1 other failure, 2 unreadable or invalid input,
/// 3 no resolvable records, 4 invalid configuration, 5 policy schema
/// mismatch, 6 missing token counts, 7 invalid synthetic spec.
#[derive(Parser)]
#[command(name = "pacroute", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn per-group thresholds and write a policy file.
    Calibrate(CalibrateArgs),
    /// Route records with a saved policy.
    Route(RouteArgs),
    /// Measure routed error and saved tokens.
    Evaluate(EvaluateArgs),
    /// Run a coverage experiment on a synthetic spec.
    Simulate(SimulateArgs),
    /// Fit a 1D k-means partition of the uncertainty scores.
    Cluster(ClusterArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Marginal,
    Gpac,
    Cpac,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Clt,
    Hoeffding,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterModeArg {
    Split,
    Joint,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Precomputed,
    Binary,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum StpArg {
    Cascade,
    Router,
}

impl From<MethodArg> for UcbMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Clt => UcbMethod::Clt,
            MethodArg::Hoeffding => UcbMethod::Hoeffding,
        }
    }
}

impl From<StpArg> for StpVariant {
    fn from(s: StpArg) -> Self {
        match s {
            StpArg::Cascade => StpVariant::Cascade,
            StpArg::Router => StpVariant::Router,
        }
    }
}

#[derive(Args)]
struct LossArgs {
    /// How to obtain each record's loss.
    #[arg(long, value_enum, default_value = "precomputed")]
    loss: LossArg,
    /// Upper bound on precomputed losses.
    #[arg(long, default_value_t = 1.0)]
    loss_bound: f64,
}

impl LossArgs {
    fn spec(&self) -> Result<LossSpec> {
        match self.loss {
            LossArg::Precomputed => LossSpec::precomputed(self.loss_bound),
            LossArg::Binary => Ok(LossSpec::default_for(LossKind::Binary)),
            LossArg::Cosine => Ok(LossSpec::default_for(LossKind::Cosine)),
        }
    }
}

#[derive(Args)]
struct CalibrationArgs {
    #[arg(long, value_enum, default_value = "gpac")]
    mode: ModeArg,
    /// Error tolerance.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Miscoverage level of the confidence bound.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Uniform labeling probability.
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    /// JSON object mapping record id to its labeling probability; overrides --pi.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Upper confidence bound construction.
    #[arg(long, value_enum, default_value = "clt")]
    method: MethodArg,
    /// Number of importance draws; defaults to ceil(n / min pi).
    #[arg(long)]
    sample_size: Option<usize>,
    /// Groups with fewer calibration records always think.
    #[arg(long, default_value_t = DEFAULT_MIN_GROUP_SIZE)]
    min_group_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of learned groups (cpac).
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "split")]
    cluster_mode: ClusterModeArg,
    /// Share of records used to fit the partition in split mode.
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    /// Added to every bound in joint mode.
    #[arg(long, default_value_t = 0.0)]
    joint_slack: f64,
    #[command(flatten)]
    loss: LossArgs,
}

impl CalibrationArgs {
    fn target(&self) -> Result<CalibrationTarget> {
        let target = CalibrationTarget {
            min_group_size: self.min_group_size,
            ..CalibrationTarget::new(self.epsilon)
        };
        target.validate()?;
        Ok(target)
    }

    fn estimator(&self, seed: u64) -> Result<EstimatorConfig> {
        let mut config = EstimatorConfig::new(self.method.into(), self.alpha, self.pi, seed);
        config.sample_size = self.sample_size;
        config.loss_bound = self.loss.spec()?.bound();
        if let Some(path) = &self.weights {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let map: HashMap<String, f64> =
                serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
            config.weights = SamplingWeights::PerRecord(map);
        }
        config.validate()?;
        Ok(config)
    }

    fn grouping(&self, records: &[ResolvedRecord], seed: u64) -> Grouping {
        match self.mode {
            ModeArg::Marginal => Grouping::Marginal,
            ModeArg::Gpac => Grouping::labels_from(records),
            ModeArg::Cpac => {
                let mode = match self.cluster_mode {
                    ClusterModeArg::Split => ClusterMode::Split,
                    ClusterModeArg::Joint => ClusterMode::Joint,
                };
                Grouping::Learned(ClusterConfig {
                    split_fraction: self.split_fraction,
                    joint_slack: self.joint_slack,
                    ..ClusterConfig::new(self.k, mode, seed)
                })
            }
        }
    }

    fn calibrate(&self, records: &[ResolvedRecord], seed: u64) -> Result<Calibration> {
        let target = self.target()?;
        let estimator = self.estimator(seed)?;
        calibrate(records, &self.grouping(records, seed), &target, &estimator)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration records (JSONL, or CSV by extension).
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    calibration: CalibrationArgs,
    /// Policy output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional calibration report (per-group sizes, thresholds, bound curves).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    records: PathBuf,
    /// Decisions output (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Test records, or the full pool when --trials is set.
    #[arg(long)]
    records: PathBuf,
    /// Fixed policy to evaluate. Not used with --trials.
    #[arg(long, conflicts_with = "trials")]
    policy: Option<PathBuf>,
    /// Repeated random calibration/test splits, recalibrating each time.
    #[arg(long)]
    trials: Option<usize>,
    /// Calibration share of each split.
    #[arg(long, default_value_t = 0.5)]
    cal_fraction: f64,
    /// Report saved tokens under this accounting.
    #[arg(long, value_enum)]
    stp: Option<StpArg>,
    #[command(flatten)]
    calibration: CalibrationArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Synthetic spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "gpac")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "clt")]
    method: MethodArg,
    /// Calibration records per trial, over all groups.
    #[arg(long, default_value_t = 1000)]
    n_cal: usize,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "split")]
    cluster_mode: ClusterModeArg,
    #[arg(long, default_value_t = 0.0)]
    joint_slack: f64,
    /// Also draw this many fresh test records per group and report how often
    /// the test error exceeds epsilon plus each margin.
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.05])]
    margins: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    k: usize,
    /// Also report the partition gap against the records' group labels.
    #[arg(long)]
    compare_labels: bool,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Input(_)
        | Error::LossOutOfBounds { .. }
        | Error::Io { .. }
        | Error::Parse { .. } => 2,
        Error::NoResolvableRecords => 3,
        Error::Config(_) => 4,
        Error::SchemaVersion { .. } => 5,
        Error::MissingTokens { .. } => 6,
        Error::Spec(_) => 7,
    }
}

fn load_resolved(path: &Path, loss: &LossArgs) -> Result<Vec<ResolvedRecord>> {
    let loaded = read_records(path)?;
    if loaded.unknown_fields > 0 {
        eprintln!(
            "warning: skipped {} unknown field(s) in {}",
            loaded.unknown_fields,
            path.display()
        );
    }
    if loaded.records.is_empty() {
        return Err(Error::NoResolvableRecords);
    }
    resolve_all(&loaded.records, &loss.spec()?)
}

fn fmt_threshold(t: &pacroute::Threshold) -> String {
    match t.value() {
        Some(v) => format!("{v:.4}"),
        None => "always_think".into(),
    }
}

#[derive(Serialize)]
struct GroupReport {
    group_key: GroupKey,
    n: usize,
    threshold: pacroute::Threshold,
    ucb: Option<f64>,
    candidates: usize,
    feasible_candidates: usize,
    min_ucb: Option<f64>,
}

#[derive(Serialize)]
struct CalibrationReport {
    mode: String,
    epsilon: f64,
    alpha: f64,
    excluded: usize,
    groups: Vec<GroupReport>,
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let cal = &args.calibration;
    cal.target()?;
    cal.estimator(cal.seed)?;
    let records = load_resolved(&args.records, &cal.loss)?;
    let calibration = cal.calibrate(&records, cal.seed)?;
    let policy = &calibration.policy;
    policy.save(&args.out)?;

    let groups: Vec<GroupReport> = policy
        .thresholds
        .iter()
        .map(|t| {
            let curve = calibration.curves.get(&t.group_key);
            GroupReport {
                group_key: t.group_key.clone(),
                n: t.n_calibration,
                threshold: t.threshold,
                ucb: t.ucb_at_threshold,
                candidates: curve.map_or(0, |c| c.len()),
                feasible_candidates: curve.map_or(0, |c| {
                    c.ucb.iter().filter(|&&b| b <= policy.epsilon).count()
                }),
                min_ucb: curve.and_then(|c| c.ucb.iter().copied().reduce(f64::min)),
            }
        })
        .collect();
    println!(
        "mode {}  epsilon {}  alpha {}",
        policy.mode, policy.epsilon, policy.alpha
    );
    println!(
        "{:<16} {:>8} {:>14} {:>10}",
        "group", "n", "threshold", "ucb"
    );
    for g in &groups {
        let ucb = g.ucb.map_or("-".into(), |u| format!("{u:.4}"));
        println!(
            "{:<16} {:>8} {:>14} {:>10}",
            g.group_key.to_string(),
            g.n,
            fmt_threshold(&g.threshold),
            ucb
        );
    }
    if calibration.excluded > 0 {
        eprintln!(
            "warning: {} record(s) matched no group and were excluded",
            calibration.excluded
        );
    }
    if let Some(path) = &args.report {
        write_json(
            path,
            &CalibrationReport {
                mode: policy.mode.to_string(),
                epsilon: policy.epsilon,
                alpha: policy.alpha,
                excluded: calibration.excluded,
                groups,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Decision<'a> {
    id: &'a str,
    group_key: Option<GroupKey>,
    action: Action,
}

fn cmd_route(args: &RouteArgs) -> Result<()> {
    let policy = RoutingPolicy::load(&args.policy)?;
    let loaded = read_records(&args.records)?;
    let decisions = loaded
        .records
        .iter()
        .map(|r| {
            let routing = route(&policy, r.group_label.as_deref(), r.uncertainty)?;
            Ok(Decision {
                id: &r.id,
                group_key: routing.group_key,
                action: routing.action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &decisions)?;

    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for d in &decisions {
        let key = d
            .group_key
            .as_ref()
            .map_or("(unresolved)".to_string(), |k| k.to_string());
        let entry = counts.entry(key).or_default();
        match d.action {
            Action::Cheap => entry.0 += 1,
            Action::Think => entry.1 += 1,
        }
    }
    println!("{:<16} {:>8} {:>8}", "group", "cheap", "think");
    for (k, (c, t)) in &counts {
        println!("{k:<16} {c:>8} {t:>8}");
    }
    Ok(())
}

fn print_metrics(report: &MetricsReport) {
    println!("trials {}  epsilon {}", report.trials, report.epsilon);
    println!("error      {:.4}", report.error);
    println!("error_gap  {:.4}", report.error_gap);
    if let (Some(stp), Some(variant)) = (report.stp, report.stp_variant) {
        println!("stp        {:.2}% ({variant:?})", stp * 100.0);
    }
    println!("{:<16} {:>10} {:>8}", "group", "error", "n");
    for (k, e) in &report.per_group_error {
        println!(
            "{:<16} {:>10.4} {:>8}",
            k.to_string(),
            e,
            report.n_per_group.get(k).copied().unwrap_or(0)
        );
    }
    for k in &report.flagged_groups {
        eprintln!("warning: group {k} had no test records in at least one trial");
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let stp = args.stp.map(StpVariant::from);
    let records = load_resolved(&args.records, &args.calibration.loss)?;
    let report = match (args.trials, &args.policy) {
        (Some(trials), _) => {
            let cal = &args.calibration;
            cal.target()?;
            cal.estimator(cal.seed)?;
            repeated_split(
                &records,
                args.cal_fraction,
                trials,
                cal.seed,
                stp,
                |split, seed| Ok(cal.calibrate(split, seed)?.policy),
            )?
        }
        (None, Some(path)) => evaluate_policy(&records, &RoutingPolicy::load(path)?, stp)?,
        (None, None) => {
            return Err(Error::Config(
                "either --policy or --trials is required".into(),
            ))
        }
    };
    write_json(&args.out, &report)?;
    print_metrics(&report);
    Ok(())
}

#[derive(Serialize)]
struct SimulationOutput {
    coverage: CoverageReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_risk: Option<TestRiskReport>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = SyntheticSpec::load(&args.spec)?;
    let method = match args.mode {
        ModeArg::Marginal => SimMethod::Marginal,
        ModeArg::Gpac => SimMethod::Gpac,
        ModeArg::Cpac => SimMethod::Cpac,
    };
    let estimator = EstimatorConfig::new(args.method.into(), args.alpha, args.pi, args.seed);
    let mut config = ExperimentConfig::new(
        method,
        args.n_cal,
        args.trials,
        CalibrationTarget::new(args.epsilon),
        estimator,
    );
    if method == SimMethod::Cpac {
        let mode = match args.cluster_mode {
            ClusterModeArg::Split => ClusterMode::Split,
            ClusterModeArg::Joint => ClusterMode::Joint,
        };
        config = config.with_cluster(ClusterConfig {
            joint_slack: args.joint_slack,
            ..ClusterConfig::new(args.k, mode, args.seed)
        });
    }
    let coverage = coverage_experiment(&spec, &config)?;
    let test_risk = args
        .test_size
        .map(|n| test_risk_experiment(&spec, &config, n, &args.margins))
        .transpose()?;

    println!(
        "mode {:?}  trials {}  n_cal {}  epsilon {}",
        method, coverage.trials, coverage.n_cal, coverage.epsilon
    );
    println!("{:<16} {:>10} {:>10}", "group", "coverage", "mean_risk");
    for (k, c) in &coverage.per_group_coverage {
        println!(
            "{:<16} {:>10.3} {:>10.4}",
            k.to_string(),
            c,
            coverage.per_group_mean_risk[k]
        );
    }
    println!("efficiency {:.4}", coverage.efficiency);
    if let Some(tr) = &test_risk {
        for (k, rates) in &tr.per_group {
            for r in rates {
                println!(
                    "{:<16} test error > epsilon + {}: {:.3}",
                    k.to_string(),
                    r.margin,
                    r.rate
                );
            }
        }
    }
    write_json(
        &args.out,
        &SimulationOutput {
            coverage,
            test_risk,
        },
    )
}

#[derive(Serialize)]
struct ClusterOutput {
    k: usize,
    centroids: Vec<f64>,
    boundaries: Vec<f64>,
    sizes: Vec<usize>,
    sse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    partition_gap: Option<f64>,
}

fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    let loaded = read_records(&args.records)?;
    if loaded.records.is_empty() {
        return Err(Error::NoResolvableRecords);
    }
    let values: Vec<f64> = loaded.records.iter().map(|r| r.uncertainty).collect();
    let fit = fit_kmeans_1d(&values, args.k)?;
    let partition_gap = if args.compare_labels {
        let labels: Vec<&str> = loaded
            .records
            .iter()
            .map(|r| {
                r.group_label
                    .as_deref()
                    .ok_or_else(|| Error::Input(format!("record {} has no group label", r.id)))
            })
            .collect::<Result<_>>()?;
        let mut distinct: Vec<&str> = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != args.k {
            return Err(Error::Config(format!(
                "{} distinct labels but k = {}",
                distinct.len(),
                args.k
            )));
        }
        let truth: Vec<usize> = labels
            .iter()
            .map(|l| distinct.binary_search(l).unwrap())
            .collect();
        let learned: Vec<usize> = values.iter().map(|&u| fit.partition.assign(u)).collect();
        Some(partition_gap(&learned, &truth, args.k)?)
    } else {
        None
    };
    let out = ClusterOutput {
        k: fit.partition.k(),
        centroids: fit.partition.centroids().to_vec(),
        boundaries: fit.partition.boundaries().to_vec(),
        sizes: fit.sizes.clone(),
        sse: fit.sse,
        partition_gap,
    };
    println!("{:<8} {:>10} {:>8}", "cluster", "centroid", "size");
    for (j, (c, n)) in out.centroids.iter().zip(&out.sizes).enumerate() {
        println!("{j:<8} {c:>10.4} {n:>8}");
    }
    if let Some(gap) = out.partition_gap {
        println!("partition gap {gap:.4}");
    }
    write_json(&args.out, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Route(a) => cmd_route(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cluster(a) => cmd_cluster(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
