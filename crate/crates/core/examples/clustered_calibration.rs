//! Learning the groups from the uncertainty scores alone, in split and joint
//! mode, and comparing the learned partition with the hidden labels.

use pacroute::calibration::{Assigner, CalibrationTarget};
use pacroute::clustering::{calibrate_cpac, kmeans_1d, partition_gap, ClusterConfig, ClusterMode};
use pacroute::estimator::{EstimatorConfig, UcbMethod};
use pacroute::rng::substream;
use pacroute::simulation::{generate, policy_outcome, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/clustered.json".as_ref())?;
    let records = generate(&spec, 12_000, &mut substream(5, "calibration"))?;

    let scores: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    let partition = kmeans_1d(&scores, 3)?;
    println!("centroids {:?}", partition.centroids());
    println!("boundaries {:?}", partition.boundaries());

    let labels = spec.labels();
    let truth: Vec<usize> = records
        .iter()
        .map(|r| {
            labels
                .iter()
                .position(|l| Some(l.as_str()) == r.group_label.as_deref())
                .unwrap()
        })
        .collect();
    let learned: Vec<usize> = scores.iter().map(|&u| partition.assign(u)).collect();
    println!(
        "partition gap vs hidden labels: {:.4}",
        partition_gap(&learned, &truth, 3)?
    );

    let target = CalibrationTarget::new(0.05);
    let config = EstimatorConfig::new(UcbMethod::Hoeffding, 0.05, 1.0, 5);
    for mode in [ClusterMode::Split, ClusterMode::Joint] {
        let cal = calibrate_cpac(&records, &ClusterConfig::new(3, mode, 5), &target, &config)?;
        let policy = &cal.policy;
        assert!(matches!(policy.assigner, Assigner::Partition(_)));
        println!("{mode:?} mode");
        let outcome = policy_outcome(&spec, policy);
        for t in &policy.thresholds {
            println!(
                "  group {}: threshold {:?}, {} records, true risk {:.4}",
                t.group_key, t.threshold, t.n_calibration, outcome.risk[&t.group_key]
            );
        }
        println!("  cheap-model share: {:.3}", outcome.efficiency);
    }
    Ok(())
}
