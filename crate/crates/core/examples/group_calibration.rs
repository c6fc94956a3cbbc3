//! One threshold for everyone versus one threshold per known group, on data
//! where the groups have very different error profiles.

use pacroute::calibration::{
    calibrate_gpac, calibrate_marginal, route, Assigner, CalibrationTarget,
};
use pacroute::estimator::{EstimatorConfig, UcbMethod};
use pacroute::rng::substream;
use pacroute::simulation::{generate, policy_outcome, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/adversarial.json".as_ref())?;
    let records = generate(&spec, 8000, &mut substream(3, "calibration"))?;
    let target = CalibrationTarget::new(0.05);
    let config = EstimatorConfig::new(UcbMethod::Hoeffding, 0.05, 1.0, 3);

    let marginal = calibrate_marginal(&records, &target, &config)?.policy;
    let grouped =
        calibrate_gpac(&records, &Assigner::labels_from(&records), &target, &config)?.policy;

    for (name, policy) in [("marginal", &marginal), ("per-group", &grouped)] {
        println!("{name} policy");
        for t in &policy.thresholds {
            println!(
                "  threshold[{}] = {:?} from {} records",
                t.group_key, t.threshold, t.n_calibration
            );
        }
        // Exact risk of each true group under this policy.
        let outcome = policy_outcome(&spec, policy);
        for (key, risk) in &outcome.risk {
            let flag = if *risk > target.epsilon {
                "  <- above tolerance"
            } else {
                ""
            };
            println!("  risk[{key}] = {risk:.4}{flag}");
        }
        println!("  cheap-model share: {:.3}", outcome.efficiency);
    }

    for (label, u) in [
        ("benign", 0.5),
        ("hard", 0.05),
        ("hard", 0.5),
        ("unseen", 0.01),
    ] {
        let r = route(&grouped, Some(label), u)?;
        println!(
            "route({label}, {u}) -> {:?} via {:?}",
            r.action, r.group_key
        );
    }
    Ok(())
}
