//! Repeats calibration on fresh synthetic data and checks how often each
//! group's exact risk stays within tolerance.

use pacroute::calibration::CalibrationTarget;
use pacroute::estimator::{EstimatorConfig, UcbMethod};
use pacroute::simulation::{
    coverage_experiment, test_risk_experiment, ExperimentConfig, SimMethod, SyntheticSpec,
};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/adversarial.json".as_ref())?;
    let trials = 200;
    for method in [SimMethod::Marginal, SimMethod::Gpac] {
        for ucb in [UcbMethod::Clt, UcbMethod::Hoeffding] {
            let estimator = EstimatorConfig::new(ucb, 0.05, 1.0, 21);
            let config = ExperimentConfig::new(
                method,
                8000,
                trials,
                CalibrationTarget::new(0.05),
                estimator,
            );
            let report = coverage_experiment(&spec, &config)?;
            println!("{method:?}/{ucb}: efficiency {:.3}", report.efficiency);
            for (k, c) in &report.per_group_coverage {
                println!(
                    "  {k:<8} coverage {c:.3}  mean risk {:.4}",
                    report.per_group_mean_risk[k]
                );
            }
        }
    }

    let estimator = EstimatorConfig::new(UcbMethod::Hoeffding, 0.05, 1.0, 21);
    let config = ExperimentConfig::new(
        SimMethod::Gpac,
        8000,
        trials,
        CalibrationTarget::new(0.05),
        estimator,
    );
    let report = test_risk_experiment(&spec, &config, 400, &[0.02, 0.05])?;
    for (k, rates) in &report.per_group {
        for r in rates {
            println!("{k}: P(test error > 0.05 + {}) = {:.3}", r.margin, r.rate);
        }
    }
    Ok(())
}
