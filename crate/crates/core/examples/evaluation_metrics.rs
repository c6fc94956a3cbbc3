//! Routed error, the group error gap, and saved tokens, over repeated random
//! calibration/test splits.

use pacroute::calibration::{calibrate_gpac, calibrate_marginal, Assigner, CalibrationTarget};
use pacroute::estimator::{EstimatorConfig, UcbMethod};
use pacroute::metrics::{repeated_split, StpVariant};
use pacroute::rng::substream;
use pacroute::simulation::{generate, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/hetero_three.json".as_ref())?;
    let records = generate(&spec, 6000, &mut substream(11, "pool"))?;
    let target = CalibrationTarget::new(0.05);
    let labels = Assigner::labels_from(&records);

    let marginal = repeated_split(
        &records,
        0.5,
        20,
        11,
        Some(StpVariant::Router),
        |cal, seed| {
            let config = EstimatorConfig::new(UcbMethod::Clt, 0.05, 0.5, seed);
            Ok(calibrate_marginal(cal, &target, &config)?.policy)
        },
    )?;
    let grouped = repeated_split(
        &records,
        0.5,
        20,
        11,
        Some(StpVariant::Router),
        |cal, seed| {
            let config = EstimatorConfig::new(UcbMethod::Clt, 0.05, 0.5, seed);
            Ok(calibrate_gpac(cal, &labels, &target, &config)?.policy)
        },
    )?;

    println!(
        "{:<12} {:>8} {:>10} {:>8}",
        "method", "error", "error_gap", "stp"
    );
    for (name, r) in [("marginal", &marginal), ("per-group", &grouped)] {
        println!(
            "{name:<12} {:>8.4} {:>10.4} {:>7.2}%",
            r.error,
            r.error_gap,
            100.0 * r.stp.unwrap_or(f64::NAN)
        );
        for (k, e) in &r.per_group_error {
            println!("  {k:<12} {e:.4}");
        }
    }
    Ok(())
}
