//! Importance-sampled upper confidence bounds on the routed loss, as a
//! function of the uncertainty threshold, for both bound constructions.

use pacroute::estimator::{estimate_curve, EstimatorConfig, UcbMethod};
use pacroute::rng::substream;
use pacroute::simulation::{generate_group, true_risk, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/hetero_linear.json".as_ref())?;
    let records = generate_group(&spec, 1, 3000, &mut substream(1, "ucb-demo"))?;

    let clt = EstimatorConfig::new(UcbMethod::Clt, 0.05, 0.5, 1);
    let hoeffding = EstimatorConfig::new(UcbMethod::Hoeffding, 0.05, 0.5, 1);
    let a = estimate_curve(&records, &clt, &mut substream(1, "draws"))?;
    let b = estimate_curve(&records, &hoeffding, &mut substream(1, "draws"))?;

    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>10}",
        "u", "true", "mean", "clt", "hoeffding"
    );
    for i in (0..a.len()).step_by(a.len() / 12) {
        let u = a.candidates[i];
        println!(
            "{u:>8.3} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            true_risk(&spec, 1, u),
            a.mean[i],
            a.ucb[i],
            b.ucb[i]
        );
    }
    for (name, curve) in [("clt", &a), ("hoeffding", &b)] {
        match curve.largest_feasible(0.05, 0.0) {
            Some(i) => println!(
                "{name}: largest threshold with bound <= 0.05 is {:.4}",
                curve.candidates[i]
            ),
            None => println!("{name}: no feasible threshold, always think"),
        }
    }
    Ok(())
}
