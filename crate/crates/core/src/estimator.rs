//! Importance-sampled loss estimates and upper confidence bounds over a
//! grid of candidate thresholds.
//!
//! Indices are drawn uniformly with replacement from the calibration set and
//! each draw is kept with probability `pi_i` (the thinking model is queried
//! only then). The reweighted term `Z = xi * loss / pi` is unbiased for the
//! plug-in loss, and `Z(u) = Z * 1{U <= u}` for the routed loss at `u`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ResolvedRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbMethod {
    Clt,
    Hoeffding,
}

impl std::fmt::Display for UcbMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UcbMethod::Clt => "clt",
            UcbMethod::Hoeffding => "hoeffding",
        })
    }
}

/// Probability of querying the thinking model for a drawn record.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingWeights {
    Uniform(f64),
    /// Weight per record id. Every record being estimated must be present.
    PerRecord(HashMap<String, f64>),
}

impl SamplingWeights {
    fn weight(&self, record: &ResolvedRecord) -> Result<f64> {
        match self {
            SamplingWeights::Uniform(pi) => Ok(*pi),
            SamplingWeights::PerRecord(map) => map.get(&record.id).copied().ok_or_else(|| {
                Error::config(format!("no sampling weight for record {}", record.id))
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |pi: f64| pi > 0.0 && pi <= 1.0;
        match self {
            SamplingWeights::Uniform(pi) if !ok(*pi) => Err(Error::config(format!(
                "sampling weight {pi} outside (0, 1]"
            ))),
            SamplingWeights::PerRecord(map) => match map.iter().find(|(_, pi)| !ok(**pi)) {
                Some((id, pi)) => Err(Error::config(format!(
                    "sampling weight {pi} for record {id} outside (0, 1]"
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: UcbMethod,
    pub alpha: f64,
    pub weights: SamplingWeights,
    /// Number of importance samples; `None` means `ceil(n / pi_min)`.
    pub sample_size: Option<usize>,
    pub seed: u64,
    /// Upper bound `B` of the loss, used by the Hoeffding radius.
    pub loss_bound: f64,
}

impl EstimatorConfig {
    pub fn new(method: UcbMethod, alpha: f64, pi: f64, seed: u64) -> Self {
        EstimatorConfig {
            method,
            alpha,
            weights: SamplingWeights::Uniform(pi),
            sample_size: None,
            seed,
            loss_bound: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.loss_bound.is_finite() && self.loss_bound > 0.0) {
            return Err(Error::config(format!(
                "loss bound {} must be positive",
                self.loss_bound
            )));
        }
        if self.sample_size == Some(0) {
            return Err(Error::config("sample size must be at least 1"));
        }
        self.weights.validate()
    }

    /// Smallest weight over `records`.
    pub fn pi_min(&self, records: &[ResolvedRecord]) -> Result<f64> {
        records
            .iter()
            .map(|r| self.weights.weight(r))
            .try_fold(f64::INFINITY, |acc, w| w.map(|w| acc.min(w)))
    }

    pub fn sample_size_for(&self, records: &[ResolvedRecord]) -> Result<usize> {
        match self.sample_size {
            Some(m) => Ok(m),
            None => {
                let pi_min = self.pi_min(records)?;
                Ok(((records.len() as f64) / pi_min).ceil() as usize)
            }
        }
    }
}

/// One importance-sampling draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZSample {
    pub z: f64,
    pub u_origin: f64,
}

/// Routed-loss estimates and upper confidence bounds at each candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbCurve {
    pub candidates: Vec<f64>,
    pub ucb: Vec<f64>,
    pub mean: Vec<f64>,
}

impl UcbCurve {
    /// Index of the largest candidate with `ucb + slack <= epsilon`. Candidates
    /// below it may exceed the tolerance; the rule is a plain maximum.
    pub fn largest_feasible(&self, epsilon: f64, slack: f64) -> Option<usize> {
        self.ucb.iter().rposition(|&b| b + slack <= epsilon)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Standard normal quantile via Acklam's rational approximation
/// (relative error below 1.2e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Draws `m` importance samples. Each draw consumes exactly two values from `rng`.
pub fn draw_z_samples<R: Rng + ?Sized>(
    records: &[ResolvedRecord],
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<Vec<ZSample>> {
    if records.is_empty() {
        return Err(Error::input("cannot sample from an empty record set"));
    }
    config.validate()?;
    let weights: Vec<f64> = records
        .iter()
        .map(|r| config.weights.weight(r))
        .collect::<Result<_>>()?;
    let m = config.sample_size_for(records)?;
    let n = records.len();
    let samples = (0..m)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let pi = weights[i];
            let kept = rng.gen::<f64>() < pi;
            let rec = &records[i];
            ZSample {
                z: if kept { rec.loss / pi } else { 0.0 },
                u_origin: rec.uncertainty,
            }
        })
        .collect();
    Ok(samples)
}

/// Observed uncertainty values, sorted and deduplicated, with 0 prepended.
pub fn candidate_grid(records: &[ResolvedRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::input(
            "cannot build a candidate grid from no records",
        ));
    }
    let mut grid: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Per-candidate mean and centered sum of squares of `Z(u)` over all `m` samples.
///
/// Samples are swept in order of origin score; covered draws are accumulated
/// with Welford's update and merged with the `m - c` uncovered zeros.
fn sweep(samples: &[ZSample], candidates: &[f64]) -> Vec<(f64, f64)> {
    let m = samples.len() as f64;
    let mut sorted: Vec<ZSample> = samples.to_vec();
    sorted.sort_by(|a, b| a.u_origin.total_cmp(&b.u_origin));

    let mut out = Vec::with_capacity(candidates.len());
    let (mut count, mut sum, mut w_mean, mut w_m2) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut next = 0;
    for &u in candidates {
        while next < sorted.len() && sorted[next].u_origin <= u {
            let z = sorted[next].z;
            count += 1;
            sum += z;
            let delta = z - w_mean;
            w_mean += delta / count as f64;
            w_m2 += delta * (z - w_mean);
            next += 1;
        }
        let c = count as f64;
        let m2 = w_m2 + w_mean * w_mean * c * (m - c) / m;
        out.push((sum / m, m2.max(0.0)));
    }
    out
}

fn check_candidates(candidates: &[f64]) -> Result<()> {
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input(
            "candidate thresholds must be strictly ascending",
        ));
    }
    Ok(())
}

/// CLT bound `mean + z_{1-alpha} * sd / sqrt(m)`, sample sd with divisor `m - 1`.
pub fn ucb_clt(samples: &[ZSample], candidates: &[f64], alpha: f64) -> Result<UcbCurve> {
    if samples.len() < 2 {
        return Err(Error::input("CLT bound needs at least two samples"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1)")));
    }
    check_candidates(candidates)?;
    let m = samples.len() as f64;
    let z = normal_quantile(1.0 - alpha);
    let (mean, ucb) = sweep(samples, candidates)
        .into_iter()
        .map(|(mu, m2)| {
            let sd = (m2 / (m - 1.0)).sqrt();
            (mu, mu + z * sd / m.sqrt())
        })
        .unzip();
    Ok(UcbCurve {
        candidates: candidates.to_vec(),
        ucb,
        mean,
    })
}

/// Hoeffding radius `sqrt(R^2 ln(2/alpha) / (2m))` with `R = B / pi_min`.
pub fn hoeffding_radius(alpha: f64, bound: f64, pi_min: f64, m: usize) -> f64 {
    let range = bound / pi_min;
    (range * range * (2.0 / alpha).ln() / (2.0 * m as f64)).sqrt()
}

pub fn ucb_hoeffding(
    samples: &[ZSample],
    candidates: &[f64],
    alpha: f64,
    bound: f64,
    pi_min: f64,
) -> Result<UcbCurve> {
    if samples.is_empty() {
        return Err(Error::input("Hoeffding bound needs at least one sample"));
    }
    if !(pi_min > 0.0 && pi_min <= 1.0) {
        return Err(Error::config(format!("pi_min {pi_min} outside (0, 1]")));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::config(format!(
            "loss bound {bound} must be positive"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1)")));
    }
    check_candidates(candidates)?;
    let radius = hoeffding_radius(alpha, bound, pi_min, samples.len());
    let mean: Vec<f64> = sweep(samples, candidates)
        .into_iter()
        .map(|(mu, _)| mu)
        .collect();
    let ucb = mean.iter().map(|mu| mu + radius).collect();
    Ok(UcbCurve {
        candidates: candidates.to_vec(),
        ucb,
        mean,
    })
}

/// Draws samples from `records` and builds the configured bound over their candidate grid.
pub fn estimate_curve<R: Rng + ?Sized>(
    records: &[ResolvedRecord],
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<UcbCurve> {
    let samples = draw_z_samples(records, config, rng)?;
    let grid = candidate_grid(records)?;
    match config.method {
        UcbMethod::Clt => ucb_clt(&samples, &grid, config.alpha),
        UcbMethod::Hoeffding => {
            let pi_min = config.pi_min(records)?;
            ucb_hoeffding(&samples, &grid, config.alpha, config.loss_bound, pi_min)
        }
    }
}
