//! Monte Carlo estimates of `P(W_0 >= B)` after `T` slots from empty, with
//! arrivals averaged over `L` independent sources.
//!
//! Every `(replicate, slot, queue)` draw has its own counter-seeded
//! generator and successes are integer counts, so estimates do not depend
//! on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::step;
use crate::error::{check_dim, Error, Result};
use crate::policy::{Policy, PolicyKind};
use crate::region::RateRegion;
use crate::source::{SeedStream, SourceModel};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
/// One-sided 95% normal quantile.
const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowEstimate {
    #[serde(rename = "L")]
    pub sources: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "B")]
    pub level: Vec<f64>,
    pub replicates: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci95: (f64, f64),
    /// `-(1/L) log p_hat`; `+inf` when no replicate overflowed.
    pub decay: f64,
}

impl OverflowEstimate {
    fn new(sources: u64, horizon: usize, level: Vec<f64>, replicates: u64, successes: u64) -> Self {
        let n = replicates as f64;
        let p_hat = successes as f64 / n;
        let ci95 = if successes == 0 {
            (0.0, 1.0 - 0.05f64.powf(1.0 / n))
        } else {
            wilson(successes, replicates)
        };
        let decay = if successes == replicates { 0.0 } else { -p_hat.ln() / sources as f64 };
        Self { sources, horizon, level, replicates, successes, p_hat, ci95, decay }
    }

    /// Delta-method standard error of `decay`.
    pub fn decay_std_error(&self) -> f64 {
        if self.successes == 0 {
            return f64::INFINITY;
        }
        let n = self.replicates as f64;
        ((1.0 - self.p_hat) / (self.p_hat * n)).sqrt() / self.sources as f64
    }
}

/// Wilson score interval at 95%.
pub fn wilson(successes: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

fn check_level(region: &RateRegion, level: &[f64]) -> Result<()> {
    check_dim(region.dim(), level.len())?;
    if level.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::Domain(format!("overflow level {level:?} must be finite and non-negative")));
    }
    Ok(())
}

/// `P(W_0 >= B)` componentwise after `T` slots from empty.
#[allow(clippy::too_many_arguments)]
pub fn estimate_overflow(
    model: &SourceModel,
    policy: &Policy,
    region: &RateRegion,
    sources: u64,
    horizon: usize,
    level: &[f64],
    replicates: u64,
    seed: u64,
) -> Result<OverflowEstimate> {
    let mut v = estimate_overflow_levels(model, policy, region, sources, horizon, &[level.to_vec()], replicates, seed)?;
    Ok(v.remove(0))
}

/// Estimates for several levels from the same trajectories.
#[allow(clippy::too_many_arguments)]
pub fn estimate_overflow_levels(
    model: &SourceModel,
    policy: &Policy,
    region: &RateRegion,
    sources: u64,
    horizon: usize,
    levels: &[Vec<f64>],
    replicates: u64,
    seed: u64,
) -> Result<Vec<OverflowEstimate>> {
    check_dim(region.dim(), model.dim())?;
    if replicates < 1 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    if horizon < 1 {
        return Err(Error::Domain("horizon T must be at least 1".into()));
    }
    if sources < 1 {
        return Err(Error::Domain("L must be at least 1".into()));
    }
    for level in levels {
        check_level(region, level)?;
    }
    let stream = SeedStream::new(seed);
    let counts = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<u64>> {
            let w = simulate(model, policy, region, sources, horizon, &stream, rep)?;
            Ok(levels.iter().map(|b| u64::from(w.iter().zip(b).all(|(x, b)| x >= b))).collect())
        })
        .try_reduce(
            || vec![0; levels.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(levels
        .iter()
        .zip(counts)
        .map(|(b, c)| OverflowEstimate::new(sources, horizon, b.clone(), replicates, c))
        .collect())
}

/// `W_0` of one replicate.
fn simulate(
    model: &SourceModel,
    policy: &Policy,
    region: &RateRegion,
    sources: u64,
    horizon: usize,
    stream: &SeedStream,
    rep: u64,
) -> Result<Vec<f64>> {
    let k = model.dim();
    let caps = region.capacities();
    let track = matches!(policy.kind, PolicyKind::WorkConservingMaxWeight)
        && region.is_simplex()
        && caps.iter().all(|c| *c == caps[0]);
    let mut w = vec![0.0; k];
    let mut sum = 0.0;
    let mut a = vec![0.0; k];
    for slot in (1..=horizon as u64).rev() {
        for (q, x) in a.iter_mut().enumerate() {
            *x = model.sample_slot(q, sources, stream, rep, slot)?;
        }
        w = step(&w, &a, policy, region)?;
        if track {
            sum = (sum - 1.0f64).max(0.0) + region.normalized_sum(&a)?;
            debug_assert!((region.normalized_sum(&w)? - sum).abs() <= 1e-9 * (1.0 + sum));
        }
    }
    Ok(w)
}

/// One estimate per `L`, each with its own stream derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn decay_sweep(
    model: &SourceModel,
    policy: &Policy,
    region: &RateRegion,
    sources: &[u64],
    horizon: usize,
    level: &[f64],
    replicates: u64,
    seed: u64,
) -> Result<Vec<OverflowEstimate>> {
    if sources.is_empty() {
        return Err(Error::Domain("the list of L values is empty".into()));
    }
    if sources.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Domain(format!("L values {sources:?} must be strictly ascending")));
    }
    let base = SeedStream::new(seed);
    sources
        .iter()
        .map(|&l| {
            let s = base.derive(l);
            estimate_overflow(model, policy, region, l, horizon, level, replicates, s.key())
        })
        .collect()
}

/// Weighted least-squares trend of `|decay - reference|` against `log L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub slope: f64,
    pub std_error: f64,
    /// One-sided 95% upper confidence bound on the slope.
    pub upper95: f64,
    /// The distance to the reference shrinks with `L` at the 95% level.
    pub converging: bool,
}

pub fn trend_toward(estimates: &[OverflowEstimate], reference: f64) -> Result<TrendTest> {
    if estimates.len() < 2 {
        return Err(Error::Domain("a trend needs at least two estimates".into()));
    }
    if estimates.iter().any(|e| e.successes == 0) {
        return Err(Error::Domain("a trend needs a finite decay at every L".into()));
    }
    let pts: Vec<(f64, f64, f64)> = estimates
        .iter()
        .map(|e| {
            let se = e.decay_std_error().max(1e-300);
            ((e.sources as f64).ln(), (e.decay - reference).abs(), 1.0 / (se * se))
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let std_error = (1.0 / sxx).sqrt();
    let upper95 = slope + Z95_ONE_SIDED * std_error;
    Ok(TrendTest { slope, std_error, upper95, converging: upper95 < 0.0 })
}
