//! Brute-force ground truth for small two-queue instances.
//!
//! `brute_force_it` enumerates every arrival path of length `t` on a
//! `delta` grid, starting from the empty system, follows the
//! work-conserving max-weight dynamics through every tied selection, and
//! keeps the paths whose final workload lands within a tolerance of the
//! target. It shares no code with the rate-function engine beyond the
//! region, policy and conjugates.

use serde::{Deserialize, Serialize};

use crate::dynamics::apply_service;
use crate::error::{check_dim, Error, Result};
use crate::policy::Policy;
use crate::region::RateRegion;
use crate::source::SourceModel;

/// Largest number of enumerated states.
pub const ENUMERATION_BUDGET: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid_step: f64,
    pub max_horizon: usize,
    /// Largest arrival per slot and queue.
    pub max_coordinate: f64,
    /// Sup-norm distance from the target accepted for the final workload.
    pub target_tolerance: f64,
}

impl OracleConfig {
    /// Step `delta`, horizon up to 3, arrivals up to `max_coordinate` and a
    /// half-step landing tolerance.
    pub fn new(delta: f64, max_coordinate: f64) -> Result<Self> {
        let c = Self { grid_step: delta, max_horizon: 3, max_coordinate, target_tolerance: 0.5 * delta };
        c.validate()?;
        Ok(c)
    }

    /// A configuration wide enough for target `b` in `t` slots on a
    /// simplex with capacities `caps`: no queue ever needs more than
    /// `b^k + (t - 1) C^k` arrivals in one slot.
    pub fn for_target(delta: f64, b: &[f64], t: usize, caps: &[f64]) -> Result<Self> {
        let x = b
            .iter()
            .zip(caps)
            .map(|(bk, c)| bk + t.saturating_sub(1) as f64 * c)
            .fold(0.0, f64::max);
        Self::new(delta, x)
    }

    fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::Domain("grid step must be positive".into()));
        }
        if !(self.max_coordinate >= 0.0 && self.max_coordinate.is_finite()) {
            return Err(Error::Domain("max_coordinate must be finite and non-negative".into()));
        }
        if !(self.target_tolerance >= 0.0) {
            return Err(Error::Domain("target tolerance must be non-negative".into()));
        }
        if self.max_horizon > 3 {
            return Err(Error::Domain("oracle horizon is limited to 3".into()));
        }
        Ok(())
    }

    fn points(&self) -> usize {
        (self.max_coordinate / self.grid_step + 1e-9).floor() as usize + 1
    }
}

/// Minimum cost over grid paths of length `t` from empty whose final
/// workload is within tolerance of `b`, under work-conserving max-weight
/// with branching at ties. `+inf` when no grid path lands.
pub fn brute_force_it(model: &SourceModel, region: &RateRegion, b: &[f64], t: usize, config: &OracleConfig) -> Result<f64> {
    config.validate()?;
    check_dim(2, region.dim())?;
    check_dim(2, model.dim())?;
    check_dim(2, b.len())?;
    if b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Domain(format!("target {b:?} must be finite and non-negative")));
    }
    if t < 1 || t > config.max_horizon {
        return Err(Error::Domain(format!("horizon {t} outside 1..={}", config.max_horizon)));
    }
    let n = config.points();
    let states = (n as f64).powi(2 * (t as i32 - 1));
    if states > ENUMERATION_BUDGET {
        return Err(Error::Resource(format!("oracle enumeration of {states:.3e} paths exceeds {ENUMERATION_BUDGET:.0e}")));
    }
    let tables: Vec<Vec<f64>> = (0..2)
        .map(|q| (0..n).map(|i| model.queue(q).conjugate_unchecked(i as f64 * config.grid_step)).collect())
        .collect();
    let search = Search { region, policy: Policy::work_conserving(), b, config, n, tables };
    let mut best = f64::INFINITY;
    search.extend(&[0.0, 0.0], 0.0, t, &mut best)?;
    Ok(best)
}

struct Search<'a> {
    region: &'a RateRegion,
    policy: Policy,
    b: &'a [f64],
    config: &'a OracleConfig,
    n: usize,
    tables: Vec<Vec<f64>>,
}

impl Search<'_> {
    /// Adds the remaining `left` slots to workload `w` (before service).
    fn extend(&self, w: &[f64], cost: f64, left: usize, best: &mut f64) -> Result<()> {
        if cost >= *best {
            return Ok(());
        }
        let h = self.config.grid_step;
        for r in self.policy.selection_branches(self.region, w)? {
            let post = apply_service(w, &r, &[0.0, 0.0]);
            if left == 1 {
                if let Some(c) = self.landing(&post) {
                    *best = best.min(cost + c);
                }
                continue;
            }
            for i in 0..self.n {
                let c0 = cost + self.tables[0][i];
                if c0 >= *best {
                    continue;
                }
                for j in 0..self.n {
                    let c = c0 + self.tables[1][j];
                    if c < *best {
                        let next = [post[0] + i as f64 * h, post[1] + j as f64 * h];
                        self.extend(&next, c, left - 1, best)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Cheapest grid arrival taking `post` to within tolerance of `b`.
    fn landing(&self, post: &[f64]) -> Option<f64> {
        let h = self.config.grid_step;
        let tol = self.config.target_tolerance;
        let mut total = 0.0;
        for q in 0..2 {
            let need = self.b[q] - post[q];
            let lo = ((need - tol) / h - 1e-9).ceil().max(0.0);
            let hi = ((need + tol) / h + 1e-9).floor().min((self.n - 1) as f64);
            if lo > hi {
                return None;
            }
            let c = (lo as usize..=hi as usize).map(|i| self.tables[q][i]).fold(f64::INFINITY, f64::min);
            total += c;
        }
        Some(total)
    }
}

/// Bound on the oracle's discretisation error over `t` slots: `t` times
/// the largest change of each queue's conjugate across one grid step,
/// summed over queues.
pub fn lipschitz_slack(model: &SourceModel, config: &OracleConfig, t: usize) -> f64 {
    let n = config.points();
    let h = config.grid_step;
    let per_queue: f64 = (0..model.dim())
        .map(|q| {
            let src = model.queue(q);
            (0..n)
                .map(|i| {
                    let x = i as f64 * h;
                    (src.conjugate_unchecked(x + h) - src.conjugate_unchecked(x)).abs()
                })
                .filter(|d| d.is_finite())
                .fold(0.0, f64::max)
        })
        .sum();
    t as f64 * per_queue
}

/// Nearest point of `region` on the grid `delta Z^K`, by exhaustive search
/// over the bounding box of the region.
pub fn brute_force_projection(region: &RateRegion, w: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_dim(region.dim(), w.len())?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain("grid step must be positive".into()));
    }
    let k = region.dim();
    let upper: Vec<f64> = (0..k)
        .map(|q| region.vertices().iter().map(|v| v[q]).fold(0.0, f64::max))
        .collect();
    let counts: Vec<usize> = upper.iter().map(|u| (u / delta + 1e-9).floor() as usize + 1).collect();
    let total = counts.iter().map(|&c| c as f64).product::<f64>();
    if total > ENUMERATION_BUDGET {
        return Err(Error::Resource(format!("projection grid of {total:.3e} points exceeds {ENUMERATION_BUDGET:.0e}")));
    }
    let mut idx = vec![0usize; k];
    let mut p = vec![0.0; k];
    let mut best = (f64::INFINITY, vec![0.0; k]);
    loop {
        for q in 0..k {
            p[q] = idx[q] as f64 * delta;
        }
        if region.contains(&p)? {
            let d: f64 = p.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, p.clone());
            }
        }
        let mut q = 0;
        loop {
            if q == k {
                return Ok(best.1);
            }
            idx[q] += 1;
            if idx[q] < counts[q] {
                break;
            }
            idx[q] = 0;
            q += 1;
        }
    }
}
