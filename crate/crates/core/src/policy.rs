//! Scheduler selections: given the current workload, which service-rate
//! vector the server uses for the next slot.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::region::RateRegion;
use crate::RateVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    /// Any maximiser of `<R, W>` over the region.
    MaxWeight,
    /// Projection of `W` onto the region while `W` is inside the box
    /// `prod [0, C^k)`, max-weight otherwise.
    WorkConservingMaxWeight,
    /// Generalised processor sharing with positive weights.
    Gps { weights: Vec<f64> },
    /// Strict priority; `order[0]` is served first (0-based queue indices).
    Priority { order: Vec<usize> },
}

/// How a single selection is made among tied max-weight vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    LowestIndex,
    Explicit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub tie_break: TieBreak,
}

impl Policy {
    pub fn max_weight() -> Self {
        Self { kind: PolicyKind::MaxWeight, tie_break: TieBreak::LowestIndex }
    }

    pub fn work_conserving() -> Self {
        Self { kind: PolicyKind::WorkConservingMaxWeight, tie_break: TieBreak::LowestIndex }
    }

    pub fn gps(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidPolicy("GPS weights must be positive and finite".into()));
        }
        Ok(Self { kind: PolicyKind::Gps { weights }, tie_break: TieBreak::LowestIndex })
    }

    pub fn priority(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &q in &order {
            if q >= order.len() || seen[q] {
                return Err(Error::InvalidPolicy(format!("priority order {order:?} is not a permutation")));
            }
            seen[q] = true;
        }
        Ok(Self { kind: PolicyKind::Priority { order }, tie_break: TieBreak::LowestIndex })
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn is_max_weight_family(&self) -> bool {
        matches!(self.kind, PolicyKind::MaxWeight | PolicyKind::WorkConservingMaxWeight)
    }

    /// The rate vector used at workload `w`.
    pub fn select(&self, region: &RateRegion, w: &[f64]) -> Result<RateVector> {
        check_dim(region.dim(), w.len())?;
        match &self.kind {
            PolicyKind::MaxWeight => self.pick(region.max_weight_set(w)?),
            PolicyKind::WorkConservingMaxWeight => {
                if region.in_box(w) {
                    region.project(w)
                } else {
                    self.pick(region.max_weight_set(w)?)
                }
            }
            PolicyKind::Gps { weights } => {
                if !region.is_simplex() {
                    return Err(Error::UnsupportedRegion);
                }
                check_dim(region.dim(), weights.len())?;
                Ok(gps_rates(region.capacities(), weights, w))
            }
            PolicyKind::Priority { order } => {
                if !region.is_simplex() {
                    return Err(Error::UnsupportedRegion);
                }
                check_dim(region.dim(), order.len())?;
                Ok(priority_rates(region.capacities(), order, w))
            }
        }
    }

    /// Every extreme selection the policy may make at `w`.
    ///
    /// For the max-weight family this is the full tie set on the
    /// discontinuity rays; deterministic policies return their single
    /// selection.
    pub fn selection_branches(&self, region: &RateRegion, w: &[f64]) -> Result<Vec<RateVector>> {
        check_dim(region.dim(), w.len())?;
        match &self.kind {
            PolicyKind::MaxWeight => region.max_weight_set(w),
            PolicyKind::WorkConservingMaxWeight => {
                if region.in_box(w) {
                    Ok(vec![region.project(w)?])
                } else {
                    region.max_weight_set(w)
                }
            }
            _ => Ok(vec![self.select(region, w)?]),
        }
    }

    fn pick(&self, mut set: Vec<RateVector>) -> Result<RateVector> {
        match self.tie_break {
            TieBreak::LowestIndex => Ok(set.swap_remove(0)),
            TieBreak::Explicit(i) => {
                if i < set.len() {
                    Ok(set.swap_remove(i))
                } else {
                    Err(Error::InvalidPolicy(format!("tie-break branch {i} out of range ({} ties)", set.len())))
                }
            }
        }
    }
}

/// Work-conserving GPS in normalised capacity units: proportional shares,
/// capped at each queue's workload, surplus redistributed until no queue is
/// capped.
fn gps_rates(caps: &[f64], weights: &[f64], w: &[f64]) -> RateVector {
    let k = caps.len();
    let demand: Vec<f64> = w.iter().zip(caps).map(|(x, c)| x.max(0.0) / c).collect();
    let mut alloc = vec![0.0; k];
    let mut active: Vec<usize> = (0..k).filter(|&i| demand[i] > 0.0).collect();
    let mut capacity = 1.0;
    loop {
        let total_w: f64 = active.iter().map(|&i| weights[i]).sum();
        if active.is_empty() || capacity <= 0.0 {
            break;
        }
        let capped: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| demand[i] <= capacity * weights[i] / total_w)
            .collect();
        if capped.is_empty() {
            for &i in &active {
                alloc[i] = capacity * weights[i] / total_w;
            }
            break;
        }
        for &i in &capped {
            alloc[i] = demand[i];
            capacity -= demand[i];
        }
        active.retain(|i| !capped.contains(i));
    }
    alloc.iter().zip(caps).map(|(a, c)| a * c).collect()
}

fn priority_rates(caps: &[f64], order: &[usize], w: &[f64]) -> RateVector {
    let mut rates = vec![0.0; caps.len()];
    let mut left = 1.0f64;
    for &q in order {
        let served = (w[q].max(0.0) / caps[q]).min(left);
        rates[q] = served * caps[q];
        left -= served;
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn work_conserving_examples() {
        let unit = RateRegion::unit_simplex(2);
        let p = Policy::work_conserving();
        assert_eq!(p.select(&unit, &[0.4, 0.3]).unwrap(), vec![0.4, 0.3]);
        assert_eq!(p.select(&unit, &[2.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(Policy::max_weight().select(&unit, &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        let explicit = Policy::max_weight().with_tie_break(TieBreak::Explicit(1));
        assert_eq!(explicit.select(&unit, &[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(explicit.select(&unit, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn branch_examples() {
        let unit = RateRegion::unit_simplex(2);
        let wc = Policy::work_conserving();
        assert_eq!(wc.selection_branches(&unit, &[1.0, 1.0]).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(wc.selection_branches(&unit, &[0.5, 0.4]).unwrap(), vec![vec![0.5, 0.4]]);
        assert_eq!(Policy::max_weight().selection_branches(&unit, &[3.0, 1.0]).unwrap(), vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn gps_splits_and_redistributes() {
        let unit = RateRegion::unit_simplex(2);
        let gps = Policy::gps(vec![1.0, 1.0]).unwrap();
        assert_eq!(gps.select(&unit, &[4.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(gps.select(&unit, &[4.0, 0.2]).unwrap(), vec![0.8, 0.2]);
        assert_eq!(gps.select(&unit, &[0.1, 0.2]).unwrap(), vec![0.1, 0.2]);
        let weighted = Policy::gps(vec![3.0, 1.0]).unwrap();
        assert_eq!(weighted.select(&unit, &[4.0, 3.0]).unwrap(), vec![0.75, 0.25]);
        assert!(Policy::gps(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn priority_serves_in_order() {
        let unit = RateRegion::unit_simplex(2);
        let prio = Policy::priority(vec![0, 1]).unwrap();
        assert_eq!(prio.select(&unit, &[0.3, 2.0]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(prio.select(&unit, &[3.0, 2.0]).unwrap(), vec![1.0, 0.0]);
        let rev = Policy::priority(vec![1, 0]).unwrap();
        assert_eq!(rev.select(&unit, &[3.0, 0.25]).unwrap(), vec![0.75, 0.25]);
        assert!(Policy::priority(vec![0, 0]).is_err());
    }

    #[test]
    fn gps_needs_simplex() {
        let poly = RateRegion::polytope(vec![vec![1.0, 1.0]]).unwrap();
        let gps = Policy::gps(vec![1.0, 1.0]).unwrap();
        assert_eq!(gps.select(&poly, &[1.0, 1.0]), Err(Error::UnsupportedRegion));
    }

    fn all_policies(k: usize) -> Vec<Policy> {
        vec![
            Policy::work_conserving(),
            Policy::gps((1..=k).map(|i| i as f64).collect()).unwrap(),
            Policy::priority((0..k).rev().collect()).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn selections_are_feasible_and_work_conserving(
            w in prop::collection::vec(0.0f64..3.0, 2..5),
            caps_seed in prop::collection::vec(0.5f64..2.0, 4),
        ) {
            let caps: Vec<f64> = caps_seed[..w.len()].to_vec();
            let region = RateRegion::simplex(caps).unwrap();
            let what = region.normalized_sum(&w).unwrap();
            for p in all_policies(w.len()) {
                let r = p.select(&region, &w).unwrap();
                prop_assert!(region.contains(&r).unwrap());
                let served = region.normalized_sum(&r).unwrap();
                if what >= 1.0 {
                    prop_assert!((served - 1.0).abs() <= 1e-9, "{:?} {:?} {:?}", p, w, r);
                } else {
                    prop_assert!((served - what).abs() <= 1e-9, "{:?} {:?} {:?}", p, w, r);
                }
            }
            let mw = Policy::max_weight().select(&region, &w).unwrap();
            prop_assert!(region.contains(&mw).unwrap());
        }

        #[test]
        fn max_weight_selection_scale_invariant(w in prop::collection::vec(0.01f64..3.0, 2..5), alpha in 0.01f64..50.0) {
            let region = RateRegion::unit_simplex(w.len());
            let p = Policy::max_weight();
            let scaled: Vec<f64> = w.iter().map(|x| x * alpha).collect();
            prop_assert_eq!(p.select(&region, &w).unwrap(), p.select(&region, &scaled).unwrap());
        }

        #[test]
        fn selection_is_a_branch(w in prop::collection::vec(0.0f64..2.0, 2..4)) {
            let region = RateRegion::unit_simplex(w.len());
            for p in [Policy::max_weight(), Policy::work_conserving()] {
                let sel = p.select(&region, &w).unwrap();
                let branches = p.selection_branches(&region, &w).unwrap();
                prop_assert!(branches.contains(&sel));
            }
        }
    }
}
