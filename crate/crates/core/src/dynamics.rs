//! Workload recursion `W_{t-1} = [W_t - R_t]^+ + A_t` and the maps built on
//! it.
//!
//! Slot `s` of an [`ArrivalPath`] holds the work arriving at physical time
//! `-s`; a run of horizon `t` starts at time `-t` and iterates `s = t, ..., 1`,
//! serving before adding the slot's arrivals.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::policy::{Policy, PolicyKind};
use crate::region::RateRegion;

/// A nonnegative, finite workload vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Workload(Vec<f64>);

impl Workload {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain(format!("workload must be nonnegative and finite: {values:?}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Workload {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Workload::new(v)
    }
}

impl From<Workload> for Vec<f64> {
    fn from(w: Workload) -> Self {
        w.0
    }
}

impl AsRef<[f64]> for Workload {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-slot work increments; `slot(s)` is the arrival vector at time `-s`.
///
/// Serialised as the dense matrix `[[slot 1], [slot 2], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ArrivalPath {
    slots: Vec<Vec<f64>>,
    dim: usize,
}

impl ArrivalPath {
    /// Builds a path from slots ordered `s = 1, 2, ..., t`.
    pub fn new(slots: Vec<Vec<f64>>) -> Result<Self> {
        let dim = slots.first().map(|s| s.len()).unwrap_or(0);
        Self::with_dim(dim, slots)
    }

    /// Like [`ArrivalPath::new`] but also valid for an empty path.
    pub fn with_dim(dim: usize, slots: Vec<Vec<f64>>) -> Result<Self> {
        for s in &slots {
            check_dim(dim, s.len())?;
            if s.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Domain(format!("arrivals must be nonnegative and finite: {s:?}")));
            }
        }
        Ok(Self { slots, dim })
    }

    /// Builds a path from slots listed in chronological order
    /// (`s = t` first, `s = 1` last).
    pub fn from_chronological(mut slots: Vec<Vec<f64>>) -> Result<Self> {
        slots.reverse();
        Self::new(slots)
    }

    pub fn constant(rate: &[f64], horizon: usize) -> Result<Self> {
        Self::with_dim(rate.len(), vec![rate.to_vec(); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Arrivals at time `-s`, `1 <= s <= horizon`.
    pub fn slot(&self, s: usize) -> &[f64] {
        &self.slots[s - 1]
    }

    pub fn slots(&self) -> &[Vec<f64>] {
        &self.slots
    }

    /// `a(m1, m2]`: work arriving in slots `m1 < s <= m2`.
    pub fn cumulative(&self, m1: usize, m2: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for s in (m1 + 1)..=m2.min(self.horizon()) {
            for (o, x) in out.iter_mut().zip(self.slot(s)) {
                *o += x;
            }
        }
        out
    }

    pub fn total(&self) -> Vec<f64> {
        self.cumulative(0, self.horizon())
    }

    /// The restriction to slots `(v, horizon]` re-indexed so that slot
    /// `v + 1` becomes slot 1.
    pub fn tail_from(&self, v: usize) -> ArrivalPath {
        ArrivalPath { slots: self.slots[v.min(self.slots.len())..].to_vec(), dim: self.dim }
    }

    /// The restriction to slots `1..=u`.
    pub fn truncate(&self, u: usize) -> ArrivalPath {
        ArrivalPath { slots: self.slots[..u.min(self.slots.len())].to_vec(), dim: self.dim }
    }

    /// Path whose first slots are `self` and whose older slots are `older`.
    pub fn concat(&self, older: &ArrivalPath) -> Result<ArrivalPath> {
        check_dim(self.dim, older.dim)?;
        let mut slots = self.slots.clone();
        slots.extend(older.slots.iter().cloned());
        Ok(ArrivalPath { slots, dim: self.dim })
    }

    /// Entries as `(slot, queue, work)` triples, queue indices 0-based.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.horizon() * self.dim);
        for (s, slot) in self.slots.iter().enumerate() {
            for (k, &x) in slot.iter().enumerate() {
                out.push((s + 1, k, x));
            }
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for ArrivalPath {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        ArrivalPath::new(v)
    }
}

impl From<ArrivalPath> for Vec<Vec<f64>> {
    fn from(p: ArrivalPath) -> Self {
        p.slots
    }
}

/// One slot of the recursion: `[w - select(w)]^+ + a`.
pub fn step(w: &[f64], a_slot: &[f64], policy: &Policy, region: &RateRegion) -> Result<Vec<f64>> {
    check_dim(region.dim(), a_slot.len())?;
    let r = policy.select(region, w)?;
    Ok(apply_service(w, &r, a_slot))
}

/// `[w - r]^+ + a`.
pub fn apply_service(w: &[f64], r: &[f64], a: &[f64]) -> Vec<f64> {
    w.iter().zip(r).zip(a).map(|((w, r), a)| (w - r).max(0.0) + a).collect()
}

fn check_init(policy: &Policy, region: &RateRegion, w_init: Option<&Workload>) -> Result<Vec<f64>> {
    match w_init {
        None => Ok(vec![0.0; region.dim()]),
        Some(w) => {
            check_dim(region.dim(), w.dim())?;
            let admissible = match policy.kind {
                PolicyKind::WorkConservingMaxWeight => region.contains(w.values())?,
                _ => w.values().iter().all(|&x| x == 0.0),
            };
            if admissible {
                Ok(w.values().to_vec())
            } else {
                Err(Error::Init(format!("{:?} for policy {:?}", w.values(), policy.kind)))
            }
        }
    }
}

/// Workloads `(W_t, W_{t-1}, ..., W_0)` starting from `w_init` (zero by
/// default) at time `-t`.
pub fn trajectory(
    path: &ArrivalPath,
    policy: &Policy,
    region: &RateRegion,
    w_init: Option<&Workload>,
) -> Result<Vec<Workload>> {
    if path.horizon() > 0 {
        check_dim(region.dim(), path.dim())?;
    }
    let mut w = check_init(policy, region, w_init)?;
    let mut out = Vec::with_capacity(path.horizon() + 1);
    out.push(Workload(w.clone()));
    for s in (1..=path.horizon()).rev() {
        w = step(&w, path.slot(s), policy, region)?;
        out.push(Workload(w.clone()));
    }
    Ok(out)
}

/// `W_0 = G_t(path)`.
pub fn finite_horizon(
    path: &ArrivalPath,
    policy: &Policy,
    region: &RateRegion,
    w_init: Option<&Workload>,
) -> Result<Workload> {
    let traj = trajectory(path, policy, region, w_init)?;
    Ok(traj.into_iter().last().expect("trajectory is never empty"))
}

/// Replays `path` with an explicit service vector per slot.
///
/// `services[i]` is the rate used in the slot that starts from workload
/// `W_{t-i}`, i.e. services are listed chronologically. Returns the
/// trajectory `(W_t, ..., W_0)` from zero workload.
pub fn replay_services(path: &ArrivalPath, services: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if services.len() != path.horizon() {
        return Err(Error::Dimension { expected: path.horizon(), got: services.len() });
    }
    let mut w = vec![0.0; path.dim()];
    let mut out = vec![w.clone()];
    for (i, s) in (1..=path.horizon()).rev().enumerate() {
        check_dim(path.dim(), services[i].len())?;
        w = apply_service(&w, &services[i], path.slot(s));
        out.push(w.clone());
    }
    Ok(out)
}

/// Normalised sum workload from the closed form
/// `max_{1 <= u <= t} a^(0,u] - (u - 1)`; zero for an empty path.
pub fn sum_workload(path: &ArrivalPath, region: &RateRegion) -> Result<f64> {
    if !region.is_simplex() {
        return Err(Error::UnsupportedRegion);
    }
    if path.horizon() > 0 {
        check_dim(region.dim(), path.dim())?;
    }
    let mut best: f64 = 0.0;
    let mut acc = 0.0;
    for u in 1..=path.horizon() {
        acc += region.hat(path.slot(u));
        best = best.max(acc - (u as f64 - 1.0));
    }
    Ok(best)
}

/// Smallest `s >= 1` such that the work-conserving workload at time `-s`,
/// computed from the slots older than `-s`, lies in the region.
///
/// The workload at time `-t` is empty, so a scan over `s = 1..=t` always
/// terminates for a nonempty path; the error is reserved for a path with
/// no slots.
pub fn settling_time(path: &ArrivalPath, region: &RateRegion) -> Result<usize> {
    if !region.is_simplex() {
        return Err(Error::UnsupportedRegion);
    }
    let t = path.horizon();
    for s in 1..=t {
        // W_{-s} is driven by slots s+1..=t.
        let older = path.tail_from(s);
        if sum_workload(&older, region)? <= 1.0 + crate::TOL {
            return Ok(s);
        }
    }
    Err(Error::NoSettlingTime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> RateRegion {
        RateRegion::unit_simplex(2)
    }

    #[test]
    fn step_examples() {
        let wc = Policy::work_conserving();
        assert_eq!(step(&[0.0, 0.0], &[0.5, 0.2], &wc, &unit()).unwrap(), vec![0.5, 0.2]);
        assert_eq!(step(&[2.0, 1.0], &[0.0, 0.0], &wc, &unit()).unwrap(), vec![1.0, 1.0]);
        let w = step(&[0.4, 0.3], &[0.1, 0.1], &wc, &unit()).unwrap();
        assert_eq!(w, vec![0.1, 0.1]);
    }

    #[test]
    fn finite_horizon_examples() {
        let wc = Policy::work_conserving();
        let one = ArrivalPath::new(vec![vec![4.0, 2.0]]).unwrap();
        assert_eq!(finite_horizon(&one, &wc, &unit(), None).unwrap().values(), &[4.0, 2.0]);
        let two = ArrivalPath::new(vec![vec![2.5, 1.0], vec![2.5, 1.0]]).unwrap();
        assert_eq!(finite_horizon(&two, &wc, &unit(), None).unwrap().values(), &[4.0, 2.0]);
        let small = ArrivalPath::new(vec![vec![0.3, 0.3], vec![0.2, 0.2]]).unwrap();
        let w0 = finite_horizon(&small, &wc, &unit(), None).unwrap();
        assert!((w0.values()[0] - 0.3).abs() < 1e-15 && (w0.values()[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn trajectory_examples() {
        let wc = Policy::work_conserving();
        let two = ArrivalPath::new(vec![vec![2.5, 1.0], vec![2.5, 1.0]]).unwrap();
        let traj: Vec<Vec<f64>> = trajectory(&two, &wc, &unit(), None).unwrap().into_iter().map(Vec::from).collect();
        assert_eq!(traj, vec![vec![0.0, 0.0], vec![2.5, 1.0], vec![4.0, 2.0]]);
        let zero = ArrivalPath::new(vec![vec![0.0, 0.0]]).unwrap();
        let traj: Vec<Vec<f64>> = trajectory(&zero, &wc, &unit(), None).unwrap().into_iter().map(Vec::from).collect();
        assert_eq!(traj, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn init_validation() {
        let p = ArrivalPath::new(vec![vec![0.0, 0.0]]).unwrap();
        let inside = Workload::new(vec![0.5, 0.5]).unwrap();
        let outside = Workload::new(vec![0.8, 0.5]).unwrap();
        assert!(finite_horizon(&p, &Policy::work_conserving(), &unit(), Some(&inside)).is_ok());
        assert!(matches!(
            finite_horizon(&p, &Policy::work_conserving(), &unit(), Some(&outside)),
            Err(Error::Init(_))
        ));
        assert!(matches!(finite_horizon(&p, &Policy::max_weight(), &unit(), Some(&inside)), Err(Error::Init(_))));
        assert!(Workload::new(vec![-1.0]).is_err());
    }

    #[test]
    fn sum_workload_examples() {
        let flat = ArrivalPath::constant(&[0.25, 0.25], 5).unwrap();
        assert_eq!(sum_workload(&flat, &unit()).unwrap(), 0.5);
        let p = ArrivalPath::new(vec![vec![0.5, 0.5], vec![2.0, 1.0]]).unwrap();
        assert_eq!(sum_workload(&p, &unit()).unwrap(), 3.0);
    }

    #[test]
    fn settling_time_examples() {
        let flat = ArrivalPath::constant(&[0.2, 0.2], 6).unwrap();
        assert_eq!(settling_time(&flat, &unit()).unwrap(), 1);
        let zeros = ArrivalPath::constant(&[0.0, 0.0], 4).unwrap();
        assert_eq!(settling_time(&zeros, &unit()).unwrap(), 1);
        // slot hats 0.5, 3, 0.5: W at -1 carries 3 - ... > 1, W at -2 = 0.5.
        let p = ArrivalPath::new(vec![vec![0.25, 0.25], vec![2.0, 1.0], vec![0.25, 0.25]]).unwrap();
        assert_eq!(settling_time(&p, &unit()).unwrap(), 2);
        let empty = ArrivalPath::with_dim(2, vec![]).unwrap();
        assert_eq!(settling_time(&empty, &unit()), Err(Error::NoSettlingTime));
    }

    #[test]
    fn serde_round_trip() {
        let p = ArrivalPath::new(vec![vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[[1.0,2.0],[0.5,0.0]]");
        assert_eq!(serde_json::from_str::<ArrivalPath>(&s).unwrap(), p);
        assert!(serde_json::from_str::<ArrivalPath>("[[1.0],[0.5,0.0]]").is_err());
    }

    fn path_strategy(k: usize) -> impl Strategy<Value = ArrivalPath> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.5, k), 1..8).prop_map(|s| ArrivalPath::new(s).unwrap())
    }

    proptest! {
        #[test]
        fn normalized_sum_recursion(path in (2usize..5).prop_flat_map(path_strategy)) {
            // With unequal capacities a max-weight vertex can leave work on
            // the table (C = (1, 10), W = (1, 0.5) serves only queue 1), so
            // the scalar recursion is a unit-capacity property.
            let region = RateRegion::unit_simplex(path.dim());
            let traj = trajectory(&path, &Policy::work_conserving(), &region, None).unwrap();
            for (i, s) in (1..=path.horizon()).rev().enumerate() {
                let before = region.hat(traj[i].values());
                let after = region.hat(traj[i + 1].values());
                let expected = (before - 1.0).max(0.0) + region.hat(path.slot(s));
                prop_assert!((after - expected).abs() <= 1e-9);
            }
        }

        #[test]
        fn sum_workload_matches_recursion(path in path_strategy(2)) {
            let w0 = finite_horizon(&path, &Policy::work_conserving(), &unit(), None).unwrap();
            let direct = unit().normalized_sum(w0.values()).unwrap();
            prop_assert!((direct - sum_workload(&path, &unit()).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn bounded_by_arrivals(path in path_strategy(2)) {
            for policy in [Policy::max_weight(), Policy::work_conserving()] {
                let w0 = finite_horizon(&path, &policy, &unit(), None).unwrap();
                let total = path.total();
                for k in 0..2 {
                    prop_assert!(w0.values()[k] <= total[k] + 1e-12);
                }
            }
        }

        #[test]
        fn monotone_in_arrivals(path in path_strategy(2), slot in 0usize..8, extra in prop::collection::vec(0.0f64..1.0, 2)) {
            let mut slots = path.slots().to_vec();
            let i = slot % slots.len();
            slots[i][0] += extra[0];
            slots[i][1] += extra[1];
            let bigger = ArrivalPath::new(slots).unwrap();
            let wc = Policy::work_conserving();
            let a = unit().hat(finite_horizon(&path, &wc, &unit(), None).unwrap().values());
            let b = unit().hat(finite_horizon(&bigger, &wc, &unit(), None).unwrap().values());
            prop_assert!(b >= a - 1e-12);
        }

        #[test]
        fn trajectory_is_fold_of_step(path in path_strategy(2)) {
            let wc = Policy::work_conserving();
            let traj = trajectory(&path, &wc, &unit(), None).unwrap();
            let mut w = vec![0.0, 0.0];
            for s in (1..=path.horizon()).rev() {
                w = step(&w, path.slot(s), &wc, &unit()).unwrap();
            }
            prop_assert_eq!(traj.last().unwrap().values(), &w[..]);
        }
    }
}
