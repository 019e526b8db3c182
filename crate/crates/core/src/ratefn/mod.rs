//! Finite- and infinite-horizon rate functions of the workload.
//!
//! `I_t(b)` is the cheapest path cost that drives the workload from empty at
//! time `-t` to `b` at time 0. For work-conserving policies on the simplex,
//! a workload that enters the region is emptied in the next slot, so
//!
//! ```text
//! I_t(b) = min( I_1(b), min_{1 < u <= t} c(u) )
//! ```
//!
//! where `c(u)` minimises over `u`-slot paths whose intermediate workloads
//! all stay outside the region (normalised sum at least 1). `J` is the
//! infimum of `I_t` over `t`.
//!
//! All computations run in capacity-normalised units (work divided by the
//! common per-queue capacity) and are converted back at the API boundary.

mod bounds;
mod branch;
mod grid;
mod two_slot;

use serde::{Deserialize, Serialize};

pub use bounds::{it_bounds, lower_bound_term, upper_bound_term};
pub use grid::{it_grid, GridSettings};
pub use two_slot::exact_i2;

use crate::dynamics::ArrivalPath;
use crate::error::{check_dim, Error, Result};
use crate::policy::{Policy, PolicyKind};
use crate::region::RateRegion;
use crate::source::SourceModel;
use crate::RateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BranchConvex,
    GridDp,
    ClosedFormI2,
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFnOutcome {
    pub value: f64,
    /// Length `u` of the optimal path.
    pub timescale: usize,
    /// Optimal arrivals in physical units, slot 1 = time -1.
    pub optimal_path: ArrivalPath,
    /// Service vectors at the intermediate workloads, chronologically.
    pub branch_sequence: Vec<RateVector>,
    pub method: Method,
    /// Set by [`j_rate_fn`] when the horizon cap was reached before the
    /// optimising timescale settled.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub lower_timescale: usize,
    /// Zero when the upper bound is undefined.
    pub upper_timescale: usize,
}

/// Per-queue conjugates in normalised units: `x -> Lambda*_k(c x)` for
/// the common capacity `c`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scaled<'a> {
    pub model: &'a SourceModel,
    pub cap: f64,
}

impl<'a> Scaled<'a> {
    pub fn new(model: &'a SourceModel, region: &RateRegion) -> Result<Self> {
        check_dim(region.dim(), model.dim())?;
        let cap = common_capacity(region)?;
        Ok(Self { model, cap })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn f(&self, k: usize, x: f64) -> f64 {
        self.model.queue(k).conjugate_unchecked(self.cap * x)
    }

    pub fn f_d(&self, k: usize, x: f64) -> (f64, f64, f64) {
        let q = self.model.queue(k);
        let y = self.cap * x;
        let (d1, d2) = q.conjugate_derivatives(y);
        (q.conjugate_unchecked(y), self.cap * d1, self.cap * self.cap * d2)
    }

    pub fn slot(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(k, &v)| self.f(k, v)).sum()
    }

    pub fn smooth(&self) -> bool {
        self.model.queues.iter().all(|q| q.is_smooth())
    }
}

/// The shared capacity of a simplex whose queues all have the same `C`.
pub(crate) fn common_capacity(region: &RateRegion) -> Result<f64> {
    if !region.is_simplex() {
        return Err(Error::UnsupportedRegion);
    }
    let c = region.capacities()[0];
    if region.capacities().iter().any(|&x| (x - c).abs() > 1e-12 * c) {
        return Err(Error::Unsupported("normalised computation needs equal capacities".into()));
    }
    Ok(c)
}

pub(crate) fn check_target(b: &[f64], k: usize) -> Result<()> {
    check_dim(k, b.len())?;
    if b.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain(format!("target workload must be nonnegative and finite: {b:?}")));
    }
    Ok(())
}

/// `I_1(b) = sum_k Lambda*_k(b^k)`.
pub fn one_slot_cost(model: &SourceModel, b: &[f64]) -> Result<f64> {
    check_target(b, model.dim())?;
    model.slot_cost(b)
}

/// The single-slot outcome `a_1 = b`.
pub(crate) fn one_slot_outcome(model: &SourceModel, b: &[f64], method: Method) -> Result<RateFnOutcome> {
    Ok(RateFnOutcome {
        value: one_slot_cost(model, b)?,
        timescale: 1,
        optimal_path: ArrivalPath::new(vec![b.to_vec()])?,
        branch_sequence: Vec::new(),
        method,
        truncated: false,
    })
}

/// `I_t(b)` under work-conserving max-weight.
///
/// `BranchConvex` enumerates scheduler branch sequences and solves one
/// convex program per sequence (K <= 2, equal capacities, `t <= 12` for
/// the branch part); `GridDp` runs value iteration on a workload grid with
/// the default [`GridSettings`].
pub fn it_exact(model: &SourceModel, region: &RateRegion, b: &[f64], t: usize, method: Method) -> Result<RateFnOutcome> {
    if t < 1 {
        return Err(Error::Domain("horizon t must be at least 1".into()));
    }
    check_target(b, region.dim())?;
    match method {
        Method::BranchConvex => {
            let mut search = branch::BranchSearch::new(model, region, b)?;
            for u in 2..=t {
                search.extend_to(u)?;
            }
            search.outcome()
        }
        Method::GridDp => it_grid(model, region, &Policy::work_conserving(), b, t, &GridSettings::default()),
        Method::ClosedFormI2 => {
            if t == 1 {
                one_slot_outcome(model, b, Method::ClosedFormI2)
            } else if t == 2 {
                exact_i2(model, region, b)
            } else {
                Err(Error::Unsupported("closed-form decomposition is only available for t = 2".into()))
            }
        }
        Method::Bound => Err(Error::Unsupported("bounds are returned by it_bounds".into())),
    }
}

/// `J(b) = inf_t I_t(b)`, computing `I_1, I_2, ...` until the optimising
/// timescale of the running minimum is smaller than the current horizon,
/// or `t_cap` is reached (then `truncated` is set). Two queues are capped at
/// twelve slots by the branch enumeration.
pub fn j_rate_fn(model: &SourceModel, region: &RateRegion, b: &[f64], t_cap: usize) -> Result<RateFnOutcome> {
    if t_cap < 1 {
        return Err(Error::Domain("t_cap must be at least 1".into()));
    }
    check_target(b, region.dim())?;
    let mean = model.mean();
    if region.normalized_sum(&mean)? >= 1.0 {
        return Err(Error::Domain("mean arrival rate is not strictly inside the region".into()));
    }
    let mut search = branch::BranchSearch::new(model, region, b)?;
    let cap = t_cap.min(search.max_u());
    let mut settled = false;
    for t in 2..=cap {
        let improved = search.extend_to(t)?;
        if !improved {
            settled = true;
            break;
        }
    }
    let mut out = search.outcome()?;
    // A zero value cannot improve, so it counts as settled.
    out.truncated = !settled && out.value > 0.0;
    Ok(out)
}

/// `I_t(b)` for GPS or strict priority, by grid value iteration.
pub fn it_policy(
    model: &SourceModel,
    region: &RateRegion,
    b: &[f64],
    t: usize,
    policy: &Policy,
    settings: &GridSettings,
) -> Result<RateFnOutcome> {
    match policy.kind {
        PolicyKind::Gps { .. } | PolicyKind::Priority { .. } => it_grid(model, region, policy, b, t, settings),
        _ => Err(Error::InvalidPolicy("it_policy expects GPS or priority".into())),
    }
}

/// Comparison of a path against the constant-speed path with the same
/// total, and against more balanced single-slot splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub path_cost: f64,
    pub constant_speed_cost: f64,
    /// `path_cost / constant_speed_cost` (1 when both vanish).
    pub ratio: f64,
    pub constant_speed_cheapest: bool,
    /// Per slot: whether moving the slot's split towards the equal line
    /// never raised its cost, checked on a few interpolation points.
    pub balanced_split_cheapest: Vec<bool>,
}

/// Checks that the constant-speed path to `path`'s endpoint costs no more
/// than `path`, and that within each slot more balanced splits of the same
/// total cost no more (identical queues).
pub fn path_properties_check(model: &SourceModel, path: &ArrivalPath) -> Result<PathReport> {
    check_dim(model.dim(), path.dim())?;
    let t = path.horizon();
    if t == 0 {
        return Err(Error::Domain("empty path".into()));
    }
    let total = path.total();
    let speed: Vec<f64> = total.iter().map(|x| x / t as f64).collect();
    let constant = ArrivalPath::constant(&speed, t)?;
    let path_cost = model.path_cost(path);
    let constant_speed_cost = model.path_cost(&constant);
    let ratio = if constant_speed_cost == 0.0 && path_cost == 0.0 { 1.0 } else { path_cost / constant_speed_cost };
    let tol = 1e-12 * (1.0 + constant_speed_cost.abs());
    let identical = model.is_identical();
    let balanced_split_cheapest = path
        .slots()
        .iter()
        .map(|slot| {
            if !identical {
                return true;
            }
            let d: f64 = slot.iter().sum();
            let equal = vec![d / slot.len() as f64; slot.len()];
            let mut prev = model.slot_cost(slot).unwrap_or(f64::INFINITY);
            // Walking from the slot to the equal split moves down the
            // majorisation order; the cost must not increase.
            (1..=8).all(|i| {
                let s = i as f64 / 8.0;
                let y: Vec<f64> = slot.iter().zip(&equal).map(|(a, e)| a + s * (e - a)).collect();
                let c = model.slot_cost(&y).unwrap_or(f64::INFINITY);
                let ok = c <= prev + 1e-12 * (1.0 + prev.abs());
                prev = c;
                ok
            })
        })
        .collect();
    Ok(PathReport {
        path_cost,
        constant_speed_cost,
        ratio,
        constant_speed_cheapest: constant_speed_cost <= path_cost + tol,
        balanced_split_cheapest,
    })
}

/// Schur comparison of two single-slot splits of the same total for
/// identical queues: returns `cost(x) <= cost(y)` where `x` is majorised by
/// `y`. Errors if the totals differ or `x` is not majorised by `y`.
pub fn schur_compare(model: &SourceModel, x: &[f64], y: &[f64]) -> Result<bool> {
    check_dim(model.dim(), x.len())?;
    check_dim(model.dim(), y.len())?;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    if (sx - sy).abs() > 1e-12 * (1.0 + sx.abs()) {
        return Err(Error::Domain("splits must have the same total".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ys.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (mut cx, mut cy) = (0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        cx += a;
        cy += b;
        if cx > cy + 1e-12 {
            return Err(Error::Domain("x is not majorised by y".into()));
        }
    }
    Ok(model.slot_cost(x)? <= model.slot_cost(y)? + 1e-12)
}

/// `inf_{b >= level} I_t(b)` (or `J` when `t` is `None`) for a
/// work-conserving max-weight system.
///
/// The level is first raised to the mean in each coordinate, since the
/// zero-cost point lies inside any orthant containing it. For one queue the
/// infimum is then attained at the level itself. For more queues the face
/// of the orthant is searched on a grid of `points` values per coordinate
/// spanning `[B_k, B_k + span]`.
pub fn orthant_infimum(
    model: &SourceModel,
    region: &RateRegion,
    level: &[f64],
    t: Option<usize>,
    span: f64,
    points: usize,
) -> Result<RateFnOutcome> {
    check_target(level, region.dim())?;
    let eval = |b: &[f64]| -> Result<RateFnOutcome> {
        match t {
            Some(t) => it_exact(model, region, b, t, Method::BranchConvex),
            None => j_rate_fn(model, region, b, 12),
        }
    };
    let k = level.len();
    let level: Vec<f64> = level.iter().zip(model.mean()).map(|(l, m)| l.max(m)).collect();
    let n = points.max(1);
    let axes: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            if k == 1 {
                vec![level[0]]
            } else {
                (0..n).map(|j| level[i] + span * j as f64 / (n.max(2) - 1) as f64).collect()
            }
        })
        .collect();
    let mut best: Option<RateFnOutcome> = None;
    let mut idx = vec![0usize; k];
    loop {
        let b: Vec<f64> = (0..k).map(|i| axes[i][idx[i]]).collect();
        // Only the face of the orthant matters.
        if k == 1 || (0..k).any(|i| idx[i] == 0) {
            let o = eval(&b)?;
            if best.as_ref().map(|x| o.value < x.value).unwrap_or(true) {
                best = Some(o);
            }
        }
        let mut i = 0;
        loop {
            if i == k {
                return best.ok_or_else(|| Error::Domain("empty search grid".into()));
            }
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}
