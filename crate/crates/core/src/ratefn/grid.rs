//! Value iteration over a workload grid, for any deterministic or
//! max-weight-family policy on a simplex with up to four queues.
//!
//! Workloads live on the grid `i_k delta C^k`, `0 <= i_k delta <= b_hat + t`.
//! One step maps the value function through the scheduler (every branch
//! of the max-weight family at ties), rounds the post-service workload to
//! the grid, and adds arrivals by a separable min-plus convolution, one
//! axis at a time. The final slot lands on the target exactly. The best
//! grid path is then refined by a pattern search over continuous arrivals
//! with the true dynamics, keeping the scheduler branches the grid chose.
//! Rounding can leave the grid path slightly infeasible; the search uses an
//! exact penalty so the reported value is the cost of an actual feasible
//! path whenever one is found near the grid optimum.

use serde::{Deserialize, Serialize};

use crate::dynamics::ArrivalPath;
use crate::error::{check_dim, Error, Result};
use crate::policy::{Policy, PolicyKind};
use crate::region::RateRegion;
use crate::source::SourceModel;

use super::{check_target, Method, RateFnOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    /// Grid step in normalised units.
    pub delta: f64,
    /// Largest number of grid points per layer.
    pub max_states: usize,
    /// Refine the grid optimum over continuous arrivals.
    pub polish: bool,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { delta: 0.05, max_states: 4_000_000, polish: true }
    }
}

/// Back-pointer storage is capped at this many bytes.
const MAX_POINTER_BYTES: usize = 2_000_000_000;
const EXCLUSION_TOL: f64 = 1e-9;
/// Weight of the constraint violation in the polish objective.
const PENALTY: f64 = 1e3;
/// Largest violation accepted for a polished path.
const FEAS_TOL: f64 = 1e-9;

struct Grid {
    k: usize,
    h: Vec<f64>,
    n: Vec<usize>,
    stride: Vec<usize>,
    len: usize,
}

impl Grid {
    fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for i in 0..self.k {
            c[i] = idx % (self.n[i] + 1);
            idx /= self.n[i] + 1;
        }
        c
    }

    fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx).iter().zip(&self.h).map(|(&c, h)| c as f64 * h).collect()
    }

    fn round(&self, w: &[f64]) -> usize {
        (0..self.k)
            .map(|i| ((w[i] / self.h[i]).round().max(0.0) as usize).min(self.n[i]) * self.stride[i])
            .sum()
    }
}

struct Layer {
    v: Vec<f64>,
    /// For each rounded post-service point: the previous-layer state and
    /// the branch taken there.
    g_src: Vec<u32>,
    g_branch: Vec<u8>,
    /// Per axis pass: the source coordinate along that axis.
    pass_arg: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
struct Final {
    value: f64,
    u: usize,
    state: usize,
    branch: usize,
}

/// `I_t(b)` under `policy` by grid value iteration.
///
/// Work-conserving policies (work-conserving max-weight, GPS, priority)
/// empty any workload inside the region, so only paths whose intermediate
/// workloads stay outside it are searched and the result is minimised
/// over the path length. Plain max-weight is not work conserving; its
/// paths run the full `t` slots from empty.
pub fn it_grid(
    model: &SourceModel,
    region: &RateRegion,
    policy: &Policy,
    b: &[f64],
    t: usize,
    settings: &GridSettings,
) -> Result<RateFnOutcome> {
    if t < 1 {
        return Err(Error::Domain("horizon t must be at least 1".into()));
    }
    check_dim(region.dim(), model.dim())?;
    check_target(b, region.dim())?;
    if !region.is_simplex() {
        return Err(Error::UnsupportedRegion);
    }
    let k = region.dim();
    if k > 4 {
        return Err(Error::Unsupported("grid method handles at most four queues".into()));
    }
    if !(settings.delta > 0.0 && settings.delta.is_finite()) {
        return Err(Error::Domain("grid step must be positive".into()));
    }
    let wc = !matches!(policy.kind, PolicyKind::MaxWeight);
    if t == 1 {
        return super::one_slot_outcome(model, b, Method::GridDp);
    }

    let caps = region.capacities().to_vec();
    let bhat = region.hat(b);
    let h: Vec<f64> = caps.iter().map(|c| settings.delta * c).collect();
    let steps = ((bhat + t as f64) / settings.delta).ceil() as usize;
    let n = vec![steps; k];
    let len = (steps + 1).checked_pow(k as u32).unwrap_or(usize::MAX);
    if len > settings.max_states {
        return Err(Error::Resource(format!(
            "grid of {len} states per layer exceeds the budget of {}",
            settings.max_states
        )));
    }
    let pointer_bytes = len.saturating_mul(t - 1).saturating_mul(4 * k + 5);
    if pointer_bytes > MAX_POINTER_BYTES {
        return Err(Error::Resource(format!("grid of {len} states over {t} slots needs {pointer_bytes} bytes")));
    }
    let mut stride = vec![1; k];
    for i in 1..k {
        stride[i] = stride[i - 1] * (n[i - 1] + 1);
    }
    let grid = Grid { k, h, n, stride, len };
    let tables: Vec<Vec<f64>> = (0..k)
        .map(|q| (0..=grid.n[q]).map(|d| model.queue(q).conjugate_unchecked(d as f64 * grid.h[q])).collect())
        .collect();
    let excluded = |w: &[f64]| wc && region.hat(w) < 1.0 - EXCLUSION_TOL;

    // Branch tables for every grid state, computed once.
    let mut posts: Vec<Vec<Vec<f64>>> = Vec::with_capacity(grid.len);
    for idx in 0..grid.len {
        let w = grid.point(idx);
        let rs = policy.selection_branches(region, &w)?;
        posts.push(rs.iter().map(|r| w.iter().zip(r).map(|(a, s)| (a - s).max(0.0)).collect()).collect());
    }

    let mut first = vec![f64::INFINITY; grid.len];
    for (idx, v) in first.iter_mut().enumerate() {
        let w = grid.point(idx);
        if !excluded(&w) {
            *v = model.slot_cost(&w).unwrap_or(f64::INFINITY);
        }
    }
    let mut layers = vec![Layer { v: first, g_src: Vec::new(), g_branch: Vec::new(), pass_arg: Vec::new() }];

    let one = model.slot_cost(b)?;
    let mut best: Option<Final> = None;
    let mut best_value = if wc { one } else { f64::INFINITY };
    let finals = |layer: &Layer| -> (f64, usize, usize) {
        let mut out = (f64::INFINITY, 0, 0);
        for (idx, &v) in layer.v.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            for (bi, post) in posts[idx].iter().enumerate() {
                if let Some(c) = landing_cost(model, b, post) {
                    if v + c < out.0 {
                        out = (v + c, idx, bi);
                    }
                }
            }
        }
        out
    };
    for u in 2..=t {
        if u > 2 {
            let next = advance(&grid, &tables, &posts, layers.last().unwrap(), &excluded);
            layers.push(next);
        }
        if wc || u == t {
            let (v, state, branch) = finals(layers.last().unwrap());
            if v < best_value - 1e-12 * (1.0 + best_value.abs()) {
                best_value = v;
                best = Some(Final { value: v, u, state, branch });
            }
        }
    }

    let Some(fin) = best else {
        if wc {
            return super::one_slot_outcome(model, b, Method::GridDp);
        }
        return Err(Error::Domain(format!("target {b:?} not reachable in {t} slots on the grid")));
    };

    // Grid workloads along the best path and the branch taken at each,
    // oldest first.
    let mut states = vec![(fin.state, fin.branch)];
    for j in (1..fin.u - 1).rev() {
        let cur = states.last().unwrap().0;
        let layer = &layers[j];
        let mut p = cur;
        for ax in (0..k).rev() {
            let c = grid.coords(p)[ax];
            let src = layer.pass_arg[ax][p] as usize;
            p = p - c * grid.stride[ax] + src * grid.stride[ax];
        }
        states.push((layer.g_src[p] as usize, layer.g_branch[p] as usize));
    }
    states.reverse();
    let hints: Vec<Vec<f64>> = states
        .iter()
        .map(|&(s, bi)| {
            let w = grid.point(s);
            let rs = policy.selection_branches(region, &w)?;
            Ok(rs[bi].clone())
        })
        .collect::<Result<_>>()?;

    let replay = Replay { model, region, policy, b, wc, hints };
    let mut z: Vec<f64> = Vec::with_capacity(k * (fin.u - 1));
    let mut w = vec![0.0; k];
    for (j, &(s, _)) in states.iter().enumerate() {
        let target = grid.point(s);
        let post: Vec<f64> = if j == 0 {
            vec![0.0; k]
        } else {
            let r = replay.service(j - 1, &w).ok_or_else(|| Error::Domain("grid path replay failed".into()))?;
            w.iter().zip(&r).map(|(a, s)| (a - s).max(0.0)).collect()
        };
        for q in 0..k {
            let a = (target[q] - post[q]).max(0.0);
            z.push(a);
            w[q] = post[q] + a;
        }
    }
    if settings.polish {
        z = replay.polish(z, settings.delta * caps.iter().cloned().fold(0.0, f64::max));
    }
    let built = replay.build(&z).ok_or_else(|| Error::Domain("grid path replay failed".into()))?;
    if built.violation > FEAS_TOL {
        // Rounding left the grid path outside the feasible set and the
        // search could not repair it; report the grid value with the
        // unchecked path.
        return Ok(RateFnOutcome {
            value: fin.value,
            timescale: fin.u,
            optimal_path: ArrivalPath::from_chronological(built.slots)?,
            branch_sequence: built.services,
            method: Method::GridDp,
            truncated: false,
        });
    }
    if wc && built.value >= one {
        return super::one_slot_outcome(model, b, Method::GridDp);
    }
    Ok(RateFnOutcome {
        value: built.value,
        timescale: fin.u,
        optimal_path: ArrivalPath::from_chronological(built.slots)?,
        branch_sequence: built.services,
        method: Method::GridDp,
        truncated: false,
    })
}

fn landing_cost(model: &SourceModel, b: &[f64], post: &[f64]) -> Option<f64> {
    let mut c = 0.0;
    for (q, (bq, pq)) in b.iter().zip(post).enumerate() {
        let a = bq - pq;
        if a < -1e-12 {
            return None;
        }
        c += model.queue(q).conjugate_unchecked(a.max(0.0));
    }
    Some(c)
}

fn advance(
    grid: &Grid,
    tables: &[Vec<f64>],
    posts: &[Vec<Vec<f64>>],
    prev: &Layer,
    excluded: &dyn Fn(&[f64]) -> bool,
) -> Layer {
    let len = grid.len;
    let mut g = vec![f64::INFINITY; len];
    let mut g_src = vec![u32::MAX; len];
    let mut g_branch = vec![0u8; len];
    for (idx, &v) in prev.v.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        for (bi, post) in posts[idx].iter().enumerate() {
            let p = grid.round(post);
            if v < g[p] {
                g[p] = v;
                g_src[p] = idx as u32;
                g_branch[p] = bi as u8;
            }
        }
    }
    let mut cur = g;
    let mut pass_arg = Vec::with_capacity(grid.k);
    for ax in 0..grid.k {
        let (next, arg) = min_plus_axis(grid, &cur, &tables[ax], ax);
        cur = next;
        pass_arg.push(arg);
    }
    for (idx, v) in cur.iter_mut().enumerate() {
        if v.is_finite() && excluded(&grid.point(idx)) {
            *v = f64::INFINITY;
        }
    }
    Layer { v: cur, g_src, g_branch, pass_arg }
}

/// `out[.., i, ..] = min_{j <= i} src[.., j, ..] + f((i - j) h)` along `ax`.
fn min_plus_axis(grid: &Grid, src: &[f64], table: &[f64], ax: usize) -> (Vec<f64>, Vec<u32>) {
    let len = grid.len;
    let m = grid.n[ax] + 1;
    let st = grid.stride[ax];
    let mut out = vec![f64::INFINITY; len];
    let mut arg = vec![u32::MAX; len];
    let mut line = vec![0.0; m];
    for base in 0..len {
        if !(base / st).is_multiple_of(m) {
            continue;
        }
        for (j, l) in line.iter_mut().enumerate() {
            *l = src[base + j * st];
        }
        for i in 0..m {
            let mut best = f64::INFINITY;
            let mut bj = u32::MAX;
            for (j, &s) in line[..=i].iter().enumerate() {
                if s.is_finite() {
                    let c = s + table[i - j];
                    if c < best {
                        best = c;
                        bj = j as u32;
                    }
                }
            }
            out[base + i * st] = best;
            arg[base + i * st] = bj;
        }
    }
    (out, arg)
}

struct Replay<'a> {
    model: &'a SourceModel,
    region: &'a RateRegion,
    policy: &'a Policy,
    b: &'a [f64],
    wc: bool,
    /// Service chosen by the grid after each slot but the last.
    hints: Vec<Vec<f64>>,
}

struct Built {
    value: f64,
    /// Shortfall below the region boundary plus negative landing arrivals.
    violation: f64,
    slots: Vec<Vec<f64>>,
    services: Vec<Vec<f64>>,
}

impl Replay<'_> {
    /// The branch at `w` nearest the grid's choice after slot `j`.
    fn service(&self, j: usize, w: &[f64]) -> Option<Vec<f64>> {
        let rs = self.policy.selection_branches(self.region, w).ok()?;
        let hint = &self.hints[j];
        let dist = |r: &Vec<f64>| r.iter().zip(hint).map(|(a, h)| (a - h) * (a - h)).sum::<f64>();
        rs.into_iter().min_by(|x, y| dist(x).total_cmp(&dist(y)))
    }

    /// Cost, violation, chronological slots and services of the path whose
    /// first slots are `z` and whose last slot lands on the target
    /// (clamped at zero).
    fn build(&self, z: &[f64]) -> Option<Built> {
        let k = self.b.len();
        let mut slots: Vec<Vec<f64>> = z.chunks(k).map(|c| c.to_vec()).collect();
        let mut w = vec![0.0; k];
        let mut services = Vec::with_capacity(slots.len());
        let mut violation = 0.0;
        for (j, s) in slots.iter().enumerate() {
            if j > 0 {
                let r = self.service(j - 1, &w)?;
                for q in 0..k {
                    w[q] = (w[q] - r[q]).max(0.0);
                }
                services.push(r);
            }
            for q in 0..k {
                w[q] += s[q];
            }
            if self.wc {
                violation += (1.0 - self.region.hat(&w)).max(0.0);
            }
        }
        let r = self.service(slots.len() - 1, &w)?;
        let mut last = vec![0.0; k];
        for q in 0..k {
            let a = self.b[q] - (w[q] - r[q]).max(0.0);
            violation += (-a).max(0.0);
            last[q] = a.max(0.0);
        }
        services.push(r);
        slots.push(last);
        let value: f64 = slots.iter().map(|s| self.model.slot_cost(s).unwrap_or(f64::INFINITY)).sum();
        value.is_finite().then_some(Built { value, violation, slots, services })
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.build(z).map(|x| x.value + PENALTY * x.violation).unwrap_or(f64::INFINITY)
    }

    /// Pattern search over coordinate and pairwise directions with step
    /// halving.
    fn polish(&self, mut z: Vec<f64>, start: f64) -> Vec<f64> {
        let n = z.len();
        let mut fz = self.objective(&z);
        if !fz.is_finite() || n == 0 {
            return z;
        }
        let mut dirs: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        if n <= 24 {
            for i in 0..n {
                for j in i + 1..n {
                    dirs.push(vec![(i, 1.0), (j, 1.0)]);
                    dirs.push(vec![(i, 1.0), (j, -1.0)]);
                }
            }
        }
        let mut step = 0.5 * start;
        let floor = 1e-11 * start.max(1.0);
        let mut trial = z.clone();
        while step > floor {
            let mut improved = false;
            for d in &dirs {
                for sign in [1.0, -1.0] {
                    trial.copy_from_slice(&z);
                    for &(i, c) in d {
                        trial[i] = (trial[i] + sign * c * step).max(0.0);
                    }
                    let ft = self.objective(&trial);
                    if ft < fz {
                        fz = ft;
                        z.copy_from_slice(&trial);
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::QueueSource;

    fn cpe(lambda: f64) -> SourceModel {
        SourceModel::identical(QueueSource::compound_poisson(lambda, 0.01).unwrap(), 2).unwrap()
    }

    #[test]
    fn budget_is_enforced() {
        let m = cpe(0.3);
        let r = RateRegion::unit_simplex(2);
        let s = GridSettings { max_states: 100, ..GridSettings::default() };
        assert!(matches!(it_grid(&m, &r, &Policy::work_conserving(), &[3.0, 1.0], 2, &s), Err(Error::Resource(_))));
    }

    #[test]
    fn mean_target_costs_nothing() {
        let m = cpe(0.3);
        let r = RateRegion::unit_simplex(2);
        for p in [Policy::gps(vec![1.0, 1.0]).unwrap(), Policy::priority(vec![0, 1]).unwrap()] {
            let o = it_grid(&m, &r, &p, &[0.3, 0.3], 2, &GridSettings::default()).unwrap();
            assert_eq!(o.value, 0.0);
        }
    }
}
