//! Branch-sequence enumeration for work-conserving max-weight on the
//! simplex (one or two queues, equal capacities).
//!
//! Outside the region the scheduler is affine on each of three closed
//! pieces of the normalised workload plane:
//!
//! * `Serve(0)`: `W1 >= W2`, `W1 >= 1`, serve `(1, 0)`;
//! * `Serve(1)`: `W2 >= W1`, `W2 >= 1`, serve `(0, 1)`;
//! * `Project`: `W` in `[0,1]^2`, `W1 + W2 >= 1`, leaving
//!   `((W1 + W2 - 1) / 2) (1, 1)`.
//!
//! Each piece leaves a nonnegative workload, so no clipping case arises.
//! Fixing the piece at every intermediate workload makes the dynamics
//! affine in the arrivals and `c(u)` a separable convex program. The
//! sequences are searched depth first with a convex relaxation bound on
//! each prefix.

use crate::dynamics::ArrivalPath;
use crate::error::{Error, Result};
use crate::region::RateRegion;
use crate::solver::{self, Problem, Row, Settings, Status};
use crate::source::SourceModel;

use super::{Method, RateFnOutcome, Scaled};

/// Longest path handled for two queues (`3^(u-1)` sequences).
pub(crate) const MAX_U: usize = 12;

const FEAS_TOL: f64 = 1e-8;
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Branch {
    Serve(usize),
    Project,
}

/// An affine function of the flattened arrivals, one per queue.
#[derive(Debug, Clone)]
struct Affine {
    coeffs: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl Affine {
    /// `sum_k W^k` as a row `coeffs . x + offset`.
    fn total(&self) -> (Vec<f64>, f64) {
        let n = self.coeffs[0].len();
        let mut c = vec![0.0; n];
        for row in &self.coeffs {
            for (ci, r) in c.iter_mut().zip(row) {
                *ci += r;
            }
        }
        (c, self.offset.iter().sum())
    }
}

#[derive(Debug, Clone)]
struct Incumbent {
    value: f64,
    u: usize,
    /// Normalised arrivals, chronological, flattened slot-major.
    x: Vec<f64>,
    branches: Vec<Branch>,
}

pub(crate) struct BranchSearch<'a> {
    s: Scaled<'a>,
    k: usize,
    bt: Vec<f64>,
    b: Vec<f64>,
    best: Incumbent,
    settings: Settings,
    horizon: usize,
}

impl<'a> BranchSearch<'a> {
    pub fn new(model: &'a SourceModel, region: &RateRegion, b: &[f64]) -> Result<Self> {
        let s = Scaled::new(model, region)?;
        let k = s.dim();
        if k > 2 {
            return Err(Error::Unsupported("branch enumeration handles at most two queues".into()));
        }
        if !s.smooth() {
            return Err(Error::Unsupported("branch enumeration needs smooth conjugates".into()));
        }
        let bt: Vec<f64> = b.iter().map(|v| v / s.cap).collect();
        let value = s.slot(&bt);
        Ok(Self {
            s,
            k,
            b: b.to_vec(),
            best: Incumbent { value, u: 1, x: bt.clone(), branches: Vec::new() },
            bt,
            settings: Settings::default(),
            horizon: 1,
        })
    }

    /// Largest `u` this search can reach.
    pub fn max_u(&self) -> usize {
        if self.k == 1 {
            usize::MAX
        } else {
            MAX_U
        }
    }

    /// Searches every `u <= t` not yet covered. Returns whether the
    /// incumbent improved.
    pub fn extend_to(&mut self, t: usize) -> Result<bool> {
        if t > self.max_u() {
            return Err(Error::Resource(format!(
                "branch enumeration limited to u <= {MAX_U} for two queues (requested {t}); use the grid method"
            )));
        }
        let before = self.best.value;
        while self.horizon < t {
            self.horizon += 1;
            self.search(self.horizon);
        }
        Ok(self.best.value < before)
    }

    pub fn outcome(&self) -> Result<RateFnOutcome> {
        let Incumbent { value, u, x, branches } = &self.best;
        let cap = self.s.cap;
        let k = self.k;
        let chrono: Vec<Vec<f64>> = (0..*u).map(|j| x[j * k..(j + 1) * k].iter().map(|v| v * cap).collect()).collect();
        let mut slots = chrono;
        // The final slot lands exactly on the target.
        if let Some(last) = slots.last_mut() {
            if *u == 1 {
                *last = self.b.clone();
            }
        }
        let optimal_path = ArrivalPath::from_chronological(slots)?;
        let branch_sequence = self.service_vectors(*u, x, branches);
        Ok(RateFnOutcome {
            value: *value,
            timescale: *u,
            optimal_path,
            branch_sequence,
            method: Method::BranchConvex,
            truncated: false,
        })
    }

    fn service_vectors(&self, u: usize, x: &[f64], branches: &[Branch]) -> Vec<Vec<f64>> {
        let k = self.k;
        let cap = self.s.cap;
        let mut w = x[..k].to_vec();
        let mut out = Vec::with_capacity(branches.len());
        for (j, br) in branches.iter().enumerate() {
            let r: Vec<f64> = match br {
                Branch::Serve(q) => (0..k).map(|i| if i == *q { 1.0 } else { 0.0 }).collect(),
                Branch::Project => {
                    let d = ((w[0] + w[1] - 1.0) / 2.0).max(0.0);
                    vec![(w[0] - d).max(0.0), (w[1] - d).max(0.0)]
                }
            };
            let a = &x[(j + 1) * k..(j + 2) * k];
            for i in 0..k {
                w[i] = (w[i] - r[i]).max(0.0) + a[i];
            }
            out.push(r.into_iter().map(|v| v * cap).collect());
        }
        debug_assert_eq!(out.len(), u - 1);
        out
    }

    fn branches(&self) -> Vec<Branch> {
        if self.k == 1 {
            vec![Branch::Serve(0)]
        } else {
            vec![Branch::Serve(0), Branch::Serve(1), Branch::Project]
        }
    }

    fn search(&mut self, u: usize) {
        let n = self.k * u;
        let w0 = Affine {
            coeffs: (0..self.k)
                .map(|i| {
                    let mut c = vec![0.0; n];
                    c[i] = 1.0;
                    c
                })
                .collect(),
            offset: vec![0.0; self.k],
        };
        let mut prefix = Vec::new();
        self.dfs(u, &w0, &mut prefix, &[]);
    }

    /// `w` is the workload after chronological slot `prefix.len()` (slot
    /// 0 is the oldest); `rows` holds the branch conditions so far.
    fn dfs(&mut self, u: usize, w: &Affine, prefix: &mut Vec<Branch>, rows: &[Row]) {
        let j = prefix.len();
        let n = self.k * u;
        if j == u - 1 {
            let mut p = Problem::new(n);
            p.ge = rows.to_vec();
            for i in 0..self.k {
                p.eq.push(Row::new(w.coeffs[i].clone(), self.bt[i] - w.offset[i]));
            }
            if let Some((value, x)) = self.solve(&p) {
                if value < self.best.value - TIE_TOL * (1.0 + self.best.value.abs()) {
                    self.best = Incumbent { value, u, x, branches: prefix.clone() };
                }
            }
            return;
        }
        // Relaxation bound for every completion of this prefix.
        let relax = self.relaxation(u, j, w, rows);
        match self.solve(&relax) {
            None => return,
            Some((v, _)) if v >= self.best.value - TIE_TOL * (1.0 + self.best.value.abs()) => return,
            _ => {}
        }
        for br in self.branches() {
            let mut child_rows = rows.to_vec();
            child_rows.extend(self.conditions(w, br));
            let next = self.transition(w, br, j + 1, n);
            prefix.push(br);
            self.dfs(u, &next, prefix, &child_rows);
            prefix.pop();
        }
    }

    /// Constraints on `w` for branch `br`, as `>=` rows.
    fn conditions(&self, w: &Affine, br: Branch) -> Vec<Row> {
        let row = |i: usize, rhs: f64| Row::new(w.coeffs[i].clone(), rhs - w.offset[i]);
        let diff = |i: usize, l: usize| {
            let c: Vec<f64> = w.coeffs[i].iter().zip(&w.coeffs[l]).map(|(a, b)| a - b).collect();
            Row::new(c, w.offset[l] - w.offset[i])
        };
        match br {
            Branch::Serve(q) if self.k == 1 => vec![row(q, 1.0)],
            Branch::Serve(q) => vec![diff(q, 1 - q), row(q, 1.0)],
            Branch::Project => {
                let neg = |i: usize| {
                    Row::new(w.coeffs[i].iter().map(|a| -a).collect(), w.offset[i] - 1.0)
                };
                let (c, o) = w.total();
                vec![neg(0), neg(1), Row::new(c, 1.0 - o)]
            }
        }
    }

    /// Workload after serving `w` by `br` and adding chronological slot
    /// `slot`.
    fn transition(&self, w: &Affine, br: Branch, slot: usize, n: usize) -> Affine {
        let mut next = match br {
            Branch::Serve(q) => {
                let mut out = w.clone();
                out.offset[q] -= 1.0;
                out
            }
            Branch::Project => {
                let (c, o) = w.total();
                let half: Vec<f64> = c.iter().map(|v| 0.5 * v).collect();
                Affine { coeffs: vec![half.clone(), half], offset: vec![0.5 * (o - 1.0); 2] }
            }
        };
        for i in 0..self.k {
            debug_assert_eq!(next.coeffs[i].len(), n);
            next.coeffs[i][slot * self.k + i] += 1.0;
        }
        next
    }

    /// Drops the branch identities of the remaining steps and keeps only
    /// what every completion satisfies: each remaining intermediate
    /// workload has normalised sum at least 1 (so exactly one unit is
    /// served per step) and the remaining services, nonnegative per queue
    /// with total equal to the number of steps, bridge to the target.
    fn relaxation(&self, u: usize, j: usize, w: &Affine, rows: &[Row]) -> Problem {
        let k = self.k;
        let n = k * u;
        let steps = (u - 1 - j) as f64;
        let mut p = Problem::new(n);
        p.ge = rows.to_vec();
        let (c0, o0) = w.total();
        // Normalised sum of the intermediate workloads j, j+1, ..., u-2.
        let mut c = c0.clone();
        let mut o = o0;
        for i in j..u - 1 {
            if i > j {
                o -= 1.0;
                for q in 0..k {
                    c[i * k + q] += 1.0;
                }
            }
            p.ge.push(Row::new(c.clone(), 1.0 - o));
        }
        // Workload plus remaining arrivals minus target is the service.
        for q in 0..k {
            let mut cq = w.coeffs[q].clone();
            for i in j + 1..u {
                cq[i * k + q] += 1.0;
            }
            p.ge.push(Row::new(cq, self.bt[q] - w.offset[q]));
        }
        let mut ct = c0;
        for i in j + 1..u {
            for q in 0..k {
                ct[i * k + q] += 1.0;
            }
        }
        let bsum: f64 = self.bt.iter().sum();
        p.eq.push(Row::new(ct, bsum + steps - o0));
        p
    }

    fn solve(&self, p: &Problem) -> Option<(f64, Vec<f64>)> {
        let s = self.s;
        let k = self.k;
        let sol = solver::minimize(p, |i, x| s.f_d(i % k, x), &self.settings);
        if sol.status == Status::Infeasible || p.violation(&sol.x) > FEAS_TOL {
            return None;
        }
        let value: f64 = sol.x.chunks(k).map(|slot| s.slot(slot)).sum();
        Some((value, sol.x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::QueueSource;
    use approx::assert_abs_diff_eq;

    fn search(lambda: f64, b: &[f64]) -> (SourceModel, RateRegion) {
        let _ = b;
        (
            SourceModel::identical(QueueSource::compound_poisson(lambda, 0.01).unwrap(), 2).unwrap(),
            RateRegion::unit_simplex(2),
        )
    }

    #[test]
    fn two_slot_relaxation_is_a_lower_bound() {
        let (m, r) = search(0.3, &[3.0, 1.0]);
        let mut bs = BranchSearch::new(&m, &r, &[3.0, 1.0]).unwrap();
        let w0 = Affine { coeffs: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]], offset: vec![0.0, 0.0] };
        let relax = bs.relaxation(2, 0, &w0, &[]);
        let (lb, _) = bs.solve(&relax).unwrap();
        bs.extend_to(2).unwrap();
        assert!(lb <= bs.best.value + 1e-12);
    }

    #[test]
    fn critical_timescale_prototype_values() {
        let (m, r) = search(0.2, &[3.0, 1.0]);
        let mut bs = BranchSearch::new(&m, &r, &[3.0, 1.0]).unwrap();
        assert!(bs.extend_to(2).unwrap());
        assert_abs_diff_eq!(bs.best.value, 0.018402, epsilon = 2e-6);
        assert!(!bs.extend_to(3).unwrap());
        assert_eq!(bs.outcome().unwrap().timescale, 2);
    }

    #[test]
    fn single_queue_path() {
        let m = SourceModel::new(vec![QueueSource::exp_increment(2.0).unwrap()]).unwrap();
        let r = RateRegion::unit_simplex(1);
        let mut bs = BranchSearch::new(&m, &r, &[0.65]).unwrap();
        bs.extend_to(4).unwrap();
        let o = bs.outcome().unwrap();
        assert!(o.value > 0.0 && o.value < 0.1);
        let total: f64 = o.optimal_path.total()[0];
        assert_abs_diff_eq!(total, 0.65 + (o.timescale - 1) as f64, epsilon = 1e-7);
    }
}
