//! Augmented-Lagrangian solver for small separable convex programs
//!
//! ```text
//! minimise   sum_i f_i(x_i)
//! subject to E x = e,   G x >= g,   x >= 0
//! ```
//!
//! Each `f_i` is convex and twice differentiable on `(0, inf)`. Equality
//! and inequality rows are priced by a Powell-Hestenes-Rockafellar
//! augmented Lagrangian; the bound `x >= 0` is kept exactly by projected
//! Newton steps.

use nalgebra::{DMatrix, DVector};

/// One affine row `coeffs . x (=|>=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Problem {
    pub n: usize,
    pub eq: Vec<Row>,
    pub ge: Vec<Row>,
}

impl Problem {
    pub fn new(n: usize) -> Self {
        Self { n, eq: Vec::new(), ge: Vec::new() }
    }

    /// Largest violation of the constraints at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = x.iter().fold(0.0, |m, &xi| m.max(-xi));
        for r in &self.eq {
            v = v.max((r.eval(x) - r.rhs).abs());
        }
        for r in &self.ge {
            v = v.max(r.rhs - r.eval(x));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    /// Iteration cap reached at a feasible but not certified point.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: Status,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    /// Outer (multiplier) iterations.
    pub max_outer: usize,
    /// Projected-Newton iterations per outer iteration.
    pub max_inner: usize,
    /// Constraint violation accepted as feasible.
    pub feas_tol: f64,
    /// Violation above which a run that exhausted its penalty budget is
    /// declared infeasible.
    pub infeas_tol: f64,
    /// Below this value each `f_i` is replaced by its tangent at `floor`.
    /// Keeps multipliers finite when a variable is forced to zero and the
    /// derivative is unbounded there.
    pub floor: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { max_outer: 40, max_inner: 200, feas_tol: 1e-11, infeas_tol: 1e-7, floor: 1e-14 }
    }
}

struct Lagrangian<'a, F> {
    problem: &'a Problem,
    f: &'a F,
    floor: f64,
    rho: f64,
    fixed: &'a [bool],
    lam_eq: Vec<f64>,
    lam_ge: Vec<f64>,
}

impl<'a, F> Lagrangian<'a, F>
where
    F: Fn(usize, f64) -> (f64, f64, f64),
{
    fn term(&self, i: usize, x: f64) -> (f64, f64, f64) {
        if x < self.floor {
            let (v, d1, _) = (self.f)(i, self.floor);
            (v + d1 * (x - self.floor), d1, 0.0)
        } else {
            (self.f)(i, x)
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v: f64 = (0..x.len()).map(|i| self.term(i, x[i]).0).sum();
        for (r, l) in self.problem.eq.iter().zip(&self.lam_eq) {
            let t = r.eval(x) - r.rhs + l / self.rho;
            v += 0.5 * self.rho * t * t;
        }
        for (r, l) in self.problem.ge.iter().zip(&self.lam_ge) {
            let t = (r.rhs - r.eval(x) + l / self.rho).max(0.0);
            v += 0.5 * self.rho * t * t;
        }
        v
    }

    fn grad_hess(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut g = DVector::<f64>::zeros(n);
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let (_, d1, d2) = self.term(i, x[i]);
            g[i] = d1;
            h[(i, i)] = d2.max(0.0);
        }
        let mut add_row = |row: &Row, t: f64| {
            for (j, &a) in row.coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                g[j] += self.rho * t * a;
                for (k, &b) in row.coeffs.iter().enumerate() {
                    h[(j, k)] += self.rho * a * b;
                }
            }
        };
        for (r, l) in self.problem.eq.iter().zip(&self.lam_eq) {
            add_row(r, r.eval(x) - r.rhs + l / self.rho);
        }
        for (r, l) in self.problem.ge.iter().zip(&self.lam_ge) {
            let t = r.rhs - r.eval(x) + l / self.rho;
            if t > 0.0 {
                // d/dx of 0.5 rho t^2 with t = rhs - a.x: -rho t a
                let neg = Row { coeffs: r.coeffs.iter().map(|a| -a).collect(), rhs: 0.0 };
                add_row(&neg, t);
            }
        }
        (g, h)
    }

    /// Projected Newton on `x >= 0` (Bertsekas, 1982).
    fn minimise(&self, x: &mut Vec<f64>, max_iter: usize) {
        let n = x.len();
        let mut val = self.value(x);
        for _ in 0..max_iter {
            let (g, h) = self.grad_hess(x);
            let pg = (0..n)
                .filter(|&i| !self.fixed[i])
                .map(|i| (x[i] - (x[i] - g[i]).max(0.0)).abs())
                .fold(0.0, f64::max);
            let scale = 1.0 + g.amax().min(1e6);
            if pg <= 1e-13 * scale {
                break;
            }
            let eps = pg.min(1e-8);
            let active: Vec<bool> = (0..n).map(|i| self.fixed[i] || (x[i] <= eps && g[i] > 0.0)).collect();
            let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
            let mut d = vec![0.0; n];
            if !free.is_empty() {
                let nf = free.len();
                let mut hf = DMatrix::<f64>::zeros(nf, nf);
                let mut gf = DVector::<f64>::zeros(nf);
                let trace: f64 = free.iter().map(|&i| h[(i, i)]).sum::<f64>() / nf as f64;
                for (a, &i) in free.iter().enumerate() {
                    gf[a] = g[i];
                    for (b, &j) in free.iter().enumerate() {
                        hf[(a, b)] = h[(i, j)];
                    }
                    hf[(a, a)] += 1e-12 * (1.0 + trace);
                }
                let step = match hf.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&gf)),
                    None => -&gf,
                };
                for (a, &i) in free.iter().enumerate() {
                    d[i] = step[a];
                }
            }
            for i in 0..n {
                if active[i] && !self.fixed[i] {
                    d[i] = -g[i] / h[(i, i)].max(1e-12 * scale);
                }
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n).map(|i| (x[i] + alpha * d[i]).max(0.0)).collect();
                let tv = self.value(&trial);
                let decrease: f64 = (0..n)
                    .map(|i| if active[i] { g[i] * (x[i] - trial[i]) } else { -alpha * g[i] * d[i] })
                    .sum();
                // Close to the minimiser the decrease drops below the
                // resolution of the objective; a full Newton step that does
                // not measurably increase it is taken anyway.
                let tiny = alpha == 1.0 && decrease <= 1e-13 * (1.0 + val.abs()) && tv <= val + 1e-15 * (1.0 + val.abs());
                if tv <= val - 1e-4 * decrease || tiny {
                    let improvement = val - tv;
                    *x = trial;
                    val = tv;
                    accepted = true;
                    if improvement <= 1e-16 * (1.0 + val.abs()) && alpha < 1e-6 {
                        return;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return;
            }
        }
    }
}

/// Solves `problem` for the separable objective `f(i, x) -> (f, f', f'')`
/// by the method of multipliers with a projected-Newton inner solver.
///
/// Variables that end up at (numerically) zero are then pinned to zero and
/// the problem is re-solved: when the constraints force a variable to zero
/// and `f'` is unbounded there, the multiplier iteration converges only
/// sublinearly, while the pinned problem is regular.
pub fn minimize<F>(problem: &Problem, f: F, settings: &Settings) -> Solution
where
    F: Fn(usize, f64) -> (f64, f64, f64),
{
    let free = vec![false; problem.n];
    let sol = run(problem, &f, settings, &free);
    if sol.status == Status::Infeasible && problem.violation(&sol.x) > 1e-4 {
        return sol;
    }
    let pinned: Vec<bool> = sol.x.iter().map(|&v| v < ZERO_SNAP).collect();
    if !pinned.iter().any(|&p| p) {
        return sol;
    }
    let alt = run(problem, &f, settings, &pinned);
    let tol = 1e-6 * (1.0 + sol.value.abs());
    if alt.status != Status::Infeasible && (sol.status == Status::Infeasible || alt.value <= sol.value + tol) {
        Solution { iterations: sol.iterations + alt.iterations, ..alt }
    } else {
        sol
    }
}

const ZERO_SNAP: f64 = 1e-7;

fn run<F>(problem: &Problem, f: &F, settings: &Settings, fixed: &[bool]) -> Solution
where
    F: Fn(usize, f64) -> (f64, f64, f64),
{
    let n = problem.n;
    let mut al = Lagrangian {
        problem,
        f,
        floor: settings.floor,
        fixed,
        rho: 1.0,
        lam_eq: vec![0.0; problem.eq.len()],
        lam_ge: vec![0.0; problem.ge.len()],
    };
    let rhs_scale = 1.0
        + problem.eq.iter().chain(&problem.ge).map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let mut x: Vec<f64> = fixed.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
    let mut prev_viol = f64::INFINITY;
    let mut iterations = 0;
    let mut status = Status::Stalled;
    for _ in 0..settings.max_outer {
        iterations += 1;
        al.minimise(&mut x, settings.max_inner);
        let viol = problem.violation(&x);
        let mut lam_change: f64 = 0.0;
        for (r, l) in problem.eq.iter().zip(al.lam_eq.iter_mut()) {
            let step = al.rho * (r.eval(&x) - r.rhs);
            lam_change = lam_change.max(step.abs());
            *l += step;
        }
        for (r, l) in problem.ge.iter().zip(al.lam_ge.iter_mut()) {
            let next = (*l + al.rho * (r.rhs - r.eval(&x))).max(0.0);
            lam_change = lam_change.max((next - *l).abs());
            *l = next;
        }
        let lam_scale = 1.0 + al.lam_eq.iter().chain(&al.lam_ge).fold(0.0f64, |m, v| m.max(v.abs()));
        if viol <= settings.feas_tol * rhs_scale && lam_change <= 1e-9 * lam_scale {
            status = Status::Optimal;
            break;
        }
        if al.rho >= 1e12 && viol > settings.infeas_tol * rhs_scale {
            status = Status::Infeasible;
            break;
        }
        // Raising the penalty once the violation is at rounding level only
        // inflates the multiplier steps.
        if viol > settings.feas_tol * rhs_scale && viol > 0.25 * prev_viol {
            al.rho = (al.rho * 10.0).min(1e12);
        }
        prev_viol = viol;
    }
    let value: f64 = (0..n).map(|i| f(i, x[i]).0).sum();
    if status != Status::Optimal {
        let viol = problem.violation(&x);
        if viol > settings.infeas_tol * rhs_scale {
            status = Status::Infeasible;
        } else if viol <= 1e3 * settings.feas_tol * rhs_scale {
            status = Status::Optimal;
        }
    }
    Solution { x, value, status, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad(target: Vec<f64>) -> impl Fn(usize, f64) -> (f64, f64, f64) {
        move |i, x| ((x - target[i]).powi(2), 2.0 * (x - target[i]), 2.0)
    }

    #[test]
    fn unconstrained_interior_minimum() {
        let sol = minimize(&Problem::new(2), quad(vec![0.3, 2.0]), &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn bound_active() {
        let sol = minimize(&Problem::new(1), quad(vec![-1.0]), &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.x[0] < 1e-6);
        assert_abs_diff_eq!(sol.value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn equality_and_inequality() {
        // min (x0-1)^2 + (x1-1)^2 s.t. x0 + x1 = 3, x0 - x1 >= 1
        let mut p = Problem::new(2);
        p.eq.push(Row::new(vec![1.0, 1.0], 3.0));
        p.ge.push(Row::new(vec![1.0, -1.0], 1.0));
        let sol = minimize(&p, quad(vec![1.0, 1.0]), &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = Problem::new(2);
        p.eq.push(Row::new(vec![1.0, 1.0], 1.0));
        p.ge.push(Row::new(vec![1.0, 0.0], 2.0));
        let sol = minimize(&p, quad(vec![0.0, 0.0]), &Settings::default());
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn square_root_conjugate_with_forced_zero() {
        // mu (sqrt x - sqrt lambda)^2 with x1 forced to zero.
        let (lambda, mu): (f64, f64) = (0.3, 0.01);
        let f = move |_i: usize, x: f64| {
            let s = x.sqrt();
            let d = s - lambda.sqrt();
            (mu * d * d, mu * (1.0 - lambda.sqrt() / s), 0.5 * mu * lambda.sqrt() / (x * s))
        };
        let mut p = Problem::new(2);
        p.eq.push(Row::new(vec![1.0, 1.0], 2.0));
        p.eq.push(Row::new(vec![0.0, 1.0], 0.0));
        let sol = minimize(&p, f, &Settings::default());
        assert_ne!(sol.status, Status::Infeasible);
        let expect = mu * (2f64.sqrt() - lambda.sqrt()).powi(2) + mu * lambda;
        assert_abs_diff_eq!(sol.value, expect, epsilon = 1e-8);
    }

    #[test]
    fn matches_closed_form_split() {
        // Splitting total 4 across two equal convex costs: optimum is 2, 2.
        let (lambda, mu): (f64, f64) = (0.2, 0.01);
        let f = move |_i: usize, x: f64| {
            let s = x.sqrt();
            let d = s - lambda.sqrt();
            (mu * d * d, mu * (1.0 - lambda.sqrt() / s), 0.5 * mu * lambda.sqrt() / (x * s))
        };
        let mut p = Problem::new(2);
        p.eq.push(Row::new(vec![1.0, 1.0], 4.0));
        let sol = minimize(&p, f, &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.value, 2.0 * mu * (2f64.sqrt() - lambda.sqrt()).powi(2), epsilon = 1e-11);
    }
}
