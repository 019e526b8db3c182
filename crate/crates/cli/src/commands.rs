use std::io::Write;

use maxweight_ld::dynamics::{replay_services, trajectory};
use maxweight_ld::mc::{decay_sweep, trend_toward};
use maxweight_ld::oracle::{brute_force_it, lipschitz_slack, OracleConfig};
use maxweight_ld::ratefn::{exact_i2, it_bounds, it_exact, it_grid, it_policy, j_rate_fn, orthant_infimum, GridSettings};
use maxweight_ld::{ArrivalPath, Method, Policy, PolicyKind, QueueSource, RateFnOutcome, RateRegion, SourceModel};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// A finished command: the JSON result and optional CSV tables keyed by
/// the config entry naming their destination.
pub struct Report {
    pub result: Value,
    pub tables: Vec<(&'static str, Table)>,
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// JSON number, or a string for non-finite values (JSON has no infinity).
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn region(cfg: &RunConfig) -> Result<RateRegion, CliError> {
    Ok(RateRegion::simplex(cfg.f64s("region.capacities"))?)
}

/// One value per queue from a scalar or per-queue list.
fn per_queue(cfg: &RunConfig, key: &str, k: usize) -> Result<Vec<f64>, CliError> {
    let v = cfg.f64s(key);
    match v.len() {
        1 => Ok(vec![v[0]; k]),
        n if n == k => Ok(v),
        n => Err(config_error(format!("`{key}` has {n} entries for {k} queues"))),
    }
}

fn model(cfg: &RunConfig, k: usize) -> Result<SourceModel, CliError> {
    let queues: Vec<QueueSource> = match cfg.str("source.kind") {
        "compound-poisson" => {
            let l = per_queue(cfg, "source.lambda", k)?;
            let m = per_queue(cfg, "source.mu", k)?;
            l.iter().zip(&m).map(|(l, m)| QueueSource::compound_poisson(*l, *m)).collect::<Result<_, _>>()?
        }
        "exp-increment" => per_queue(cfg, "source.nu", k)?
            .into_iter()
            .map(QueueSource::exp_increment)
            .collect::<Result<_, _>>()?,
        "deterministic" => per_queue(cfg, "source.mean", k)?
            .into_iter()
            .map(QueueSource::deterministic)
            .collect::<Result<_, _>>()?,
        other => return Err(config_error(format!("unknown source kind `{other}`"))),
    };
    Ok(SourceModel::new(queues)?)
}

fn policy(cfg: &RunConfig, k: usize) -> Result<Policy, CliError> {
    Ok(match cfg.str("policy.kind") {
        "wc-max-weight" => Policy::work_conserving(),
        "max-weight" => Policy::max_weight(),
        "gps" => {
            let w = cfg.f64s("policy.weights");
            Policy::gps(if w.is_empty() { vec![1.0; k] } else { w })?
        }
        "priority" => {
            let o = cfg.u64s("policy.order");
            Policy::priority(if o.is_empty() { (0..k).collect() } else { o.into_iter().map(|x| x as usize).collect() })?
        }
        other => return Err(config_error(format!("unknown policy kind `{other}`"))),
    })
}

fn method(cfg: &RunConfig) -> Result<Method, CliError> {
    Ok(match cfg.str("ratefn.method") {
        "branch-convex" => Method::BranchConvex,
        "grid-dp" => Method::GridDp,
        "closed-form-i2" => Method::ClosedFormI2,
        other => return Err(config_error(format!("unknown method `{other}`"))),
    })
}

fn grid_settings(cfg: &RunConfig) -> GridSettings {
    GridSettings { delta: cfg.f64("grid.delta"), max_states: cfg.usize("grid.max_states"), polish: true }
}

struct Setup {
    region: RateRegion,
    model: SourceModel,
    policy: Policy,
    b: Vec<f64>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let region = region(cfg)?;
    let k = region.dim();
    let model = model(cfg, k)?;
    let policy = policy(cfg, k)?;
    let b = cfg.target("b").unwrap_or_else(|| model.mean());
    if b.len() != k {
        return Err(config_error(format!("target has {} entries for {k} queues", b.len())));
    }
    Ok(Setup { region, model, policy, b })
}

fn slots_json(path: &ArrivalPath) -> Value {
    // Oldest slot first.
    json!(path.slots().iter().rev().map(|s| s.iter().map(|x| num(*x)).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn outcome_json(o: &RateFnOutcome) -> Value {
    json!({
        "value": num(o.value),
        "t_star": o.timescale,
        "method": o.method,
        "truncated": o.truncated,
        "optimal_path": slots_json(&o.optimal_path),
        "branch_sequence": o.branch_sequence,
    })
}

/// Slot-by-slot replay of an outcome: arrivals, the service applied
/// before them and the workload after.
fn outcome_table(o: &RateFnOutcome) -> Result<Table, CliError> {
    let k = o.optimal_path.dim();
    let mut services = vec![vec![0.0; k]];
    services.extend(o.branch_sequence.iter().cloned());
    let traj = replay_services(&o.optimal_path, &services)?;
    let u = o.optimal_path.horizon();
    let mut header = vec!["slot".to_string(), "time".to_string()];
    for prefix in ["a", "service", "w"] {
        header.extend((1..=k).map(|q| format!("{prefix}_{q}")));
    }
    let rows = (0..u)
        .map(|i| {
            let s = u - i;
            let mut row = vec![Cell::Int(s as u64), Cell::Text(format!("-{s}"))];
            row.extend(o.optimal_path.slot(s).iter().map(|x| Cell::Float(*x)));
            row.extend(services[i].iter().map(|x| Cell::Float(*x)));
            row.extend(traj[i + 1].iter().map(|x| Cell::Float(*x)));
            row
        })
        .collect();
    Ok(Table { header, rows })
}

pub fn ratefn(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let t = cfg.usize("t");
    let o = if cfg.bool("ratefn.j") {
        if !matches!(s.policy.kind, PolicyKind::WorkConservingMaxWeight) {
            return Err(config_error("J is computed for work-conserving max-weight only"));
        }
        j_rate_fn(&s.model, &s.region, &s.b, cfg.usize("t_cap"))?
    } else {
        match s.policy.kind {
            PolicyKind::WorkConservingMaxWeight => match method(cfg)? {
                Method::GridDp => it_grid(&s.model, &s.region, &s.policy, &s.b, t, &grid_settings(cfg))?,
                m => it_exact(&s.model, &s.region, &s.b, t, m)?,
            },
            PolicyKind::Gps { .. } | PolicyKind::Priority { .. } => {
                it_policy(&s.model, &s.region, &s.b, t, &s.policy, &grid_settings(cfg))?
            }
            PolicyKind::MaxWeight => it_grid(&s.model, &s.region, &s.policy, &s.b, t, &grid_settings(cfg))?,
        }
    };
    let mut result = outcome_json(&o);
    result["b"] = json!(s.b);
    Ok(Report { result, tables: vec![("output.trajectory", outcome_table(&o)?)] })
}

pub fn bounds(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let bp = it_bounds(&s.model, &s.region, &s.b, cfg.usize("t"))?;
    let result = json!({
        "b": s.b,
        "t": cfg.usize("t"),
        "lower": num(bp.lower),
        "upper": num(bp.upper),
        "lower_timescale": bp.lower_timescale,
        "upper_timescale": bp.upper_timescale,
        "relative_gap": num((bp.upper - bp.lower) / bp.lower),
    });
    Ok(Report { result, tables: Vec::new() })
}

pub fn i2(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let o = exact_i2(&s.model, &s.region, &s.b)?;
    let mut result = outcome_json(&o);
    result["b"] = json!(s.b);
    Ok(Report { result, tables: vec![("output.trajectory", outcome_table(&o)?)] })
}

pub fn mc(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let level = {
        let b = cfg.f64s("mc.B");
        if b.is_empty() {
            s.b.clone()
        } else {
            b
        }
    };
    let horizon = cfg.usize("mc.T");
    let est = decay_sweep(
        &s.model,
        &s.policy,
        &s.region,
        &cfg.u64s("mc.L"),
        horizon,
        &level,
        cfg.usize("mc.replicates") as u64,
        cfg.usize("seed") as u64,
    )?;
    let mut header = vec!["L".to_string(), "T".to_string()];
    header.extend((1..=level.len()).map(|q| format!("B_{q}")));
    header.extend(["replicates", "p_hat", "ci_lo", "ci_hi", "decay"].map(String::from));
    let rows = est
        .iter()
        .map(|e| {
            let mut row = vec![Cell::Int(e.sources), Cell::Int(e.horizon as u64)];
            row.extend(e.level.iter().map(|x| Cell::Float(*x)));
            row.extend([
                Cell::Int(e.replicates),
                Cell::Float(e.p_hat),
                Cell::Float(e.ci95.0),
                Cell::Float(e.ci95.1),
                Cell::Float(e.decay),
            ]);
            row
        })
        .collect();
    // The rate-function reference exists for work-conserving max-weight only.
    let reference = if matches!(s.policy.kind, PolicyKind::WorkConservingMaxWeight) {
        Some(orthant_infimum(&s.model, &s.region, &level, Some(horizon), cfg.f64("mc.span"), cfg.usize("mc.points"))?.value)
    } else {
        None
    };
    let trend = reference
        .filter(|_| est.iter().all(|e| e.successes > 0 && e.successes < e.replicates))
        .and_then(|r| trend_toward(&est, r).ok());
    let result = json!({
        "reference": reference.map(num),
        "trend": trend.map(|t| json!({
            "slope": num(t.slope),
            "std_error": num(t.std_error),
            "upper95": num(t.upper95),
            "converging": t.converging,
        })),
        "estimates": est.iter().map(|e| json!({
            "L": e.sources,
            "T": e.horizon,
            "B": e.level,
            "replicates": e.replicates,
            "successes": e.successes,
            "p_hat": num(e.p_hat),
            "ci95": [num(e.ci95.0), num(e.ci95.1)],
            "decay": num(e.decay),
        })).collect::<Vec<_>>(),
    });
    Ok(Report { result, tables: vec![("output.csv", Table { header, rows })] })
}

/// `lo:hi:step`.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let err = || config_error(format!("grid `{text}` is not lo:hi:step"));
    let parts: Vec<f64> = text.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| err())).collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else { return Err(err()) };
    if !(step > 0.0 && hi >= lo && lo >= 0.0) {
        return Err(err());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

pub fn compare(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    if s.region.dim() != 2 {
        return Err(config_error("compare is for two queues"));
    }
    let axis = parse_grid(cfg.str("compare.grid"))?;
    let t = cfg.usize("t");
    let gs = grid_settings(cfg);
    let weights = {
        let w = cfg.f64s("policy.weights");
        if w.is_empty() {
            vec![1.0, 1.0]
        } else {
            w
        }
    };
    let order: Vec<usize> = {
        let o = cfg.u64s("policy.order");
        if o.is_empty() {
            vec![0, 1]
        } else {
            o.into_iter().map(|x| x as usize).collect()
        }
    };
    let gps = Policy::gps(weights)?;
    let prio = Policy::priority(order)?;
    let mut rows = Vec::new();
    let mut mw_above_gps = 0u64;
    for &b1 in &axis {
        for &b2 in &axis {
            let b = [b1, b2];
            let mw = it_exact(&s.model, &s.region, &b, t, Method::BranchConvex)?.value;
            let g = it_policy(&s.model, &s.region, &b, t, &gps, &gs)?.value;
            let p = it_policy(&s.model, &s.region, &b, t, &prio, &gs)?.value;
            mw_above_gps += u64::from(mw >= g);
            rows.push(vec![Cell::Float(b1), Cell::Float(b2), Cell::Float(mw), Cell::Float(g), Cell::Float(p)]);
        }
    }
    let header = ["b1", "b2", "max_weight", "gps", "priority"].map(String::from).to_vec();
    let result = json!({
        "t": t,
        "cells": rows.len(),
        "max_weight_at_least_gps": mw_above_gps,
        "rows": rows.iter().map(|r| r.iter().map(|c| match c { Cell::Float(x) => num(*x), _ => Value::Null }).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    Ok(Report { result, tables: vec![("output.csv", Table { header, rows })] })
}

/// `a,b;c,d;...`, oldest slot first.
fn parse_arrivals(text: &str, k: usize) -> Result<ArrivalPath, CliError> {
    let err = || config_error(format!("arrivals `{text}` are not `a,b;c,d;...` with {k} entries per slot"));
    let mut slots = Vec::new();
    for slot in text.split(';').filter(|s| !s.trim().is_empty()) {
        let v: Vec<f64> = slot.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| err())).collect::<Result<_, _>>()?;
        if v.len() != k {
            return Err(err());
        }
        slots.push(v);
    }
    if slots.is_empty() {
        return Err(err());
    }
    Ok(ArrivalPath::from_chronological(slots)?)
}

pub fn trajectory_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let path = parse_arrivals(cfg.str("trajectory.arrivals"), s.region.dim())?;
    let traj = trajectory(&path, &s.policy, &s.region, None)?;
    let k = s.region.dim();
    let u = path.horizon();
    let mut header = vec!["slot".to_string(), "time".to_string()];
    for prefix in ["a", "w"] {
        header.extend((1..=k).map(|q| format!("{prefix}_{q}")));
    }
    header.push("normalized_sum".into());
    let mut rows = Vec::new();
    for i in 0..u {
        let sl = u - i;
        let w = traj[i + 1].values();
        let mut row = vec![Cell::Int(sl as u64), Cell::Text(format!("-{sl}"))];
        row.extend(path.slot(sl).iter().map(|x| Cell::Float(*x)));
        row.extend(w.iter().map(|x| Cell::Float(*x)));
        row.push(Cell::Float(s.region.normalized_sum(w)?));
        rows.push(row);
    }
    let result = json!({
        "arrivals": slots_json(&path),
        "workloads": traj.iter().map(|w| w.values().iter().map(|x| num(*x)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "cost": num(s.model.path_cost(&path)),
    });
    Ok(Report { result, tables: vec![("output.csv", Table { header, rows })] })
}

pub fn oracle(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = setup(cfg)?;
    let t = cfg.usize("t");
    let oc = OracleConfig::for_target(cfg.f64("oracle.delta"), &s.b, t, s.region.capacities())?;
    let value = brute_force_it(&s.model, &s.region, &s.b, t, &oc)?;
    let exact = it_exact(&s.model, &s.region, &s.b, t, Method::BranchConvex)?.value;
    let slack = lipschitz_slack(&s.model, &oc, t);
    let result = json!({
        "b": s.b,
        "t": t,
        "oracle": num(value),
        "exact": num(exact),
        "slack": num(slack),
        "within_slack": (value - exact).abs() <= slack,
        "grid_step": oc.grid_step,
        "max_coordinate": oc.max_coordinate,
    });
    Ok(Report { result, tables: Vec::new() })
}

/// RFC 4180 CSV to `out`.
pub fn write_csv<W: Write>(out: W, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}
