//! Dispatch from a validated manifest to the simulation library.
//!
//! Everything is computed in memory first; nothing touches the output
//! directory until the whole bundle exists.

use std::collections::BTreeMap;
use std::path::Path;

use chase_escape::analytics::{
    ba_spectral, renewal_function, spectral, step_law, tail_constants, tilt, Regime,
};
use chase_escape::estimate::{BaAggregate, CeAggregate, CountHistogram};
use chase_escape::kbrw::DEFAULT_STEP_CAP;
use chase_escape::stats::{log_grid, Survival};
use chase_escape::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::manifest::{Kind, Manifest, WalkProcess};

/// Version of the column layout of every CSV written by the harness.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("statistical refusal: {0}")]
    Refusal(StatError),
    #[error("input: {0}")]
    Input(String),
    #[error("simulation: {0}")]
    Simulation(String),
}

/// Output of one run: named CSV files plus the summary's `results` section.
#[derive(Debug)]
pub struct Bundle {
    pub csv: Vec<(String, Vec<u8>)>,
    pub results: Value,
}

/// Rows sharing the leading `schema_version, manifest_hash, master_seed`
/// columns.
struct Table {
    writer: csv::Writer<Vec<u8>>,
    prefix: [String; 3],
}

impl Table {
    fn new(m: &Manifest, columns: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["schema_version", "manifest_hash", "master_seed"];
        header.extend_from_slice(columns);
        writer.write_record(&header).expect("in-memory write");
        Self {
            writer,
            prefix: [SCHEMA_VERSION.to_string(), m.hash(), m.seed.to_string()],
        }
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let record: Vec<String> = self.prefix.iter().cloned().chain(fields).collect();
        self.writer.write_record(&record).expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cap_name(c: Option<CapKind>) -> String {
    match c {
        None => "none",
        Some(CapKind::Nodes) => "nodes",
        Some(CapKind::Generation) => "generation",
        Some(CapKind::Steps) => "steps",
    }
    .to_string()
}

fn ci(lo_hi: (f64, f64)) -> Value {
    json!([lo_hi.0, lo_hi.1])
}

/// Tidy survival table on a log grid, for plotting.
fn survival_table(m: &Manifest, hist: &CountHistogram) -> Vec<u8> {
    let (values, flags) = hist.samples();
    let mut t = Table::new(m, &["n", "survival", "exceeding", "censor_mass"]);
    let Ok(surv) = Survival::new(&values, &flags) else {
        return t.finish();
    };
    let top = values.iter().copied().max().unwrap_or(1).max(2);
    for n in log_grid(1, top) {
        t.row([
            n.to_string(),
            surv.survival(n).to_string(),
            surv.exceeding(n).to_string(),
            surv.censor_mass(n).to_string(),
        ]);
    }
    t.finish()
}

fn histogram_summary(h: &CountHistogram) -> Value {
    json!({
        "samples": h.total(),
        "censored": h.censored_count(),
        "uncensored_mean": h.uncensored_mean(),
    })
}

pub fn execute(m: &Manifest) -> Result<Bundle, RunError> {
    match m.kind {
        Kind::Analytics => analytics(m),
        Kind::CeSim => ce_sim(m),
        Kind::BaSim => ba_sim(m),
        Kind::KbrwSim => kbrw_sim(m),
        Kind::CoupleCheck => couple_check(m),
        Kind::Qwalk => qwalk(m),
        Kind::Biggins => biggins(m),
        Kind::TailFit => tail_fit_csv(m),
    }
}

fn analytics(m: &Manifest) -> Result<Bundle, RunError> {
    let p = m.params();
    let s = spectral(&p).map_err(|e| RunError::Simulation(e.to_string()))?;
    let mut results = json!({ "spectral": s });
    if s.regime != Regime::Supercritical {
        let law = step_law(&p).map_err(|e| RunError::Simulation(e.to_string()))?;
        results["tilted_step_law"] = json!({
            "tilt": tilt(&s).ok(),
            "prefactor": law.prefactor,
            "up_rate": law.up_rate,
            "down_rate": law.down_rate,
        });
    }
    if let Some(xs) = &m.raw.renewal_at {
        let values: Result<Vec<Value>, _> = xs
            .iter()
            .map(|&x| renewal_function(x, &p).map(|r| json!({ "x": x, "renewal": r })))
            .collect();
        results["renewal"] = json!(values.map_err(|e| RunError::Simulation(e.to_string()))?);
    }
    if let Some(b) = &m.raw.boundary_generations {
        let t = tail_constants(&p, b).map_err(|e| RunError::Simulation(e.to_string()))?;
        results["tail_constants"] = json!(t);
    }
    if let Some(timer) = &m.raw.timer {
        let b = ba_spectral(m.lambda(), timer).map_err(|e| RunError::Simulation(e.to_string()))?;
        results["birth_assassination"] = json!(b);
    }
    Ok(Bundle {
        csv: Vec::new(),
        results,
    })
}

fn ce_sim(m: &Manifest) -> Result<Bundle, RunError> {
    let (lambda, law, caps, init) = (m.lambda(), m.offspring(), m.caps, m.initial());
    let outcomes = run_replicates(
        m.seed,
        m.replicates,
        || (TreeStore::new(law.clone(), caps), CeSimulator::new(lambda)),
        |(tree, sim), s| {
            tree.reset();
            let set = init.resolve(tree, s)?;
            sim.run(tree, &set, s)
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|e| RunError::Simulation(e.to_string()))?;

    let mut t = Table::new(
        m,
        &["replicate", "z", "extinct", "censored", "max_generation", "extinction_time"],
    );
    let mut agg = CeAggregate::default();
    for (r, o) in outcomes.iter().enumerate() {
        agg.add(o);
        t.row([
            r.to_string(),
            o.z.to_string(),
            o.extinct.to_string(),
            cap_name(o.censored),
            o.max_generation.to_string(),
            opt(o.extinction_time),
        ]);
    }
    let results = json!({
        "replicates": agg.replicates,
        "extinct": agg.extinct,
        "censored": agg.censored,
        "extinction_probability": agg.extinction_probability(),
        "extinction_ci95": ci(agg.extinction_ci(0.95)),
        "z": histogram_summary(&agg.z),
        "mean_z_n": agg.mean_z_n(),
    });
    Ok(Bundle {
        csv: vec![
            ("ce-sim.csv".into(), t.finish()),
            ("ce-sim-survival.csv".into(), survival_table(m, &agg.z)),
        ],
        results,
    })
}

fn ba_sim(m: &Manifest) -> Result<Bundle, RunError> {
    let (lambda, timer, caps) = (m.lambda(), m.timer(), m.caps);
    let outcomes = run_replicates(
        m.seed,
        m.replicates,
        || BaSimulator::new(lambda, timer.clone(), caps),
        |sim, s| sim.run(s),
    );
    let mut t = Table::new(
        m,
        &["replicate", "n", "stable", "censored", "last_removal_time"],
    );
    let mut agg = BaAggregate::default();
    for (r, o) in outcomes.iter().enumerate() {
        agg.add(o);
        t.row([
            r.to_string(),
            o.n.to_string(),
            o.stable.to_string(),
            cap_name(o.censored),
            opt(o.last_removal_time),
        ]);
    }
    let spectral = ba_spectral(lambda, &timer).ok();
    let results = json!({
        "replicates": agg.replicates,
        "stable": agg.stable,
        "censored": agg.censored,
        "stable_fraction": agg.stable_fraction(),
        "stable_ci95": ci(agg.stable_ci(0.95)),
        "n": histogram_summary(&agg.n),
        "spectral": spectral,
    });
    Ok(Bundle {
        csv: vec![
            ("ba-sim.csv".into(), t.finish()),
            ("ba-sim-survival.csv".into(), survival_table(m, &agg.n)),
        ],
        results,
    })
}

fn kbrw_sim(m: &Manifest) -> Result<Bundle, RunError> {
    let x = m.raw.start.unwrap_or(0.0);
    let caps = m.caps;
    let process = m.raw.process.unwrap_or_default();
    let realizations = match process {
        WalkProcess::ChaseEscape => {
            let pp = CePointProcess::new(m.lambda(), m.offspring())
                .map_err(|e| RunError::Simulation(e.to_string()))?;
            run_replicates(m.seed, m.replicates, || (), |_, s| simulate_kbrw(&pp, x, caps, s))
        }
        WalkProcess::BirthAssassination => {
            let pp = BaPointProcess::new(m.lambda(), m.timer())
                .map_err(|e| RunError::Simulation(e.to_string()))?;
            run_replicates(m.seed, m.replicates, || (), |_, s| simulate_kbrw(&pp, x, caps, s))
        }
    };
    let mut t = Table::new(m, &["replicate", "z", "censored", "generations", "z_n"]);
    let mut hist = CountHistogram::default();
    let mut profile: Vec<u64> = Vec::new();
    for (r, k) in realizations.iter().enumerate() {
        hist.add(k.z, k.is_censored());
        if profile.len() < k.z_n.len() {
            profile.resize(k.z_n.len(), 0);
        }
        for (p, z) in profile.iter_mut().zip(&k.z_n) {
            *p += z;
        }
        let z_n: Vec<String> = k.z_n.iter().map(u64::to_string).collect();
        t.row([
            r.to_string(),
            k.z.to_string(),
            cap_name(k.censored),
            k.z_n.len().to_string(),
            z_n.join(";"),
        ]);
    }
    let reps = realizations.len() as f64;
    let results = json!({
        "process": process,
        "start": x,
        "replicates": realizations.len(),
        "z": histogram_summary(&hist),
        "mean_z_n": profile.iter().map(|&p| p as f64 / reps).collect::<Vec<_>>(),
    });
    Ok(Bundle {
        csv: vec![
            ("kbrw-sim.csv".into(), t.finish()),
            ("kbrw-sim-survival.csv".into(), survival_table(m, &hist)),
        ],
        results,
    })
}

fn couple_check(m: &Manifest) -> Result<Bundle, RunError> {
    let (lambda, law, caps, reps) = (m.lambda(), m.offspring(), m.caps, m.replicates);
    let delay = m.initial().delay;
    let direct = run_replicates(
        m.seed,
        reps,
        || (TreeStore::new(law.clone(), caps), CeSimulator::new(lambda)),
        |(tree, sim), s| {
            let o = sim.run_from_root(tree, delay, s);
            (o.z, o.censored)
        },
    );
    // The coupled engine reads streams `reps..2·reps` so the two samples
    // are independent.
    let coupled: Vec<(u64, Option<CapKind>)> = {
        use rayon::prelude::*;
        (reps..2 * reps)
            .into_par_iter()
            .map_init(
                || TreeStore::new(law.clone(), caps),
                |tree, r| {
                    tree.reset();
                    let mut s = make_stream(m.seed, r);
                    let c = coupling_realization(tree, lambda, delay, CouplingMode::Killed, &mut s);
                    (c.z, c.censored)
                },
            )
            .collect()
    };

    let mut t = Table::new(m, &["engine", "replicate", "z", "censored"]);
    for (engine, rows) in [("direct", &direct), ("coupling", &coupled)] {
        for (r, (z, c)) in rows.iter().enumerate() {
            t.row([engine.to_string(), r.to_string(), z.to_string(), cap_name(*c)]);
        }
    }
    let za: Vec<f64> = direct.iter().map(|d| d.0 as f64).collect();
    let zb: Vec<f64> = coupled.iter().map(|d| d.0 as f64).collect();
    let ks = ks_two_sample(&za, &zb).map_err(|e| RunError::Simulation(e.to_string()))?;
    let first_step = |zs: &[f64]| {
        let hits = zs.iter().filter(|&&z| z >= 2.0).count() as u64;
        json!({
            "estimate": hits as f64 / zs.len() as f64,
            "ci99": ci(binomial_ci(hits, zs.len() as u64, 0.99)),
        })
    };
    // P(Z ≥ 2) = 1 − E[e^{−dλ(x+E)}] on a d-ary tree.
    let target = law.deterministic().map(|d| {
        let dl = d as f64 * lambda;
        1.0 - (-dl * delay).exp() / (1.0 + dl)
    });
    let censored = |rows: &[(u64, Option<CapKind>)]| rows.iter().filter(|r| r.1.is_some()).count();
    let results = json!({
        "replicates_per_engine": reps,
        "ks": { "statistic": ks.statistic, "p_value": ks.p_value, "n_direct": ks.n_a, "n_coupling": ks.n_b },
        "p_z_at_least_2": {
            "direct": first_step(&za),
            "coupling": first_step(&zb),
            "target": target,
        },
        "censored": { "direct": censored(&direct), "coupling": censored(&coupled) },
    });
    Ok(Bundle {
        csv: vec![("couple-check.csv".into(), t.finish())],
        results,
    })
}

fn qwalk(m: &Manifest) -> Result<Bundle, RunError> {
    let p = m.params();
    let x = m.raw.start.unwrap_or(0.0);
    let step_cap = m.raw.step_cap.unwrap_or(DEFAULT_STEP_CAP);
    let s = spectral(&p).map_err(|e| RunError::Simulation(e.to_string()))?;
    let rho = tilt(&s).map_err(|e| RunError::Simulation(e.to_string()))?;
    let law = step_law(&p).map_err(|e| RunError::Simulation(e.to_string()))?;
    let samples = run_replicates(m.seed, m.replicates, || (), |_, st| {
        qwalk_sample(&law, x, step_cap, st)
    });
    let mut t = Table::new(
        m,
        &["replicate", "start", "steps", "overshoot", "renewal_count", "censored"],
    );
    for (r, q) in samples.iter().enumerate() {
        t.row([
            r.to_string(),
            q.start.to_string(),
            q.steps.to_string(),
            opt(q.overshoot),
            q.renewal_count.to_string(),
            q.censored.to_string(),
        ]);
    }
    let overshoots: Vec<f64> = samples.iter().filter_map(|q| q.overshoot).collect();
    let k = overshoots.len() as f64;
    let mean = |v: f64| if k > 0.0 { Some(v / k) } else { None };
    let renewal = samples.iter().map(|q| q.renewal_count as f64).sum::<f64>() / samples.len() as f64;
    // Down-steps are Exp(down_rate), so the overshoot is too.
    let d = law.down_rate;
    let results = json!({
        "regime": s.regime,
        "tilt": rho,
        "step_law": { "prefactor": law.prefactor, "up_rate": law.up_rate, "down_rate": d },
        "start": x,
        "passages": overshoots.len(),
        "capped": samples.iter().filter(|q| q.censored).count(),
        "escaped": samples.iter().filter(|q| q.overshoot.is_none() && !q.censored).count(),
        "mean_overshoot": mean(overshoots.iter().sum()),
        "expected_overshoot": 1.0 / d,
        "mean_exp_tilt_overshoot": mean(overshoots.iter().map(|o| (rho * o).exp()).sum()),
        "expected_exp_tilt_overshoot": (d > rho).then(|| d / (d - rho)),
        "mean_renewal_count": renewal,
        "renewal_function": renewal_function(x, &p).ok(),
    });
    Ok(Bundle {
        csv: vec![("qwalk.csv".into(), t.finish())],
        results,
    })
}

fn biggins(m: &Manifest) -> Result<Bundle, RunError> {
    let p = m.params();
    let rho = match m.raw.rho {
        Some(r) => r,
        None => spectral(&p).map_err(|e| RunError::Simulation(e.to_string()))?.rho_star,
    };
    let x = m.raw.start.unwrap_or(0.0);
    let n = m.raw.generations.unwrap_or(50);
    let defaults = BigginsOptions::default();
    let options = BigginsOptions {
        eta: m.raw.eta.unwrap_or(defaults.eta),
        max_particles: m.raw.max_particles.unwrap_or(defaults.max_particles),
    };
    let pp = CePointProcess::new(m.lambda(), m.offspring())
        .map_err(|e| RunError::Simulation(e.to_string()))?;
    let paths = run_replicates(m.seed, m.replicates, || (), |_, s| {
        biggins_martingale(&pp, rho, x, n, options, s)
    });
    let mut t = Table::new(
        m,
        &["replicate", "generation", "w", "max_position", "particles"],
    );
    let mut by_gen: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (r, path) in paths.iter().enumerate() {
        for (g, w) in path.w.iter().enumerate() {
            by_gen.entry(g).or_default().push(*w);
            t.row([
                r.to_string(),
                g.to_string(),
                w.to_string(),
                path.max_position[g].to_string(),
                path.particles[g].to_string(),
            ]);
        }
    }
    let profile: Vec<Value> = by_gen
        .into_iter()
        .map(|(g, mut ws)| {
            ws.sort_unstable_by(f64::total_cmp);
            let mean = ws.iter().sum::<f64>() / ws.len() as f64;
            json!({ "generation": g, "paths": ws.len(), "mean": mean, "median": ws[ws.len() / 2] })
        })
        .collect();
    let results = json!({
        "rho": rho,
        "start": x,
        "generations": n,
        "truncated": paths.iter().filter(|p| p.truncated).count(),
        "profile": profile,
    });
    Ok(Bundle {
        csv: vec![("biggins.csv".into(), t.finish())],
        results,
    })
}

/// Reads counts and censoring flags from a CSV written by a simulation
/// subcommand.
pub fn read_counts(path: &Path, column: Option<&str>) -> Result<(Vec<u64>, Vec<bool>), RunError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| RunError::Input(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = match column {
        Some(c) => find(c).ok_or_else(|| RunError::Input(format!("no column `{c}`")))?,
        None => find("z")
            .or_else(|| find("n"))
            .ok_or_else(|| RunError::Input("no `z` or `n` column".into()))?,
    };
    let flag = find("censored");
    let mut values = Vec::new();
    let mut flags = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| RunError::Input(e.to_string()))?;
        let v = rec[col]
            .parse::<u64>()
            .map_err(|e| RunError::Input(format!("row {}: {e}", i + 1)))?;
        values.push(v);
        flags.push(flag.is_some_and(|f| !matches!(&rec[f], "" | "none" | "false")));
    }
    Ok((values, flags))
}

fn tail_fit_csv(m: &Manifest) -> Result<Bundle, RunError> {
    let path = m.raw.input.as_ref().expect("validated");
    let (values, flags) = read_counts(path, m.raw.column.as_deref())?;
    let mut results = json!({
        "input": path.display().to_string(),
        "samples": values.len(),
        "censored": flags.iter().filter(|&&c| c).count(),
    });
    let mut csv = Vec::new();
    if let (Some(lo), Some(hi)) = (m.raw.n_min, m.raw.n_max) {
        let fit = tail_fit(&values, &flags, lo, hi).map_err(RunError::Refusal)?;
        results["fit"] = json!(fit);
        let surv = Survival::new(&values, &flags).map_err(RunError::Refusal)?;
        let mut t = Table::new(m, &["n", "survival", "exceeding", "censor_mass"]);
        for n in log_grid(lo, hi) {
            t.row([
                n.to_string(),
                surv.survival(n).to_string(),
                surv.exceeding(n).to_string(),
                surv.censor_mass(n).to_string(),
            ]);
        }
        csv.push(("tail-fit-survival.csv".into(), t.finish()));
    }
    if let Some(ns) = &m.raw.n_list {
        let trend = critical_trend(&values, &flags, ns).map_err(RunError::Refusal)?;
        let mut t = Table::new(m, &["n", "n_ln2_n_survival"]);
        for (n, v) in ns.iter().zip(&trend) {
            t.row([n.to_string(), v.to_string()]);
        }
        results["trend"] = json!(ns
            .iter()
            .zip(&trend)
            .map(|(n, v)| json!({ "n": n, "value": v }))
            .collect::<Vec<_>>());
        csv.push(("tail-fit-trend.csv".into(), t.finish()));
    }
    Ok(Bundle { csv, results })
}
