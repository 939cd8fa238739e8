use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{hex, svg, Scenario, SystemKind};
use crate::chaos::{ChaosLab, ChaosModel, ChaosSetup, RateStudy};
use crate::error::{validation, Error, Result};
use crate::kernel::BrownianBundle;
use crate::mean_field::presets::{interaction, terminal};
use crate::mean_field::{solve_interacting, solve_mkv};
use crate::numeric::mean_and_stderr;
use crate::pde::presets::pde_scenario;
use crate::pde::{compare_pde, solve_particle_fbsde, PdeSetup};
use crate::transport::{wasserstein_assignment, wasserstein_entropic};

pub const SIDECAR_SCHEMA: u32 = 1;

const ENTROPIC_ITERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Simulate,
    RateStudy,
    SupStudy,
    Tails,
    ProcessError,
    Blocks,
    PdeCompare,
    Transport,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Simulate,
        Subcommand::RateStudy,
        Subcommand::SupStudy,
        Subcommand::Tails,
        Subcommand::ProcessError,
        Subcommand::Blocks,
        Subcommand::PdeCompare,
        Subcommand::Transport,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::RateStudy => "rate-study",
            Subcommand::SupStudy => "sup-study",
            Subcommand::Tails => "tails",
            Subcommand::ProcessError => "process-error",
            Subcommand::Blocks => "blocks",
            Subcommand::PdeCompare => "pde-compare",
            Subcommand::Transport => "transport",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| {
            Error::Validation(format!(
                "unknown subcommand `{name}`; expected one of {}",
                Self::ALL.map(|s| s.name()).join(", ")
            ))
        })
    }

    /// CSV column contract.
    pub fn header(&self) -> &'static [&'static str] {
        match self {
            Subcommand::Simulate => &["node", "t", "mean_y", "stderr_y", "reference_mean"],
            Subcommand::RateStudy | Subcommand::SupStudy => &["n", "estimate", "stderr", "reference"],
            Subcommand::Tails => &[
                "n",
                "epsilon",
                "hits",
                "reps",
                "probability",
                "ci_low",
                "ci_high",
                "reference_a",
                "reference_b",
            ],
            Subcommand::ProcessError => &["n", "estimate", "stderr", "reference", "y_part", "z_part"],
            Subcommand::Blocks => &["n", "k", "estimate", "stderr", "single_particle", "ratio"],
            Subcommand::PdeCompare => &["n", "gap_estimate", "stderr", "epsilon_n", "epsilon_n_plus_r"],
            Subcommand::Transport => &["n", "exact", "entropic", "entropic_converged"],
        }
    }
}

/// In-memory result of one subcommand: CSV rows plus JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub subcommand: Subcommand,
    pub rows: Vec<Vec<String>>,
    /// Slope fits, iteration counts and similar scalars.
    pub summary: Value,
    /// Full typed result.
    pub payload: Value,
    /// `(label, ns, values)` for the optional chart.
    series: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Table {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.subcommand.header()).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// JSON sidecar written next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub operation: String,
    pub timestamp_unix: u64,
    pub code_version: String,
    /// SHA-256 over the resolved scenario, operation and code version.
    pub input_digest: String,
    /// SHA-256 of the CSV bytes.
    pub payload_digest: Option<String>,
    pub status: String,
    pub error_code: Option<String>,
    pub error: Option<String>,
    pub summary: Value,
    pub payload: Value,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub record: ResultRecord,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn needs_chaos(s: &Scenario, sub: Subcommand) -> Result<()> {
    if s.kind == SystemKind::Pde {
        return validation(format!(
            "{} needs kind interacting, linear-interaction or mkv, scenario has kind pde",
            sub.name()
        ));
    }
    Ok(())
}

fn chaos_setup(s: &Scenario) -> Result<ChaosSetup> {
    let grid = s.time_grid()?;
    let m = &s.model;
    let model = if m.oracle.is_some() {
        ChaosModel::GaussianOracle
    } else {
        let i = interaction(m.interaction.as_deref().unwrap_or_default(), &m.interaction_params, m.m)?;
        let t = terminal(m.terminal.as_deref().unwrap_or_default(), &m.terminal_params, m.m, m.d)?;
        ChaosModel::Bsde {
            mean_flow: i.mean_rule.flow(grid.horizon(), t.mean),
            interaction: i.spec,
            terminal: t.spec,
        }
    };
    Ok(ChaosSetup {
        model,
        grid,
        noise_dim: m.d,
        basis: s.basis,
        picard: s.picard,
        seed: s.seed,
        batch: s.sizes.batch,
        min_scenarios: s.sizes.min_scenarios,
        reference_cloud: s.sizes.reference_cloud,
        q: s.rates.q,
        k: s.rates.k,
        delta: s.rates.delta,
    })
}

fn node(s: &Scenario) -> usize {
    s.study.node.unwrap_or(s.grid.steps / 2)
}

fn study_table(sub: Subcommand, study: &RateStudy) -> Table {
    let rows = study
        .ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mut row = vec![
                n.to_string(),
                num(study.estimates[j]),
                num(study.stderrs[j]),
                opt(study.references[j]),
            ];
            if let Some(c) = &study.components {
                row.push(num(c[j].0));
                row.push(num(c[j].1));
            }
            row
        })
        .collect();
    let mut series = vec![("estimate".to_string(), study.ns.clone(), study.estimates.clone())];
    if let Some(r) = study.references.iter().copied().collect::<Option<Vec<f64>>>() {
        series.push(("reference".to_string(), study.ns.clone(), r));
    }
    Table {
        subcommand: sub,
        rows,
        summary: json!({
            "slope": study.fit.as_ref().map(|f| f.slope),
            "intercept": study.fit.as_ref().map(|f| f.intercept),
            "slope_ci": study.fit.as_ref().map(|f| f.ci),
            "excluded": study.excluded,
        }),
        payload: serde_json::to_value(study).expect("study serializes"),
        series,
    }
}

fn simulate(s: &Scenario) -> Result<Table> {
    let grid = s.time_grid()?;
    let m = &s.model;
    let n = s.study.n;
    let scenarios = s.sizes.batch.div_ceil(n).max(1);
    let (y, width, reference, summary): (Vec<f64>, usize, Option<Vec<f64>>, Value) = if m.oracle.is_some() {
        let b = BrownianBundle::batched(s.seed, 0, n, scenarios, m.d, &grid)?;
        (b.values_node_major(), m.d, Some(vec![0.0; grid.steps() + 1]), json!({ "paths": b.len() }))
    } else if s.kind == SystemKind::Pde {
        let sc = pde_scenario(m.pde.as_deref().unwrap_or_default(), &m.pde_params, m.d, grid.horizon())?;
        let b = BrownianBundle::batched(s.seed, 0, n, scenarios, m.d, &grid)?;
        let sol = solve_particle_fbsde(&sc, n, &b, &s.basis)?;
        let warnings = sol.solution.warnings();
        (sol.solution.y, 1, None, json!({ "paths": b.len(), "warnings": warnings }))
    } else {
        let i = interaction(m.interaction.as_deref().unwrap_or_default(), &m.interaction_params, m.m)?;
        let t = terminal(m.terminal.as_deref().unwrap_or_default(), &m.terminal_params, m.m, m.d)?;
        let flow = i.mean_rule.flow(grid.horizon(), t.mean);
        if s.kind == SystemKind::Mkv {
            let b = BrownianBundle::batched(s.seed, 0, s.sizes.cloud_size, 1, m.d, &grid)?;
            let sol = solve_mkv(&i.spec, &t.spec, s.sizes.cloud_size, &b, &s.basis, s.picard, &flow)?;
            let summary = json!({
                "cloud_size": sol.cloud_size(),
                "picard_status": sol.status,
                "picard_log": sol.log,
                "mean_flow_error": sol.mean_flow_error(),
                "warnings": sol.solution.warnings(),
            });
            let reference = sol.reference_mean_flow.clone();
            (sol.solution.y, m.m, reference, summary)
        } else {
            let b = BrownianBundle::batched(s.seed, 0, n, scenarios, m.d, &grid)?;
            let sol = solve_interacting(&i.spec, &t.spec, &b, &s.basis)?;
            let summary = json!({ "paths": b.len(), "warnings": sol.solution.warnings() });
            (sol.solution.y, m.m, flow.on(&grid), summary)
        }
    };
    let nodes = grid.steps() + 1;
    let per_node = y.len() / nodes;
    let mut rows = Vec::with_capacity(nodes);
    let mut means = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let first: Vec<f64> = y[k * per_node..(k + 1) * per_node].iter().step_by(width).copied().collect();
        let (mean, se) = mean_and_stderr(&first);
        means.push(mean);
        rows.push(vec![
            k.to_string(),
            num(grid.time(k)),
            num(mean),
            num(se),
            opt(reference.as_ref().map(|r| r[k])),
        ]);
    }
    Ok(Table {
        subcommand: Subcommand::Simulate,
        rows,
        payload: json!({ "mean_y": means, "reference_mean": reference }),
        summary,
        series: Vec::new(),
    })
}

fn tail_epsilons(s: &Scenario, lab: &ChaosLab) -> Result<Vec<f64>> {
    if !s.study.tail_epsilons.is_empty() {
        return Ok(s.study.tail_epsilons.clone());
    }
    let Some(q) = s.study.tail_quantile else {
        return validation("tails needs study.tail_epsilons or study.tail_quantile");
    };
    let mut d = lab.distance_samples(node(s), s.sizes.ns[0], s.sizes.reps, s.rates.p)?;
    d.sort_by(f64::total_cmp);
    let idx = ((q * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
    Ok(vec![d[idx]])
}

fn tails(s: &Scenario) -> Result<Table> {
    let lab = ChaosLab::new(chaos_setup(s)?)?;
    let eps = tail_epsilons(s, &lab)?;
    let reps = s.sizes.reps;
    for &n in &s.sizes.ns {
        let need = lab.required_tail_reps(n, s.rates.p, &eps);
        if need > reps as f64 {
            let smallest = eps.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(Error::Precondition(format!(
                "tail estimation needs reps * envelope >= 5; at n={n} the thresholds (smallest {smallest}) require reps >= {need}, got reps={reps}"
            )));
        }
    }
    let mut all = Vec::new();
    for &n in &s.sizes.ns {
        all.extend(lab.tail(node(s), n, s.rates.p, &eps, reps)?);
    }
    let rows = all
        .iter()
        .map(|t| {
            vec![
                t.n.to_string(),
                num(t.epsilon),
                t.hits.to_string(),
                t.reps.to_string(),
                num(t.probability),
                num(t.ci_low),
                num(t.ci_high),
                num(t.reference_a),
                num(t.reference_b),
            ]
        })
        .collect();
    Ok(Table {
        subcommand: Subcommand::Tails,
        rows,
        summary: json!({ "epsilons": eps }),
        payload: serde_json::to_value(&all).expect("tails serialize"),
        series: Vec::new(),
    })
}

fn blocks(s: &Scenario) -> Result<Table> {
    let lab = ChaosLab::new(chaos_setup(s)?)?;
    let est = s
        .study
        .k_blocks
        .iter()
        .map(|&k| lab.block_bound(s.study.n, k, s.sizes.reps))
        .collect::<Result<Vec<_>>>()?;
    let rows = est
        .iter()
        .map(|b| {
            vec![
                b.n.to_string(),
                b.k_block.to_string(),
                num(b.estimate),
                num(b.stderr),
                num(b.single_particle),
                num(b.ratio),
            ]
        })
        .collect();
    Ok(Table {
        subcommand: Subcommand::Blocks,
        rows,
        summary: json!({ "n": s.study.n }),
        payload: serde_json::to_value(&est).expect("blocks serialize"),
        series: Vec::new(),
    })
}

fn transport(s: &Scenario) -> Result<Table> {
    let lab = ChaosLab::new(chaos_setup(s)?)?;
    let p = s.rates.p;
    let mut rows = Vec::new();
    let mut exact = Vec::new();
    for &n in &s.sizes.ns {
        let (a, b) = lab.node_measures(node(s), n, 0)?;
        let w = wasserstein_assignment(p, &a, &b)?;
        let e = wasserstein_entropic(p, &a, &b, s.study.entropic_reg, ENTROPIC_ITERS)?;
        rows.push(vec![n.to_string(), num(w), num(e.distance), e.converged.to_string()]);
        exact.push(w);
    }
    Ok(Table {
        subcommand: Subcommand::Transport,
        rows,
        summary: json!({ "p": p, "entropic_reg": s.study.entropic_reg }),
        payload: json!({ "ns": s.sizes.ns, "exact": exact }),
        series: vec![("exact".to_string(), s.sizes.ns.clone(), exact)],
    })
}

fn pde(s: &Scenario) -> Result<Table> {
    if s.kind != SystemKind::Pde {
        return validation("pde-compare needs kind = \"pde\"");
    }
    let grid = s.time_grid()?;
    let m = &s.model;
    let scenario = pde_scenario(m.pde.as_deref().unwrap_or_default(), &m.pde_params, m.d, grid.horizon())?;
    let study = compare_pde(
        PdeSetup {
            scenario,
            grid,
            basis: s.basis,
            seed: s.seed,
            batch: s.sizes.batch,
            min_scenarios: s.sizes.min_scenarios,
            cloud_size: s.sizes.cloud_size,
            empirical_cloud: s.sizes.empirical_cloud,
            q: None,
        },
        &s.sizes.ns,
        s.sizes.reps,
    )?;
    let c = &study.comparisons;
    let rows = c
        .iter()
        .map(|c| {
            vec![
                c.n.to_string(),
                num(c.gap),
                num(c.stderr),
                num(c.epsilon_n),
                opt(c.epsilon_n_plus_r),
            ]
        })
        .collect();
    let ns: Vec<usize> = c.iter().map(|c| c.n).collect();
    Ok(Table {
        subcommand: Subcommand::PdeCompare,
        rows,
        summary: json!({
            "slope": study.fit.as_ref().map(|f| f.slope),
            "slope_ci": study.fit.as_ref().map(|f| f.ci),
        }),
        payload: serde_json::to_value(&study).expect("study serializes"),
        series: vec![
            ("gap".to_string(), ns.clone(), c.iter().map(|c| c.gap).collect()),
            ("epsilon_n".to_string(), ns, c.iter().map(|c| c.epsilon_n).collect()),
        ],
    })
}

/// Runs a subcommand without touching the filesystem.
pub fn compute(s: &Scenario, sub: Subcommand) -> Result<Table> {
    s.validate()?;
    match sub {
        Subcommand::Simulate => simulate(s),
        Subcommand::PdeCompare => pde(s),
        Subcommand::RateStudy | Subcommand::SupStudy | Subcommand::ProcessError => {
            needs_chaos(s, sub)?;
            let lab = ChaosLab::new(chaos_setup(s)?)?;
            let (ns, reps, p) = (&s.sizes.ns, s.sizes.reps, s.rates.p);
            let study = match sub {
                Subcommand::RateStudy => lab.marginal_study(node(s), ns, reps, p)?,
                Subcommand::SupStudy => lab.sup_study(ns, reps, p)?,
                _ => lab.process_error(ns, reps)?,
            };
            Ok(study_table(sub, &study))
        }
        Subcommand::Tails => {
            needs_chaos(s, sub)?;
            tails(s)
        }
        Subcommand::Blocks => {
            needs_chaos(s, sub)?;
            blocks(s)
        }
        Subcommand::Transport => {
            needs_chaos(s, sub)?;
            transport(s)
        }
    }
}

fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn input_digest(s: &Scenario, sub: Subcommand) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(s).expect("scenario serializes"));
    h.update([0]);
    h.update(sub.name().as_bytes());
    h.update([0]);
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    hex(&h.finalize())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::from)
}

/// Runs a subcommand and writes `<out>/<scenario hash>/<subcommand>.csv`,
/// its JSON sidecar, the resolved `scenario.toml` and, when requested, an
/// SVG chart. Failures still leave a sidecar carrying the error code.
pub fn run(s: &Scenario, sub: Subcommand, out: &Path) -> Result<RunOutput> {
    let hash = s.hash();
    let dir = out.join(&hash);
    std::fs::create_dir_all(&dir)?;
    write(&dir.join("scenario.toml"), s.to_toml().as_bytes())?;
    let csv_path = dir.join(format!("{}.csv", sub.name()));
    let sidecar = dir.join(format!("{}.json", sub.name()));
    let mut record = ResultRecord {
        schema: SIDECAR_SCHEMA,
        scenario: s.name.clone(),
        scenario_hash: hash,
        operation: sub.name().to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        input_digest: input_digest(s, sub),
        payload_digest: None,
        status: "ok".into(),
        error_code: None,
        error: None,
        summary: Value::Null,
        payload: Value::Null,
    };
    let result = compute(s, sub).and_then(|table| {
        let bytes = table.to_csv()?;
        write(&csv_path, &bytes)?;
        if s.study.svg && !table.series.is_empty() {
            let chart = svg::loglog(&format!("{} / {}", s.name, sub.name()), &table.series);
            write(&dir.join(format!("{}.svg", sub.name())), chart.as_bytes())?;
        }
        Ok((digest(&bytes), table))
    });
    match result {
        Ok((d, table)) => {
            record.payload_digest = Some(d);
            record.summary = table.summary;
            record.payload = table.payload;
        }
        Err(e) => {
            record.status = "error".into();
            record.error_code = Some(e.code().to_string());
            record.error = Some(e.to_string());
            write(&sidecar, &serde_json::to_vec_pretty(&record).expect("record serializes"))?;
            return Err(e);
        }
    }
    write(&sidecar, &serde_json::to_vec_pretty(&record).expect("record serializes"))?;
    Ok(RunOutput {
        dir,
        csv: csv_path,
        sidecar,
        record,
    })
}
