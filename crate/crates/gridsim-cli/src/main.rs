//! Command-line harness: run scenarios, export series, audit logged runs,
//! and solve the standalone prosumer game.
//!
//! Set `GRIDSIM_LOG=info` (or `debug`) for progress output on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridsim::config::ScenarioConfig;
use gridsim::harness::{
    self, read_records, run_scenario, write_records_to_path, SimulationResult, StepRecord,
    SERIES_NAMES,
};
use gridsim::market::{
    best_response_dynamics, check_constraints, ems_cost, prosumer_best_response,
    DispatchConstraints, DispatchStep, EmsCostParams, PriceFn, ProsumerAgent, QuadCost,
    UpdateOrder,
};
use gridsim::metrics::summarize;

#[derive(Parser)]
#[command(name = "gridsim", about = "Cyber-physical distribution-grid co-simulation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write records, series, and a summary.
    Run(RunArgs),
    /// Export one named series from a records file.
    Export(ExportArgs),
    /// EMS cost and feasibility report over a records file.
    Audit(AuditArgs),
    /// Solve the prosumer game standalone.
    Equilibrium(EquilibriumArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration file (TOML); bundled defaults when omitted.
    #[arg(long, default_value = "")]
    config: String,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Step-count override.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated controller subset (adp,ppo,dqn).
    #[arg(long)]
    controllers: Option<String>,
    /// Hybrid supervisor on|off.
    #[arg(long)]
    hybrid: Option<String>,
    /// FDI attack windows on|off.
    #[arg(long)]
    attacks: Option<String>,
    /// Machine dynamics on|off.
    #[arg(long)]
    dynamics: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    /// Records file produced by `run`.
    #[arg(long)]
    records: PathBuf,
    /// Series name (see the error message for the list).
    #[arg(long)]
    series: String,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    /// Effort weight used to reconstruct cost series from the log.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Moving-average window.
    #[arg(long, default_value_t = 50)]
    window: usize,
}

#[derive(Args)]
struct AuditArgs {
    /// Records file produced by `run`.
    #[arg(long)]
    records: PathBuf,
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
    /// Feeder-head rating used as the generation bound, kW.
    #[arg(long, default_value_t = 10_000.0)]
    feeder_rating_kw: f64,
    /// Quadratic generation cost coefficient (per kW^2 h).
    #[arg(long, default_value_t = 1e-5)]
    gen_cost_quadratic: f64,
    /// Linear curtailment penalty (per kWh shed).
    #[arg(long, default_value_t = 0.5)]
    curtail_cost: f64,
    /// Quadratic storage-throughput cost.
    #[arg(long, default_value_t = 1e-6)]
    storage_cost: f64,
    /// Quadratic switching cost on control deltas.
    #[arg(long, default_value_t = 1e-3)]
    switch_cost: f64,
}

#[derive(Args)]
struct EquilibriumArgs {
    /// Scenario configuration supplying the [market] section.
    #[arg(long, default_value = "")]
    config: String,
    /// Agent-count override.
    #[arg(long)]
    agents: Option<usize>,
    /// Report output path.
    #[arg(long, default_value = "equilibrium.txt")]
    out: PathBuf,
    /// Simultaneous (Jacobi) updates instead of sequential sweeps.
    #[arg(long, default_value_t = false)]
    simultaneous: bool,
}

fn log_enabled() -> bool {
    std::env::var("GRIDSIM_LOG").map(|v| !v.is_empty() && v != "off").unwrap_or(false)
}

fn parse_switch(name: &str, value: &Option<String>) -> Result<Option<bool>> {
    match value.as_deref() {
        None => Ok(None),
        Some("on") | Some("true") => Ok(Some(true)),
        Some("off") | Some("false") => Ok(Some(false)),
        Some(other) => bail!("--{name} expects on|off, got {other:?}"),
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Export(args) => cmd_export(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Equilibrium(args) => cmd_equilibrium(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::from_path(&args.config)
        .with_context(|| format!("loading scenario {:?}", args.config))?;
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.scenario.steps = steps;
    }
    if let Some(list) = &args.controllers {
        cfg.flags.controllers = list
            .split(',')
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        for c in &cfg.flags.controllers {
            if !matches!(c.as_str(), "adp" | "ppo" | "dqn") {
                bail!("unknown controller {c:?} (expected adp, ppo, dqn)");
            }
        }
    }
    if let Some(v) = parse_switch("hybrid", &args.hybrid)? {
        cfg.flags.hybrid = v;
    }
    if let Some(v) = parse_switch("attacks", &args.attacks)? {
        cfg.flags.attacks = v;
    }
    if let Some(v) = parse_switch("dynamics", &args.dynamics)? {
        cfg.flags.dynamics = v;
    }

    if log_enabled() {
        eprintln!(
            "running {} steps, seed {}, controllers {:?}, hybrid {}",
            cfg.scenario.steps, cfg.scenario.seed, cfg.flags.controllers, cfg.flags.hybrid
        );
    }
    let started = std::time::Instant::now();
    let result = run_scenario(&cfg).context("scenario failed")?;
    if log_enabled() {
        eprintln!("completed in {:.1?}", started.elapsed());
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {:?}", args.out))?;
    let records_path = args.out.join("records.csv");
    write_records_to_path(&result.records, &records_path)
        .with_context(|| format!("writing {records_path:?}"))?;

    let series_dir = args.out.join("series");
    std::fs::create_dir_all(&series_dir)?;
    for name in SERIES_NAMES {
        let path = series_dir.join(format!("{name}.csv"));
        harness::export_series_to_path(&result, name, cfg.output.moving_average_window, &path)
            .with_context(|| format!("writing series {name}"))?;
    }

    let summary_path = args.out.join("summary.txt");
    write_summary(&result, &cfg, &summary_path)?;
    println!("wrote {} records to {}", result.records.len(), records_path.display());
    Ok(())
}

fn write_summary(result: &SimulationResult, cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    writeln!(f, "steps: {}", cfg.scenario.steps)?;
    writeln!(f, "seed: {}", cfg.scenario.seed)?;
    writeln!(f, "records: {}", result.records.len())?;
    writeln!(f, "diverged steps: {}", result.diverged_steps)?;
    let v = summarize(&result.bus5_voltage, cfg.output.moving_average_window, (0.95, 1.05))
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    writeln!(f, "bus-5 voltage: min {:.4} max {:.4} mean {:.4}", v.min, v.max, v.mean)?;
    let r = summarize(&result.resilience, cfg.output.moving_average_window, (0.95, 1.0))
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    writeln!(
        f,
        "resilience: min {:.4} mean {:.4} fraction in [0.95, 1]: {:.3}",
        r.min, r.mean, r.fraction_in_band
    )?;
    writeln!(
        f,
        "mean costs: total {:.3} adp {:.3} ppo {:.3} dqn {:.3}",
        mean(&result.cost_total),
        mean(&result.cost_adp),
        mean(&result.cost_ppo),
        mean(&result.cost_dqn)
    )?;
    let picks = result.hybrid_selected.iter().fold((0, 0, 0, 0), |mut acc, h| {
        use gridsim::control::ControllerKind::*;
        match h {
            Some(Adp) => acc.0 += 1,
            Some(Ppo) => acc.1 += 1,
            Some(Dqn) => acc.2 += 1,
            None => acc.3 += 1,
        }
        acc
    });
    writeln!(f, "hybrid picks: adp {} ppo {} dqn {} none {}", picks.0, picks.1, picks.2, picks.3)?;
    for line in &result.violation_log {
        writeln!(f, "note: {line}")?;
    }
    Ok(())
}

/// Groups record rows by step (records are emitted bus-major per step).
fn rows_by_step(records: &[StepRecord]) -> Vec<&[StepRecord]> {
    let mut steps = Vec::new();
    if records.is_empty() {
        return steps;
    }
    let first_bus = records[0].bus_id;
    let mut start = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.bus_id == first_bus {
            steps.push(&records[start..i]);
            start = i;
        }
    }
    steps.push(&records[start..]);
    steps
}

fn empty_result() -> SimulationResult {
    SimulationResult {
        records: Vec::new(),
        cost_total: Vec::new(),
        cost_adp: Vec::new(),
        cost_ppo: Vec::new(),
        cost_dqn: Vec::new(),
        resilience: Vec::new(),
        feeder_kw: Vec::new(),
        solar_kw: Vec::new(),
        wind_kw: Vec::new(),
        load_kw: Vec::new(),
        bus5_voltage: Vec::new(),
        bus5_load_pu: Vec::new(),
        bus5_pv_pu: Vec::new(),
        bus5_wind_pu: Vec::new(),
        hybrid_selected: Vec::new(),
        diverged_steps: 0,
        violation_log: Vec::new(),
    }
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("reading {:?}", args.records))?;
    let records = read_records(&text).context("parsing records")?;
    let steps = rows_by_step(&records);
    if steps.is_empty() {
        bail!("records file holds no rows");
    }

    // Rebuild the derivable series from logged measurements. Cost series
    // use the logged scalar action magnitudes and the supplied alpha.
    let state_dev = |r: &StepRecord| {
        let dv = r.voltage - 1.0;
        let df = r.frequency - 50.0;
        dv * dv + df * df
    };
    let m = gridsim::control::ACTION_DIM as f64;
    let mut result = empty_result();
    let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
    for rows in &steps {
        result.feeder_kw.push(rows[0].feeder_kw);
        result.solar_kw.push(rows.iter().map(|r| r.solar).sum());
        result.wind_kw.push(rows.iter().map(|r| r.wind).sum());
        result.load_kw.push(rows.iter().map(|r| r.load_p).sum());
        let bus5 = rows.iter().find(|r| r.bus_id == 5).unwrap_or(&rows[0]);
        result.bus5_voltage.push(bus5.voltage);
        result.bus5_load_pu.push(bus5.load_p / gridsim::state::rated::P_LOAD_KW);
        result.bus5_pv_pu.push(bus5.solar / gridsim::state::rated::SOLAR_KW);
        result.bus5_wind_pu.push(bus5.wind / gridsim::state::rated::WIND_KW);
        result
            .resilience
            .push(rows.iter().map(|r| r.resilience).sum::<f64>() / rows.len() as f64);
        let adp: f64 = rows
            .iter()
            .map(|r| state_dev(r) + args.alpha * m * r.adp_action * r.adp_action)
            .sum();
        let ppo: f64 = rows.iter().map(|r| -r.ppo_reward).sum();
        let dqn: f64 = rows
            .iter()
            .map(|r| {
                let u = grid.get(r.dqn_action).copied().unwrap_or(0.0);
                state_dev(r) + args.alpha * u * u
            })
            .sum();
        result.cost_adp.push(adp);
        result.cost_ppo.push(ppo);
        result.cost_dqn.push(dqn);
        result.cost_total.push(adp + ppo + dqn);
    }

    harness::export_series_to_path(&result, &args.series, args.window, &args.out)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    println!("wrote {} to {}", args.series, args.out.display());
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("reading {:?}", args.records))?;
    let records = read_records(&text).context("parsing records")?;
    let steps = rows_by_step(&records);
    if steps.is_empty() {
        bail!("records file holds no rows");
    }

    // Reconstruct a dispatch trajectory: the feeder head is the single
    // dispatchable source; storage throughput comes from SOC deltas.
    let dt_h = 1.0 / 3600.0;
    let e_max = 300.0;
    let mut dispatch = Vec::with_capacity(steps.len());
    let mut prev_soc: Vec<f64> = steps[0].iter().map(|r| r.soc_pct / 100.0).collect();
    for rows in &steps {
        let mut throughput = 0.0;
        for (r, prev) in rows.iter().zip(&prev_soc) {
            throughput += (r.soc_pct / 100.0 - prev).abs() * e_max / dt_h;
        }
        prev_soc = rows.iter().map(|r| r.soc_pct / 100.0).collect();
        dispatch.push(DispatchStep {
            p_gen: vec![rows[0].feeder_kw],
            p_shed: 0.0,
            p_load: rows.iter().map(|r| r.load_p).sum(),
            storage_throughput: throughput,
            battery_commands: Vec::new(),
            control: rows.iter().map(|r| r.edge_action).collect(),
        });
    }
    let params = EmsCostParams {
        gen_cost: vec![QuadCost { a: args.gen_cost_quadratic, b: 0.0, c: 0.0 }],
        curtail_cost: args.curtail_cost,
        storage_cost: args.storage_cost,
        switch_cost: args.switch_cost,
    };
    if !params.validate() {
        bail!("cost coefficients must be non-negative");
    }
    let total = ems_cost(&dispatch, &params, dt_h);
    let cons = DispatchConstraints {
        p_gen_limits: vec![(0.0, args.feeder_rating_kw)],
        batteries: Vec::new(),
        dt_h,
    };
    let violations = check_constraints(&dispatch, &cons);

    let mut f = std::fs::File::create(&args.out)?;
    writeln!(f, "EMS audit over {} steps ({} records)", steps.len(), records.len())?;
    writeln!(f, "objective J = {total:.6}")?;
    writeln!(
        f,
        "feeder kW: min {:.1} max {:.1}",
        dispatch.iter().map(|d| d.p_gen[0]).fold(f64::INFINITY, f64::min),
        dispatch.iter().map(|d| d.p_gen[0]).fold(f64::NEG_INFINITY, f64::max)
    )?;
    writeln!(f, "violations: {}", violations.len())?;
    for v in violations.iter().take(50) {
        writeln!(f, "  {v:?}")?;
    }
    println!("audit written to {}", args.out.display());
    Ok(())
}

fn cmd_equilibrium(args: EquilibriumArgs) -> Result<()> {
    let cfg = ScenarioConfig::from_path(&args.config)
        .with_context(|| format!("loading scenario {:?}", args.config))?;
    let m = &cfg.market;
    let n = args.agents.unwrap_or(m.agents);
    if n == 0 {
        bail!("need at least one agent");
    }
    let agents: Vec<ProsumerAgent> = (0..n)
        .map(|_| ProsumerAgent::new(m.disutility, (m.strategy_min, m.strategy_max)))
        .collect();
    let price_fn = PriceFn { base: m.price_base, slope: m.price_slope };
    let order = if args.simultaneous { UpdateOrder::Simultaneous } else { UpdateOrder::Sequential };
    let state = best_response_dynamics(&agents, price_fn, order, m.tolerance, m.max_rounds);

    let mut f = std::fs::File::create(&args.out)?;
    writeln!(f, "agents: {n}")?;
    writeln!(f, "converged: {} in {} rounds", state.converged, state.rounds)?;
    writeln!(f, "price at equilibrium: {:.8}", state.price)?;
    for (i, s) in state.strategies.iter().enumerate() {
        writeln!(f, "agent {i}: strategy {s:.8}")?;
    }
    // Deviation check at the broadcast price.
    let mut worst: f64 = 0.0;
    for (agent, s) in agents.iter().zip(&state.strategies) {
        let u_star = agent.utility(*s, state.price);
        for delta in [-0.1, -0.01, 0.01, 0.1] {
            let gain = agent.utility(s + delta, state.price) - u_star;
            worst = worst.max(gain);
        }
        let br = prosumer_best_response(agent, state.price);
        writeln!(f, "  best response at price: {br:.8} (delta {:.2e})", (br - s).abs())?;
    }
    writeln!(f, "max unilateral deviation gain: {worst:.3e}")?;
    if !state.converged {
        eprintln!("warning: dynamics did not converge");
        std::process::exit(2);
    }
    println!("equilibrium written to {}", args.out.display());
    Ok(())
}
