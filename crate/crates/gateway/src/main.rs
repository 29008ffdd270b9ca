use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hydrotwin::agents::{default_rules, load_rules, RuleSet};
use hydrotwin::plant::history::HistoryParams;
use hydrotwin::plant::{Scenario, SimConfig};
use hydrotwin::statedb::{BinWidths, ClusterTolerances, PlantDb};
use hydrotwin::twin::{Twin, TwinConfig};
use hydrotwin_gateway::figures::{
    fig10_rows, fig13_path, hottest_unit, load_spread, write_fig10, write_fig13, write_fig14, ClusterWindow,
};
use hydrotwin_gateway::pipeline::{ingest_files, synthesize_to_dir, ALARM_FILE, TELEMETRY_FILE};
use hydrotwin_gateway::runner::{run_scenario, RunOptions, RunReport};
use hydrotwin_gateway::service::{router, spawn_ticker, AppState, LiveSim};
use hydrotwin_gateway::Tokens;

#[derive(Parser)]
#[command(name = "hydrotwin", version, about = "Three-unit hydro plant twin with unit agents")]
struct Cli {
    /// Twin configuration (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the simulator seed.
    #[arg(long, global = true, env = "HYDROTWIN_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic operating history.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        days: u32,
    },
    /// Cluster a history into per-unit state databases.
    Ingest {
        /// Directory holding telemetry.csv and alarms.csv.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario in batch.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        agents: AgentArgs,
        /// Leave every unit to the operator.
        #[arg(long)]
        no_agents: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the live plant over HTTP.
    Serve {
        #[arg(long, env = "HYDROTWIN_PORT", default_value_t = 8080)]
        port: u16,
        /// `token=role` pairs, comma separated.
        #[arg(long, env = "HYDROTWIN_TOKENS")]
        tokens: String,
        /// Wall-clock milliseconds per simulated minute.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
        /// Scenario whose initial conditions and events drive the plant.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        agents: AgentArgs,
    },
    /// Write figure CSVs.
    Report {
        /// Report JSON from `run`, for the event-response series.
        #[arg(long)]
        report: Option<PathBuf>,
        /// State database directory, for the load-versus-flow scatter.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct AgentArgs {
    /// Agent rule file (TOML); the shipped rules when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// State database directory for blade optimization.
    #[arg(long)]
    db: Option<PathBuf>,
}

impl AgentArgs {
    fn rules(&self) -> Result<RuleSet> {
        match &self.rules {
            Some(p) => {
                Ok(load_rules(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?)
            }
            None => Ok(default_rules()),
        }
    }

    fn db(&self, n_units: usize) -> Result<Option<Arc<PlantDb>>> {
        self.db.as_deref().map(|d| load_db(d, n_units).map(Arc::new)).transpose()
    }
}

fn load_db(dir: &Path, n_units: usize) -> Result<PlantDb> {
    PlantDb::load(dir, n_units, BinWidths::default())
        .with_context(|| format!("loading database from {}", dir.display()))
}

fn twin_config(path: Option<&Path>, seed: Option<u64>) -> Result<TwinConfig> {
    let mut cfg: TwinConfig = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TwinConfig::default(),
    };
    if let Some(s) = seed {
        cfg.sim.rng_seed = s;
    }
    cfg.sim.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn synthesize(cfg: &SimConfig, out: &Path, days: u32) -> Result<()> {
    let p = HistoryParams { days, ..HistoryParams::default() };
    let s = synthesize_to_dir(cfg, &p, out)?;
    println!(
        "{} rows, {} alarm-log rows, {:.1} MWhr, load ejects per unit {:?}",
        s.rows, s.log_rows, s.energy_mwhr, s.load_ejects
    );
    Ok(())
}

fn ingest(cfg: &SimConfig, history: &Path, out: &Path) -> Result<()> {
    let o = ingest_files(
        &history.join(TELEMETRY_FILE),
        &history.join(ALARM_FILE),
        cfg.n_units,
        &ClusterTolerances::default(),
        BinWidths::default(),
    )?;
    for d in o.rejected.iter().take(20) {
        eprintln!("line {}: {}", d.line, d.msg);
    }
    o.db.save(out)?;
    let per_unit: Vec<usize> = o.db.units.iter().map(|u| u.len()).collect();
    println!("{} rows accepted, {} rejected, clusters per unit {per_unit:?}", o.rows, o.rejected.len());
    Ok(())
}

fn run(cfg: &TwinConfig, scenario: &Path, agents: &AgentArgs, no_agents: bool, out: &Path) -> Result<()> {
    let sc = Scenario::load(scenario, cfg.sim.n_units)?;
    let opts =
        RunOptions { with_agents: !no_agents, db: agents.db(cfg.sim.n_units)?, ..RunOptions::new(agents.rules()?) };
    let report = run_scenario(cfg, &sc, &opts)?;
    std::fs::create_dir_all(out)?;
    report.write_telemetry(create(&out.join("telemetry.csv"))?)?.flush()?;
    let mut w = create(&out.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.flush()?;
    let t = report.totals;
    println!(
        "{}: {:.3} MWhr with agents, {:.3} MWhr baseline, benefit {:.3} MWhr ({:.2} t coal, {:.2} t CO2)",
        sc.id, t.mwhr_agents, t.mwhr_baseline, t.benefit_mwhr, report.offsets.coal_tons, report.offsets.co2_tons
    );
    Ok(())
}

async fn serve(
    cfg: TwinConfig,
    port: u16,
    tokens: &str,
    tick_ms: u64,
    scenario: Option<&Path>,
    agents: &AgentArgs,
) -> Result<()> {
    let tokens = Tokens::parse(tokens)?;
    if tokens.0.is_empty() {
        bail!("no tokens configured");
    }
    let n = cfg.sim.n_units;
    let sc = scenario.map(|p| Scenario::load(p, n)).transpose()?;
    let (flow, season) = sc.as_ref().map_or((24_000.0, 1), |s| (s.initial_plant_flow, s.initial_season));
    let twin = Twin::new(cfg, agents.rules()?, agents.db(n)?, flow, season, 0)?;
    let sim = Arc::new(LiveSim::new(twin, sc));
    let ticker = spawn_ticker(sim.clone(), Duration::from_millis(tick_ms.max(1)));
    let app = router(AppState { sim, tokens: Arc::new(tokens) });
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    ticker.abort();
    Ok(())
}

fn report(cfg: &TwinConfig, report: Option<&Path>, db: Option<&Path>, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let path = fig13_path(&cfg.sim, 24_000.0, 250.0, 24)?;
    write_fig13(create(&out.join("fig13_redistribution.csv"))?, &path)?;
    if let Some(dir) = db {
        let db = load_db(dir, cfg.sim.n_units)?;
        let w = ClusterWindow::summer_34ft();
        write_fig10(create(&out.join("fig10_load_vs_flow.csv"))?, &fig10_rows(&db, &w))?;
        for u in 0..cfg.sim.n_units {
            if let Some(s) = load_spread(&db, u, &w, 250.0, 34.0) {
                println!(
                    "unit {}: {} clusters near {:.0} CFS, max {:.2} MW, median {:.2} MW, spread {:.2} MW",
                    s.unit, s.clusters, s.q_center, s.max_mw, s.median_mw, s.spread_mw
                );
            }
        }
    }
    if let Some(p) = report {
        let r: RunReport = serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
        write_fig14(create(&out.join("fig14_response.csv"))?, &r, hottest_unit(&r))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = twin_config(cli.config.as_deref(), cli.seed)?;
    match cli.cmd {
        Cmd::Synthesize { out, days } => synthesize(&cfg.sim, &out, days),
        Cmd::Ingest { history, out } => ingest(&cfg.sim, &history, &out),
        Cmd::Run { scenario, agents, no_agents, out } => run(&cfg, &scenario, &agents, no_agents, &out),
        Cmd::Serve { port, tokens, tick_ms, scenario, agents } => {
            tokio::runtime::Runtime::new()?.block_on(serve(cfg, port, &tokens, tick_ms, scenario.as_deref(), &agents))
        }
        Cmd::Report { report: r, db, out } => report(&cfg, r.as_deref(), db.as_deref(), &out),
    }
}
