use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use epbs_sim::config::{Mode, SimConfig};
use epbs_sim::io::{load_config, read_initial_stakes, write_restake, write_run, write_sweep};
use epbs_sim::metrics::{
    blocks_to_target_all, growth_rate, mean_blocks_to_target, phi_epbs, GrowthRole, RewardParams,
};
use epbs_sim::model::{Role, Tau, GWEI_PER_ETH};
use epbs_sim::par::Exec;
use epbs_sim::sim::run;
use epbs_sim::sweep::{run_sweep, SweepSpec};
use epbs_sim::Error;

#[derive(Parser)]
#[command(name = "epbs-sim", version, about = "Block production simulator for PoS and ePBS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded simulation and write its results.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a grid of attack-participant counts.
    Sweep {
        #[command(flatten)]
        sim: SimFlags,
        /// Attack user counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        attack_users_grid: Vec<usize>,
        /// Attack builder counts (ePBS), comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        attack_builders_grid: Vec<usize>,
        /// Attack validator counts (PoS), comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        attack_validators_grid: Vec<usize>,
        /// Seeds per cell.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the long-horizon restaking experiment.
    Restake {
        #[command(flatten)]
        sim: SimFlags,
        /// CSV of `agent_id,stake[,gamma]` overrides, stake in gwei.
        #[arg(long)]
        initial_stakes: Option<PathBuf>,
        /// Cumulative profit target in ETH.
        #[arg(long, default_value_t = 100)]
        target_eth: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate the inclusion-probability and stake-growth closed forms.
    Probe(ProbeArgs),
}

/// Simulation flags; each overrides the config file, which overrides the
/// built-in defaults.
#[derive(Args, Clone, Default)]
struct SimFlags {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Consensus mode [default: epbs].
    #[arg(long)]
    mode: Option<Mode>,
    /// Slots to simulate [default: 1000; restake: 10000].
    #[arg(long)]
    blocks: Option<u64>,
    /// Run seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Attack users [default: 0].
    #[arg(long)]
    attack_users: Option<usize>,
    /// Attack builders [default: 0].
    #[arg(long)]
    attack_builders: Option<usize>,
    /// Attack validators [default: 0].
    #[arg(long)]
    attack_validators: Option<usize>,
    /// Transactions per block [default: 100].
    #[arg(long)]
    capacity: Option<usize>,
    /// Bid increment in gwei [default: 20000000000].
    #[arg(long)]
    delta: Option<u64>,
    /// Fraction of builders bidding last-minute [default: 0.25].
    #[arg(long)]
    last_minute_fraction: Option<f64>,
    /// First round a last-minute builder bids [default: 20].
    #[arg(long)]
    last_minute_threshold: Option<u32>,
    /// Erdős–Rényi edge probability [default: 0.1].
    #[arg(long)]
    er_p: Option<f64>,
    /// Write every logged bid to bids.csv.
    #[arg(long)]
    trace_bids: bool,
}

impl SimFlags {
    fn resolve(&self, base: SimConfig) -> Result<SimConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => base,
        };
        macro_rules! set {
            ($flag:ident, $field:expr) => {
                if let Some(v) = self.$flag {
                    $field = v;
                }
            };
        }
        set!(mode, c.mode);
        set!(blocks, c.blocks);
        set!(seed, c.seed);
        set!(attack_users, c.attack_user_count);
        set!(attack_builders, c.attack_builder_count);
        set!(attack_validators, c.attack_validator_count);
        set!(capacity, c.capacity);
        set!(delta, c.delta);
        set!(last_minute_fraction, c.last_minute_fraction);
        set!(last_minute_threshold, c.last_minute_threshold);
        set!(er_p, c.graph.p);
        c.trace_bids |= self.trace_bids;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ProbeArgs {
    /// Evaluate the posterior inclusion probability.
    #[arg(long, conflicts_with = "growth")]
    phi: bool,
    /// Prior inclusion probabilities, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    theta: Vec<f64>,
    /// Win-advantage ratios, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    omega: Vec<f64>,
    /// Evaluate the stake growth rate for this role (builder, proposer or validator).
    #[arg(long)]
    growth: Option<GrowthRole>,
    /// Own stake in gwei.
    #[arg(long, value_delimiter = ',', default_value = "32e9")]
    s: Vec<f64>,
    /// Total stake in gwei.
    #[arg(long, value_delimiter = ',', default_value = "320e9")]
    total: Vec<f64>,
    /// Block valuation in gwei.
    #[arg(long, value_delimiter = ',', default_value = "1e9")]
    v: Vec<f64>,
    /// Winning bid in gwei.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    b: Vec<f64>,
    /// Builder win probability.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    f: Vec<f64>,
    /// Builder margin.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pi: Vec<f64>,
    /// Reinvestment factor.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    gamma: Vec<f64>,
}

/// Config keys as the flags that set them.
fn flag_for(key: &str) -> &str {
    match key {
        "attack_user_count" => "--attack-users",
        "attack_builder_count" => "--attack-builders",
        "attack_validator_count" => "--attack-validators",
        "graph.p" => "--er-p",
        "last_minute_fraction" => "--last-minute-fraction",
        "last_minute_threshold" => "--last-minute-threshold",
        "capacity" => "--capacity",
        "delta" => "--delta",
        "attack_users_grid" => "--attack-users-grid",
        "attack_builders_grid" => "--attack-builders-grid",
        "replicates" => "--replicates",
        "restaking.initial_stakes" => "--initial-stakes",
        other => other,
    }
}

fn is_user_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Validation { .. }
            | Error::ConfigParse { .. }
            | Error::Domain { .. }
            | Error::BadRow { .. }
            | Error::EmptyEmpiricalFile(_)
            | Error::EdgeProbability(_)
            | Error::TooFewNodes(_)
    )
}

fn simulate(sim: &SimFlags, out: &Path) -> Result<()> {
    let cfg = sim.resolve(SimConfig::default())?;
    let r = run(&cfg, Exec::Parallel)?;
    write_run(&r, out).with_context(|| format!("writing results to {}", out.display()))?;
    println!("wrote {} slots to {}", r.slots.len(), out.display());
    Ok(())
}

fn sweep(
    sim: &SimFlags,
    users: Vec<usize>,
    builders: Vec<usize>,
    validators: Vec<usize>,
    replicates: u64,
    jobs: usize,
    out: &Path,
) -> Result<()> {
    let base = sim.resolve(SimConfig::default())?;
    let producers = match base.mode {
        Mode::Epbs => builders,
        Mode::Pos if validators.is_empty() => builders,
        Mode::Pos => validators,
    };
    let spec = SweepSpec {
        base,
        attack_users: users,
        attack_producers: producers,
        replicates,
    };
    let cells_dir = out.join("cells");
    let rows = run_sweep(&spec, jobs.max(1), |cell, r| {
        let dir = cells_dir.join(format!("cell{:03}_rep{:03}", cell.index, cell.replicate));
        write_run(r, &dir).map(|_| ())
    })?;
    write_sweep(&rows, out)?;
    println!("wrote {} sweep rows to {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn restake(sim: &SimFlags, initial: Option<&Path>, target_eth: u64, out: &Path) -> Result<()> {
    let mut base = SimConfig {
        blocks: 10_000,
        ..SimConfig::default()
    };
    base.restaking.enabled = true;
    let mut cfg = sim.resolve(base)?;
    cfg.restaking.enabled = true;
    if let Some(p) = initial {
        cfg.restaking.initial_stakes = read_initial_stakes(p)?;
    }
    cfg.validate()?;
    let target = target_eth * GWEI_PER_ETH;
    let r = run(&cfg, Exec::Parallel)?;
    write_restake(&r, target, out)?;
    let hits = blocks_to_target_all(&r, target);
    println!("cohort,agents,mean_blocks_to_target");
    let roles = match cfg.mode {
        Mode::Epbs => vec![Role::Builder, Role::Proposer],
        Mode::Pos => vec![Role::Validator],
    };
    for role in roles {
        for tau in [Tau::Attack, Tau::Benign] {
            let ids = r.ids_with(role, tau);
            if let Some(m) = mean_blocks_to_target(&r, &hits, &ids) {
                println!("{}_{},{},{m:.1}", tau.as_str(), role.as_str(), ids.len());
            }
        }
    }
    Ok(())
}

fn probe(a: &ProbeArgs) -> Result<()> {
    let mut table = String::new();
    if let Some(role) = a.growth {
        table.push_str("role,s,total,v,b,f,pi,gamma,rate\n");
        let name = format!("{role:?}").to_lowercase();
        for &s in &a.s {
            for &total in &a.total {
                for &v in &a.v {
                    for &b in &a.b {
                        for &f in &a.f {
                            for &pi in &a.pi {
                                for &g in &a.gamma {
                                    let rate = growth_rate(role, s, total, RewardParams { v, b, f, pi }, g)?;
                                    table += &format!("{name},{s},{total},{v},{b},{f},{pi},{g},{rate}\n");
                                }
                            }
                        }
                    }
                }
            }
        }
        print!("{table}");
        return Ok(());
    }
    if !a.phi {
        anyhow::bail!(Error::validation("probe", "pass --phi or --growth ROLE"));
    }
    table.push_str("theta,omega,phi\n");
    for &t in &a.theta {
        for &w in &a.omega {
            table += &format!("{t},{w},{}\n", phi_epbs(t, w)?);
        }
    }
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate { sim, out } => simulate(sim, out),
        Command::Sweep {
            sim,
            attack_users_grid,
            attack_builders_grid,
            attack_validators_grid,
            replicates,
            jobs,
            out,
        } => sweep(
            sim,
            attack_users_grid.clone(),
            attack_builders_grid.clone(),
            attack_validators_grid.clone(),
            *replicates,
            *jobs,
            out,
        ),
        Command::Restake {
            sim,
            initial_stakes,
            target_eth,
            out,
        } => restake(sim, initial_stakes.as_deref(), *target_eth, out),
        Command::Probe(a) => probe(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::Validation { key, message }) => {
                eprintln!("error: invalid {}: {message}", flag_for(key));
                ExitCode::from(2)
            }
            Some(inner) if is_user_error(inner) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
            _ => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
