//! Calibration distributions, configuration files and result persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::config::{SimConfig, StakeAssignment};
use crate::error::{Error, Result};
use crate::metrics::{block_inversions, blocks_to_target_all, Ratio};
use crate::model::Gwei;
use crate::sim::RunRecord;
use crate::sweep::SweepRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSpec {
    Gamma { shape: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// One-column CSV of gwei values, sampled uniformly by row.
    Empirical { path: PathBuf },
}

impl DistributionSpec {
    pub fn validate(&self, key: &str) -> Result<()> {
        match *self {
            DistributionSpec::Gamma { shape, scale } => {
                if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
                    return Err(Error::validation(
                        key,
                        format!("gamma shape and scale must be positive, got ({shape}, {scale})"),
                    ));
                }
            }
            DistributionSpec::LogNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::validation(
                        key,
                        format!("lognormal needs finite mu and sigma >= 0, got ({mu}, {sigma})"),
                    ));
                }
            }
            DistributionSpec::Empirical { ref path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::validation(key, "empirical path is empty"));
                }
            }
        }
        Ok(())
    }
}

/// A ready-to-draw distribution over non-negative integer gwei.
#[derive(Clone, Debug)]
pub enum Sampler {
    Gamma(Gamma<f64>),
    LogNormal(LogNormal<f64>),
    Constant(Gwei),
    Empirical(Vec<Gwei>),
}

impl Sampler {
    pub fn from_spec(spec: &DistributionSpec) -> Result<Sampler> {
        spec.validate("distribution")?;
        Ok(match *spec {
            DistributionSpec::Gamma { shape, scale } => Sampler::Gamma(
                Gamma::new(shape, scale).map_err(|e| Error::validation("distribution", e.to_string()))?,
            ),
            DistributionSpec::LogNormal { mu, sigma: 0.0 } => {
                Sampler::Constant(round_half_up(mu.exp()))
            }
            DistributionSpec::LogNormal { mu, sigma } => Sampler::LogNormal(
                LogNormal::new(mu, sigma).map_err(|e| Error::validation("distribution", e.to_string()))?,
            ),
            DistributionSpec::Empirical { ref path } => Sampler::Empirical(read_empirical(path)?),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Gwei {
        match self {
            Sampler::Gamma(d) => round_half_up(d.sample(rng)),
            Sampler::LogNormal(d) => round_half_up(d.sample(rng)),
            Sampler::Constant(v) => *v,
            Sampler::Empirical(vals) => vals[rng.random_range(0..vals.len())],
        }
    }
}

/// Rounds a non-negative real to the nearest integer, halves upward;
/// saturates at the `u64` range.
pub fn round_half_up(x: f64) -> Gwei {
    if x.is_nan() || x <= 0.0 {
        return 0;
    }
    (x + 0.5).floor() as Gwei
}

/// Reads a one-column CSV of gwei values. A non-numeric first row is
/// treated as a header.
pub fn read_empirical(path: &Path) -> Result<Vec<Gwei>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.split(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<Gwei>() {
            Ok(v) => vals.push(v),
            Err(_) if i == 0 && cell.parse::<f64>().is_err() => continue,
            Err(_) => {
                return Err(Error::BadRow {
                    file: path.to_path_buf(),
                    row: i + 1,
                    message: format!("`{cell}` is not a non-negative integer gwei amount"),
                })
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::EmptyEmpiricalFile(path.to_path_buf()));
    }
    Ok(vals)
}

/// Parses and validates a JSON config; absent keys take their defaults.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SimConfig = serde_json::from_str(&text).map_err(|source| Error::ConfigParse {
        path: path.to_path_buf(),
        source,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_json(cfg: &SimConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

pub fn save_config(cfg: &SimConfig, path: &Path) -> Result<()> {
    fs::write(path, config_to_json(cfg)).map_err(|e| Error::io(path, e))
}

/// Reads `agent_id,stake[,gamma]` rows; stakes are in gwei.
pub fn read_initial_stakes(path: &Path) -> Result<Vec<StakeAssignment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<StakeAssignment>().enumerate() {
        let row = row.map_err(|e| Error::BadRow {
            file: path.to_path_buf(),
            row: i + 2,
            message: e.to_string(),
        })?;
        if row.gamma.is_some_and(|g| g > 1) {
            return Err(Error::BadRow {
                file: path.to_path_buf(),
                row: i + 2,
                message: "gamma must be 0 or 1".into(),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Decimal places of ratios written to CSV.
pub const RATIO_PLACES: u32 = 6;

fn ratio_cell(r: Option<Ratio>) -> String {
    r.map(|r| r.to_decimal(RATIO_PLACES)).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every file written for one result directory, sorted by path.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects named files in memory, then writes them with a manifest.
#[derive(Default)]
struct Bundle {
    files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    fn add(&mut self, name: impl Into<String>, body: Vec<u8>) {
        self.files.push((name.into(), body));
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) {
        let mut body = String::with_capacity(4096);
        body.push_str(header);
        body.push('\n');
        for r in rows {
            body.push_str(&r);
            body.push('\n');
        }
        self.add(name, body.into_bytes());
    }

    fn write(mut self, dir: &Path) -> Result<Manifest> {
        use sha2::{Digest, Sha256};
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.files.sort_by(|a, b| a.0.cmp(&b.0));
        let mut manifest = Manifest::default();
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            manifest.files.push(ManifestEntry {
                path: name.clone(),
                bytes: body.len() as u64,
                sha256: hex::encode(Sha256::digest(body)),
            });
        }
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

pub const SLOTS_HEADER: &str = "slot,mode,producer_id,stop_round,winning_bid,valuation,gas_total,mev_user,mev_producer,mev_uncaptured,inversions,skipped";
pub const AGENTS_HEADER: &str = "agent_id,role,tau,strategy,gamma,profit_total,blocks_produced";
pub const STAKES_HEADER: &str = "slot,agent_id,capital,active_stake";
pub const BIDS_HEADER: &str = "slot,round,builder_id,bid,valuation";
pub const SWEEP_HEADER: &str = "attack_users,attack_builders,mode,mean_inversions,gini_producer,proposer_share,seed";
pub const TARGETS_HEADER: &str = "agent_id,role,tau,gamma,initial_stake,blocks_to_target";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_bundle(run: &RunRecord) -> Bundle {
    let mut b = Bundle::default();
    let mode = run.config.mode.as_str();
    b.add("config.json", config_to_json(&run.config).into_bytes());
    b.csv(
        "slots.csv",
        SLOTS_HEADER,
        run.slots.iter().map(|s| {
            let st = &s.settlement;
            format!(
                "{},{mode},{},{},{},{},{},{},{},{},{},{}",
                s.slot,
                opt(s.producer_id),
                s.stop_round,
                s.winning_bid,
                s.valuation,
                st.gas_total,
                st.mev_captured_by_users,
                st.mev_captured_by_producer,
                st.mev_uncaptured,
                block_inversions(&s.block),
                s.skipped as u8
            )
        }),
    );
    b.csv(
        "agents.csv",
        AGENTS_HEADER,
        run.agents.iter().map(|a| {
            format!(
                "{},{},{},{},{},{},{}",
                a.agent_id,
                a.role.as_str(),
                a.tau.as_str(),
                a.strategy.map(|s| s.label()).unwrap_or_default(),
                a.gamma,
                run.profit[a.agent_id],
                run.blocks_produced[a.agent_id]
            )
        }),
    );
    if run.config.trace_bids {
        b.csv(
            "bids.csv",
            BIDS_HEADER,
            run.slots.iter().flat_map(|s| {
                s.bids.iter().map(|x| {
                    format!("{},{},{},{},{}", x.slot, x.round, x.builder_id, x.amount, x.valuation)
                })
            }),
        );
    }
    if run.config.restaking.enabled {
        b.csv(
            "stakes.csv",
            STAKES_HEADER,
            run.stake_trajectory.iter().enumerate().flat_map(|(slot, row)| {
                row.iter().zip(&run.stakers).map(move |(&(k, s), id)| format!("{slot},{id},{k},{s}"))
            }),
        );
    }
    let mut edges = Vec::new();
    run.graph.write_edge_csv(&mut edges).expect("in-memory write");
    b.add("edges.csv", edges);
    b
}

/// Writes one run's CSVs, config echo and manifest into `dir`.
pub fn write_run(run: &RunRecord, dir: &Path) -> Result<Manifest> {
    run_bundle(run).write(dir)
}

/// Like `write_run`, adding `targets.csv` with each staker's slots to reach
/// `target` cumulative profit.
pub fn write_restake(run: &RunRecord, target: Gwei, dir: &Path) -> Result<Manifest> {
    let mut b = run_bundle(run);
    let hits = blocks_to_target_all(run, target);
    b.csv(
        "targets.csv",
        TARGETS_HEADER,
        run.initial_stakes.iter().map(|s| {
            let a = &run.agents[s.agent_id];
            format!(
                "{},{},{},{},{},{}",
                a.agent_id,
                a.role.as_str(),
                a.tau.as_str(),
                s.gamma,
                s.active_stake,
                opt(hits[a.agent_id])
            )
        }),
    );
    b.write(dir)
}

pub fn write_sweep(rows: &[SweepRow], dir: &Path) -> Result<Manifest> {
    let mut b = Bundle::default();
    b.csv(
        "sweep.csv",
        SWEEP_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.cell.attack_users,
                r.cell.attack_producers,
                r.mode.as_str(),
                r.mean_inversions.to_decimal(RATIO_PLACES),
                ratio_cell(r.gini_producer),
                ratio_cell(r.proposer_share),
                r.cell.seed
            )
        }),
    );
    b.write(dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::ConfigParse { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(-1.0), 0);
        assert_eq!(round_half_up(0.5), 1);
    }

    #[test]
    fn degenerate_lognormal_is_constant() {
        let s = Sampler::from_spec(&DistributionSpec::LogNormal { mu: 3.0, sigma: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let want = round_half_up(3.0f64.exp());
        assert_eq!(want, 20);
        for _ in 0..10 {
            assert_eq!(s.sample(&mut rng), want);
        }
    }

    #[test]
    fn empirical_single_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        fs::write(&p, "gwei\n42\n").unwrap();
        let s = Sampler::from_spec(&DistributionSpec::Empirical { path: p }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..20).all(|_| s.sample(&mut rng) == 42));
    }

    #[test]
    fn empty_empirical_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        fs::write(&p, "gwei\n").unwrap();
        assert!(matches!(read_empirical(&p), Err(Error::EmptyEmpiricalFile(_))));
        fs::write(&p, "1\n-3\n").unwrap();
        assert!(matches!(read_empirical(&p), Err(Error::BadRow { row: 2, .. })));
    }

    #[test]
    fn gamma_spec_rejects_bad_shape() {
        let s = DistributionSpec::Gamma { shape: 0.0, scale: 1.0 };
        assert!(s.validate("mev").is_err());
    }
}
