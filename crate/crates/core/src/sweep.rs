//! Grids of independent runs over attack-participant counts.

use crate::config::{Mode, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{gini_producer, mean_inversions, proposer_share, Ratio};
use crate::par::{self, Exec};
use crate::sim::{run, RunRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub attack_users: Vec<usize>,
    /// Attack builders under ePBS, attack validators under PoS.
    pub attack_producers: Vec<usize>,
    pub replicates: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepCell {
    pub index: u64,
    pub attack_users: usize,
    pub attack_producers: usize,
    pub replicate: u64,
    pub seed: u64,
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub mode: Mode,
    pub mean_inversions: Ratio,
    pub gini_producer: Option<Ratio>,
    pub proposer_share: Option<Ratio>,
}

impl SweepSpec {
    /// Cells in row-major order (users outer); replicate `r` of cell `c`
    /// runs with seed `base + c * R + r`.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        let r = self.replicates;
        let mut index = 0u64;
        for &u in &self.attack_users {
            for &p in &self.attack_producers {
                for rep in 0..r {
                    out.push(SweepCell {
                        index,
                        attack_users: u,
                        attack_producers: p,
                        replicate: rep,
                        seed: self.base.seed.wrapping_add(index.wrapping_mul(r)).wrapping_add(rep),
                    });
                }
                index += 1;
            }
        }
        out
    }

    pub fn config_for(&self, cell: &SweepCell) -> SimConfig {
        let mut cfg = self.base.clone();
        cfg.seed = cell.seed;
        cfg.attack_user_count = cell.attack_users;
        match cfg.mode {
            Mode::Epbs => cfg.attack_builder_count = cell.attack_producers,
            Mode::Pos => cfg.attack_validator_count = cell.attack_producers,
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack_users.is_empty() {
            return Err(Error::validation("attack_users_grid", "grid is empty"));
        }
        if self.attack_producers.is_empty() {
            return Err(Error::validation("attack_builders_grid", "grid is empty"));
        }
        if self.replicates == 0 {
            return Err(Error::validation("replicates", "must be at least 1"));
        }
        for cell in self.cells() {
            self.config_for(&cell).validate()?;
        }
        Ok(())
    }
}

pub fn summarize(cell: SweepCell, run: &RunRecord) -> Result<SweepRow> {
    let share = match run.config.mode {
        Mode::Epbs => proposer_share(run).ok(),
        Mode::Pos => None,
    };
    Ok(SweepRow {
        cell,
        mode: run.config.mode,
        mean_inversions: mean_inversions(run),
        gini_producer: gini_producer(run)?,
        proposer_share: share,
    })
}

/// Runs every cell, up to `jobs` at a time; `visit` sees each finished run
/// (for per-cell output) before it is dropped. Rows come back in cell
/// order whatever the scheduling.
pub fn run_sweep<F>(spec: &SweepSpec, jobs: usize, visit: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&SweepCell, &RunRecord) -> Result<()> + Sync + Send,
{
    spec.validate()?;
    let cells = spec.cells();
    let exec = if jobs > 1 { Exec::Parallel } else { Exec::Sequential };
    let results = par::with_jobs(jobs, || {
        par::map(exec, &cells, |cell| -> Result<SweepRow> {
            let r = run(&spec.config_for(cell), exec)?;
            visit(cell, &r)?;
            summarize(*cell, &r)
        })
    })?;
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SweepSpec {
        SweepSpec {
            base: SimConfig {
                seed: 100,
                ..SimConfig::default()
            },
            attack_users: vec![0, 50, 100],
            attack_producers: vec![0, 25, 50],
            replicates: 2,
        }
    }

    #[test]
    fn cell_seeds_follow_index() {
        let cells = spec().cells();
        assert_eq!(cells.len(), 18);
        assert_eq!(cells[0].seed, 100);
        assert_eq!(cells[1].seed, 101);
        assert_eq!(cells[2].seed, 102);
        assert_eq!(cells[17].seed, 100 + 8 * 2 + 1);
        assert_eq!(cells[17].attack_users, 100);
        assert_eq!(cells[17].attack_producers, 50);
    }

    #[test]
    fn empty_grid_rejected() {
        let mut s = spec();
        s.attack_users.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn out_of_range_grid_rejected() {
        let mut s = spec();
        s.attack_producers.push(51);
        assert!(matches!(s.validate(), Err(Error::Validation { .. })));
    }
}
