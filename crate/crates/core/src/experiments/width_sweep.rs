use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{pass_word, write_artifact, PALETTE};
use crate::error::{Error, Result};
use crate::net::{Architecture, InnerActivation, SkipKind};
use crate::svg::{emit_svg, Plot, Series};
use crate::tasks::{gen_random, Dataset};
use crate::train::{train, TrainConfig};

/// Two-stack networks on fixed small data with the bottleneck dimension
/// swept over `1..=N+1` and `2(N+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthSweepConfig {
    pub n_data: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// Hidden neurons in each stack.
    pub width: usize,
    pub inner_activation: InnerActivation,
    pub seed: u64,
    pub train: TrainConfig,
    /// Accepted relative excess of the `N+1` objective over the best one.
    pub plateau_tol: f64,
    /// Accepted relative increase between consecutive widths.
    pub monotone_slack: f64,
}

impl Default for WidthSweepConfig {
    fn default() -> Self {
        WidthSweepConfig {
            n_data: 6,
            d_in: 2,
            d_out: 4,
            width: 32,
            inner_activation: InnerActivation::Relu,
            seed: 1,
            train: TrainConfig {
                lambda: 1e-2,
                restarts: 5,
                adam_iters: 20_000,
                adam_lr: 0.05,
                adam_lr_final: 1e-4,
                max_iters: 5_000,
                ..TrainConfig::default()
            },
            plateau_tol: 0.05,
            monotone_slack: 0.01,
        }
    }
}

impl WidthSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_data == 0 || self.d_in == 0 || self.d_out == 0 || self.width == 0 {
            return Err(Error::invalid("n_data, d_in, d_out and width must be positive"));
        }
        if !(self.plateau_tol >= 0.0 && self.monotone_slack >= 0.0) {
            return Err(Error::invalid("tolerances must be non-negative"));
        }
        self.train.validate()
    }

    /// Swept bottleneck dimensions.
    pub fn dims(&self) -> Vec<usize> {
        let top = self.n_data + 1;
        let mut d: Vec<usize> = (1..=top).collect();
        d.push(2 * top);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthSweepRow {
    pub bottleneck: usize,
    pub objective: f64,
    pub loss: f64,
    pub network_cost: f64,
}

#[derive(Debug, Clone)]
pub struct WidthSweepReport {
    pub data: Dataset,
    pub rows: Vec<WidthSweepRow>,
    pub n_data: usize,
    pub plateau_tol: f64,
    pub monotone_slack: f64,
}

impl WidthSweepReport {
    pub fn best(&self) -> f64 {
        self.rows.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min)
    }

    pub fn at(&self, bottleneck: usize) -> Option<&WidthSweepRow> {
        self.rows.iter().find(|r| r.bottleneck == bottleneck)
    }

    /// `(objective at N+1 - best) / best`.
    pub fn plateau_gap(&self) -> f64 {
        let best = self.best();
        self.at(self.n_data + 1).map_or(f64::INFINITY, |r| (r.objective - best) / best)
    }

    pub fn plateau_ok(&self) -> bool {
        self.plateau_gap() <= self.plateau_tol
    }

    /// Widths whose objective exceeds the previous one by more than the slack.
    pub fn monotone_violations(&self) -> Vec<usize> {
        self.rows
            .windows(2)
            .filter(|w| w[1].objective > w[0].objective * (1.0 + self.monotone_slack))
            .map(|w| w[1].bottleneck)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.plateau_ok()
    }

    pub fn table(&self) -> String {
        let mut s = String::from("bottleneck,objective,loss,network_cost\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.bottleneck, r.objective, r.loss, r.network_cost);
        }
        s
    }

    pub fn diagnostics(&self) -> String {
        let v = self.monotone_violations();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "plateau gap at d = {}: {:.4} (tol {}) {}",
            self.n_data + 1,
            self.plateau_gap(),
            self.plateau_tol,
            pass_word(self.plateau_ok())
        );
        let _ = writeln!(
            s,
            "non-increasing within {} slack: {}{}",
            self.monotone_slack,
            if v.is_empty() { "yes" } else { "no, at d =" },
            v.iter().map(|d| format!(" {d}")).collect::<String>()
        );
        s
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = vec![
            write_artifact(dir, "width_sweep.csv", &self.table())?,
            write_artifact(dir, "width_sweep_diagnostics.txt", &self.diagnostics())?,
            write_artifact(dir, "data.csv", &self.data.to_csv_string())?,
        ];
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.bottleneck as f64, r.objective)).collect();
        let plot = Plot::new("best objective by bottleneck", "bottleneck dimension", "objective")
            .with(Series::line("objective", PALETTE[0], pts.clone()))
            .with(Series::scatter("", PALETTE[0], pts));
        let path = dir.join("width_sweep.svg");
        emit_svg(&plot, &path)?;
        out.push(path);
        Ok(out)
    }
}

pub fn width_sweep(cfg: &WidthSweepConfig) -> Result<WidthSweepReport> {
    cfg.validate()?;
    let data = gen_random(cfg.n_data, cfg.d_in, cfg.d_out, cfg.seed);
    let tcfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let rows = cfg
        .dims()
        .into_par_iter()
        .map(|d| {
            let arch = Architecture::new(
                vec![cfg.d_in, d, cfg.d_out],
                vec![cfg.width, cfg.width],
                cfg.inner_activation,
                vec![SkipKind::None, SkipKind::None],
            )?;
            let (_, rep) = train(&arch, &data, &tcfg)?;
            Ok(WidthSweepRow {
                bottleneck: d,
                objective: rep.final_objective,
                loss: rep.final_loss,
                network_cost: rep.final_network_cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WidthSweepReport {
        data,
        rows,
        n_data: cfg.n_data,
        plateau_tol: cfg.plateau_tol,
        monotone_slack: cfg.monotone_slack,
    })
}
