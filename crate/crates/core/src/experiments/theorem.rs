use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::{linspace, pass_word, sup_distance, write_artifact, PALETTE};
use crate::error::{Error, Result};
use crate::net::{network_to_string, Architecture, NetworkParams};
use crate::oracle::{build_grid, prediction_csv, solve_group_lasso, OracleSolution, SolverConfig};
use crate::pfunc::PenaltyKind;
use crate::svg::{emit_svg, Plot, Series};
use crate::tasks::{gen_random_1d, Dataset};
use crate::train::{train, TrainConfig, TrainReport};

/// Trained one-stack network against the convex oracle on random 1-D data.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheckConfig {
    pub n_data: usize,
    pub d_out: usize,
    pub width: usize,
    /// Seeds both the data and the training restarts.
    pub seed: u64,
    pub resolution: usize,
    pub margin: f64,
    /// Points of the evaluation grid on `[min x - 1, max x + 1]`.
    pub eval_points: usize,
    pub train: TrainConfig,
    pub oracle: SolverConfig,
    /// Largest accepted `(trained - oracle) / oracle` objective.
    pub gap_tol: f64,
    /// Largest accepted `|cost - penalty| / penalty`.
    pub cost_tol: f64,
    /// Largest accepted sup distance in units of the target std.
    pub sup_tol: f64,
}

impl Default for TheoremCheckConfig {
    fn default() -> Self {
        TheoremCheckConfig {
            n_data: 8,
            d_out: 2,
            width: 64,
            seed: 1,
            resolution: 512,
            margin: 1.0,
            eval_points: 2001,
            train: TrainConfig {
                lambda: 1e-2,
                restarts: 5,
                adam_iters: 50_000,
                adam_lr: 0.1,
                adam_lr_final: 1e-4,
                ..TrainConfig::default()
            },
            oracle: SolverConfig::default(),
            gap_tol: 0.02,
            cost_tol: 0.05,
            sup_tol: 0.05,
        }
    }
}

impl TheoremCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_data == 0 || self.d_out == 0 || self.width == 0 {
            return Err(Error::invalid("n_data, d_out and width must be positive"));
        }
        if self.resolution < 2 || self.eval_points < 2 {
            return Err(Error::invalid("resolution and eval_points must be at least 2"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("margin must be non-negative"));
        }
        if !(self.gap_tol >= 0.0 && self.cost_tol >= 0.0 && self.sup_tol >= 0.0) {
            return Err(Error::invalid("thresholds must be non-negative"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TheoremCheckReport {
    pub data: Dataset,
    pub arch: Architecture,
    pub net: NetworkParams,
    pub train: TrainReport,
    pub oracle: OracleSolution,
    pub trained_objective: f64,
    pub oracle_objective: f64,
    /// `(trained - oracle) / oracle`.
    pub objective_gap: f64,
    pub network_cost: f64,
    pub oracle_penalty: f64,
    /// `|cost - penalty| / penalty`.
    pub cost_gap: f64,
    pub eval_interval: (f64, f64),
    pub sup_distance: f64,
    pub target_std: f64,
    pub sup_ratio: f64,
    pub gap_tol: f64,
    pub cost_tol: f64,
    pub sup_tol: f64,
}

impl TheoremCheckReport {
    pub fn gap_ok(&self) -> bool {
        self.objective_gap <= self.gap_tol
    }

    pub fn cost_ok(&self) -> bool {
        self.cost_gap <= self.cost_tol
    }

    pub fn sup_ok(&self) -> bool {
        self.sup_ratio <= self.sup_tol
    }

    pub fn passed(&self) -> bool {
        self.gap_ok() && self.cost_ok() && self.sup_ok()
    }

    /// `metric,value,threshold,status` rows.
    pub fn table(&self) -> String {
        let mut s = String::from("metric,value,threshold,status\n");
        let _ = writeln!(s, "trained_objective,{:?},,", self.trained_objective);
        let _ = writeln!(s, "oracle_objective,{:?},,", self.oracle_objective);
        let _ = writeln!(
            s,
            "objective_gap,{:?},{:?},{}",
            self.objective_gap,
            self.gap_tol,
            pass_word(self.gap_ok())
        );
        let _ = writeln!(s, "network_cost,{:?},,", self.network_cost);
        let _ = writeln!(s, "oracle_penalty,{:?},,", self.oracle_penalty);
        let _ = writeln!(s, "cost_gap,{:?},{:?},{}", self.cost_gap, self.cost_tol, pass_word(self.cost_ok()));
        let _ = writeln!(s, "sup_distance,{:?},,", self.sup_distance);
        let _ = writeln!(s, "target_std,{:?},,", self.target_std);
        let _ = writeln!(s, "sup_ratio,{:?},{:?},{}", self.sup_ratio, self.sup_tol, pass_word(self.sup_ok()));
        let _ = writeln!(s, "oracle_kkt_residual,{:?},,", self.oracle.kkt_residual);
        let _ = writeln!(s, "oracle_active_atoms,{},,", self.oracle.active_set().len());
        s
    }

    fn net_predict(&self, x: f64) -> DVector<f64> {
        self.net
            .forward(&self.arch, &DVector::from_element(1, x))
            .expect("report network matches its architecture")
    }

    /// Writes the table, predictions, oracle atoms, parameters, the training
    /// trace and a prediction plot.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let xs = linspace(self.eval_interval.0, self.eval_interval.1, 401);
        let mut out = vec![
            write_artifact(dir, "theorem_check.csv", &self.table())?,
            write_artifact(dir, "data.csv", &self.data.to_csv_string())?,
            write_artifact(dir, "net_predictions.csv", &prediction_csv(&xs, |x| self.net_predict(x)))?,
            write_artifact(dir, "oracle_predictions.csv", &prediction_csv(&xs, |x| self.oracle.predict(x)))?,
            write_artifact(dir, "oracle_atoms.csv", &self.oracle.atoms_csv())?,
            write_artifact(dir, "oracle_summary.txt", &self.oracle.summary())?,
            write_artifact(dir, "net_params.txt", &network_to_string(&self.net, &self.arch))?,
            write_artifact(dir, "train_trace.csv", &self.train.trace_csv())?,
            write_artifact(dir, "train_summary.txt", &self.train.summary())?,
        ];
        let mut plot = Plot::new("trained network vs oracle", "x", "prediction");
        let inputs = self.data.scalar_inputs()?;
        for k in 0..self.data.d_out() {
            let color = PALETTE[k % PALETTE.len()];
            plot = plot
                .with(Series::line(
                    format!("oracle {}", self.data.names[k]),
                    "#999999",
                    xs.iter().map(|&x| (x, self.oracle.predict(x)[k])).collect(),
                ))
                .with(Series::line(
                    format!("net {}", self.data.names[k]),
                    color,
                    xs.iter().map(|&x| (x, self.net_predict(x)[k])).collect(),
                ))
                .with(Series::scatter(
                    format!("data {}", self.data.names[k]),
                    "black",
                    inputs
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| self.data.mask[(i, k)] != 0.0)
                        .map(|(i, &x)| (x, self.data.y[(i, k)]))
                        .collect(),
                ));
        }
        let path = dir.join("predictions.svg");
        emit_svg(&plot, &path)?;
        out.push(path);
        Ok(out)
    }
}

/// Runs the check on `gen_random_1d(n_data, d_out, seed)`.
pub fn theorem_check(cfg: &TheoremCheckConfig) -> Result<TheoremCheckReport> {
    cfg.validate()?;
    let data = gen_random_1d(cfg.n_data, cfg.d_out, cfg.seed);
    theorem_check_on(data, cfg)
}

/// Runs the check on given scalar-input data.
pub fn theorem_check_on(data: Dataset, cfg: &TheoremCheckConfig) -> Result<TheoremCheckReport> {
    cfg.validate()?;
    if data.d_in() != 1 {
        return Err(Error::UnsupportedDimension(data.d_in()));
    }
    let lambda = cfg.train.lambda;
    let grid = build_grid(&data, cfg.resolution, cfg.margin, PenaltyKind::BiasReg, 2.0)?;
    let oracle = solve_group_lasso(&data, lambda, &grid, &cfg.oracle)?;

    let arch = Architecture::shallow(1, cfg.width, data.d_out());
    let tcfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let (net, report) = train(&arch, &data, &tcfg)?;

    let (lo, hi) = data.x_range();
    let eval_interval = (lo - 1.0, hi + 1.0);
    let xs = linspace(eval_interval.0, eval_interval.1, cfg.eval_points);
    let sup = sup_distance(
        &xs,
        |x| net.forward(&arch, &DVector::from_element(1, x)).expect("trained network matches"),
        |x| oracle.predict(x),
    );
    let target_std = data.target_std();
    let oracle_penalty = oracle.penalty();
    Ok(TheoremCheckReport {
        trained_objective: report.final_objective,
        oracle_objective: oracle.objective,
        objective_gap: (report.final_objective - oracle.objective) / oracle.objective,
        network_cost: report.final_network_cost,
        oracle_penalty,
        cost_gap: (report.final_network_cost - oracle_penalty).abs() / oracle_penalty,
        eval_interval,
        sup_distance: sup,
        target_std,
        sup_ratio: sup / target_std,
        gap_tol: cfg.gap_tol,
        cost_tol: cfg.cost_tol,
        sup_tol: cfg.sup_tol,
        data,
        arch,
        net,
        train: report,
        oracle,
    })
}
