use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::{linspace, pass_word, write_artifact, PALETTE};
use crate::baselines::{fit_random_features, RandomFeatureModel};
use crate::error::{Error, Result};
use crate::net::{Architecture, NetworkParams};
use crate::oracle::{
    build_grid, network_atoms, predict_separate, solve_group_lasso, solve_separate, OracleSolution, SolverConfig,
};
use crate::pfunc::PenaltyKind;
use crate::svg::{emit_svg, Plot, Series};
use crate::tasks::{coupling_truth, gen_coupling_pair, grid_mse, Dataset};
use crate::train::{train, TrainConfig};

/// Joint versus per-task fitting on the two-task coupling example.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskConfig {
    pub seed: u64,
    pub lambda: f64,
    pub resolution: usize,
    pub margin: f64,
    pub width: usize,
    /// Training settings for the networks; `lambda` and `seed` are taken
    /// from this config.
    pub train: TrainConfig,
    pub oracle: SolverConfig,
    pub rf_features: usize,
    pub rf_lambda: f64,
    /// Points of the held-out grid on `[-2, 2]`.
    pub eval_points: usize,
    /// Largest accepted gap between joint and per-task random-feature weights.
    pub rf_tol: f64,
}

impl Default for MultitaskConfig {
    fn default() -> Self {
        MultitaskConfig {
            seed: 1,
            lambda: 0.03,
            resolution: 400,
            margin: 0.5,
            width: 64,
            train: TrainConfig {
                restarts: 3,
                adam_iters: 20_000,
                adam_lr: 0.05,
                adam_lr_final: 1e-4,
                max_iters: 5_000,
                ..TrainConfig::default()
            },
            oracle: SolverConfig::default(),
            rf_features: 200,
            rf_lambda: 1e-3,
            eval_points: 401,
            rf_tol: 1e-10,
        }
    }
}

impl MultitaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.rf_lambda > 0.0) {
            return Err(Error::invalid("lambda and rf_lambda must be positive"));
        }
        if self.width == 0 || self.rf_features == 0 {
            return Err(Error::invalid("width and rf_features must be positive"));
        }
        if self.eval_points < 2 {
            return Err(Error::invalid("eval_points must be at least 2"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: String,
    /// Held-out MSE per task.
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultitaskReport {
    pub data: Dataset,
    pub joint: OracleSolution,
    pub separate: Vec<OracleSolution>,
    pub net_arch: Architecture,
    pub net_joint: NetworkParams,
    pub net_separate: Vec<(NetworkParams, Architecture)>,
    pub rf_joint: RandomFeatureModel,
    pub rf_separate: Vec<RandomFeatureModel>,
    pub scores: Vec<MethodScore>,
    /// Largest weight difference between joint and per-task random features.
    pub rf_max_diff: f64,
    pub rf_tol: f64,
}

/// Kink positions rounded to 1e-9 for set comparison.
fn kink_set(kinks: &[(f64, f64)]) -> BTreeSet<i64> {
    kinks.iter().map(|&(_, xi)| (xi * 1e9).round() as i64).collect()
}

impl MultitaskReport {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }

    /// `(task, kink positions)` used by the joint oracle.
    pub fn joint_kinks(&self, k: usize) -> Vec<f64> {
        self.joint.active_kinks(k).into_iter().map(|(_, xi)| xi).collect()
    }

    pub fn separate_kinks(&self, k: usize) -> Vec<f64> {
        self.separate[k].active_kinks(0).into_iter().map(|(_, xi)| xi).collect()
    }

    /// The joint and per-task oracles put task-2 kinks in different places.
    pub fn task2_kinks_differ(&self) -> bool {
        kink_set(&self.joint.active_kinks(1)) != kink_set(&self.separate[1].active_kinks(0))
    }

    /// Every task-2 kink of the joint oracle is also a task-1 kink.
    pub fn joint_kinks_shared(&self) -> bool {
        kink_set(&self.joint.active_kinks(1)).is_subset(&kink_set(&self.joint.active_kinks(0)))
    }

    pub fn joint_beats_separate(&self) -> bool {
        match (self.score("oracle_joint"), self.score("oracle_separate")) {
            (Some(j), Some(s)) => j.mse[1] < s.mse[1],
            _ => false,
        }
    }

    pub fn rf_ok(&self) -> bool {
        self.rf_max_diff <= self.rf_tol
    }

    pub fn passed(&self) -> bool {
        self.rf_ok() && self.task2_kinks_differ() && self.joint_beats_separate()
    }

    pub fn table(&self) -> String {
        let mut s = String::from("method,task1_mse,task2_mse\n");
        for sc in &self.scores {
            let _ = writeln!(s, "{},{:?},{:?}", sc.method, sc.mse[0], sc.mse[1]);
        }
        s
    }

    pub fn diagnostics(&self) -> String {
        let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "joint oracle kinks task 1: {}", fmt(self.joint_kinks(0)));
        let _ = writeln!(s, "joint oracle kinks task 2: {}", fmt(self.joint_kinks(1)));
        let _ = writeln!(s, "separate oracle kinks task 1: {}", fmt(self.separate_kinks(0)));
        let _ = writeln!(s, "separate oracle kinks task 2: {}", fmt(self.separate_kinks(1)));
        let _ = writeln!(s, "joint task-2 kinks shared with task 1: {}", self.joint_kinks_shared());
        let _ = writeln!(
            s,
            "task-2 kink sets differ: {}",
            pass_word(self.task2_kinks_differ())
        );
        let _ = writeln!(
            s,
            "joint task-2 mse below separate: {}",
            pass_word(self.joint_beats_separate())
        );
        let _ = writeln!(
            s,
            "random features joint minus separate: {:.3e} (tol {:.0e}) {}",
            self.rf_max_diff,
            self.rf_tol,
            pass_word(self.rf_ok())
        );
        s
    }

    fn net_joint_predict(&self, x: f64) -> DVector<f64> {
        self.net_joint
            .forward(&self.net_arch, &DVector::from_element(1, x))
            .expect("report network matches its architecture")
    }

    fn net_separate_predict(&self, x: f64) -> DVector<f64> {
        let xv = DVector::from_element(1, x);
        DVector::from_iterator(
            self.net_separate.len(),
            self.net_separate
                .iter()
                .map(|(n, a)| n.forward(a, &xv).expect("report network matches")[0]),
        )
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = vec![
            write_artifact(dir, "multitask_mse.csv", &self.table())?,
            write_artifact(dir, "multitask_diagnostics.txt", &self.diagnostics())?,
            write_artifact(dir, "data.csv", &self.data.to_csv_string())?,
            write_artifact(dir, "oracle_joint_atoms.csv", &self.joint.atoms_csv())?,
        ];
        for (k, sol) in self.separate.iter().enumerate() {
            out.push(write_artifact(
                dir,
                &format!("oracle_separate_task{}_atoms.csv", k + 1),
                &sol.atoms_csv(),
            )?);
        }

        // Kink scatter: one row per (method, task).
        let mut kinks = Plot::new("kink positions", "kink position", "method / task");
        let rows: [(&str, Vec<f64>); 4] = [
            ("joint oracle, task 1", self.joint_kinks(0)),
            ("joint oracle, task 2", self.joint_kinks(1)),
            ("separate oracle, task 1", self.separate_kinks(0)),
            ("separate oracle, task 2", self.separate_kinks(1)),
        ];
        for (i, (label, xs)) in rows.iter().enumerate() {
            kinks = kinks.with(Series::scatter(
                *label,
                PALETTE[i],
                xs.iter().map(|&x| (x, (i + 1) as f64)).collect(),
            ));
        }
        if let Ok(atoms) = network_atoms(&self.net_joint.stacks[0]) {
            let big = atoms.iter().map(|a| a.2.norm()).fold(0.0, f64::max);
            let pts = atoms
                .iter()
                .filter(|a| a.2.norm() > 1e-3 * big)
                .map(|a| (a.1, 5.0))
                .filter(|p| p.0.abs() <= 3.0)
                .collect();
            kinks = kinks.with(Series::scatter("joint network", PALETTE[4], pts));
        }
        let path = dir.join("kinks.svg");
        emit_svg(&kinks, &path)?;
        out.push(path);

        let xs = linspace(-2.0, 2.0, 401);
        let inputs = self.data.scalar_inputs()?;
        for k in 0..2 {
            let plot = Plot::new(format!("task {}", k + 1), "x", "y")
                .with(Series::line("truth", "#999999", xs.iter().map(|&x| (x, coupling_truth(x)[k])).collect()))
                .with(Series::line(
                    "oracle joint",
                    PALETTE[0],
                    xs.iter().map(|&x| (x, self.joint.predict(x)[k])).collect(),
                ))
                .with(Series::line(
                    "oracle separate",
                    PALETTE[1],
                    xs.iter().map(|&x| (x, self.separate[k].predict(x)[0])).collect(),
                ))
                .with(Series::line(
                    "network joint",
                    PALETTE[2],
                    xs.iter().map(|&x| (x, self.net_joint_predict(x)[k])).collect(),
                ))
                .with(Series::line(
                    "network separate",
                    PALETTE[5],
                    xs.iter().map(|&x| (x, self.net_separate_predict(x)[k])).collect(),
                ))
                .with(Series::line(
                    "random features",
                    PALETTE[3],
                    xs.iter().map(|&x| (x, self.rf_joint.predict_scalar(x)[k])).collect(),
                ))
                .with(Series::scatter(
                    "observed",
                    "black",
                    inputs
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| self.data.mask[(i, k)] != 0.0)
                        .map(|(i, &x)| (x, self.data.y[(i, k)]))
                        .collect(),
                ));
            let path = dir.join(format!("task{}.svg", k + 1));
            emit_svg(&plot, &path)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn held_out(points: usize, predict: impl Fn(f64) -> DVector<f64>) -> Vec<f64> {
    let truth = |x: f64| DVector::from_row_slice(&coupling_truth(x));
    grid_mse(-2.0, 2.0, points, predict, truth).iter().copied().collect()
}

pub fn multitask_demo(cfg: &MultitaskConfig) -> Result<MultitaskReport> {
    cfg.validate()?;
    let data = gen_coupling_pair(cfg.seed);
    let grid = build_grid(&data, cfg.resolution, cfg.margin, PenaltyKind::BiasReg, 2.0)?;
    let joint = solve_group_lasso(&data, cfg.lambda, &grid, &cfg.oracle)?;
    let separate = solve_separate(&data, cfg.lambda, &grid, &cfg.oracle)?;

    let tcfg = TrainConfig {
        lambda: cfg.lambda,
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let net_arch = Architecture::shallow(1, cfg.width, 2);
    let (net_joint, _) = train(&net_arch, &data, &tcfg)?;
    let net_separate = (0..2)
        .map(|k| {
            let arch = Architecture::shallow(1, cfg.width, 1);
            train(&arch, &data.column(k), &tcfg).map(|(n, _)| (n, arch))
        })
        .collect::<Result<Vec<_>>>()?;

    let rf_joint = fit_random_features(&data, cfg.rf_lambda, cfg.rf_features, cfg.seed)?;
    let rf_separate = (0..2)
        .map(|k| fit_random_features(&data.column(k), cfg.rf_lambda, cfg.rf_features, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let rf_max_diff = rf_separate
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let dw = (m.w.row(0) - rf_joint.w.row(k)).amax();
            dw.max((m.c[0] - rf_joint.c[k]).abs())
        })
        .fold(0.0, f64::max);

    let n = cfg.eval_points;
    let xv = |x: f64| DVector::from_element(1, x);
    let scores = vec![
        MethodScore {
            method: "oracle_joint".into(),
            mse: held_out(n, |x| joint.predict(x)),
        },
        MethodScore {
            method: "oracle_separate".into(),
            mse: held_out(n, |x| predict_separate(&separate, x)),
        },
        MethodScore {
            method: "network_joint".into(),
            mse: held_out(n, |x| net_joint.forward(&net_arch, &xv(x)).expect("trained network matches")),
        },
        MethodScore {
            method: "network_separate".into(),
            mse: held_out(n, |x| {
                DVector::from_iterator(
                    2,
                    net_separate
                        .iter()
                        .map(|(m, a)| m.forward(a, &xv(x)).expect("trained network matches")[0]),
                )
            }),
        },
        MethodScore {
            method: "rf_joint".into(),
            mse: held_out(n, |x| rf_joint.predict_scalar(x)),
        },
        MethodScore {
            method: "rf_separate".into(),
            mse: held_out(n, |x| {
                DVector::from_iterator(2, rf_separate.iter().map(|m| m.predict_scalar(x)[0]))
            }),
        },
    ];

    Ok(MultitaskReport {
        data,
        joint,
        separate,
        net_arch,
        net_joint,
        net_separate,
        rf_joint,
        rf_separate,
        scores,
        rf_max_diff,
        rf_tol: cfg.rf_tol,
    })
}
