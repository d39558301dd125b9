use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use super::{linspace, write_artifact, PALETTE};
use crate::error::{Error, Result};
use crate::net::{write_network, Architecture, InnerActivation, NetworkParams, SkipKind};
use crate::svg::{emit_svg, Plot, Series};
use crate::tasks::{gen_periodic7, periodic7_target, Dataset, PERIODIC7_HALF_SPAN, PERIODIC7_NAMES};
use crate::train::{train, TrainConfig};

/// Three stacks with scalar bottlenecks, linear skips and identity inner
/// activation, trained on the seven periodic tasks jointly and one task at
/// a time.
#[derive(Debug, Clone, PartialEq)]
pub struct AppendixBConfig {
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub period: f64,
    pub noise_sd: f64,
    /// Hidden neurons of the three stacks.
    pub widths: [usize; 3],
    /// Same settings for the joint and every per-task network.
    pub train: TrainConfig,
    /// Points of the noise-free held-out grid over the sampling interval.
    pub eval_points: usize,
}

impl Default for AppendixBConfig {
    fn default() -> Self {
        AppendixBConfig {
            seeds: vec![1, 2, 3],
            n_train: 60,
            period: 1.0,
            noise_sd: 0.05,
            widths: [64, 64, 64],
            train: TrainConfig {
                lambda: 1e-3,
                restarts: 2,
                adam_iters: 20_000,
                adam_lr: 0.01,
                adam_lr_final: 1e-4,
                max_iters: 2_000,
                init_scale: 1.0,
                ..TrainConfig::default()
            },
            eval_points: 601,
        }
    }
}

impl AppendixBConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("need at least one seed"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("widths must be positive"));
        }
        if self.eval_points < 2 {
            return Err(Error::invalid("eval_points must be at least 2"));
        }
        self.train.validate()
    }
}

/// The three-stack architecture with `d_1 = d_2 = 1` and `d_out` outputs.
pub fn appendix_b_architecture(widths: [usize; 3], d_out: usize) -> Architecture {
    Architecture::new(
        vec![1, 1, 1, d_out],
        widths.to_vec(),
        InnerActivation::Identity,
        vec![SkipKind::Linear; 3],
    )
    .expect("fixed architecture is valid")
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub data: Dataset,
    pub joint: NetworkParams,
    pub separate: Vec<NetworkParams>,
    /// Held-out MSE per task.
    pub joint_mse: Vec<f64>,
    pub separate_mse: Vec<f64>,
}

impl SeedResult {
    pub fn joint_mean(&self) -> f64 {
        mean(&self.joint_mse)
    }

    pub fn separate_mean(&self) -> f64 {
        mean(&self.separate_mse)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone)]
pub struct AppendixBReport {
    pub joint_arch: Architecture,
    pub task_arch: Architecture,
    pub period: f64,
    pub seeds: Vec<SeedResult>,
}

impl AppendixBReport {
    pub fn mean_joint(&self) -> f64 {
        mean(&self.seeds.iter().map(SeedResult::joint_mean).collect::<Vec<_>>())
    }

    pub fn mean_separate(&self) -> f64 {
        mean(&self.seeds.iter().map(SeedResult::separate_mean).collect::<Vec<_>>())
    }

    pub fn passed(&self) -> bool {
        self.mean_joint() < self.mean_separate()
    }

    /// `seed,task,joint_mse,separate_mse` rows plus per-seed means.
    pub fn table(&self) -> String {
        let mut s = String::from("seed,task,joint_mse,separate_mse\n");
        for r in &self.seeds {
            for k in 0..r.joint_mse.len() {
                let _ = writeln!(
                    s,
                    "{},{},{:?},{:?}",
                    r.seed, PERIODIC7_NAMES[k], r.joint_mse[k], r.separate_mse[k]
                );
            }
            let _ = writeln!(s, "{},mean,{:?},{:?}", r.seed, r.joint_mean(), r.separate_mean());
        }
        let _ = writeln!(s, "all,mean,{:?},{:?}", self.mean_joint(), self.mean_separate());
        s
    }

    /// Writes the MSE table, networks of the first seed and its plots: the
    /// first stack, the representation `H` after two stacks, and every
    /// output against `x` and against `H`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = vec![write_artifact(dir, "appendix_b_mse.csv", &self.table())?];
        let Some(first) = self.seeds.first() else {
            return Ok(out);
        };
        let path = dir.join("joint_params.txt");
        write_network(&path, &first.joint, &self.joint_arch)?;
        out.push(path);
        out.push(write_artifact(dir, "data.csv", &first.data.to_csv_string())?);

        let half = PERIODIC7_HALF_SPAN * self.period;
        let xs = linspace(-half, half, 601);
        let inputs = first.data.scalar_inputs()?;
        let joint = |x: f64, upto: usize| {
            first
                .joint
                .forward_prefix(&self.joint_arch, &DVector::from_element(1, x), upto)
                .expect("report network matches its architecture")
        };

        let stack1 = Plot::new("first stack NN(1)", "x", "NN(1)(x)")
            .with(Series::line("joint", PALETTE[0], xs.iter().map(|&x| (x, joint(x, 1)[0])).collect()))
            .with(Series::scatter(
                "training inputs",
                "black",
                inputs.iter().map(|&x| (x, joint(x, 1)[0])).collect(),
            ));
        let rep = Plot::new("representation H = NN(2) o NN(1)", "x", "H(x)")
            .with(Series::line("joint", PALETTE[0], xs.iter().map(|&x| (x, joint(x, 2)[0])).collect()))
            .with(Series::scatter(
                "training inputs",
                "black",
                inputs.iter().map(|&x| (x, joint(x, 2)[0])).collect(),
            ));
        for (name, plot) in [("stack1.svg", stack1), ("representation.svg", rep)] {
            let path = dir.join(name);
            emit_svg(&plot, &path)?;
            out.push(path);
        }

        let d_out = self.joint_arch.d_out();
        for k in 0..d_out {
            let sep = |x: f64| {
                first.separate[k]
                    .forward(&self.task_arch, &DVector::from_element(1, x))
                    .expect("report network matches its architecture")[0]
            };
            let plot = Plot::new(format!("output {} ({})", k + 1, PERIODIC7_NAMES[k]), "x", "y")
                .with(Series::line(
                    "truth",
                    "#999999",
                    xs.iter().map(|&x| (x, periodic7_target(x, self.period)[k])).collect(),
                ))
                .with(Series::line("joint", PALETTE[0], xs.iter().map(|&x| (x, joint(x, 3)[k])).collect()))
                .with(Series::line("separate", PALETTE[1], xs.iter().map(|&x| (x, sep(x))).collect()))
                .with(Series::scatter(
                    "training data",
                    "black",
                    inputs.iter().enumerate().map(|(i, &x)| (x, first.data.y[(i, k)])).collect(),
                ));
            let path = dir.join(format!("output{}_{}.svg", k + 1, PERIODIC7_NAMES[k]));
            emit_svg(&plot, &path)?;
            out.push(path);
        }

        // Each output as a function of the shared representation.
        let mut comp = Plot::new("outputs as functions of H", "H(x)", "output");
        for k in 0..d_out {
            comp = comp.with(Series::scatter(
                PERIODIC7_NAMES[k],
                PALETTE[k % PALETTE.len()],
                xs.iter()
                    .map(|&x| (joint(x, 2)[0], joint(x, 3)[k]))
                    .collect(),
            ));
        }
        let path = dir.join("compositions.svg");
        emit_svg(&comp, &path)?;
        out.push(path);
        Ok(out)
    }
}

fn held_out_mse(xs: &[f64], period: f64, predict: impl Fn(f64) -> DVector<f64>, tasks: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; tasks.len()];
    for &x in xs {
        let truth = periodic7_target(x, period);
        let p = predict(x);
        for (i, &k) in tasks.iter().enumerate() {
            let e = p[i] - truth[k];
            acc[i] += e * e;
        }
    }
    acc.iter().map(|a| a / xs.len() as f64).collect()
}

fn run_seed(cfg: &AppendixBConfig, joint_arch: &Architecture, task_arch: &Architecture, seed: u64) -> Result<SeedResult> {
    let data = gen_periodic7(cfg.n_train, cfg.period, cfg.noise_sd, seed)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let half = PERIODIC7_HALF_SPAN * cfg.period;
    let xs = linspace(-half, half, cfg.eval_points);
    let d_out = data.d_out();

    let (joint, _) = train(joint_arch, &data, &tcfg)?;
    let joint_mse = held_out_mse(
        &xs,
        cfg.period,
        |x| {
            joint
                .forward(joint_arch, &DVector::from_element(1, x))
                .expect("trained network matches")
        },
        &(0..d_out).collect::<Vec<_>>(),
    );

    let separate = (0..d_out)
        .into_par_iter()
        .map(|k| train(task_arch, &data.column(k), &tcfg).map(|(n, _)| n))
        .collect::<Result<Vec<_>>>()?;
    let separate_mse = separate
        .iter()
        .enumerate()
        .map(|(k, net)| {
            held_out_mse(
                &xs,
                cfg.period,
                |x| {
                    net.forward(task_arch, &DVector::from_element(1, x))
                        .expect("trained network matches")
                },
                &[k],
            )[0]
        })
        .collect();

    Ok(SeedResult {
        seed,
        data,
        joint,
        separate,
        joint_mse,
        separate_mse,
    })
}

pub fn appendix_b(cfg: &AppendixBConfig) -> Result<AppendixBReport> {
    cfg.validate()?;
    let joint_arch = appendix_b_architecture(cfg.widths, PERIODIC7_NAMES.len());
    let task_arch = appendix_b_architecture(cfg.widths, 1);
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &joint_arch, &task_arch, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(AppendixBReport {
        joint_arch,
        task_arch,
        period: cfg.period,
        seeds,
    })
}
