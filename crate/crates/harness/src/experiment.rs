//! Preset pipelines: one trial per (setting, seed), run on the worker pool
//! and collected into a [`ResultTable`].

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moe_core::baselines::{l2_joint_sgd, run_em, EmConfig};
use moe_core::datagen::{derive_seed, generate_dataset, InputDistribution};
use moe_core::losses::{GatingContext, L4Context};
use moe_core::metrics::{regressor_error, resolve_signs};
use moe_core::model::{ground_truth_paper_instance, init_random};
use moe_core::optim::{projected_gd_gating, sgd_l4, TrainConfig, Trajectory};
use moe_core::transforms::NonlinearityProfile;
use moe_core::{Dataset, MoEParameters, NonlinearityKind};

use crate::config::{ExperimentConfig, GatingTruth, Preset};
use crate::pool::{run_indexed, worker_count};
use crate::{io, Result};

pub const METHOD_L4: &str = "l4";
pub const METHOD_LLOG: &str = "llog";
pub const METHOD_EM: &str = "em";
pub const METHOD_L2: &str = "l2";

/// Setting label of presets that have a single setting.
pub const BASE_SETTING: &str = "base";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub setting: String,
    pub method: String,
    pub seed: u64,
    pub iter: usize,
    pub loss: f64,
    pub e_reg: Option<f64>,
    pub e_gating: Option<f64>,
    pub param_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggRow {
    pub setting: String,
    pub method: String,
    pub iter: usize,
    pub seeds: usize,
    pub e_reg: Option<Stats>,
    pub e_gating: Option<Stats>,
}

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub config: ExperimentConfig,
    pub rows: Vec<TrajRow>,
    pub aggregates: Vec<AggRow>,
}

impl ResultTable {
    fn new(config: ExperimentConfig, rows: Vec<TrajRow>) -> Self {
        let aggregates = aggregate(&rows, config.seeds.len());
        Self { config, rows, aggregates }
    }

    /// `(setting, method)` pairs in order of first appearance.
    pub fn groups(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(s, m)| *s == r.setting && *m == r.method) {
                out.push((r.setting.clone(), r.method.clone()));
            }
        }
        out
    }

    /// Last recorded row of every seed, in seed-list order.
    pub fn finals(&self, setting: &str, method: &str) -> Vec<&TrajRow> {
        self.config
            .seeds
            .iter()
            .filter_map(|&seed| {
                self.rows
                    .iter()
                    .filter(|r| r.setting == setting && r.method == method && r.seed == seed)
                    .max_by_key(|r| r.iter)
            })
            .collect()
    }

    pub fn final_reg(&self, setting: &str, method: &str) -> Vec<f64> {
        self.finals(setting, method).iter().filter_map(|r| r.e_reg).collect()
    }

    pub fn final_gating(&self, setting: &str, method: &str) -> Vec<f64> {
        self.finals(setting, method).iter().filter_map(|r| r.e_gating).collect()
    }

    /// Writes `trajectories.csv`, `aggregate.csv` and the resolved
    /// `config.txt` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_result_rows(&dir.join("trajectories.csv"), &self.rows)?;
        io::write_aggregates(&dir.join("aggregate.csv"), &self.aggregates)?;
        std::fs::write(dir.join("config.txt"), self.config.to_text())?;
        Ok(())
    }
}

fn aggregate(rows: &[TrajRow], seeds: usize) -> Vec<AggRow> {
    let mut grouped: BTreeMap<(usize, usize), Vec<&TrajRow>> = BTreeMap::new();
    let mut order: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let g = match order.iter().position(|&(s, m)| s == r.setting && m == r.method) {
            Some(g) => g,
            None => {
                order.push((&r.setting, &r.method));
                order.len() - 1
            }
        };
        grouped.entry((g, r.iter)).or_default().push(r);
    }
    grouped
        .into_iter()
        .filter(|(_, rs)| rs.len() == seeds)
        .map(|((g, iter), rs)| {
            let reg: Vec<f64> = rs.iter().filter_map(|r| r.e_reg).collect();
            let gate: Vec<f64> = rs.iter().filter_map(|r| r.e_gating).collect();
            AggRow {
                setting: order[g].0.to_string(),
                method: order[g].1.to_string(),
                iter,
                seeds: rs.len(),
                e_reg: if reg.len() == seeds { Stats::of(&reg) } else { None },
                e_gating: if gate.len() == seeds { Stats::of(&gate) } else { None },
            }
        })
        .collect()
}

/// Ground truth of a trial. Sphere gating rows come from `seed`.
pub fn truth_for(cfg: &ExperimentConfig, seed: u64) -> Result<MoEParameters> {
    match cfg.gating_truth {
        GatingTruth::Orthonormal => {
            let mut t = ground_truth_paper_instance(cfg.k, cfg.d)?;
            t.noise_sigma = cfg.sigma;
            Ok(t)
        }
        GatingTruth::Sphere => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
            let mut w = init_random(cfg.k, cfg.d, 1.0, &mut rng)?.gating;
            for mut row in w.rows_mut() {
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            let mut a = Array2::zeros((cfg.k, cfg.d));
            for i in 0..cfg.k {
                a[[i, i]] = 1.0;
            }
            Ok(MoEParameters::new(a, w, cfg.sigma)?)
        }
    }
}

#[derive(Debug, Clone)]
struct Trial {
    setting: String,
    seed: u64,
    /// Seed of the truth and the dataset.
    data_seed: u64,
    dist: InputDistribution,
    batch: usize,
    methods: &'static [&'static str],
}

fn trials(cfg: &ExperimentConfig) -> Result<Vec<Trial>> {
    let gaussian = InputDistribution::StandardGaussian;
    let plain = |methods: &'static [&'static str]| -> Vec<Trial> {
        cfg.seeds
            .iter()
            .map(|&seed| Trial {
                setting: BASE_SETTING.into(),
                seed,
                data_seed: seed,
                dist: gaussian.clone(),
                batch: cfg.batch,
                methods,
            })
            .collect()
    };
    let out = match cfg.preset {
        Preset::Fig1Regressor => plain(&[METHOD_L4, METHOD_L2, METHOD_EM]),
        Preset::Fig1Gating => plain(&[METHOD_L4, METHOD_LLOG, METHOD_L2, METHOD_EM]),
        Preset::Fig2Nonortho | Preset::Custom => plain(&[METHOD_L4, METHOD_LLOG]),
        Preset::Fig1Multistart => plain(&[METHOD_L4]).into_iter().map(|t| Trial { data_seed: cfg.data_seed, ..t }).collect(),
        Preset::AppendixEBatch128 => [cfg.batch, 1024]
            .into_iter()
            .enumerate()
            .filter(|&(i, b)| i == 0 || b != cfg.batch)
            .flat_map(|(_, batch)| {
                plain(&[METHOD_L4]).into_iter().map(move |t| Trial { setting: format!("batch={batch}"), batch, ..t })
            })
            .collect(),
        Preset::Fig2Mixture => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.data_seed, 4));
            let mut out = Vec::new();
            for &p in &cfg.mixture_p {
                let dist = match InputDistribution::random_mixture(p, cfg.d, &mut rng) {
                    InputDistribution::SymmetricGaussianMixture { p, mu } => InputDistribution::SymmetricGaussianMixture {
                        p,
                        mu: mu.iter().map(|v| v * cfg.mixture_mu_norm).collect(),
                    },
                    other => other,
                };
                out.extend(plain(&[METHOD_L4]).into_iter().map(|t| Trial { setting: format!("p={p}"), dist: dist.clone(), ..t }));
            }
            out
        }
    };
    Ok(out)
}

fn to_rows(setting: &str, method: &str, seed: u64, traj: &Trajectory) -> Vec<TrajRow> {
    traj.records
        .iter()
        .map(|r| TrajRow {
            setting: setting.into(),
            method: method.into(),
            seed,
            iter: r.iter,
            loss: r.loss,
            e_reg: r.metric,
            e_gating: r.gating_metric,
            param_distance: r.param_distance,
        })
        .collect()
}

/// Normalizes the learned regressors, puts them in the truth's expert order
/// and fixes their signs by likelihood on `data`.
pub fn align_regressors(
    a: ArrayView2<f64>,
    truth: &MoEParameters,
    data: &Dataset,
    kind: NonlinearityKind,
) -> Result<Array2<f64>> {
    let m = regressor_error(a, truth.regressors.view())?;
    let mut aligned = Array2::zeros(a.raw_dim());
    for (i, &pi) in m.permutation.iter().enumerate() {
        let row = a.row(i);
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            aligned.row_mut(pi).assign(&(&row / n));
        }
    }
    Ok(resolve_signs(aligned.view(), data, truth.noise_sigma, kind)?.regressors)
}

fn run_trial(cfg: &ExperimentConfig, trial: &Trial) -> Result<Vec<TrajRow>> {
    let truth = truth_for(cfg, trial.data_seed)?;
    let data = generate_dataset(&truth, cfg.g, &trial.dist, cfg.n_samples, derive_seed(trial.data_seed, 0), false, 1)?;
    let init = init_random(cfg.k, cfg.d, cfg.reg.radius_r, &mut ChaCha8Rng::seed_from_u64(derive_seed(trial.seed, 1)))?;
    let sgd_seed = derive_seed(trial.seed, 2);
    let mut rows = Vec::new();
    let mut learned_a = None;
    for &method in trial.methods {
        let traj = match method {
            METHOD_L4 => {
                let ctx = L4Context::new(NonlinearityProfile::new(cfg.g, cfg.sigma)?, cfg.reg, &data);
                let tc = TrainConfig {
                    learning_rate: cfg.lr,
                    batch_size: trial.batch,
                    iterations: cfg.iterations,
                    split_t: None,
                    record_every: cfg.record_every,
                    seed: sgd_seed,
                };
                let (a, traj) = sgd_l4(init.regressors.view(), &data, &ctx, &tc, Some(truth.regressors.view()))?;
                learned_a = Some(a);
                traj
            }
            METHOD_LLOG => {
                let a = learned_a.as_ref().expect("regressor stage runs first");
                let rows_idx: Vec<usize> = (0..cfg.gating_samples).collect();
                let sub = data.select(&rows_idx);
                let aligned = align_regressors(a.view(), &truth, &sub, cfg.g)?;
                let ctx = GatingContext::new(aligned, cfg.g, cfg.sigma, cfg.reg.radius_r)?;
                let tc = TrainConfig {
                    learning_rate: cfg.gating_lr,
                    batch_size: cfg.gating_samples,
                    iterations: cfg.gating_iterations,
                    split_t: None,
                    record_every: 1,
                    seed: sgd_seed,
                };
                projected_gd_gating(init.gating.view(), &ctx, &sub, &tc, Some(truth.gating.view()))?.1
            }
            METHOD_L2 => {
                let tc = TrainConfig {
                    learning_rate: cfg.l2_lr,
                    batch_size: trial.batch,
                    iterations: cfg.iterations,
                    split_t: None,
                    record_every: cfg.record_every,
                    seed: sgd_seed,
                };
                l2_joint_sgd(init.regressors.view(), init.gating.view(), &data, cfg.g, &tc, Some(&truth))?.2
            }
            METHOD_EM => {
                let start = MoEParameters::new(init.regressors.clone(), init.gating.clone(), cfg.sigma)?;
                let ec = EmConfig {
                    iterations: cfg.em_iterations,
                    radius_r: cfg.reg.radius_r,
                    seed: sgd_seed,
                    ..EmConfig::default()
                };
                run_em(&start, &data, cfg.g, &ec, Some(&truth))?.1
            }
            other => unreachable!("unknown method {other}"),
        };
        rows.extend(to_rows(&trial.setting, method, trial.seed, &traj));
    }
    Ok(rows)
}

/// Runs every trial of the preset and, when `output_dir` is set, writes the
/// CSV files there.
pub fn run_preset(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let trials = trials(cfg)?;
    let results = run_indexed(trials.len(), worker_count(), |i| run_trial(cfg, &trials[i]));
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let table = ResultTable::new(cfg.clone(), rows);
    if let Some(dir) = &cfg.output_dir {
        table.write_csv(dir)?;
    }
    Ok(table)
}
