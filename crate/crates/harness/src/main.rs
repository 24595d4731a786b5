use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moe_core::baselines::{l2_joint_sgd, run_em, EmConfig};
use moe_core::datagen::{generate_dataset, InputDistribution};
use moe_core::losses::{GatingContext, L4Context};
use moe_core::model::{ground_truth_paper_instance, init_random};
use moe_core::optim::{projected_gd_gating, sgd_l4, TrainConfig, Trajectory};
use moe_core::transforms::{check_validity, NonlinearityProfile};
use moe_core::{MoEParameters, NonlinearityKind, RegularizationConfig};
use moe_harness::config::{parse_entries, ExperimentConfig, Preset};
use moe_harness::experiment::{align_regressors, run_preset};
use moe_harness::verify::{run_verification, Suite};
use moe_harness::{io, HarnessError, Result};

#[derive(Parser)]
#[command(name = "moe", version, about = "Mixture-of-experts parameter recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the output-transform coefficients for an activation.
    Coeffs {
        #[arg(long, default_value = "id")]
        g: NonlinearityKind,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
    },
    /// Sample a dataset.
    Gen(GenArgs),
    /// Learn regressors with SGD on the quartic loss.
    TrainL4(TrainL4Args),
    /// Learn gating rows by projected descent with regressors fixed.
    TrainLlog(TrainLlogArgs),
    /// Run a comparison method.
    Baseline(BaselineArgs),
    /// Run a preset experiment.
    Experiment(ExperimentArgs),
    /// Run an oracle suite (`all` runs every suite).
    Verify { suite: String },
}

#[derive(Args)]
struct GenArgs {
    /// Parameter file; defaults to the orthonormal instance of size k x d.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value = "id")]
    g: NonlinearityKind,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw inputs from a two-component mixture with this weight.
    #[arg(long)]
    mixture_p: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    mixture_mu_norm: f64,
    /// Add the latent expert index as column z.
    #[arg(long)]
    latents: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating parameters.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value = "id")]
    g: NonlinearityKind,
    /// Ground-truth parameter file for recovery metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Learned parameters.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainL4Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct TrainLlogArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter file holding the regressors (and the starting gating rows).
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Split the data into this many chunks, one per step.
    #[arg(long)]
    split_t: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Em,
    L2,
}

#[derive(Args)]
struct BaselineArgs {
    method: Method,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// EM iterations or SGD steps.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    /// Re-estimate the noise level in EM.
    #[arg(long)]
    estimate_sigma: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    preset: Preset,
    /// Flat key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.002`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seed_list: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read_params(path: &Path) -> Result<MoEParameters> {
    Ok(MoEParameters::from_text(&std::fs::read_to_string(path)?)?)
}

fn write_params(path: Option<&PathBuf>, p: &MoEParameters) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, p.to_text())?;
    }
    Ok(())
}

fn summarize(traj: &Trajectory) {
    if let Some(last) = traj.last() {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "iter {} loss {:.6} metric {} distance {} gating {}",
            last.iter,
            last.loss,
            show(last.metric),
            show(last.param_distance),
            show(last.gating_metric)
        );
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Coeffs { g, sigma } => {
            let prof = NonlinearityProfile::new(g, sigma)?;
            let c = prof.coeffs;
            println!("alpha {:.17e}\nbeta {:.17e}\ngamma {:.17e}\ndelta_q {:.17e}", c.alpha, c.beta, c.gamma, c.delta_q);
            println!("c4 {:.17e}\nc2 {:.17e}", prof.constants.c4, prof.constants.c2);
            let rep = check_validity(&prof);
            println!("valid {}", rep.valid);
            Ok(rep.valid)
        }
        Command::Gen(a) => {
            let mut truth = match &a.params {
                Some(p) => read_params(p)?,
                None => ground_truth_paper_instance(a.k, a.d)?,
            };
            if a.params.is_none() {
                truth.noise_sigma = a.sigma;
            }
            let dist = match a.mixture_p {
                None => InputDistribution::StandardGaussian,
                Some(p) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                    match InputDistribution::random_mixture(p, truth.d(), &mut rng) {
                        InputDistribution::SymmetricGaussianMixture { p, mu } => InputDistribution::SymmetricGaussianMixture {
                            p,
                            mu: mu.iter().map(|v| v * a.mixture_mu_norm).collect(),
                        },
                        other => other,
                    }
                }
            };
            let threads = moe_harness::pool::worker_count();
            let data = generate_dataset(&truth, a.g, &dist, a.n, a.seed, a.latents, threads)?;
            io::write_dataset(&a.out, &data)?;
            write_params(a.params_out.as_ref(), &truth)?;
            Ok(true)
        }
        Command::TrainL4(a) => {
            let c = &a.common;
            let data = io::read_dataset(&c.data)?;
            let truth = c.truth.as_deref().map(read_params).transpose()?;
            let mut reg = RegularizationConfig::default();
            reg.mu = a.mu.unwrap_or(reg.mu);
            reg.lambda = a.lambda.unwrap_or(reg.lambda);
            reg.delta_reg = a.delta.unwrap_or(reg.delta_reg);
            let ctx = L4Context::new(NonlinearityProfile::new(c.g, c.sigma)?, reg, &data);
            let init = init_random(a.k, data.dim(), reg.radius_r, &mut ChaCha8Rng::seed_from_u64(c.seed))?;
            let tc = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch,
                iterations: a.iterations,
                split_t: None,
                record_every: c.record_every,
                seed: c.seed,
            };
            let (learned, traj) = sgd_l4(init.regressors.view(), &data, &ctx, &tc, truth.as_ref().map(|t| t.regressors.view()))?;
            io::write_trajectory(&c.out, &traj)?;
            let gating = ndarray::Array2::zeros((a.k - 1, data.dim()));
            write_params(c.params_out.as_ref(), &MoEParameters::new(learned, gating, c.sigma)?)?;
            summarize(&traj);
            Ok(true)
        }
        Command::TrainLlog(a) => {
            let c = &a.common;
            let data = io::read_dataset(&c.data)?;
            let truth = c.truth.as_deref().map(read_params).transpose()?;
            let start = read_params(&a.params)?;
            // with a truth file, put the regressors in its expert order so W is comparable
            let regressors = match &truth {
                Some(t) => align_regressors(start.regressors.view(), t, &data, c.g)?,
                None => start.regressors.clone(),
            };
            let ctx = GatingContext::new(regressors.clone(), c.g, c.sigma, a.radius)?;
            let tc = TrainConfig {
                learning_rate: a.lr,
                batch_size: data.len(),
                iterations: a.iterations,
                split_t: a.split_t,
                record_every: c.record_every,
                seed: c.seed,
            };
            let (w, traj) = projected_gd_gating(start.gating.view(), &ctx, &data, &tc, truth.as_ref().map(|t| t.gating.view()))?;
            io::write_trajectory(&c.out, &traj)?;
            write_params(c.params_out.as_ref(), &MoEParameters::new(regressors, w, c.sigma)?)?;
            summarize(&traj);
            Ok(true)
        }
        Command::Baseline(a) => {
            let c = &a.common;
            let data = io::read_dataset(&c.data)?;
            let truth = c.truth.as_deref().map(read_params).transpose()?;
            let init = init_random(a.k, data.dim(), 1.0, &mut ChaCha8Rng::seed_from_u64(c.seed))?;
            let (learned, traj) = match a.method {
                Method::Em => {
                    let start = MoEParameters::new(init.regressors, init.gating, c.sigma)?;
                    let ec = EmConfig {
                        iterations: a.iterations.unwrap_or(30),
                        estimate_sigma: a.estimate_sigma,
                        seed: c.seed,
                        ..EmConfig::default()
                    };
                    run_em(&start, &data, c.g, &ec, truth.as_ref())?
                }
                Method::L2 => {
                    let tc = TrainConfig {
                        learning_rate: a.lr,
                        batch_size: a.batch,
                        iterations: a.iterations.unwrap_or(20_000),
                        split_t: None,
                        record_every: c.record_every,
                        seed: c.seed,
                    };
                    let (aa, w, traj) = l2_joint_sgd(init.regressors.view(), init.gating.view(), &data, c.g, &tc, truth.as_ref())?;
                    (MoEParameters::new(aa, w, c.sigma)?, traj)
                }
            };
            io::write_trajectory(&c.out, &traj)?;
            write_params(c.params_out.as_ref(), &learned)?;
            summarize(&traj);
            Ok(true)
        }
        Command::Experiment(a) => {
            let mut entries = match &a.config {
                Some(p) => parse_entries(&std::fs::read_to_string(p)?)?,
                None => Vec::new(),
            };
            for o in &a.overrides {
                let (k, v) = o.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected KEY=VALUE, got '{o}'")))?;
                entries.push((k.trim().into(), v.trim().into()));
            }
            if let Some(s) = &a.seed_list {
                entries.push(("seeds".into(), s.clone()));
            }
            if let Some(o) = &a.out {
                entries.push(("output_dir".into(), o.display().to_string()));
            }
            let cfg = ExperimentConfig::build(a.preset, &entries)?;
            let table = run_preset(&cfg)?;
            for (setting, method) in table.groups() {
                let reg = table.final_reg(&setting, &method);
                let gate = table.final_gating(&setting, &method);
                let mean = |v: &[f64]| if v.is_empty() { "-".to_string() } else { format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64) };
                println!("{setting:>10} {method:>5}  final E_reg mean {}  final E_gating mean {}", mean(&reg), mean(&gate));
            }
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
            Ok(true)
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![suite.parse()?] };
            let mut ok = true;
            for s in suites {
                let rep = run_verification(s)?;
                print!("{rep}");
                ok &= rep.passed();
            }
            Ok(ok)
        }
    }
}
