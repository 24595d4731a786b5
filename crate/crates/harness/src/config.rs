//! Experiment configuration: preset defaults, flat `key=value` files and
//! overrides.
//!
//! Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `k`, `d` | number of experts, input dimension |
//! | `sigma` | noise level |
//! | `g` | activation: `id`, `relu`, `sigmoid`, `leaky:<slope>` |
//! | `seeds` | comma-separated trial seeds |
//! | `n` | samples drawn per trial |
//! | `batch`, `lr`, `iterations`, `record_every` | SGD settings for the regressor stage and the squared-loss baseline |
//! | `mu`, `lambda`, `delta`, `radius` | regularization and gating radius |
//! | `gating_lr`, `gating_iterations`, `gating_samples` | gating-stage descent |
//! | `em_iterations`, `l2_lr` | baselines |
//! | `mixture_p`, `mixture_mu_norm` | mixture-input settings |
//! | `data_seed` | shared dataset seed of the multi-start preset |
//! | `output_dir` | where CSV files go |

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use moe_core::{NonlinearityKind, RegularizationConfig};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Fig1Regressor,
    Fig1Gating,
    Fig1Multistart,
    Fig2Nonortho,
    Fig2Mixture,
    AppendixEBatch128,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fig1Regressor,
        Preset::Fig1Gating,
        Preset::Fig1Multistart,
        Preset::Fig2Nonortho,
        Preset::Fig2Mixture,
        Preset::AppendixEBatch128,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1Regressor => "fig1_regressor",
            Preset::Fig1Gating => "fig1_gating",
            Preset::Fig1Multistart => "fig1_multistart",
            Preset::Fig2Nonortho => "fig2_nonortho",
            Preset::Fig2Mixture => "fig2_mixture",
            Preset::AppendixEBatch128 => "appendixE_batch128",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::Config(format!("unknown preset '{s}'")))
    }
}

/// How the ground-truth gating rows are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatingTruth {
    /// `a_i = e_i`, `w_i = e_{k+i}`.
    Orthonormal,
    /// `a_i = e_i`, gating rows uniform on the unit sphere.
    Sphere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub g: NonlinearityKind,
    pub seeds: Vec<u64>,
    pub n_samples: usize,
    pub batch: usize,
    pub lr: f64,
    pub iterations: usize,
    pub record_every: usize,
    pub reg: RegularizationConfig,
    pub gating_lr: f64,
    pub gating_iterations: usize,
    pub gating_samples: usize,
    pub em_iterations: usize,
    pub l2_lr: f64,
    pub mixture_p: Vec<f64>,
    pub mixture_mu_norm: f64,
    pub data_seed: u64,
    pub gating_truth: GatingTruth,
    pub output_dir: Option<PathBuf>,
}

const REQUIRED_FOR_CUSTOM: [&str; 8] = ["k", "d", "sigma", "g", "seeds", "batch", "lr", "iterations"];

impl ExperimentConfig {
    /// Defaults fixed by a preset.
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            preset,
            k: 3,
            d: 10,
            sigma: 0.05,
            g: NonlinearityKind::Identity,
            seeds: (0..5).collect(),
            n_samples: 1_000_000,
            batch: 1024,
            lr: 1e-3,
            iterations: 20_000,
            record_every: 200,
            reg: RegularizationConfig::default(),
            gating_lr: 2.0,
            gating_iterations: 200,
            gating_samples: 100_000,
            em_iterations: 30,
            l2_lr: 0.01,
            mixture_p: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            mixture_mu_norm: 0.3,
            data_seed: 0,
            gating_truth: GatingTruth::Orthonormal,
            output_dir: None,
        };
        match preset {
            Preset::Fig2Nonortho => {
                cfg.k = 2;
                cfg.gating_truth = GatingTruth::Sphere;
            }
            Preset::AppendixEBatch128 => cfg.batch = 128,
            _ => {}
        }
        cfg
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| HarnessError::Config(format!("bad value '{v}' for {what}"));
        macro_rules! num {
            ($t:ty) => {
                v.parse::<$t>().map_err(|_| bad(key))?
            };
        }
        match key.trim() {
            "preset" => {
                let p: Preset = v.parse()?;
                if p != self.preset {
                    return Err(HarnessError::Config(format!("config is for preset {p}, not {}", self.preset)));
                }
            }
            "k" => self.k = num!(usize),
            "d" => self.d = num!(usize),
            "sigma" => self.sigma = num!(f64),
            "g" => self.g = v.parse()?,
            "seeds" => self.seeds = parse_list(v).map_err(|_| bad("seeds"))?,
            "n" => self.n_samples = num!(usize),
            "batch" => self.batch = num!(usize),
            "lr" => self.lr = num!(f64),
            "iterations" => self.iterations = num!(usize),
            "record_every" => self.record_every = num!(usize),
            "mu" => self.reg.mu = num!(f64),
            "lambda" => self.reg.lambda = num!(f64),
            "delta" => self.reg.delta_reg = num!(f64),
            "radius" => self.reg.radius_r = num!(f64),
            "gating_lr" => self.gating_lr = num!(f64),
            "gating_iterations" => self.gating_iterations = num!(usize),
            "gating_samples" => self.gating_samples = num!(usize),
            "em_iterations" => self.em_iterations = num!(usize),
            "l2_lr" => self.l2_lr = num!(f64),
            "mixture_p" => self.mixture_p = parse_list(v).map_err(|_| bad("mixture_p"))?,
            "mixture_mu_norm" => self.mixture_mu_norm = num!(f64),
            "data_seed" => self.data_seed = num!(u64),
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            other => return Err(HarnessError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Preset defaults overridden by `entries` in order, then validated.
    /// The custom preset must set every key in its required list.
    pub fn build(preset: Preset, entries: &[(String, String)]) -> Result<Self> {
        if preset == Preset::Custom {
            let missing: Vec<&str> = REQUIRED_FOR_CUSTOM
                .into_iter()
                .filter(|req| !entries.iter().any(|(k, _)| k == req))
                .collect();
            if !missing.is_empty() {
                return Err(HarnessError::Config(format!("custom preset is missing: {}", missing.join(", "))));
            }
        }
        let mut cfg = Self::preset(preset);
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.k < 2 || self.d == 0 {
            return fail(format!("need k >= 2 and d >= 1, got k={}, d={}", self.k, self.d));
        }
        if self.gating_truth == GatingTruth::Orthonormal && 2 * self.k - 1 >= self.d {
            return fail(format!("orthonormal instance needs 2k-1 < d, got k={}, d={}", self.k, self.d));
        }
        if self.gating_truth == GatingTruth::Sphere && self.k > self.d {
            return fail(format!("need k <= d, got k={}, d={}", self.k, self.d));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return fail(format!("sigma {} must be finite and >= 0", self.sigma));
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return fail("seed list has duplicates".into());
        }
        if self.n_samples == 0 || self.batch == 0 || self.iterations == 0 || self.record_every == 0 {
            return fail("n, batch, iterations and record_every must be positive".into());
        }
        if self.gating_samples == 0 || self.gating_samples > self.n_samples {
            return fail(format!("gating_samples must lie in 1..={}", self.n_samples));
        }
        if self.gating_iterations == 0 || self.em_iterations == 0 {
            return fail("gating_iterations and em_iterations must be positive".into());
        }
        for (name, lr) in [("lr", self.lr), ("gating_lr", self.gating_lr), ("l2_lr", self.l2_lr)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return fail(format!("{name} {lr} must be finite and >= 0"));
            }
        }
        if self.preset == Preset::Fig2Mixture {
            if self.mixture_p.is_empty() || self.mixture_p.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return fail("mixture_p must be a non-empty list in [0,1]".into());
            }
            if !(self.mixture_mu_norm >= 0.0) || !self.mixture_mu_norm.is_finite() {
                return fail("mixture_mu_norm must be finite and >= 0".into());
            }
        }
        self.g.validate()?;
        self.reg.validate()?;
        Ok(())
    }

    /// Resolved settings as `key=value` lines, readable by [`parse_entries`].
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut lines = vec![
            format!("preset={}", self.preset),
            format!("k={}", self.k),
            format!("d={}", self.d),
            format!("sigma={}", self.sigma),
            format!("g={}", self.g),
            format!("seeds={}", join(self.seeds.iter().map(|s| s.to_string()).collect())),
            format!("n={}", self.n_samples),
            format!("batch={}", self.batch),
            format!("lr={}", self.lr),
            format!("iterations={}", self.iterations),
            format!("record_every={}", self.record_every),
            format!("mu={}", self.reg.mu),
            format!("lambda={}", self.reg.lambda),
            format!("delta={}", self.reg.delta_reg),
            format!("radius={}", self.reg.radius_r),
            format!("gating_lr={}", self.gating_lr),
            format!("gating_iterations={}", self.gating_iterations),
            format!("gating_samples={}", self.gating_samples),
            format!("em_iterations={}", self.em_iterations),
            format!("l2_lr={}", self.l2_lr),
            format!("mixture_p={}", join(self.mixture_p.iter().map(|p| p.to_string()).collect())),
            format!("mixture_mu_norm={}", self.mixture_mu_norm),
            format!("data_seed={}", self.data_seed),
        ];
        if let Some(dir) = &self.output_dir {
            lines.push(format!("output_dir={}", dir.display()));
        }
        lines.join("\n") + "\n"
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, T::Err> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect()
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig9".parse::<Preset>().is_err());
    }

    #[test]
    fn custom_needs_every_required_key() {
        let err = ExperimentConfig::build(Preset::Custom, &entries(&[("k", "3")])).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn custom_rejects_crowded_instance() {
        let e = entries(&[
            ("k", "3"),
            ("d", "4"),
            ("sigma", "0.05"),
            ("g", "id"),
            ("seeds", "1,2"),
            ("batch", "64"),
            ("lr", "0.001"),
            ("iterations", "10"),
        ]);
        let err = ExperimentConfig::build(Preset::Custom, &e).unwrap_err();
        assert!(err.to_string().contains("2k-1 < d"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::preset(Preset::Fig2Mixture);
        cfg.seeds = vec![4, 9];
        cfg.output_dir = Some("out".into());
        let parsed = parse_entries(&cfg.to_text()).unwrap();
        assert_eq!(ExperimentConfig::build(Preset::Fig2Mixture, &parsed).unwrap(), cfg);
    }

    #[test]
    fn parsing_skips_comments_and_rejects_junk() {
        let e = parse_entries("# header\n k = 4 \n\nlr=0.5 # trailing\n").unwrap();
        assert_eq!(e, entries(&[("k", "4"), ("lr", "0.5")]));
        assert!(parse_entries("novalue").is_err());
        let mut cfg = ExperimentConfig::preset(Preset::Fig1Regressor);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("k", "three").is_err());
        assert!(cfg.set("preset", "fig2_mixture").is_err());
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        assert!(ExperimentConfig::build(Preset::Fig1Regressor, &entries(&[("seeds", "1,1")])).is_err());
    }
}
