//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Numeric arguments select criteria, e.g.
//! `cargo test -p moe-harness --test acceptance -- 3 5`.

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use moe_harness::config::{ExperimentConfig, Preset};
use moe_harness::experiment::{run_preset, BASE_SETTING, METHOD_EM, METHOD_L2, METHOD_L4, METHOD_LLOG};
use moe_harness::verify::{self, Check};
use moe_harness::Result;

const FIG1_L4_MAX: f64 = 0.05;
const FIG1_GAP_MIN: f64 = 0.1;
const FIG1_RUNTIME_MAX_S: f64 = 600.0;
const RECOVERY_MAX: f64 = 0.1;
const BATCH128_MEAN_MAX: f64 = 0.15;

struct Outcome {
    passed: bool,
    detail: String,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn spread(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn fmt_all(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",")
}

fn from_checks(checks: &[Check]) -> Outcome {
    Outcome {
        passed: checks.iter().all(Check::passed),
        detail: checks.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "),
    }
}

fn fig1_regressor() -> Result<Outcome> {
    let start = Instant::now();
    let t = run_preset(&ExperimentConfig::preset(Preset::Fig1Regressor))?;
    let secs = start.elapsed().as_secs_f64();
    let l4 = mean(&t.final_reg(BASE_SETTING, METHOD_L4));
    let em = mean(&t.final_reg(BASE_SETTING, METHOD_EM));
    let l2 = mean(&t.final_reg(BASE_SETTING, METHOD_L2));
    let parts = [
        (l4 <= FIG1_L4_MAX, format!("L4 mean {l4:.4} <= {FIG1_L4_MAX}")),
        (em - l4 >= FIG1_GAP_MIN, format!("EM mean {em:.4} exceeds L4 by >= {FIG1_GAP_MIN}")),
        (l2 - l4 >= FIG1_GAP_MIN, format!("l2 mean {l2:.4} exceeds L4 by >= {FIG1_GAP_MIN}")),
        (secs <= FIG1_RUNTIME_MAX_S, format!("runtime {secs:.0}s <= {FIG1_RUNTIME_MAX_S}s")),
    ];
    Ok(Outcome {
        passed: parts.iter().all(|p| p.0),
        detail: parts.iter().map(|(ok, s)| format!("{s} [{}]", if *ok { "ok" } else { "no" })).collect::<Vec<_>>().join("; "),
    })
}

fn fig1_gating() -> Result<Outcome> {
    let t = run_preset(&ExperimentConfig::preset(Preset::Fig1Gating))?;
    let ours = mean(&t.final_gating(BASE_SETTING, METHOD_LLOG));
    let em = mean(&t.final_gating(BASE_SETTING, METHOD_EM));
    let l2 = mean(&t.final_gating(BASE_SETTING, METHOD_L2));
    Ok(Outcome {
        passed: ours < em && ours < l2,
        detail: format!("mean final E_gating: gating loss {ours:.4}, EM {em:.4}, l2 {l2:.4} (gating loss must be strictly lowest)"),
    })
}

fn multistart_and_nonortho() -> Result<Outcome> {
    let ms = run_preset(&ExperimentConfig::preset(Preset::Fig1Multistart))?;
    let ms_reg = ms.final_reg(BASE_SETTING, METHOD_L4);
    let no = run_preset(&ExperimentConfig::preset(Preset::Fig2Nonortho))?;
    let no_reg = no.final_reg(BASE_SETTING, METHOD_L4);
    let no_gate = no.final_gating(BASE_SETTING, METHOD_LLOG);
    let ok = |v: &[f64]| v.len() == 5 && v.iter().all(|e| *e <= RECOVERY_MAX);
    Ok(Outcome {
        passed: ok(&ms_reg) && ok(&no_reg) && ok(&no_gate),
        detail: format!(
            "every value <= {RECOVERY_MAX}: orthonormal E_reg [{}]; non-orthogonal E_reg [{}], E_gating [{}]",
            fmt_all(&ms_reg),
            fmt_all(&no_reg),
            fmt_all(&no_gate)
        ),
    })
}

fn mixture_inputs() -> Result<Outcome> {
    let cfg = ExperimentConfig::preset(Preset::Fig2Mixture);
    let t = run_preset(&cfg)?;
    let per_p: Vec<(f64, f64)> = cfg.mixture_p.iter().map(|&p| (p, mean(&t.final_reg(&format!("p={p}"), METHOD_L4)))).collect();
    Ok(Outcome {
        passed: per_p.iter().all(|(_, e)| *e <= RECOVERY_MAX),
        detail: format!(
            "mean final E_reg per p (each <= {RECOVERY_MAX}): {}",
            per_p.iter().map(|(p, e)| format!("p={p}: {e:.4}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn small_batch() -> Result<Outcome> {
    let t = run_preset(&ExperimentConfig::preset(Preset::AppendixEBatch128))?;
    let small = t.final_reg("batch=128", METHOD_L4);
    let large = t.final_reg("batch=1024", METHOD_L4);
    let (m, s_small, s_large) = (mean(&small), spread(&small), spread(&large));
    Ok(Outcome {
        passed: m <= BATCH128_MEAN_MAX && s_small > s_large,
        detail: format!(
            "batch 128 mean {m:.4} <= {BATCH128_MEAN_MAX}; spread {s_small:.4} > batch-1024 spread {s_large:.4} [128: {}; 1024: {}]",
            fmt_all(&small),
            fmt_all(&large)
        ),
    })
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Result<Outcome>);
    let criteria: [Criterion; 14] = [
        (1, "regressor recovery vs baselines", fig1_regressor),
        (2, "gating recovery vs baselines", fig1_gating),
        (3, "random restarts, orthogonal and non-orthogonal", multistart_and_nonortho),
        (4, "mixture-of-Gaussians inputs", mixture_inputs),
        (5, "batch-128 run", small_batch),
        (6, "moment tensor oracle", || {
            let (a, b) = verify::tensor_oracle(1_000_000, 1_000_000)?;
            Ok(from_checks(&[a, b]))
        }),
        (7, "sample vs population quartic loss", || Ok(from_checks(&[verify::loss_form_equivalence(10, 1_000_000)?]))),
        (8, "analytic gradients", || Ok(from_checks(&verify::gradient_checks(20)?))),
        (9, "gating fixed point", || Ok(from_checks(&[verify::fixed_point(100_000)?]))),
        (10, "gating contraction", || {
            let (a, b) = verify::contraction(100_000, 50)?;
            Ok(from_checks(&[a, b]))
        }),
        (11, "gradient-EM identity", || Ok(from_checks(&[verify::gradient_em_identity(10)?]))),
        (12, "coefficient solver", || Ok(from_checks(&verify::coefficient_checks()?))),
        (13, "GRU equivalence", || Ok(from_checks(&[verify::gru_equivalence(1000)?]))),
        (14, "transform identities", || Ok(from_checks(&[verify::transform_identities(1000)?]))),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome { passed: false, detail: format!("error: {e}") });
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        writeln!(out, "[{tag}] criterion {id:>2} ({name}, {:.1}s): {}", start.elapsed().as_secs_f64(), outcome.detail).ok();
        out.flush().ok();
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        writeln!(out, "acceptance: all criteria passed").ok();
        ExitCode::SUCCESS
    } else {
        writeln!(out, "acceptance: failed criteria {failed:?}").ok();
        ExitCode::FAILURE
    }
}
