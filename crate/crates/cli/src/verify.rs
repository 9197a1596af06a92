//! The `verify` command: frequency and property checks keyed by label.

use std::path::Path;

use anyhow::Result;
use mqlab_core::geometry::{
    fit_projection, fit_subgaussian, greedy_rli, khintchine_sweep, ones_tail_exact, projection_exponent,
    projection_tail, rli_orthonormal,
};
use mqlab_core::instance::HardInstance;
use mqlab_core::instrument::{gap_index, optimum_threshold, reference_optimum};
use mqlab_core::linalg::{dist2, norm2, OrthoBasis};
use mqlab_core::optimizer::AlgorithmSpec;
use mqlab_core::oracle::{random_ball_point, subgradient_norm_ok, verify_subgradient, FirstOrderOracle};
use mqlab_core::rng::{rng_from_seed, stream_seed, sub_seed};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::trial_rows;
use crate::config::Config;
use crate::output::{finish, Check, CommandReport, OutDir};

/// Tolerance for the oracle and convexity checks.
pub const TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteLine {
    pub suite: String,
    pub trials: usize,
    pub failures: usize,
    pub frequency: f64,
    pub threshold: String,
    pub pass: bool,
}

/// A suite's summary line plus its raw per-trial table.
pub struct Suite {
    pub line: SuiteLine,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn line(suite: &str, trials: usize, failures: usize, frequency: f64, threshold: impl Into<String>, pass: bool) -> SuiteLine {
    SuiteLine { suite: suite.into(), trials, failures, frequency, threshold: threshold.into(), pass }
}

/// A uniform ball point, shrunk to radius `1/(L√d)` half of the time so the
/// Nemirovski terms are active as often as the row terms.
fn mixed_point(d: usize, l_scale: f64, rng: &mut mqlab_core::rng::Rng) -> Vec<f64> {
    let mut x: Vec<f64> = random_ball_point(d, rng);
    if rng.random::<bool>() {
        let s = 1.0 / (l_scale * (d as f64).sqrt());
        x.iter_mut().for_each(|c| *c *= if s.is_finite() { s } else { 0.0 });
    }
    x
}

pub fn suite_oracle(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let mut rows = Vec::new();
    let mut failures = 0;
    let mut total = 0;
    for &d in &vc.oracle_dims {
        let params = cfg.instance.params_at(d)?;
        let inst = HardInstance::<f64>::sample(&params, stream_seed(cfg.seed, &format!("oracle-{d}")))?;
        let base = stream_seed(cfg.seed, &format!("oracle-points-{d}"));
        let per_point: Vec<(usize, f64, bool)> = (0..vc.oracle_points as u64)
            .into_par_iter()
            .map(|i| -> Result<_> {
                let mut rng = rng_from_seed(sub_seed(base, i));
                let x = mixed_point(d, params.l_scale, &mut rng);
                let ans = inst.answer(&x)?;
                let rep = verify_subgradient(&inst, &x, &ans, vc.oracle_probes, sub_seed(base ^ 1, i))?;
                Ok((rep.violations, rep.worst_gap, subgradient_norm_ok(&ans)))
            })
            .collect::<Result<_>>()?;
        for (i, (v, worst, norm_ok)) in per_point.into_iter().enumerate() {
            total += 1;
            if v > 0 || !norm_ok {
                failures += 1;
            }
            rows.push(vec![d.to_string(), i.to_string(), v.to_string(), format!("{worst:e}"), norm_ok.to_string()]);
        }
    }
    Ok(Suite {
        line: line("oracle.subgradient", total, failures, failures as f64 / total as f64, "0 violating points", failures == 0),
        header: strings(&["d", "point", "violations", "worst_gap", "norm_ok"]),
        rows,
    })
}

pub fn suite_convexity(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let mut rows = Vec::new();
    let mut failures = 0;
    let mut total = 0;
    for &d in &vc.oracle_dims {
        let params = cfg.instance.params_at(d)?;
        let inst = HardInstance::<f64>::sample(&params, stream_seed(cfg.seed, &format!("convexity-{d}")))?;
        let mut rng = rng_from_seed(stream_seed(cfg.seed, &format!("convexity-points-{d}")));
        let (mut lip, mut conv) = (0usize, 0usize);
        for _ in 0..vc.convexity_checks {
            let x = mixed_point(d, params.l_scale, &mut rng);
            let y = mixed_point(d, params.l_scale, &mut rng);
            let lam: f64 = rng.random();
            let fx = inst.eval_f(&x)?.value;
            let fy = inst.eval_f(&y)?.value;
            if (fx - fy).abs() > dist2(&x, &y) + TOL {
                lip += 1;
            }
            let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            if inst.eval_f(&z)?.value > lam * fx + (1.0 - lam) * fy + TOL {
                conv += 1;
            }
        }
        total += vc.convexity_checks;
        failures += lip + conv;
        rows.push(vec![d.to_string(), vc.convexity_checks.to_string(), lip.to_string(), conv.to_string()]);
    }
    Ok(Suite {
        line: line("oracle.lipschitz_convexity", total, failures, failures as f64 / total as f64, "0 violations", failures == 0),
        header: strings(&["d", "checks", "lipschitz_violations", "convexity_violations"]),
        rows,
    })
}

pub fn suite_reference(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let params = cfg.instance.params_at(vc.reference_d)?;
    let thr2 = optimum_threshold(&params, 2.0);
    let thr_e = optimum_threshold(&params, std::f64::consts::E);
    let base = stream_seed(cfg.seed, "reference");
    let rows: Vec<(f64, f64, bool)> = (0..vc.reference_seeds as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let inst = HardInstance::<f64>::sample(&params, sub_seed(base, i))?;
            let r = reference_optimum(&inst)?;
            Ok((r.row_residual, r.value, r.rescaled))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let residual_fail = rows.iter().filter(|r| !(r.0 <= 1e-8)).count();
    let below2 = rows.iter().filter(|r| r.1 <= thr2).count();
    let below_e = rows.iter().filter(|r| r.1 <= thr_e).count();
    let freq = below2 as f64 / n as f64;
    let pass = residual_fail == 0 && freq >= vc.reference_min_rate;
    Ok(Suite {
        line: line(
            "reference_optimum",
            n,
            n - below2 + residual_fail,
            freq,
            format!(
                "residual <= 1e-8 on all, below threshold >= {} (base-e rate {:.3})",
                vc.reference_min_rate,
                below_e as f64 / n as f64
            ),
            pass,
        ),
        header: strings(&["seed_index", "row_residual", "value", "threshold_base2", "threshold_base_e", "rescaled"]),
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![i.to_string(), format!("{:e}", r.0), format!("{:e}", r.1), format!("{thr2:e}"), format!("{thr_e:e}"), r.2.to_string()]
            })
            .collect(),
    })
}

pub fn suite_ordering(cfg: &Config, spec: &AlgorithmSpec) -> Result<Suite> {
    let vc = &cfg.verify;
    let label = format!("ordering-{}", spec.label());
    let trials = trial_rows(spec, cfg, vc.ordering_d, vc.ordering_runs, vc.ordering_t_budget, &label)?;
    let n = trials.len();
    let ordered = trials.iter().filter(|(_, r)| r.ordered).count();
    let informative = trials.iter().filter(|(t, _)| !t.all_infinite()).count();
    let freq = ordered as f64 / n as f64;
    Ok(Suite {
        line: line(
            &format!("ordering.{}", spec.label()),
            n,
            n - ordered,
            freq,
            format!(">= {} ({informative} runs with a finite time)", vc.ordering_min_rate),
            freq >= vc.ordering_min_rate,
        ),
        header: strings(&["seed", "times", "ordered", "gap", "success"]),
        rows: trials
            .iter()
            .map(|(_, r)| vec![r.seed.to_string(), r.times.clone(), r.ordered.to_string(), format!("{:e}", r.gap), r.success.to_string()])
            .collect(),
    })
}

pub fn suite_gap_index(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let trials = trial_rows(&AlgorithmSpec::Ellipsoid, cfg, vc.gap_d, vc.gap_runs, vc.gap_t_budget, "gap-index")?;
    let times: Vec<_> = trials.iter().map(|(t, _)| t.clone()).collect();
    let gi = gap_index(&times, vc.gap_t_budget, 2 * vc.gap_t_budget);
    let n = times.len();
    let hits = (gi.success_rate * n as f64).round() as usize;
    Ok(Suite {
        line: line(
            "gap_index",
            n,
            n - hits,
            gi.success_rate,
            format!(">= {} at i_star = {}", vc.gap_min_rate, gi.i_star),
            gi.success_rate >= vc.gap_min_rate,
        ),
        header: strings(&["i", "rate"]),
        rows: gi.rates.iter().enumerate().map(|(i, r)| vec![i.to_string(), r.to_string()]).collect(),
    })
}

pub fn suite_khintchine(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let d = vc.khintchine_d;
    let ones = vec![1.0f64; d];
    let est = khintchine_sweep(&ones, &vc.khintchine_ts, vc.khintchine_trials, stream_seed(cfg.seed, "khintchine"));
    let mut rows = Vec::new();
    let mut failures = 0;
    for e in &est {
        let exact = ones_tail_exact(d, e.t);
        let sigma = (exact * (1.0 - exact) / e.trials as f64).sqrt();
        let ok = (e.empirical - exact).abs() <= 3.0 * sigma + 1e-12;
        failures += usize::from(!ok);
        rows.push(vec![e.t.to_string(), e.hits.to_string(), e.trials.to_string(), e.empirical.to_string(), exact.to_string(), sigma.to_string(), ok.to_string()]);
    }
    let c2 = fit_subgaussian(&est).unwrap_or(f64::NAN);
    Ok(Suite {
        line: line(
            "khintchine",
            est.len(),
            failures,
            1.0 - failures as f64 / est.len().max(1) as f64,
            format!("within 3 sigma of exact at every t (fitted c2 {c2:.3})"),
            failures == 0,
        ),
        header: strings(&["t", "hits", "trials", "empirical", "exact", "sigma", "within"]),
        rows,
    })
}

pub fn suite_projection(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let (d, r) = (vc.projection_d, vc.projection_rank);
    let mut rng = rng_from_seed(stream_seed(cfg.seed, "projection-basis"));
    let mut basis = OrthoBasis::<f64>::new(d);
    while basis.rank() < r {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        basis.push(&g, 1e-6);
    }
    let u = basis.vectors().to_vec();
    let seed = stream_seed(cfg.seed, "projection");
    let est = vc
        .projection_ts
        .iter()
        .map(|&t| projection_tail(&u, t, vc.projection_trials, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let c = fit_projection(&est, d, r);
    let pass = c.is_none_or(|c| c >= vc.projection_min_constant);
    Ok(Suite {
        line: line(
            "projection",
            est.len(),
            usize::from(!pass),
            f64::from(u8::from(pass)),
            format!(
                "fitted constant {} >= {}",
                c.map_or_else(|| "inf (no hits)".to_string(), |c| format!("{c:.4}")),
                vc.projection_min_constant
            ),
            pass,
        ),
        header: strings(&["t", "hits", "trials", "empirical", "exponent"]),
        rows: est
            .iter()
            .map(|e| vec![e.t.to_string(), e.hits.to_string(), e.trials.to_string(), e.empirical.to_string(), projection_exponent(d, r, e.t).to_string()])
            .collect(),
    })
}

/// `δ` such that a `γ`-RLI unit vector keeps at most `1 − δ` of its norm in
/// the span of its predecessors.
pub fn rli_delta(gamma: f64) -> f64 {
    1.0 - (1.0 - gamma * gamma).sqrt()
}

pub fn suite_rli(cfg: &Config) -> Result<Suite> {
    let vc = &cfg.verify;
    let d = vc.rli_d;
    let delta = rli_delta(vc.rli_gamma);
    let base = stream_seed(cfg.seed, "rli");
    let results: Vec<Vec<String>> = (0..vc.rli_sequences as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<String>> {
            let mut rng = rng_from_seed(sub_seed(base, i));
            let mut xs: Vec<Vec<f64>> = Vec::new();
            while xs.len() < vc.rli_len {
                let mut g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = norm2(&g);
                g.iter_mut().for_each(|c| *c /= n);
                let mut cand = xs.clone();
                cand.push(g);
                if greedy_rli(&cand, vc.rli_gamma, cand.len())?.indices.len() == cand.len() {
                    xs = cand;
                }
            }
            let r = rli_orthonormal(&xs, delta, sub_seed(base ^ 1, i))?;
            Ok(vec![
                i.to_string(),
                r.verified.to_string(),
                r.worst_ratio.to_string(),
                r.bound.to_string(),
                r.probes.to_string(),
                r.violations.to_string(),
            ])
        })
        .collect::<Result<_>>()?;
    let failures = results.iter().filter(|r| r[1] != "true").count();
    let n = results.len();
    Ok(Suite {
        line: line(
            "rli_orthonormal",
            n,
            failures,
            1.0 - failures as f64 / n as f64,
            format!("every probe within d/delta (delta = {delta:.4}); failures listed"),
            failures == 0,
        ),
        header: strings(&["sequence", "verified", "worst_ratio", "bound", "probes", "violations"]),
        rows: results,
    })
}

pub fn run_suites(cfg: &Config) -> Result<Vec<Suite>> {
    cfg.verify.validate()?;
    let mut suites = vec![suite_oracle(cfg)?, suite_convexity(cfg)?, suite_reference(cfg)?];
    for spec in &cfg.verify.ordering_algorithms {
        suites.push(suite_ordering(cfg, spec)?);
    }
    suites.push(suite_gap_index(cfg)?);
    suites.push(suite_khintchine(cfg)?);
    suites.push(suite_projection(cfg)?);
    suites.push(suite_rli(cfg)?);
    Ok(suites)
}

pub fn cmd_verify(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let suites = run_suites(cfg)?;
    let mut dir = OutDir::create(out)?;
    for s in &suites {
        dir.write_records(&format!("verify_{}.csv", s.line.suite), "verify", cfg, &s.header, &s.rows)?;
    }
    let lines: Vec<SuiteLine> = suites.iter().map(|s| s.line.clone()).collect();
    dir.write_csv("verify_summary.csv", "verify", cfg, &lines)?;
    let checks = lines
        .iter()
        .map(|l| Check::new(l.suite.clone(), format!("{} failures of {} (frequency {:.4})", l.failures, l.trials, l.frequency), l.threshold.clone(), l.pass))
        .collect();
    finish("verify", cfg, dir, checks)
}
