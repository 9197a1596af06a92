//! The `gen`, `run`, `game`, `encode` and `frontier` commands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mqlab_core::encoding::{encode_micro, MicroProtocol};
use mqlab_core::game::{run_reduction_trials, GameError, Reduction, TrialLog};
use mqlab_core::instance::HardInstance;
use mqlab_core::instrument::{
    check_ordering, correlation_times, gap_index, reference_optimum, run_trial, success_at, tracked_run, TrialRow,
};
use mqlab_core::optimizer::{frontier_row, queries_to_gap, run, AlgorithmSpec, FrontierRow};
use mqlab_core::rng::{stream_seed, sub_seed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::output::{finish, opt_field, Check, CommandReport, OutDir};

fn rate(hits: usize, n: usize) -> f64 {
    hits as f64 / n.max(1) as f64
}

pub fn cmd_gen(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let params = cfg.instance.params()?;
    let inst = HardInstance::<f64>::sample(&params, cfg.seed)?;
    let bytes = inst.to_bytes();
    let mut dir = OutDir::create(out)?;
    dir.write_bytes(&cfg.gen.file, &bytes)?;
    if params.d <= cfg.gen.text_export_max_d {
        let name = format!("{}.json", cfg.gen.file.trim_end_matches(".mtin"));
        dir.write_json(&name, "gen", cfg, &inst.to_json())?;
    }
    let back = HardInstance::<f64>::from_bytes(&std::fs::read(dir.path(&cfg.gen.file))?)?;
    let same = back.to_bytes() == bytes && back.fingerprint() == inst.fingerprint();
    let checks = vec![Check::new("instance round trip", same.to_string(), "true", same)];
    finish("gen", cfg, dir, checks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub trial: u64,
    pub seed: u64,
    pub d: usize,
    pub times: String,
    pub ordered: bool,
    pub gap: f64,
    pub success: bool,
}

impl RunRow {
    fn new(trial: u64, r: TrialRow) -> Self {
        RunRow { trial, seed: r.seed, d: r.d, times: r.times, ordered: r.ordered, gap: r.gap, success: r.success }
    }
}

pub fn cmd_run(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let rc = &cfg.run;
    if rc.trials == 0 {
        bail!("run.trials must be at least 1");
    }
    let fixed = match &rc.instance_file {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading instance {}", p.display()))?;
            Some(HardInstance::<f64>::from_bytes(&bytes)?)
        }
        None => None,
    };
    let params = match &fixed {
        Some(inst) => inst.params().clone(),
        None => cfg.instance.params()?,
    };
    let header = serde_json::json!({ "command": "run", "seed": cfg.seed, "config": cfg });
    let results: Vec<(RunRow, Option<String>)> = (0..rc.trials as u64)
        .into_par_iter()
        .map(|i| -> Result<(RunRow, Option<String>)> {
            let seed = sub_seed(cfg.seed, i);
            let owned;
            let inst = match &fixed {
                Some(inst) => inst,
                None => {
                    owned = HardInstance::<f64>::sample(&params, seed)?;
                    &owned
                }
            };
            let alg = rc.algorithm.build::<f64>(params.d);
            let reference = reference_optimum(inst)?;
            let (times, output, transcript) = if (i as usize) < rc.transcripts {
                let tr = run(alg.as_ref(), inst, rc.t_budget, seed)?;
                let times = correlation_times(&tr, inst)?;
                let text = tr.to_jsonl(&header);
                (times, tr.final_output, Some(text))
            } else {
                let (times, output) = tracked_run(alg.as_ref(), inst, rc.t_budget, seed)?;
                (times, output, None)
            };
            let row = TrialRow::new(seed, params.d, &times, success_at(inst, &output, &reference));
            Ok((RunRow::new(i, row), transcript))
        })
        .collect::<Result<_>>()?;

    let mut dir = OutDir::create(out)?;
    for (row, text) in &results {
        if let Some(text) = text {
            dir.write_bytes(&format!("transcript_{:04}.jsonl", row.trial), text.as_bytes())?;
        }
    }
    let rows: Vec<RunRow> = results.into_iter().map(|(r, _)| r).collect();
    dir.write_csv("run_trials.csv", "run", cfg, &rows)?;
    let n = rows.len();
    let ordered = rate(rows.iter().filter(|r| r.ordered).count(), n);
    let success = rate(rows.iter().filter(|r| r.success).count(), n);
    let checks = vec![
        Check::new("ordering rate", format!("{ordered:.4}"), format!(">= {}", rc.min_ordered_rate), ordered >= rc.min_ordered_rate),
        Check::new("eps-success rate", format!("{success:.4}"), format!(">= {}", rc.min_success_rate), success >= rc.min_success_rate),
    ];
    finish("run", cfg, dir, checks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub trial: u64,
    pub seed: u64,
    pub times: String,
}

/// Flat CSV form of [`TrialLog`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRow {
    pub trial: u64,
    pub seed: u64,
    pub t_istar: String,
    pub success: bool,
    pub orthogonal: bool,
    pub correlated: bool,
    pub correlation: f64,
    pub row_norm: f64,
    pub mismatch_rounds: usize,
    pub prefix_agrees: bool,
    pub eps_success: bool,
    pub gap_event: bool,
    pub joint: bool,
    pub true_value_ok: String,
    pub message_bits: usize,
}

impl GameRow {
    pub fn from_log(l: &TrialLog) -> Self {
        GameRow {
            trial: l.trial,
            seed: l.seed,
            t_istar: opt_field(l.t_istar),
            success: l.success,
            orthogonal: l.orthogonal,
            correlated: l.correlated,
            correlation: l.correlation,
            row_norm: l.row_norm,
            mismatch_rounds: l.mismatch_rounds,
            prefix_agrees: l.prefix_agrees,
            eps_success: l.eps_success,
            gap_event: l.gap_event,
            joint: l.joint,
            true_value_ok: l.true_value_ok.map_or_else(String::new, |b| b.to_string()),
            message_bits: l.message_bits,
        }
    }

    pub fn to_log(&self) -> Result<TrialLog> {
        Ok(TrialLog {
            trial: self.trial,
            seed: self.seed,
            t_istar: if self.t_istar == "inf" { None } else { Some(self.t_istar.parse()?) },
            success: self.success,
            orthogonal: self.orthogonal,
            correlated: self.correlated,
            correlation: self.correlation,
            row_norm: self.row_norm,
            mismatch_rounds: self.mismatch_rounds,
            prefix_agrees: self.prefix_agrees,
            eps_success: self.eps_success,
            gap_event: self.gap_event,
            joint: self.joint,
            true_value_ok: if self.true_value_ok.is_empty() { None } else { Some(self.true_value_ok.parse()?) },
            message_bits: self.message_bits,
        })
    }
}

pub fn cmd_game(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let gc = &cfg.game;
    if gc.trials == 0 {
        bail!("game.trials must be at least 1");
    }
    let params = cfg.instance.params()?;
    let d = params.d;
    let alg = gc.algorithm.build::<f64>(d);
    let s = alg.declared_size();
    if let Some(k) = gc.k_msg {
        if k * d != s {
            return Err(GameError::MessageLengthViolation { got: s, want: k * d }.into());
        }
    }
    let n_rows = gc.n_rows.unwrap_or(2 * gc.t_budget);
    let mut dir = OutDir::create(out)?;

    let i_star = match gc.i_star {
        Some(i) => i,
        None => {
            if gc.calibration_trials == 0 {
                bail!("game.calibration_trials must be positive when game.i_star is not set");
            }
            let base = stream_seed(cfg.seed, "calibration");
            let runs: Vec<(u64, mqlab_core::instrument::CorrelationTimes)> = (0..gc.calibration_trials as u64)
                .into_par_iter()
                .map(|i| -> Result<_> {
                    let seed = sub_seed(base, i);
                    let inst = HardInstance::<f64>::sample(&params, seed)?;
                    let (times, _) = tracked_run(alg.as_ref(), &inst, gc.t_budget, seed)?;
                    Ok((seed, times))
                })
                .collect::<Result<_>>()?;
            let rows: Vec<CalibrationRow> = runs
                .iter()
                .enumerate()
                .map(|(i, (seed, t))| CalibrationRow { trial: i as u64, seed: *seed, times: t.to_field() })
                .collect();
            dir.write_csv("game_calibration.csv", "game", cfg, &rows)?;
            let times: Vec<_> = runs.into_iter().map(|(_, t)| t).collect();
            gap_index(&times, gc.t_budget, n_rows).i_star
        }
    };
    if i_star + 1 >= params.n_terms {
        bail!("game.i_star = {i_star} leaves no successor term (N = {})", params.n_terms);
    }
    let red = Reduction::new(alg, &params, i_star, n_rows, gc.t_budget, stream_seed(cfg.seed, "public"));
    let gp = red.game_params::<f64>()?;
    let (logs, summary) = run_reduction_trials::<f64, _>(&red, &gp, gc.trials, stream_seed(cfg.seed, "game"))?;
    let rows: Vec<GameRow> = logs.iter().map(GameRow::from_log).collect();
    dir.write_csv("game_trials.csv", "game", cfg, &rows)?;
    dir.write_json(
        "game_summary.json",
        "game",
        cfg,
        &serde_json::json!({ "i_star": i_star, "n_rows": n_rows, "game": gp, "summary": summary }),
    )?;
    let (lo, hi) = summary.joint.ci95;
    let within = summary.success.rate >= lo && summary.success.rate <= hi;
    let checks = vec![
        Check::new("message length is kd", summary.message_bits_exact.to_string(), format!("{} bits", gp.message_bits()), summary.message_bits_exact),
        Check::new("referee re-check", summary.referee_recheck.to_string(), "true", summary.referee_recheck),
        Check::new(
            "success rate within joint-event 95% interval",
            format!("{:.4} in [{lo:.4}, {hi:.4}]", summary.success.rate),
            "inside",
            within,
        ),
    ];
    finish("game", cfg, dir, checks)
}

pub fn cmd_encode(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let mc = &cfg.encode;
    let proto = MicroProtocol::new(mc.d, mc.n);
    let report = encode_micro(&proto, mc)?;
    let mut dir = OutDir::create(out)?;
    dir.write_csv("encode_sets.csv", "encode", cfg, &report.records)?;
    let mut summary = report.clone();
    summary.records.clear();
    dir.write_json("encode_report.json", "encode", cfg, &summary)?;
    let checks = vec![
        Check::new(
            "decomposition re-check",
            format!("{} failures of {} members", report.recheck_failures, report.recheck_members),
            "0 failures",
            report.recheck_failures == 0,
        ),
        Check::new(
            "counting inequality on emitted sets",
            format!("{} violations of {} sets", report.counting_violations, report.emitted_sets),
            "0 violations",
            report.counting_violations == 0,
        ),
    ];
    finish("encode", cfg, dir, checks)
}

/// Per-seed first hits for every (algorithm, d) pair of the frontier config.
pub struct FrontierData {
    pub rows: Vec<FrontierRow>,
    /// `(alg index, d, seed, hits per gap)`.
    pub per_seed: Vec<(usize, usize, u64, Vec<Option<usize>>)>,
}

pub fn frontier_seeds(cfg: &Config) -> Vec<u64> {
    let base = stream_seed(cfg.seed, "frontier");
    (0..cfg.frontier.seeds as u64).map(|i| sub_seed(base, i)).collect()
}

pub fn frontier_data(cfg: &Config) -> Result<FrontierData> {
    let fc = &cfg.frontier;
    if fc.algorithms.is_empty() || fc.dims.is_empty() || fc.seeds == 0 {
        bail!("frontier.algorithms, frontier.dims and frontier.seeds must be nonempty");
    }
    let seeds = frontier_seeds(cfg);
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for (ai, spec) in fc.algorithms.iter().enumerate() {
        for &d in &fc.dims {
            let p = cfg.instance.params_at(d)?;
            let s_bits = spec.build::<f64>(d).declared_size();
            let hits: Vec<Vec<Option<usize>>> = if fc.gaps.is_empty() {
                Vec::new()
            } else {
                seeds
                    .par_iter()
                    .map(|&seed| queries_to_gap::<f64>(spec, &p, seed, fc.t_budget, &fc.gaps))
                    .collect::<Result<_, _>>()?
            };
            rows.push(frontier_row(spec.label(), d, s_bits, seeds.len(), &hits, fc.gaps.len()));
            for (seed, h) in seeds.iter().zip(hits) {
                per_seed.push((ai, d, *seed, h));
            }
        }
    }
    Ok(FrontierData { rows, per_seed })
}

fn frontier_table(rows: &[FrontierRow], gaps: &[f64]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["alg", "d", "s_bits", "seeds"].map(String::from).to_vec();
    for g in gaps {
        header.push(format!("queries_to_gap_{g}"));
        header.push(format!("reached_{g}"));
    }
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.alg.clone(), r.d.to_string(), r.s_bits.to_string(), r.seeds.to_string()];
            for (q, n) in r.queries_to_gap.iter().zip(&r.reached) {
                v.push(opt_field(*q));
                v.push(n.to_string());
            }
            v
        })
        .collect();
    (header, body)
}

/// Share of seeds on which `fast` reaches the last gap threshold in strictly
/// fewer queries than `slow` (never reaching counts as infinitely many).
pub fn win_rate(data: &FrontierData, fast: usize, slow: usize, d: usize) -> Option<f64> {
    let pick = |a: usize| -> Vec<(u64, Option<usize>)> {
        data.per_seed
            .iter()
            .filter(|(ai, dd, _, _)| *ai == a && *dd == d)
            .map(|(_, _, s, h)| (*s, h.last().copied().flatten()))
            .collect()
    };
    let (f, s) = (pick(fast), pick(slow));
    if f.is_empty() || f.len() != s.len() {
        return None;
    }
    let wins = f
        .iter()
        .zip(&s)
        .filter(|((_, a), (_, b))| match (a, b) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    Some(rate(wins, f.len()))
}

pub fn cmd_frontier(cfg: &Config, out: &Path) -> Result<CommandReport> {
    let fc = &cfg.frontier;
    let data = frontier_data(cfg)?;
    let mut dir = OutDir::create(out)?;
    let (header, body) = frontier_table(&data.rows, &fc.gaps);
    dir.write_records("frontier.csv", "frontier", cfg, &header, &body)?;
    let mut seed_header: Vec<String> = ["alg", "d", "seed"].map(String::from).to_vec();
    seed_header.extend(fc.gaps.iter().map(|g| format!("queries_to_gap_{g}")));
    let seed_rows: Vec<Vec<String>> = data
        .per_seed
        .iter()
        .map(|(ai, d, seed, h)| {
            let mut v = vec![fc.algorithms[*ai].label().to_string(), d.to_string(), seed.to_string()];
            v.extend(h.iter().map(|q| opt_field(*q)));
            v
        })
        .collect();
    dir.write_records("frontier_seeds.csv", "frontier", cfg, &seed_header, &seed_rows)?;

    let mut checks = Vec::new();
    let ell = fc.algorithms.iter().position(|a| matches!(a, AlgorithmSpec::Ellipsoid));
    let sgd = fc.algorithms.iter().position(|a| matches!(a, AlgorithmSpec::Subgradient { .. }));
    if let (Some(e), Some(s), false) = (ell, sgd, fc.gaps.is_empty()) {
        for &d in &fc.dims {
            let s_e = fc.algorithms[e].build::<f64>(d).declared_size();
            let s_s = fc.algorithms[s].build::<f64>(d).declared_size();
            let w = win_rate(&data, e, s, d).unwrap_or(0.0);
            let pass = w >= fc.min_win_rate && s_e > s_s;
            checks.push(Check::new(
                format!("d={d} ellipsoid faster with larger S"),
                format!("win rate {w:.4}, S {s_e} vs {s_s}"),
                format!(">= {}", fc.min_win_rate),
                pass,
            ));
        }
    }
    finish("frontier", cfg, dir, checks)
}

/// Ordering and ε-success rows for `runs` seeded trials; shared by `verify`.
pub fn trial_rows(spec: &AlgorithmSpec, cfg: &Config, d: usize, runs: usize, t_budget: usize, label: &str) -> Result<Vec<(mqlab_core::instrument::CorrelationTimes, TrialRow)>> {
    let params = cfg.instance.params_at(d)?;
    let base = stream_seed(cfg.seed, label);
    (0..runs as u64)
        .into_par_iter()
        .map(|i| Ok(run_trial::<f64>(spec, &params, sub_seed(base, i), t_budget)?))
        .collect()
}

/// Ordered share of a batch of trial rows.
pub fn ordered_rate(rows: &[(mqlab_core::instrument::CorrelationTimes, TrialRow)]) -> f64 {
    rate(rows.iter().filter(|(t, _)| check_ordering(t).ordered).count(), rows.len())
}
