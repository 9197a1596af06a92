use std::path::Path;
use std::process::Command as Proc;

use mqlab::commands::{frontier_seeds, GameRow, RunRow};
use mqlab::config::Config;
use mqlab::output::read_csv;
use mqlab::verify::SuiteLine;
use mqlab::{dispatch, Command};
use mqlab_core::encoding::EncodingError;
use mqlab_core::game::{summarize, GameError, GameParams, TrialLog};
use mqlab_core::instance::HardInstance;
use mqlab_core::optimizer::measure_frontier;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 5
[instance]
d = 16
[run]
t_budget = 2000
trials = 3
transcripts = 1
[game]
t_budget = 3000
trials = 4
calibration_trials = 4
[frontier]
dims = [16]
seeds = 3
t_budget = 2000
gaps = [0.02, 0.005]
min_win_rate = 0.5
[verify]
oracle_dims = [8]
oracle_points = 10
oracle_probes = 10
convexity_checks = 100
reference_d = 16
reference_seeds = 4
ordering_d = 16
ordering_runs = 3
ordering_t_budget = 2000
gap_d = 16
gap_runs = 3
gap_t_budget = 2000
khintchine_trials = 2000
projection_d = 16
projection_rank = 2
projection_trials = 1000
rli_sequences = 2
"#;

fn small() -> Config {
    Config::parse(SMALL).unwrap().resolved(None)
}

fn with(extra: &str) -> Config {
    // later tables override nothing, so patch by re-parsing a merged document
    let mut base: toml::Table = toml::from_str(SMALL).unwrap();
    let patch: toml::Table = toml::from_str(extra).unwrap();
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => b.extend(p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    Config::parse(&toml::to_string(&base).unwrap()).unwrap().resolved(None)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_a_loadable_instance() {
    let dir = TempDir::new().unwrap();
    let cfg = small();
    let rep = dispatch(Command::Gen, &cfg, dir.path()).unwrap();
    assert!(rep.passed());
    let back = HardInstance::<f64>::from_bytes(&std::fs::read(dir.path().join("instance.mtin")).unwrap()).unwrap();
    assert_eq!(back, HardInstance::<f64>::sample(&cfg.instance.params().unwrap(), 5).unwrap());
    let doc = json(&dir.path().join("instance.json"));
    assert_eq!(doc["command"], "gen");
    assert_eq!(HardInstance::<f64>::from_json(&doc["result"]).unwrap(), back);
    let report = std::fs::read_to_string(dir.path().join("gen_report.txt")).unwrap();
    assert!(report.starts_with("# mqlab gen seed=5\n# config="));
}

#[test]
fn odd_dimension_is_rejected() {
    let dir = TempDir::new().unwrap();
    let err = dispatch(Command::Gen, &with("[instance]\nd = 7"), dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains('7'), "{err:#}");
}

#[test]
fn run_on_a_saved_instance() {
    let dir = TempDir::new().unwrap();
    dispatch(Command::Gen, &small(), dir.path()).unwrap();
    let file = dir.path().join("instance.mtin");
    let cfg = with(&format!("[run]\ninstance_file = {:?}", file.to_str().unwrap()));
    let out = dir.path().join("run");
    dispatch(Command::Run, &cfg, &out).unwrap();
    let rows: Vec<RunRow> = read_csv(&out.join("run_trials.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(out.join("transcript_0000.jsonl").exists());
    assert!(!out.join("transcript_0001.jsonl").exists());
    let first = std::fs::read_to_string(out.join("transcript_0000.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(header["kind"], "header");
    assert_eq!(first.lines().count(), 2000 + 2);
}

#[test]
fn missing_instance_file_is_an_error() {
    let dir = TempDir::new().unwrap();
    let err = dispatch(Command::Run, &with("[run]\ninstance_file = \"/nonexistent/x.mtin\""), dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("/nonexistent/x.mtin"));
}

#[test]
fn wrong_message_factor_is_rejected() {
    let dir = TempDir::new().unwrap();
    let err = dispatch(Command::Game, &with("[game]\nk_msg = 3"), dir.path()).unwrap_err();
    let s = 64 * (16 + 256);
    assert_eq!(err.downcast_ref::<GameError>(), Some(&GameError::MessageLengthViolation { got: s, want: 48 }));
}

#[test]
fn game_summary_can_be_rebuilt_from_the_csv() {
    let dir = TempDir::new().unwrap();
    let rep = dispatch(Command::Game, &small(), dir.path()).unwrap();
    assert_eq!(rep.checks.len(), 3);
    let doc = json(&dir.path().join("game_summary.json"));
    let gp: GameParams = serde_json::from_value(doc["result"]["game"].clone()).unwrap();
    let rows: Vec<GameRow> = read_csv(&dir.path().join("game_trials.csv")).unwrap();
    let logs: Vec<TrialLog> = rows.iter().map(|r| r.to_log().unwrap()).collect();
    assert_eq!(logs.len(), 4);
    assert_eq!(serde_json::to_value(summarize(&logs, &gp)).unwrap(), doc["result"]["summary"]);
    let calib = std::fs::read_to_string(dir.path().join("game_calibration.csv")).unwrap();
    assert_eq!(calib.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
}

#[test]
fn verify_rejects_empty_suites() {
    let dir = TempDir::new().unwrap();
    assert!(dispatch(Command::Verify, &with("[verify]\noracle_points = 0"), dir.path()).is_err());
}

#[test]
fn verify_summary_agrees_with_the_raw_tables() {
    let dir = TempDir::new().unwrap();
    let rep = dispatch(Command::Verify, &small(), dir.path()).unwrap();
    let lines: Vec<SuiteLine> = read_csv(&dir.path().join("verify_summary.csv")).unwrap();
    assert_eq!(lines.len(), rep.checks.len());
    for l in &lines {
        let raw = dir.path().join(format!("verify_{}.csv", l.suite));
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&raw).unwrap();
        let header = r.headers().unwrap().clone();
        let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        if l.suite.starts_with("ordering.") {
            let c = col("ordered").unwrap();
            assert_eq!(recs.len(), l.trials);
            assert_eq!(recs.iter().filter(|x| &x[c] == "false").count(), l.failures);
        } else if l.suite == "rli_orthonormal" {
            let c = col("verified").unwrap();
            assert_eq!(recs.iter().filter(|x| &x[c] != "true").count(), l.failures);
        } else if l.suite == "khintchine" {
            let c = col("within").unwrap();
            assert_eq!(recs.iter().filter(|x| &x[c] != "true").count(), l.failures);
        } else if l.suite == "reference_optimum" {
            assert_eq!(recs.len(), l.trials);
            let res = col("row_residual").unwrap();
            assert!(recs.iter().all(|x| x[res].parse::<f64>().unwrap() <= 1e-8));
        }
    }
}

#[test]
fn encode_cap_error_names_the_loop() {
    let dir = TempDir::new().unwrap();
    let err = dispatch(Command::Encode, &with("[encode]\ns1 = 2\ncap = 50.0"), dir.path()).unwrap_err();
    match err.downcast_ref::<EncodingError>() {
        Some(EncodingError::CapExceeded { stage, .. }) => assert_eq!(stage, "A_{h,1}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn frontier_table_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let cfg = small();
    dispatch(Command::Frontier, &cfg, dir.path()).unwrap();
    let params = vec![cfg.instance.params_at(16).unwrap()];
    let rows = measure_frontier::<f64>(
        &cfg.frontier.algorithms,
        &params,
        &frontier_seeds(&cfg),
        cfg.frontier.t_budget,
        &cfg.frontier.gaps,
    )
    .unwrap();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(dir.path().join("frontier.csv")).unwrap();
    let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), rows.len());
    for (rec, row) in recs.iter().zip(&rows) {
        assert_eq!(&rec[0], row.alg);
        assert_eq!(rec[2].parse::<usize>().unwrap(), row.s_bits);
        for (g, q) in row.queries_to_gap.iter().enumerate() {
            assert_eq!(&rec[4 + 2 * g], q.map_or_else(|| "inf".to_string(), |v| v.to_string()));
        }
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_mqlab");
    let cfg = dir.path().join("c.toml");
    let status = |extra: &str| {
        std::fs::write(&cfg, format!("{SMALL}\n{extra}")).unwrap();
        Proc::new(bin)
            .args(["encode", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
            .output()
            .unwrap()
    };
    let ok = status("");
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("overall: PASS"));
    assert_eq!(status("[encode]\ncap = 1.0").status.code(), Some(2));
    assert_eq!(status("bogus_key = 1").status.code(), Some(2));

    let run_cfg = dir.path().join("r.toml");
    std::fs::write(&run_cfg, SMALL.replace("transcripts = 1", "transcripts = 0\nmin_success_rate = 1.5")).unwrap();
    let failing = Proc::new(bin)
        .args(["run", "--config", run_cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(failing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failing.stdout).contains("FAIL eps-success rate"));
}
