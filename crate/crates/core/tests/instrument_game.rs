use mqlab_core::game::{
    estimate_success, normalize_output, play, run_reduction_trials, sample_game_input, summarize, Entry, GameError,
    GameParams, Protocol, Reduction, TrialLog,
};
use mqlab_core::instance::{derive_params, HardInstance, Params, Profile};
use mqlab_core::instrument::{
    check_ordering, correlation_times, reference_optimum, success_at, InstrumentError, NEVER,
};
use mqlab_core::linalg::{norm2, SignMatrix};
use mqlab_core::optimizer::{ellipsoid_method, run, MemoryState, Message, RoundRecord, Transcript};
use mqlab_core::oracle::Provenance;

mod common;
use common::{dense, ip, project_out_rows};

fn desk(d: usize) -> Params {
    derive_params(d, 0.5, &Profile::desk()).unwrap()
}

/// Quadratic rescan: for each term, walk the whole transcript from the start.
fn naive_times(tr: &Transcript<f64>, inst: &HardInstance<f64>) -> Vec<usize> {
    let p = inst.params();
    let a = dense(inst.a_matrix());
    let sd = (p.d as f64).sqrt();
    (0..p.n_terms)
        .map(|i| {
            let v: Vec<f64> = (0..p.d).map(|c| f64::from(inst.nemirovski_signs().get(i, c)) / sd).collect();
            for r in &tr.rounds {
                let row_max = a.iter().map(|row| ip(row, &r.x).abs()).fold(0.0, f64::max);
                if row_max <= p.xi && ip(&v, &r.x).abs() >= p.gamma / 4.0 {
                    return r.t;
                }
            }
            NEVER
        })
        .collect()
}

fn handmade(inst: &HardInstance<f64>, xs: Vec<Vec<f64>>) -> Transcript<f64> {
    let rounds = xs
        .into_iter()
        .enumerate()
        .map(|(i, x)| RoundRecord { t: i + 1, x, value: 0.0, provenance: Provenance::Other, state_bits: 0 })
        .collect::<Vec<_>>();
    Transcript {
        instance_ref: Some(inst.instance_ref()),
        algorithm: "handmade".into(),
        declared_size: 0,
        t_budget: rounds.len(),
        seed: 0,
        final_output: rounds.last().map(|r| r.x.clone()).unwrap_or_default(),
        rounds,
    }
}

/// Unit vector in the orthogonal complement of the rows, aligned with `vᵢ`.
fn aligned(inst: &HardInstance<f64>, i: usize) -> Vec<f64> {
    let r = project_out_rows(&dense(inst.a_matrix()), &inst.nemirovski_vectors()[i]);
    let n = norm2(&r);
    r.iter().map(|c| c / n).collect()
}

#[test]
fn correlation_times_match_a_rescan_on_optimizer_runs() {
    let p = desk(16);
    let mut finite = 0;
    for seed in 0..20 {
        let inst = HardInstance::<f64>::sample(&p, seed).unwrap();
        let tr = run(&ellipsoid_method(16), &inst, 3000, seed).unwrap();
        let got = correlation_times(&tr, &inst).unwrap();
        assert_eq!(got.times, naive_times(&tr, &inst), "seed {seed}");
        finite += got.times.iter().filter(|&&t| t != NEVER).count();
    }
    assert!(finite > 0, "no finite times, the comparison is vacuous");
}

#[test]
fn handmade_transcripts() {
    let p = desk(16);
    let inst = HardInstance::<f64>::sample(&p, 5).unwrap();
    let zero = vec![0.0; 16];

    let tr = handmade(&inst, vec![zero.clone(); 10]);
    assert!(correlation_times(&tr, &inst).unwrap().all_infinite());

    // the second term is hit first: an ordering violation at index 1
    let tr = handmade(&inst, vec![aligned(&inst, 1), zero.clone(), aligned(&inst, 0)]);
    let times = correlation_times(&tr, &inst).unwrap();
    assert_eq!(times.times, naive_times(&tr, &inst));
    assert_eq!(times.times[1], 1);
    assert_eq!(times.witness_queries[1], Some(0));
    let ord = check_ordering(&times);
    assert!(!ord.ordered);
    assert_eq!(ord.first_violation, Some(1));

    let other = HardInstance::<f64>::sample(&p, 6).unwrap();
    assert!(matches!(correlation_times(&tr, &other), Err(InstrumentError::InstanceMismatch { .. })));
}

#[test]
fn reference_point_recomputed_with_an_explicit_projector() {
    for d in [8usize, 16, 32] {
        let p = desk(d);
        let inst = HardInstance::<f64>::sample(&p, d as u64).unwrap();
        let r = reference_optimum(&inst).unwrap();
        let a = dense(inst.a_matrix());
        let mut x = vec![0.0; d];
        for v in inst.nemirovski_vectors() {
            for (xi, c) in x.iter_mut().zip(project_out_rows(&a, v)) {
                *xi += c;
            }
        }
        let s = -1.0 / ((p.n_terms as f64).sqrt() * p.log_d());
        x.iter_mut().for_each(|c| *c *= s);
        if norm2(&x) > 1.0 {
            let n = norm2(&x);
            x.iter_mut().for_each(|c| *c /= n);
        }
        for (a, b) in r.point.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9, "d={d}");
        }
        assert!(r.row_residual <= 1e-8);
        assert_eq!(r.projector_rank, d / 2);
        let at_ref = success_at(&inst, &r.point, &r);
        assert_eq!(at_ref.gap, 0.0);
        assert!(at_ref.success);
    }
}

// ---------------------------------------------------------------------------

struct Fixed {
    bits: usize,
    out: fn(&[i8]) -> Vec<f64>,
    rows: fn(&SignMatrix) -> Vec<Entry>,
}

impl Protocol<f64> for Fixed {
    fn alice_round1(&self, _a: &SignMatrix) -> Message {
        MemoryState::zeros(self.bits)
    }
    fn alice_round3(&self, a: &SignMatrix, _v: &[i8]) -> Vec<Entry> {
        (self.rows)(a)
    }
    fn bob_output(&self, _m: &Message, v: &[i8], _rows: &[Entry]) -> Vec<f64> {
        (self.out)(v)
    }
}

fn output_v(v: &[i8]) -> Vec<f64> {
    let s = (v.len() as f64).sqrt();
    v.iter().map(|&c| f64::from(c) / s).collect()
}

fn no_rows(_a: &SignMatrix) -> Vec<Entry> {
    Vec::new()
}

fn gp8() -> GameParams {
    // 2/√8 < ξ, so rows with |⟨a, v⟩| ≤ 2 count as orthogonal to v/√8
    GameParams { d: 8, k_msg: 1, n_rows: 4, s_corr: 1.0, xi: 0.75 }
}

#[test]
fn outputting_v_succeeds_exactly_when_v_is_orthogonal() {
    let gp = gp8();
    let proto = Fixed { bits: 8, out: output_v, rows: no_rows };
    let est = estimate_success(&proto, &gp, 2000, 9).unwrap();
    let orth = (0..2000u64)
        .filter(|&i| {
            let (a, v) = sample_game_input(&gp, 9, i);
            let x = output_v(&v);
            dense(&a).iter().all(|r| ip(r, &x).abs() <= gp.xi)
        })
        .count();
    assert_eq!(est.successes, orth);
    // P(|row sum| ≤ 2)⁴ = (182/256)⁴ ≈ 0.255
    assert!((est.rate - 0.255).abs() < 0.04, "{}", est.rate);
    let (a, v) = sample_game_input(&gp, 9, 0);
    assert!(play(&proto, &a, &v, &gp).unwrap().correlated);
    assert_eq!(est, estimate_success(&proto, &gp, 2000, 9).unwrap());
}

#[test]
fn always_failing_protocol() {
    let proto = Fixed { bits: 8, out: |v| vec![0.0; v.len()], rows: no_rows };
    let est = estimate_success(&proto, &gp8(), 100, 1).unwrap();
    assert_eq!(est.rate, 0.0);
    assert_eq!(est.ci95.0, 0.0);
    assert!((est.ci95.1 - 0.036).abs() < 1e-3);
}

#[test]
fn non_rows_are_caught_by_the_referee() {
    let flipped = |a: &SignMatrix| {
        let mut r = a.row(0).to_vec();
        r[0] = -r[0];
        vec![None, Some(r)]
    };
    let proto = Fixed { bits: 8, out: output_v, rows: flipped };
    let gp = gp8();
    let (a, v) = (0..)
        .map(|i| sample_game_input(&gp, 2, i))
        .find(|(a, _)| !a.contains_row(&flipped(a)[1].clone().unwrap()))
        .unwrap();
    assert_eq!(play(&proto, &a, &v, &gp), Err(GameError::RowNotInMatrix { index: 1 }));
}

#[test]
fn normalized_boundary_output_scales_correlation() {
    // ‖x‖ = 1/2 sits just above √(s/d); at exact equality rounding in ‖x‖
    // decides the branch
    let gp = GameParams { d: 8, k_msg: 1, n_rows: 4, s_corr: 2.0 - 1e-9, xi: 1.0 };
    let half = |v: &[i8]| output_v(v).iter().map(|c| c * 0.5).collect();
    let raw = Fixed { bits: 8, out: half, rows: no_rows };
    let (a, v) = sample_game_input(&gp, 4, 0);
    let before = play(&raw, &a, &v, &gp).unwrap();
    let (wrapped, target) = normalize_output(Fixed { bits: 8, out: half, rows: no_rows }, &gp);
    let after = play(&wrapped, &a, &v, &target).unwrap();
    assert!((after.correlation - 2.0 * before.correlation).abs() < 1e-12);
    assert!((target.xi - 8f64.sqrt()).abs() < 1e-12);
}

fn small_reduction(t_budget: usize) -> (Reduction<mqlab_core::optimizer::Ellipsoid>, GameParams) {
    let p = desk(8);
    let red = Reduction::new(ellipsoid_method(8), &p, 0, 200, t_budget, 7);
    let gp = red.game_params::<f64>().unwrap();
    (red, gp)
}

#[test]
fn unreached_correlation_time_fails_gracefully() {
    let (red, gp) = small_reduction(1);
    let (a, v) = sample_game_input(&gp, 3, 0);
    let tr = red.trace::<f64>(&a, &v, &gp).unwrap();
    assert_eq!(tr.t_istar, None);
    assert_eq!(tr.message_bits, gp.message_bits());
    assert!(!tr.outcome.success && !tr.joint);
    assert_eq!(tr.outcome.correlation, 0.0);
}

#[test]
fn reduction_log_reaggregates_and_replays_faithfully() {
    let (red, gp) = small_reduction(3000);
    assert_eq!(gp.message_bits(), 64 * (8 + 64));
    let (logs, summary) = run_reduction_trials::<f64, _>(&red, &gp, 12, 5).unwrap();
    let text: String = logs.iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    let back: Vec<TrialLog> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(summarize(&back, &gp), summary);
    assert!(summary.message_bits_exact && summary.referee_recheck);
    for l in &logs {
        if l.t_istar.is_some() && l.prefix_agrees {
            assert_eq!(l.mismatch_rounds, 0, "trial {}", l.trial);
        }
        let (a, v) = sample_game_input(&gp, 5, l.trial);
        assert_eq!(play::<f64, _>(&red, &a, &v, &gp).unwrap().success, l.success);
    }
}
