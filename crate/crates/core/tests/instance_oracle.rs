use mqlab_core::instance::{derive_params, DeskOverrides, HardInstance, Params, Profile, Term};
use mqlab_core::linalg::SignMatrix;
use mqlab_core::oracle::{first_order, random_ball_point, verify_subgradient, FirstOrderOracle, OracleAnswer, Provenance};
use mqlab_core::rng::rng_from_seed;
use proptest::prelude::*;

fn desk(d: usize) -> Params {
    derive_params(d, 0.5, &Profile::desk()).unwrap()
}

// Plain loops over dense copies of A and the vᵢ, kept apart from the library
// code paths on purpose.
struct Naive {
    a: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    l: f64,
    gamma: f64,
    d: usize,
}

impl Naive {
    fn of(inst: &HardInstance<f64>) -> Self {
        let d = inst.dim();
        let a = (0..inst.a_matrix().nrows())
            .map(|j| (0..d).map(|c| f64::from(inst.a_matrix().get(j, c))).collect())
            .collect();
        let s = (d as f64).sqrt();
        let v = (0..inst.nemirovski_signs().nrows())
            .map(|i| (0..d).map(|c| f64::from(inst.nemirovski_signs().get(i, c)) / s).collect())
            .collect();
        Naive { a, v, l: inst.params().l_scale, gamma: inst.params().gamma, d }
    }

    fn ip(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s
    }

    /// Value and expected subgradient under the documented tie rules.
    fn answer(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let sd = (self.d as f64).sqrt();
        let mut best = f64::NEG_INFINITY;
        let mut g = vec![0.0; self.d];
        for row in &self.a {
            let p = Self::ip(row, x);
            let val = self.l * p.abs() - 1.0;
            if val > best {
                best = val;
                let sign = if p < 0.0 { -1.0 } else { 1.0 };
                g = row.iter().map(|c| sign * c / sd).collect();
            }
        }
        for (i, v) in self.v.iter().enumerate() {
            let val = Self::ip(v, x) - (i + 1) as f64 * self.gamma;
            if val > best {
                best = val;
                g = v.iter().map(|c| c / (sd * self.l)).collect();
            }
        }
        (best / (sd * self.l), g)
    }
}

fn shrink(mut x: Vec<f64>, l: f64) -> Vec<f64> {
    let s = 1.0 / (l * (x.len() as f64).sqrt());
    x.iter_mut().for_each(|c| *c *= s);
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_matches_naive_loop(seed in 0u64..10_000, d in prop::sample::select(vec![4usize, 8, 16]), small in any::<bool>()) {
        let p = desk(d);
        let inst = HardInstance::<f64>::sample(&p, seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 0xABCD);
        let mut x: Vec<f64> = random_ball_point(d, &mut rng);
        if small {
            x = shrink(x, p.l_scale);
        }
        let naive = Naive::of(&inst);
        let (val, g) = naive.answer(&x);
        let ans = first_order(&inst, &x).unwrap();
        prop_assert!((ans.value - val).abs() <= 1e-12 * val.abs().max(1.0));
        for (a, b) in ans.subgradient.iter().zip(&g) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn subgradient_inequality_holds(seed in 0u64..10_000, small_x in any::<bool>(), small_y in any::<bool>()) {
        let d = 16;
        let p = desk(d);
        let inst = HardInstance::<f64>::sample(&p, seed).unwrap();
        let mut rng = rng_from_seed(seed.wrapping_mul(31));
        let mut x: Vec<f64> = random_ball_point(d, &mut rng);
        let mut y: Vec<f64> = random_ball_point(d, &mut rng);
        if small_x { x = shrink(x, p.l_scale); }
        if small_y { y = shrink(y, p.l_scale); }
        let ans = inst.answer(&x).unwrap();
        let fy = inst.eval_f(&y).unwrap().value;
        let lin: f64 = ans.value + ans.subgradient.iter().zip(y.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
        prop_assert!(fy >= lin - 1e-9);
    }

    #[test]
    fn binary_round_trip(seed in any::<u64>(), d in prop::sample::select(vec![4usize, 6, 10, 32])) {
        let inst = HardInstance::<f64>::sample(&desk(d), seed).unwrap();
        let back = HardInstance::<f64>::from_bytes(&inst.to_bytes()).unwrap();
        prop_assert_eq!(back, inst);
    }
}

#[test]
fn desk_parameters_at_d4() {
    let p = derive_params(4, 0.5, &Profile::DeskScale(DeskOverrides { l_scale: Some(64.0), ..Default::default() })).unwrap();
    assert_eq!(p.xi, 1.0 / 32.0);
    assert_eq!(p.eps, 1.0 / 1024.0);
}

#[test]
fn sampling_is_deterministic_and_seed_sensitive() {
    let p = desk(64);
    let a = HardInstance::<f64>::sample(&p, 17).unwrap();
    assert_eq!(a, HardInstance::<f64>::sample(&p, 17).unwrap());
    for s in 0..1000u64 {
        let x = HardInstance::<f64>::sample(&p, 2 * s).unwrap();
        let y = HardInstance::<f64>::sample(&p, 2 * s + 1).unwrap();
        assert_ne!(x.a_matrix(), y.a_matrix());
    }
}

#[test]
fn entry_marginal_is_balanced() {
    let p = desk(4);
    let plus = (0..10_000u64).filter(|&s| HardInstance::<f64>::sample(&p, s).unwrap().a_matrix().get(1, 2) == 1).count();
    let f = plus as f64 / 1e4;
    assert!((0.45..=0.55).contains(&f), "frequency {f}");
}

#[test]
fn origin_value_and_unit_row_value() {
    let p = desk(8);
    let inst = HardInstance::<f64>::sample(&p, 4).unwrap();
    let s = 1.0 / ((8f64).sqrt() * p.l_scale);
    let at0 = inst.eval_f(&[0.0; 8]).unwrap();
    assert!((at0.value + p.gamma * s).abs() < 1e-15);
    assert_eq!(at0.achieving_term, Term::Nem { index: 0 });
    let x: Vec<f64> = inst.a_matrix().row_as::<f64>(0).iter().map(|c| c / 8f64.sqrt()).collect();
    let r = inst.eval_f(&x).unwrap();
    assert_eq!(r.achieving_term, Term::Row { row: 0, sign: 1 });
    assert!((r.value - (p.l_scale * 8f64.sqrt() - 1.0) * s).abs() < 1e-12);
}

#[test]
fn duplicate_rows_pick_the_first() {
    let p = desk(8);
    let base = HardInstance::<f64>::sample(&p, 9).unwrap();
    let mut rows: Vec<Vec<i8>> = base.a_matrix().rows().map(|r| r.to_vec()).collect();
    rows[1] = rows[0].clone();
    let inst = HardInstance::from_parts(p.clone(), SignMatrix::from_rows(rows.clone(), 8), base.nemirovski_signs().clone(), 9);
    let x: Vec<f64> = rows[0].iter().map(|&c| f64::from(c) / 8f64.sqrt()).collect();
    assert_eq!(inst.answer(&x).unwrap().provenance, Provenance::Row { row: 0, sign: 1 });
}

#[test]
fn negated_subgradients_are_caught() {
    let d = 8;
    let p = desk(d);
    let mut caught = 0;
    for seed in 0..200u64 {
        let inst = HardInstance::<f64>::sample(&p, seed).unwrap();
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = random_ball_point(d, &mut rng);
        let ans = inst.answer(&x).unwrap();
        let bad = OracleAnswer { subgradient: ans.subgradient.iter().map(|g| -g).collect(), ..ans };
        if verify_subgradient(&inst, &x, &bad, 100, seed).unwrap().violations > 0 {
            caught += 1;
        }
    }
    assert!(caught as f64 / 200.0 >= 0.99, "caught {caught}");
}

#[test]
fn f32_and_f64_oracles_agree_on_provenance() {
    let p = desk(16);
    let i64_ = HardInstance::<f64>::sample(&p, 3).unwrap();
    let i32_ = HardInstance::<f32>::sample(&p, 3).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..200 {
        let x: Vec<f64> = random_ball_point(16, &mut rng);
        let x = x.iter().map(|c| c * 0.999).collect::<Vec<_>>();
        let xf: Vec<f32> = x.iter().map(|&c| c as f32).collect();
        let a = i64_.answer(&x).unwrap();
        let b = i32_.answer(&xf).unwrap();
        assert_eq!(a.provenance, b.provenance);
        assert!((a.value - f64::from(b.value)).abs() <= 1e-4 * a.value.abs().max(1e-6));
    }
}
