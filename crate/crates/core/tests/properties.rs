use mvperiodic_core::coupling::{concave_distance, cutoff_phi, reflection_matrix};
use mvperiodic_core::ips::{em_step, Integrator};
use mvperiodic_core::metrics::{coupling_bound_check, wasserstein_1d, wasserstein_assignment, EmpiricalMeasure};
use mvperiodic_core::noise::Driver;
use mvperiodic_core::{tree_sum, Ensemble, InitLaw, NoiseBundle, Scenario, TimeGrid};
use proptest::prelude::*;

fn cloud(max_n: usize, d: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(move |n| (Just(n), prop::collection::vec(-5.0..5.0f64, n * d)))
}

/// Minimal matching cost over all permutations.
fn brute_force_cost(p: &[f64], q: &[f64], d: usize, order: i32) -> f64 {
    let n = p.len() / d;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let cost: f64 = (0..n)
            .map(|i| {
                let sq: f64 = (0..d).map(|c| (p[i * d + c] - q[perm[i] * d + c]).powi(2)).sum();
                sq.sqrt().powi(order)
            })
            .sum::<f64>()
            / n as f64;
        best = best.min(cost);
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    best.powf(1.0 / order as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_brute_force(d in 1usize..=3, p in cloud(6, 3), q_seed in prop::collection::vec(-5.0..5.0f64, 18)) {
        let (n, p) = p;
        let p = p[..n * d].to_vec();
        let q = q_seed[..n * d].to_vec();
        let (mp, mq) = (EmpiricalMeasure::new(n, d, p.clone()).unwrap(), EmpiricalMeasure::new(n, d, q.clone()).unwrap());
        for order in [1u32, 2] {
            let exact = wasserstein_assignment(&mp, &mq, order).unwrap();
            let brute = brute_force_cost(&p, &q, d, order as i32);
            prop_assert!((exact - brute).abs() <= 1e-12 * (1.0 + brute), "{exact} vs {brute}");
        }
    }

    #[test]
    fn metric_axioms(d in 1usize..=3, a in cloud(8, 3), b in prop::collection::vec(-5.0..5.0f64, 24), c in prop::collection::vec(-5.0..5.0f64, 24)) {
        let (n, a) = a;
        let m = |v: &[f64]| EmpiricalMeasure::new(n, d, v[..n * d].to_vec()).unwrap();
        let (p, q, r) = (m(&a), m(&b), m(&c));
        for order in [1u32, 2] {
            let pq = wasserstein_assignment(&p, &q, order).unwrap();
            prop_assert!(wasserstein_assignment(&p, &p, order).unwrap().abs() <= 1e-12);
            prop_assert!(pq >= 0.0);
            prop_assert!((pq - wasserstein_assignment(&q, &p, order).unwrap()).abs() <= 1e-12);
            let via = wasserstein_assignment(&p, &r, order).unwrap() + wasserstein_assignment(&r, &q, order).unwrap();
            prop_assert!(pq <= via + 1e-12);
        }
    }

    #[test]
    fn sorted_and_assignment_agree_in_one_dimension(p in prop::collection::vec(-5.0..5.0f64, 1..40), shift in -2.0..2.0f64, scale in 0.1..3.0f64) {
        let q: Vec<f64> = p.iter().rev().map(|x| scale * x + shift).collect();
        let (mp, mq) = (EmpiricalMeasure::from_1d(&p).unwrap(), EmpiricalMeasure::from_1d(&q).unwrap());
        for order in [1u32, 2] {
            let diff = wasserstein_1d(&mp, &mq, order).unwrap() - wasserstein_assignment(&mp, &mq, order).unwrap();
            prop_assert!(diff.abs() <= 1e-12);
        }
    }

    #[test]
    fn index_pairing_is_a_coupling(d in 1usize..=3, x in cloud(8, 3), y in prop::collection::vec(-5.0..5.0f64, 24)) {
        let (n, x) = x;
        let ex = Ensemble::new(n, d, x[..n * d].to_vec(), 0).unwrap();
        let ey = Ensemble::new(n, d, y[..n * d].to_vec(), 0).unwrap();
        prop_assert!(coupling_bound_check(&ex, &ey).unwrap());
    }

    #[test]
    fn reflection_is_an_orthogonal_involution(z in prop::collection::vec(-10.0..10.0f64, 1..6)) {
        prop_assume!(z.iter().any(|v| v.abs() > 1e-6));
        let d = z.len();
        let m = reflection_matrix(&z);
        let scale = z.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..d {
            for j in 0..d {
                prop_assert!((m[i * d + j] - m[j * d + i]).abs() <= 1e-15);
                let sq: f64 = (0..d).map(|k| m[i * d + k] * m[k * d + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((sq - target).abs() <= 1e-12);
            }
            let mz: f64 = (0..d).map(|k| m[i * d + k] * z[k]).sum();
            prop_assert!((mz + z[i]).abs() <= 1e-12 * scale);
        }
        let trace: f64 = (0..d).map(|i| m[i * d + i]).sum();
        prop_assert!((trace - (d as f64 - 2.0)).abs() <= 1e-12);
    }

    #[test]
    fn cutoff_is_monotone_between_zero_and_one(eps in 1e-3..10.0f64, u in 0.0..1.5f64, v in 0.0..1.5f64) {
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        let (a, b) = (cutoff_phi(eps, lo * eps).unwrap(), cutoff_phi(eps, hi * eps).unwrap());
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(a <= b + 1e-15);
    }

    #[test]
    fn concave_distance_is_increasing_concave_and_comparable(c1 in 1e-3..1.0f64, c2 in 1e-2..10.0f64, r in 0.0..50.0f64, h in 1e-3..1.0f64) {
        let f = |x: f64| concave_distance(c1, c2, x).unwrap();
        prop_assert!(f(r + h) > f(r));
        prop_assert!(f(r) + f(r + 2.0 * h) <= 2.0 * f(r + h) + 1e-12 * (1.0 + f(r + 2.0 * h)));
        prop_assert!(c1 * r <= f(r) + 1e-15 && f(r) <= (c1 + 1.0) * r + 1e-15);
    }

    #[test]
    fn shifted_noise_reads_later_increments(seed in any::<u64>(), m in -3i64..4, k in -50i64..50, particle in 0usize..100) {
        let bundle = NoiseBundle::new(seed, 2, 1e-2);
        let period = 10;
        let shifted = bundle.shifted(m, period);
        prop_assert_eq!(shifted.increment(Driver::W, particle, k), bundle.increment(Driver::W, particle, k + m * period as i64));
        let back = shifted.shifted(-m, period);
        prop_assert_eq!(back.increment(Driver::B, particle, k), bundle.increment(Driver::B, particle, k));
        // shifted Brownian value equals an increment of the source path
        let base = m * period as i64;
        let expected = if k >= 0 {
            bundle.increment_sum(Driver::W, particle, base, base + k)
        } else {
            bundle.increment_sum(Driver::W, particle, base + k, base).iter().map(|v| -v).collect()
        };
        prop_assert_eq!(shifted.brownian_value(Driver::W, particle, k), expected);
    }

    #[test]
    fn tree_sum_is_close_to_naive(v in prop::collection::vec(-1e3..1e3f64, 0..300)) {
        let naive: f64 = v.iter().sum();
        let bound: f64 = v.iter().map(|x| x.abs()).sum::<f64>() * 1e-13;
        prop_assert!((tree_sum(&v) - naive).abs() <= bound + 1e-300);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Without noise, relabelling the particles relabels the output.
    #[test]
    fn drift_step_is_exchangeable(seed in any::<u64>(), which in 0usize..4, rotate in 1usize..15) {
        let name = ["mv_ou_periodic", "piecewise_k1", "double_well_partial", "truncated_ou"][which];
        let s = Scenario::builtin_default(name).unwrap();
        let grid = TimeGrid::aligned(s.tau(), 1e-2, 1.0, 0.0).unwrap();
        let ens = InitLaw::Gaussian { mean: vec![0.0; s.dim()], sd: 1.0 }.sample(16, seed, 0, 3).unwrap();
        let d = s.dim();
        let rows: Vec<Vec<f64>> = ens.rows().map(|r| r.to_vec()).collect();
        let mut rotated = rows.clone();
        rotated.rotate_left(rotate);
        let silent = NoiseBundle::silent(d, grid.dt);
        let out = em_step(&s, &grid, &ens, &silent).unwrap();
        let out_rot = em_step(&s, &grid, &Ensemble::from_rows(&rotated, 3).unwrap(), &silent).unwrap();
        for i in 0..16 {
            let j = (i + rotate) % 16;
            for c in 0..d {
                prop_assert!((out_rot.particle(i)[c] - out.particle(j)[c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_bit_exactly(seed in any::<u64>(), which in 0usize..4) {
        let name = ["mv_ou_periodic", "piecewise_k1", "double_well_partial", "truncated_ou"][which];
        let s = Scenario::builtin_default(name).unwrap();
        let grid = TimeGrid::aligned(s.tau(), 1e-2, 1.0, 0.0).unwrap();
        let init = InitLaw::Gaussian { mean: vec![0.0; s.dim()], sd: 0.5 }.sample(40, seed, 0, 0).unwrap();
        let run = || Integrator::new(&s, &grid, &NoiseBundle::new(seed, s.dim(), grid.dt)).run(&init, 50, &[10, 50]).unwrap();
        prop_assert_eq!(run(), run());
    }

    /// Running on `[τ, τ + T]` with `ω` equals running on `[0, T]` with the
    /// Wiener-shifted path, exactly.
    #[test]
    fn period_shift_identity_holds_bit_exactly(seed in any::<u64>(), which in 0usize..4, periods in 1i64..3) {
        let name = ["mv_ou_periodic", "piecewise_k1", "double_well_partial", "truncated_ou"][which];
        let s = Scenario::builtin_default(name).unwrap();
        let grid = TimeGrid::aligned(s.tau(), 1e-2, 2.0, 0.0).unwrap();
        let m = grid.period_steps as i64;
        let noise = NoiseBundle::new(seed, s.dim(), grid.dt);
        let shifted = noise.shifted(periods, grid.period_steps);
        let late = InitLaw::Gaussian { mean: vec![0.0; s.dim()], sd: 0.5 }.sample(24, seed, 0, periods * m).unwrap();
        let mut early = late.clone();
        early.time_index = 0;
        let a = Integrator::new(&s, &grid, &noise).run_to_end(&late, 150).unwrap();
        let b = Integrator::new(&s, &grid, &shifted).run_to_end(&early, 150).unwrap();
        prop_assert_eq!(a.states(), b.states());
    }
}
