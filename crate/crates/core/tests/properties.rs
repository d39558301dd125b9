use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use repcost::baselines::fit_random_features;
use repcost::net::{Skip, DEGENERATE_TOL};
use repcost::oracle::{build_grid, solve_group_lasso, SolverConfig};
use repcost::pfunc::{
    matching_network_cost, neuron_cost, schatten1, stack_cost, PenaltyKind, PenaltyVariant, SkipPenalty,
};
use repcost::tasks::{gen_coupling_pair, gen_periodic7, gen_random, periodic7_target};
use repcost::train::{init, objective, train, TrainConfig};
use repcost::{Architecture, Dataset, InnerActivation, NetworkParams, SkipKind, StackParams};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn skip_kind(i: u8) -> SkipKind {
    [SkipKind::None, SkipKind::Linear, SkipKind::FactoredLinear][i as usize % 3]
}

/// Architectures with up to three stacks; parameters are drawn from the seed.
fn arch_strategy(max_dim: usize, max_width: usize) -> impl Strategy<Value = Architecture> {
    (1usize..=3)
        .prop_flat_map(move |s| {
            (
                prop::collection::vec(1..=max_dim, s + 1),
                prop::collection::vec(1..=max_width, s),
                prop::collection::vec(0u8..3, s),
                any::<bool>(),
            )
        })
        .prop_map(|(dims, widths, skips, relu)| {
            let inner = if relu { InnerActivation::Relu } else { InnerActivation::Identity };
            Architecture::new(dims, widths, inner, skips.into_iter().map(skip_kind).collect()).unwrap()
        })
}

fn random_params(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkParams::zeros(arch);
    let flat: Vec<f64> = (0..net.num_params()).map(|_| normal(&mut rng)).collect();
    net.set_flat(&flat).unwrap();
    net
}

fn random_inputs(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    (0..count).map(|_| DVector::from_fn(d, |_, _| 2.0 * normal(&mut rng))).collect()
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

/// Forward pass written with explicit scalar loops.
fn naive_forward(net: &NetworkParams, arch: &Architecture, x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    for (j, s) in net.stacks.iter().enumerate() {
        if j > 0 && arch.inner_activation == InnerActivation::Relu {
            for t in z.iter_mut() {
                *t = t.max(0.0);
            }
        }
        let d_next = s.c.len();
        let mut out = vec![0.0; d_next];
        for i in 0..d_next {
            out[i] = s.c[i];
        }
        for k in 0..s.b.len() {
            let mut pre = s.b[k];
            for (l, zl) in z.iter().enumerate() {
                pre += s.v[(k, l)] * zl;
            }
            let h = if pre > 0.0 { pre } else { 0.0 };
            for i in 0..d_next {
                out[i] += s.w[(i, k)] * h;
            }
        }
        match &s.skip {
            None => {}
            Some(Skip::Linear(a)) => {
                for i in 0..d_next {
                    for (l, zl) in z.iter().enumerate() {
                        out[i] += a[(i, l)] * zl;
                    }
                }
            }
            Some(Skip::Factored { outer, inner }) => {
                let m = inner.nrows();
                let mut mid = vec![0.0; m];
                for r in 0..m {
                    for (l, zl) in z.iter().enumerate() {
                        mid[r] += inner[(r, l)] * zl;
                    }
                }
                for i in 0..d_next {
                    for r in 0..m {
                        out[i] += outer[(i, r)] * mid[r];
                    }
                }
            }
        }
        z = out;
    }
    z
}

/// `2 |w| sqrt(|v|^2 + b^2)` per neuron plus `|c|^2`, computed directly.
fn direct_atom_cost(s: &StackParams) -> f64 {
    let mut total = s.c.norm_squared();
    for k in 0..s.width() {
        let v2 = s.v.row(k).norm_squared();
        total += 2.0 * s.w.column(k).norm() * (v2 + s.b[k] * s.b[k]).sqrt();
    }
    total
}

fn skip_lower_bound(s: &StackParams) -> f64 {
    match &s.skip {
        None => 0.0,
        Some(Skip::Linear(a)) => a.norm_squared(),
        Some(Skip::Factored { outer, inner }) => {
            2.0 * (outer * inner).svd(false, false).singular_values.sum()
        }
    }
}

fn data_1d(n: usize, d_out: usize, seed: u64) -> Dataset {
    gen_random(n, 1, d_out, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescaling_keeps_forward(arch in arch_strategy(3, 6), seed in any::<u64>(), log_alpha in -3.0f64..3.0) {
        let net = random_params(&arch, seed);
        let mut scaled = net.clone();
        for s in scaled.stacks.iter_mut() {
            for k in 0..s.width() {
                *s = s.rescale_neuron(k, log_alpha.exp()).unwrap();
            }
        }
        for x in random_inputs(arch.d_in(), 1000, seed) {
            let a = net.forward(&arch, &x).unwrap();
            let b = scaled.forward(&arch, &x).unwrap();
            prop_assert!(rel_diff(&a, &b) <= 1e-12);
        }
    }

    #[test]
    fn balance_keeps_forward_and_lowers_norm(arch in arch_strategy(3, 6), seed in any::<u64>()) {
        let net = random_params(&arch, seed);
        let bal = net.balance();
        prop_assert!(bal.param_norm_sq() <= net.param_norm_sq() * (1.0 + 1e-12));
        for x in random_inputs(arch.d_in(), 50, seed) {
            let a = net.forward(&arch, &x).unwrap();
            let b = bal.forward(&arch, &x).unwrap();
            prop_assert!(rel_diff(&a, &b) <= 1e-10);
        }
    }

    #[test]
    fn norm_bounds_cost_with_equality_after_balance(arch in arch_strategy(3, 6), seed in any::<u64>()) {
        let net = random_params(&arch, seed);
        for s in &net.stacks {
            let bound = direct_atom_cost(s) + skip_lower_bound(s);
            prop_assert!(s.param_norm_sq() >= bound * (1.0 - 1e-12));
        }
        let bal = net.balance();
        for s in &bal.stacks {
            let bound = direct_atom_cost(s) + skip_lower_bound(s);
            prop_assert!((s.param_norm_sq() - bound).abs() <= 1e-10 * bound.max(1.0));
        }
        let cost = matching_network_cost(&bal, &arch).unwrap();
        prop_assert!((bal.param_norm_sq() - cost).abs() <= 1e-8 * cost.max(1.0));
        prop_assert!(matching_network_cost(&net, &arch).unwrap() <= net.param_norm_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn forward_matches_scalar_loops(
        dims in (1usize..=3, 1usize..=5, 1usize..=4, 1usize..=2),
        widths in prop::collection::vec(1usize..=16, 3),
        skips in prop::collection::vec(0u8..3, 3),
        relu in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let inner = if relu { InnerActivation::Relu } else { InnerActivation::Identity };
        let arch = Architecture::new(
            vec![dims.0, dims.1, dims.2, dims.3],
            widths,
            inner,
            skips.into_iter().map(skip_kind).collect(),
        ).unwrap();
        let net = random_params(&arch, seed);
        for x in random_inputs(arch.d_in(), 20, seed) {
            let fast = net.forward(&arch, &x).unwrap();
            let slow = DVector::from_vec(naive_forward(&net, &arch, x.as_slice()));
            prop_assert!(rel_diff(&fast, &slow) <= 1e-12);
        }
    }

    #[test]
    fn costs_invariant_under_rescaling(
        v in prop::collection::vec(-3.0f64..3.0, 1..4),
        b in -3.0f64..3.0,
        w in prop::collection::vec(-3.0f64..3.0, 1..4),
        log_alpha in -4.0f64..4.0,
    ) {
        let a = log_alpha.exp();
        let vs: Vec<f64> = v.iter().map(|x| x * a).collect();
        let ws: Vec<f64> = w.iter().map(|x| x / a).collect();
        for kind in [PenaltyKind::BiasReg, PenaltyKind::NoBiasReg] {
            let c0 = neuron_cost(&v, b, &w, kind);
            let c1 = neuron_cost(&vs, b * a, &ws, kind);
            prop_assert!((c0 - c1).abs() <= 1e-12 * c0.max(1e-300));
        }
        // Without bias regularization the bias does not enter.
        prop_assert_eq!(
            neuron_cost(&v, b, &w, PenaltyKind::NoBiasReg),
            neuron_cost(&v, b + 1.0, &w, PenaltyKind::NoBiasReg)
        );
    }

    #[test]
    fn breakdown_adds_up(arch in arch_strategy(3, 6), seed in any::<u64>()) {
        let net = random_params(&arch, seed);
        for s in &net.stacks {
            let mut variants = vec![PenaltyVariant::matching(s)];
            variants.push(PenaltyVariant { kind: PenaltyKind::NoBiasReg, ..PenaltyVariant::matching(s) });
            if s.skip_kind() == SkipKind::Linear {
                variants.push(PenaltyVariant { skip: SkipPenalty::Schatten1, ..PenaltyVariant::matching(s) });
            }
            for v in variants {
                let c = stack_cost(s, &v).unwrap();
                prop_assert!(c.per_neuron.iter().all(|&x| x >= 0.0));
                prop_assert!(c.bias_term >= 0.0 && c.skip_term >= 0.0);
                let sum = c.atom_factor * c.per_neuron.iter().sum::<f64>() + c.bias_term + c.skip_term;
                prop_assert!((c.total - sum).abs() <= 1e-12 * sum.max(1.0));
            }
        }
    }

    #[test]
    fn kink_directions_are_unit(arch in arch_strategy(3, 6), seed in any::<u64>()) {
        let net = random_params(&arch, seed);
        for s in &net.stacks {
            for a in s.kinks(DEGENERATE_TOL).unwrap().atoms {
                if !a.degenerate {
                    prop_assert!((a.direction.norm() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn schatten1_bounded_by_frobenius(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(r, c, |_, _| normal(&mut rng));
        let s1 = schatten1(&a).unwrap();
        let rank = a.rank(1e-12) as f64;
        prop_assert!(s1 <= a.norm() * rank.sqrt() * (1.0 + 1e-12));
        prop_assert!(s1 >= a.norm() * (1.0 - 1e-12));
    }

    #[test]
    fn random_features_decouple(seed in any::<u64>(), n in 2usize..12, d_out in 1usize..4, lambda in 1e-3f64..1.0) {
        let data = data_1d(n, d_out, seed);
        let joint = fit_random_features(&data, lambda, 15, seed).unwrap();
        for k in 0..d_out {
            let one = fit_random_features(&data.column(k), lambda, 15, seed).unwrap();
            prop_assert!((one.w.row(0) - joint.w.row(k)).amax() < 1e-10);
            prop_assert!((one.c[0] - joint.c[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_roundtrip_is_exact(seed in any::<u64>(), n in 1usize..10, d_in in 1usize..3, d_out in 1usize..4) {
        let data = gen_random(n, d_in, d_out, seed);
        let back = Dataset::from_csv_str(&data.to_csv_string()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>()) {
        prop_assert_eq!(gen_random(5, 2, 3, seed), gen_random(5, 2, 3, seed));
        prop_assert_eq!(gen_coupling_pair(seed), gen_coupling_pair(seed));
        prop_assert_eq!(gen_periodic7(9, 0.7, 0.1, seed).unwrap(), gen_periodic7(9, 0.7, 0.1, seed).unwrap());
    }

    #[test]
    fn periodic_targets_repeat(x in -3.0f64..3.0, period in 0.2f64..2.0) {
        let a = periodic7_target(x, period);
        let b = periodic7_target(x + period, period);
        for k in 0..7 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracle_objective_and_optimality(seed in any::<u64>(), n in 2usize..8, d_out in 1usize..3, lambda in 1e-3f64..0.3) {
        let data = data_1d(n, d_out, seed);
        let grid = build_grid(&data, 48, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let sol = solve_group_lasso(&data, lambda, &grid, &SolverConfig::default()).unwrap();
        prop_assert!(sol.kkt_residual >= 0.0 && sol.kkt_residual < 1e-6);

        let xs = data.scalar_inputs().unwrap();
        let fit = |w: &DMatrix<f64>, c: &DVector<f64>| {
            let mut loss = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                for k in 0..d_out {
                    let mut p = c[k];
                    for (g, a) in grid.atoms.iter().enumerate() {
                        p += w[(g, k)] * a.eval(x);
                    }
                    loss += (p - data.y[(i, k)]).powi(2);
                }
            }
            let pen: f64 = (0..grid.len()).map(|g| grid.atoms[g].rho * w.row(g).norm()).sum();
            loss + lambda * (pen + c.norm_squared())
        };
        let value = fit(&sol.weights, &sol.intercept);
        prop_assert!((value - sol.objective).abs() <= 1e-10 * value.max(1.0));

        // No other point on the grid does better.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..20 {
            let w = DMatrix::from_fn(grid.len(), d_out, |_, _| {
                if rng.random_bool(0.05) { normal(&mut rng) } else { 0.0 }
            });
            let c = DVector::from_fn(d_out, |_, _| normal(&mut rng));
            prop_assert!(fit(&w, &c) >= sol.objective - 1e-9);
            let t: f64 = rng.random_range(-0.1..0.1);
            let near_w = &sol.weights + &w * t;
            let near_c = &sol.intercept + &c * t;
            prop_assert!(fit(&near_w, &near_c) >= sol.objective - 1e-9 * sol.objective);
        }
    }

    #[test]
    fn grid_atoms_are_unique_and_positive(seed in any::<u64>(), n in 1usize..10, res in 2usize..40) {
        let data = data_1d(n, 1, seed);
        for kind in [PenaltyKind::BiasReg, PenaltyKind::NoBiasReg] {
            let grid = build_grid(&data, res, 1.0, kind, 2.0).unwrap();
            let mut keys: Vec<(i8, f64)> = grid.atoms.iter().map(|a| (a.s as i8, a.xi)).collect();
            prop_assert!(grid.atoms.iter().all(|a| a.rho > 0.0));
            keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let len = keys.len();
            keys.dedup();
            prop_assert_eq!(keys.len(), len);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_is_deterministic_and_descends(seed in 0u64..1000, relu in any::<bool>()) {
        let data = gen_random(5, 2, 2, seed);
        let inner = if relu { InnerActivation::Relu } else { InnerActivation::Identity };
        let arch = Architecture::new(vec![2, 2, 2], vec![6, 6], inner, vec![SkipKind::Linear, SkipKind::None]).unwrap();
        let cfg = TrainConfig { restarts: 2, adam_iters: 300, max_iters: 200, seed, ..TrainConfig::default() };
        let (net_a, rep_a) = train(&arch, &data, &cfg).unwrap();
        let (net_b, rep_b) = train(&arch, &data, &cfg).unwrap();
        prop_assert_eq!(&net_a, &net_b);
        prop_assert_eq!(&rep_a, &rep_b);
        for (r, out) in rep_a.restarts.iter().enumerate() {
            let start = init(&arch, cfg.restart_seed(r), cfg.init_scale);
            let f0 = objective(&start, &arch, &data, cfg.lambda).unwrap();
            prop_assert_eq!(out.initial_objective, f0);
            if let Some(f) = out.objective {
                prop_assert!(f <= f0);
            }
        }
        // The descent phase never goes up.
        let gd = &rep_a.objective_trace[rep_a.adam_iterations + 1..];
        prop_assert!(gd.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn coupling_joint_shares_kinks_separate_does_not() {
    let data = gen_coupling_pair(1);
    let grid = build_grid(&data, 400, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
    let cfg = SolverConfig::default();
    let joint = solve_group_lasso(&data, 0.03, &grid, &cfg).unwrap();
    let key = |v: Vec<(f64, f64)>| {
        let mut k: Vec<(i64, i64)> = v.iter().map(|&(s, x)| (s as i64, (x * 1e9).round() as i64)).collect();
        k.sort();
        k
    };
    assert_eq!(key(joint.active_kinks(0)), key(joint.active_kinks(1)));
    let t1 = solve_group_lasso(&data.column(0), 0.03, &grid, &cfg).unwrap();
    let t2 = solve_group_lasso(&data.column(1), 0.03, &grid, &cfg).unwrap();
    assert_ne!(key(t1.active_kinks(0)), key(t2.active_kinks(0)));
}

#[test]
fn irrelevant_task_leaves_baseline_alone() {
    let data = gen_coupling_pair(2);
    let task1 = data.column(0);
    let both = fit_random_features(&data, 1e-3, 50, 3).unwrap();
    let alone = fit_random_features(&task1, 1e-3, 50, 3).unwrap();
    for i in 0..41 {
        let x = -2.0 + 0.1 * i as f64;
        assert_eq!(both.predict_scalar(x)[0], alone.predict_scalar(x)[0]);
    }
}
