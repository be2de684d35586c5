use gampi::glm::{fit_subset, fit_weighted_l1, nll, nll_grad, DesignProblem, Family};
use gampi::metrics::{evaluate, shd};
use gampi::peel::{peel, transitive_closure};
use gampi::select::{ebic_score, fold_assignment};
use gampi::sim::{gen_graph, simulate, GraphKind, Outcome, SimConfig};
use gampi::tlp::{dc_fit, default_init, solve_constrained, TlpConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FAMILIES: [Family; 3] = [Family::Gaussian, Family::Bernoulli, Family::Poisson];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random problem whose responses follow the family at a random coefficient.
fn random_problem(seed: u64, family: Family, n: usize, d: usize) -> (DesignProblem, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, d, |_, _| normal(&mut rng));
    let beta = DVector::from_fn(d, |_, _| 0.5 * normal(&mut rng));
    let eta = &z * &beta;
    let y = eta.map(|t| match family {
        Family::Gaussian => t + normal(&mut rng),
        Family::Bernoulli => (rng.random::<f64>() < family.mean(t)) as u8 as f64,
        Family::Poisson => {
            // Inversion sampling keeps this free of extra dependencies.
            let mu = family.mean(t);
            let (mut k, mut p, u) = (0.0, (-mu).exp(), rng.random::<f64>());
            let mut cdf = p;
            while u > cdf && k < 1000.0 {
                k += 1.0;
                p *= mu / k;
                cdf += p;
            }
            k
        }
    });
    (DesignProblem::new(z, y, family).unwrap(), beta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), f in 0usize..3, n in 3usize..40, d in 1usize..6) {
        let (problem, beta) = random_problem(seed, FAMILIES[f], n, d);
        let grad = nll_grad(&problem, &beta).unwrap();
        let h = 1e-6;
        for l in 0..d {
            let mut up = beta.clone();
            up[l] += h;
            let mut down = beta.clone();
            down[l] -= h;
            let fd = (nll(&problem, &up).unwrap() - nll(&problem, &down).unwrap()) / (2.0 * h);
            prop_assert!((grad[l] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "l={l} grad={} fd={fd}", grad[l]);
        }
    }

    #[test]
    fn nll_is_midpoint_convex(seed in any::<u64>(), f in 0usize..3, n in 3usize..40, d in 1usize..6) {
        let (problem, a) = random_problem(seed, FAMILIES[f], n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let b = DVector::from_fn(d, |_, _| normal(&mut rng));
        let mid = (&a + &b) * 0.5;
        let lhs = nll(&problem, &mid).unwrap();
        let rhs = 0.5 * (nll(&problem, &a).unwrap() + nll(&problem, &b).unwrap());
        prop_assert!(lhs <= rhs + 1e-12 * rhs.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn weighted_l1_objective_is_monotone(seed in any::<u64>(), f in 0usize..3, w in 0.0f64..0.3) {
        let (problem, _) = random_problem(seed, FAMILIES[f], 80, 5);
        let fit = fit_weighted_l1(&problem, &[w; 5], None).unwrap();
        for pair in fit.objective_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn subset_fit_satisfies_kkt(seed in any::<u64>(), f in 0usize..3, mask in 1u8..32) {
        let (problem, _) = random_problem(seed, FAMILIES[f], 120, 5);
        let support: Vec<usize> = (0..5).filter(|l| mask & (1 << l) != 0).collect();
        let fit = fit_subset(&problem, &support).unwrap();
        let grad = nll_grad(&problem, &fit.coef).unwrap();
        for &l in &support {
            prop_assert!(grad[l].abs() < 1e-8, "grad {} on {l}", grad[l]);
        }
        for l in (0..5).filter(|l| !support.contains(l)) {
            prop_assert_eq!(fit.coef[l], 0.0);
        }
    }

    #[test]
    fn soft_threshold_exact_on_orthogonal_design(seed in any::<u64>(), w in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let raw = DMatrix::from_fn(n, 4, |_, _| normal(&mut rng));
        let z = raw.qr().q() * (n as f64).sqrt();
        let y = DVector::from_fn(n, |_, _| 2.0 * normal(&mut rng));
        let ols = z.tr_mul(&y) / n as f64;
        let problem = DesignProblem::new(z, y, Family::Gaussian).unwrap();
        let fit = fit_weighted_l1(&problem, &[w; 4], None).unwrap();
        for l in 0..4 {
            let expect = ols[l].signum() * (ols[l].abs() - w).max(0.0);
            prop_assert!((fit.coef[l] - expect).abs() < 1e-8, "{} vs {expect}", fit.coef[l]);
        }
    }

    #[test]
    fn dc_objectives_never_increase(seed in any::<u64>(), f in 0usize..3, tau in 0.05f64..1.0) {
        let (problem, _) = random_problem(seed, FAMILIES[f], 100, 6);
        let cfg = TlpConfig::new(tau, 2, 0.3 / tau);
        let init = default_init(&problem, &cfg).unwrap();
        let (_, trace) = dc_fit(&problem, &cfg, &init).unwrap();
        for pair in trace.iterations.windows(2) {
            let slack = 1e-7 * pair[0].surrogate.abs().max(1.0);
            prop_assert!(pair[1].surrogate <= pair[0].surrogate + slack);
            prop_assert!(pair[1].tlp_objective <= pair[0].tlp_objective + slack);
        }
    }

    #[test]
    fn constrained_support_respects_budget(seed in any::<u64>(), f in 0usize..3, k in 0usize..5) {
        let (problem, _) = random_problem(seed, FAMILIES[f], 100, 5);
        let cfg = TlpConfig::new(0.2, k, 0.5).with_free_set(vec![0]);
        let (fit, _) = solve_constrained(&problem, &cfg).unwrap();
        prop_assert!(fit.support.contains(&0));
        prop_assert!(fit.fit.coef.iter().skip(1).filter(|v| **v != 0.0).count() <= k);
    }
}

/// Every acyclic digraph on `p` nodes.
fn all_dags(p: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|a| (0..p).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .collect();
    (0u32..1 << pairs.len())
        .map(|mask| {
            pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &e)| e)
                .collect::<Vec<_>>()
        })
        .filter(|edges| transitive_closure(p, edges).is_ok())
        .collect()
}

#[test]
fn peel_recovers_every_small_dag_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut count = 0;
    for p in 1..=4 {
        for edges in all_dags(p) {
            let closure = transitive_closure(p, &edges).unwrap();
            let v = DMatrix::from_fn(p, p, |l, j| {
                if l == j || closure.contains(&(l, j)) {
                    0.5 + rng.random::<f64>()
                } else {
                    0.0
                }
            });
            let sg = peel(&v).unwrap();
            assert_eq!(sg.ancestral, closure, "edges {edges:?}");
            assert_eq!(sg.instruments, (0..p).map(|j| vec![j]).collect::<Vec<_>>());
            let pos: Vec<usize> = (0..p).map(|j| sg.order.iter().position(|&o| o == j).unwrap()).collect();
            assert!(closure.iter().all(|&(k, j)| pos[k] < pos[j]));
            count += 1;
        }
    }
    // 1 + 3 + 25 + 543 labelled DAGs.
    assert_eq!(count, 572);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn peel_output_is_consistent_and_idempotent(seed in any::<u64>(), q in 2usize..8, p in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = DMatrix::from_fn(q, p, |_, _| if rng.random::<f64>() < 0.35 { normal(&mut rng) } else { 0.0 });
        for j in 0..p {
            if v.column(j).iter().all(|x| *x == 0.0) {
                v[(j % q, j)] = 1.0;
            }
        }
        let Ok(sg) = peel(&v) else { return Ok(()) };
        for &(k, j) in &sg.ancestral {
            prop_assert!(!sg.ancestral.contains(&(j, k)));
        }
        prop_assert!(sg.instruments.iter().all(|s| !s.is_empty()));
        let pos: Vec<usize> = (0..p).map(|j| sg.order.iter().position(|&o| o == j).unwrap()).collect();
        prop_assert!(sg.ancestral.iter().all(|&(k, j)| pos[k] < pos[j]));

        let rebuilt = DMatrix::from_fn(q, p, |l, j| {
            let own = sg.instruments[j].contains(&l);
            let inherited = sg.ancestors[j].iter().any(|&k| sg.instruments[k].contains(&l));
            if own || inherited { 1.0 } else { 0.0 }
        });
        let again = peel(&rebuilt).unwrap();
        prop_assert_eq!(&again.ancestral, &sg.ancestral);
        prop_assert_eq!(&again.instruments, &sg.instruments);
        prop_assert_eq!(&again.order, &sg.order);
    }

    #[test]
    fn closure_matches_reachability(seed in any::<u64>(), p in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(usize, usize)> = (0..p)
            .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
            .filter(|_| rng.random::<f64>() < 0.3)
            .collect();
        let closure = transitive_closure(p, &edges).unwrap();
        for a in 0..p {
            let mut seen = vec![false; p];
            let mut stack = vec![a];
            while let Some(x) = stack.pop() {
                for &(s, t) in &edges {
                    if s == x && !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
            for b in 0..p {
                prop_assert_eq!(seen[b], closure.contains(&(a, b)));
            }
        }
    }
}

fn random_digraph(rng: &mut ChaCha8Rng, p: usize, density: f64) -> Vec<(usize, usize)> {
    (0..p)
        .flat_map(|a| (0..p).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .filter(|_| rng.random::<f64>() < density)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shd_is_a_metric(seed in any::<u64>(), p in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_digraph(&mut rng, p, 0.2), random_digraph(&mut rng, p, 0.2), random_digraph(&mut rng, p, 0.2));
        prop_assert_eq!(shd(&a, &a, p).unwrap(), 0);
        prop_assert_eq!(shd(&a, &b, p).unwrap(), shd(&b, &a, p).unwrap());
        prop_assert!(shd(&a, &c, p).unwrap() <= shd(&a, &b, p).unwrap() + shd(&b, &c, p).unwrap());
    }

    #[test]
    fn mcc_and_fscore_are_bounded(seed in any::<u64>(), p in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_digraph(&mut rng, p, 0.15), random_digraph(&mut rng, p, 0.15));
        let r = evaluate(&a, &b, p).unwrap();
        prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, p * (p - 1));
        if let Some(m) = r.mcc { prop_assert!((-1.0..=1.0).contains(&m)); }
        if let Some(f) = r.fscore { prop_assert!((0.0..=1.0).contains(&f)); }
    }

    #[test]
    fn ebic_is_monotone(nll in 0.0f64..5.0, k in 0usize..30, n in 2usize..1000, d in 30usize..200, g in 0.0f64..1.0) {
        prop_assert!(ebic_score(nll, k + 1, n, d, g) > ebic_score(nll, k, n, d, g));
        prop_assert!(ebic_score(nll + 0.1, k, n, d, g) > ebic_score(nll, k, n, d, g));
    }

    #[test]
    fn folds_depend_only_on_inputs(n in 5usize..300, folds in 2usize..6, seed in any::<u64>()) {
        let a = fold_assignment(n, folds, seed);
        prop_assert_eq!(&a, &fold_assignment(n, folds, seed));
        prop_assert!(a.iter().all(|&f| f < folds));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn simulated_truth_is_acyclic_with_diagonal_w(seed in any::<u64>(), g in 0usize..3, o in 0usize..3, p in 2usize..12) {
        let graph = [GraphKind::Hub, GraphKind::Chain { segment_len: 4 }, GraphKind::Random { expected_edges: p as f64 }][g];
        let outcome = [Outcome::Binary, Outcome::Count, Outcome::Gaussian][o];
        let mut cfg = SimConfig::preset(graph, outcome, p, 30, seed);
        cfg.q = p + 2;
        let truth = gen_graph(&cfg).unwrap();
        prop_assert!(transitive_closure(p, &truth.edges).is_ok());
        for l in 0..cfg.q {
            for j in 0..p {
                prop_assert_eq!(truth.w0[(l, j)] != 0.0, l == j);
            }
        }
        let (d1, t1) = simulate(&cfg).unwrap();
        let (d2, t2) = simulate(&cfg).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert_eq!(t1, t2);
    }
}
