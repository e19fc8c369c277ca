use etest_core::composite_opt::{
    effective_membership, renyi_divergence, solve_composite, CompositeProblem, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use etest_core::evidence::check_validity_exact;
use etest_core::simple_opt::optimal_simple;
use etest_core::{FiniteDistribution, Level, Utility};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dist(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64) -> FiniteDistribution {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return FiniteDistribution::from_probs(&w.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap();
        }
    }
}

struct Instance {
    nulls: Vec<FiniteDistribution>,
    q: FiniteDistribution,
    h: f64,
    alpha: f64,
}

fn instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=5);
            let k = rng.random_range(1..=4);
            let h = [-1.0, 0.0, 0.5][rng.random_range(0..3)];
            let alphas: &[f64] = if h <= 0.0 { &[0.0, 0.1, 0.5] } else { &[0.1, 0.5] };
            let alpha = alphas[rng.random_range(0..alphas.len())];
            Instance {
                nulls: (0..k).map(|_| random_dist(&mut rng, n, 0.15)).collect(),
                q: random_dist(&mut rng, n, 0.15),
                h,
                alpha,
            }
        })
        .collect()
}

#[test]
fn random_instances_satisfy_the_optimality_battery() {
    for (idx, inst) in instances(200, 2024).into_iter().enumerate() {
        let level = Level::new(inst.alpha).unwrap();
        let u = Utility::power(inst.h).unwrap();
        let prob = CompositeProblem::new(inst.nulls.clone(), inst.q.clone(), level, u.clone()).unwrap();
        let sol = solve_composite(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER, idx as u64)
            .unwrap_or_else(|e| panic!("instance {idx}: {e}"));
        assert!(sol.foc_slack <= 1e-6, "instance {idx}: slack {}", sol.foc_slack);
        assert!(sol.restart_spread <= 1e-6, "instance {idx}: spread {}", sol.restart_spread);

        let report = check_validity_exact(&sol.test, &inst.nulls).unwrap();
        assert!(report.max_expectation <= 1.0 + 1e-8, "instance {idx}");

        let v = sol.values();
        for (i, qi) in inst.q.probs().iter().enumerate() {
            if *qi > 0.0 {
                assert!(v[i] > 0.0, "instance {idx}: zero test value on the alternative's support");
            }
        }

        let ripr = sol.ripr.as_ref().expect("positive solutions have a projection");
        let total = ripr.total_mass;
        if total > 0.0 {
            let normalized: Vec<f64> = ripr.masses.iter().map(|m| m / total).collect();
            let cand = FiniteDistribution::new(ripr.outcomes.clone(), normalized).unwrap();
            let m = effective_membership(&cand, &inst.nulls, level).unwrap();
            // The projection has mass at most 1 and is dominated by the valid-test polytope.
            assert!(total <= 1.0 + 1e-8, "instance {idx}: mass {total}");
            assert!(m.value * total <= 1.0 + 1e-6, "instance {idx}: membership {}", m.value * total);
        }

        if inst.h == 0.0 && sol.objective.is_finite() {
            let kl = renyi_divergence(&inst.q, ripr, 1.0).unwrap();
            assert!((sol.objective.exp() - kl.exp()).abs() <= 1e-6 * kl.exp().max(1.0), "instance {idx}");
        }

        if inst.nulls.len() == 1 {
            let s = optimal_simple(&inst.nulls[0], &inst.q, &u, level).unwrap();
            for (a, b) in v.iter().zip(s.test.values().unwrap()) {
                assert!(a == b || (a - b).abs() <= 1e-6 * a.abs().max(1.0), "instance {idx}: {a} vs {b}");
            }
        }
    }
}
