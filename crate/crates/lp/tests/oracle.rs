//! Cross-checks the simplex against exhaustive vertex enumeration on small
//! dense problems.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warmuc_lp::{solve_lp, LpProblem, LpStatus};

const INF: f64 = f64::INFINITY;

/// Random bounded LP that contains the point `x0`, so it is feasible.
fn random_feasible_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LpProblem {
    let mut lp = LpProblem::new();
    let mut x0 = Vec::with_capacity(n);
    for _ in 0..n {
        let lo = if rng.random_bool(0.5) { 0.0 } else { -rng.random_range(0.0..5.0) };
        let hi = lo + rng.random_range(1.0..10.0);
        lp.add_col(rng.random_range(-10.0..10.0), lo, hi);
        x0.push(rng.random_range(lo..hi));
    }
    for _ in 0..m {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.8) {
                coeffs.push((j, rng.random_range(-5.0..5.0)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let slack = rng.random_range(0.0..3.0);
        match rng.random_range(0..10) {
            0 => lp.add_row(coeffs, act, act),
            1..=5 => lp.add_row(coeffs, -INF, act + slack),
            _ => lp.add_row(coeffs, act - slack, INF),
        };
    }
    lp
}

/// Hyperplane `coeffs . x = rhs` that may be active at a vertex.
struct Plane {
    coeffs: Vec<f64>,
    rhs: f64,
}

/// Minimum objective over all vertices, `None` if no vertex is feasible.
fn vertex_oracle(lp: &LpProblem) -> Option<f64> {
    let n = lp.num_cols();
    // Groups of mutually exclusive planes: each variable and each row
    // contributes at most one active plane.
    let mut groups: Vec<(Vec<Plane>, bool)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = lp.col_bounds(j);
        let unit = |v| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            Plane { coeffs: c, rhs: v }
        };
        let mut planes = Vec::new();
        if lo.is_finite() {
            planes.push(unit(lo));
        }
        if hi.is_finite() && hi != lo {
            planes.push(unit(hi));
        }
        groups.push((planes, false));
    }
    for row in lp.rows() {
        let mut dense = vec![0.0; n];
        for &(j, a) in &row.coeffs {
            dense[j] = a;
        }
        let mut planes = Vec::new();
        if row.lower.is_finite() {
            planes.push(Plane { coeffs: dense.clone(), rhs: row.lower });
        }
        if row.upper.is_finite() && row.upper != row.lower {
            planes.push(Plane { coeffs: dense.clone(), rhs: row.upper });
        }
        groups.push((planes, row.lower == row.upper));
    }

    let mut best: Option<f64> = None;
    let mut chosen: Vec<&Plane> = Vec::with_capacity(n);
    enumerate(lp, &groups, 0, &mut chosen, &mut best);
    best
}

fn enumerate<'a>(
    lp: &LpProblem,
    groups: &'a [(Vec<Plane>, bool)],
    g: usize,
    chosen: &mut Vec<&'a Plane>,
    best: &mut Option<f64>,
) {
    let n = lp.num_cols();
    if chosen.len() == n {
        // Remaining equality rows must still hold; feasibility check covers it.
        if let Some(x) = solve_square(chosen) {
            if lp.max_violation(&x) <= 1e-7 {
                let obj = lp.objective_value(&x);
                if best.map_or(true, |b| obj < b) {
                    *best = Some(obj);
                }
            }
        }
        return;
    }
    if g == groups.len() {
        return;
    }
    let (planes, forced) = &groups[g];
    for p in planes {
        chosen.push(p);
        enumerate(lp, groups, g + 1, chosen, best);
        chosen.pop();
    }
    if !forced || planes.is_empty() {
        enumerate(lp, groups, g + 1, chosen, best);
    }
}

fn solve_square(planes: &[&Plane]) -> Option<Vec<f64>> {
    let n = planes.len();
    let mut a: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            let mut r = p.coeffs.clone();
            r.push(p.rhs);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &k| a[i][col].abs().total_cmp(&a[k][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        a[i][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

#[test]
fn matches_vertex_enumeration_on_random_feasible_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    for case in 0..50 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=8);
        let lp = random_feasible_lp(&mut rng, n, m);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
        let oracle = vertex_oracle(&lp).expect("feasible by construction");
        let rel = (sol.objective - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel <= 1e-8, "case {case}: simplex {} vs oracle {oracle}", sol.objective);
        assert!(lp.max_violation(&sol.x) <= 1e-7);
    }
}

#[test]
fn infeasible_verdicts_agree_with_oracle_and_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seen = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=5);
        let mut lp = LpProblem::new();
        for _ in 0..n {
            lp.add_col(rng.random_range(-1.0..1.0), 0.0, rng.random_range(1.0..3.0));
        }
        for _ in 0..rng.random_range(2..=5) {
            let coeffs: Vec<(usize, f64)> =
                (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
            let b = rng.random_range(-4.0..4.0);
            if rng.random_bool(0.5) {
                lp.add_row(coeffs, b, INF);
            } else {
                lp.add_row(coeffs, -INF, b);
            }
        }
        let sol = solve_lp(&lp).unwrap();
        let oracle = vertex_oracle(&lp);
        match sol.status {
            LpStatus::Optimal => {
                let o = oracle.expect("oracle must find a vertex");
                assert!((sol.objective - o).abs() / o.abs().max(1.0) <= 1e-8);
            }
            LpStatus::Infeasible => {
                seen += 1;
                assert!(oracle.is_none());
                for _ in 0..1000 {
                    let x: Vec<f64> = (0..n)
                        .map(|j| {
                            let (lo, hi) = lp.col_bounds(j);
                            rng.random_range(lo..=hi)
                        })
                        .collect();
                    assert!(lp.max_violation(&x) > 0.0);
                }
            }
            LpStatus::Unbounded => panic!("bounded columns cannot be unbounded"),
        }
    }
    assert!(seen > 5, "generator should produce some infeasible problems, got {seen}");
}

fn active_set(lp: &LpProblem, x: &[f64]) -> Vec<(usize, i8)> {
    let mut act = Vec::new();
    for (j, &v) in x.iter().enumerate() {
        let (lo, hi) = lp.col_bounds(j);
        if (v - lo).abs() <= 1e-9 {
            act.push((j, -1));
        } else if (v - hi).abs() <= 1e-9 {
            act.push((j, 1));
        }
    }
    act
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_objective_scaling_keeps_status_and_active_bounds(
        seed in any::<u64>(),
        power in 1i32..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=6);
        let lp = random_feasible_lp(&mut rng, n, m);
        let mut scaled = lp.clone();
        let factor = 2f64.powi(power);
        for j in 0..n {
            scaled.set_objective_coeff(j, lp.objective()[j] * factor);
        }
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&scaled).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(active_set(&lp, &a.x), active_set(&lp, &b.x));
    }

    #[test]
    fn reported_objective_is_resubstituted_objective(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=10);
        let lp = random_feasible_lp(&mut rng, n, m);
        let sol = solve_lp(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let resub = lp.objective_value(&sol.x);
        prop_assert!((resub - sol.objective).abs() <= 1e-9 * sol.objective.abs().max(1.0));
    }

    #[test]
    fn solves_are_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_feasible_lp(&mut rng, 6, 6);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.iterations, b.iterations);
    }
}
