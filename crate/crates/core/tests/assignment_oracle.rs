use fpfuse_core::assignment::{solve_assignment, CostMatrix, FORBIDDEN};
use fpfuse_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every maximal injection of rows into columns, as row -> column vectors.
fn maximal_pairings(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(
        row: usize,
        n: usize,
        m: usize,
        need: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        let matched = cur.iter().flatten().count();
        if row == n {
            if matched == need {
                out.push(cur.clone());
            }
            return;
        }
        if matched + (n - row) < need {
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                cur.push(Some(c));
                rec(row + 1, n, m, need, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
        cur.push(None);
        rec(row + 1, n, m, need, used, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    rec(
        0,
        n,
        m,
        n.min(m),
        &mut vec![false; m],
        &mut Vec::new(),
        &mut out,
    );
    out
}

fn cost_of(c: &CostMatrix, p: &[Option<usize>]) -> f64 {
    p.iter()
        .enumerate()
        .filter_map(|(r, col)| col.map(|col| c.get(r, col)))
        .sum()
}

/// Lexicographic key with unmatched rows ranked after every column.
fn lex_key(p: &[Option<usize>]) -> Vec<usize> {
    p.iter().map(|c| c.unwrap_or(usize::MAX)).collect()
}

struct Oracle {
    best: f64,
    lex_smallest: Vec<Option<usize>>,
}

fn brute_force(c: &CostMatrix) -> Option<Oracle> {
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    for p in maximal_pairings(c.rows(), c.cols()) {
        let cost = cost_of(c, &p);
        if cost.is_infinite() {
            continue;
        }
        best = match best {
            None => Some((cost, p)),
            Some((b, bp)) => {
                if cost < b || (cost == b && lex_key(&p) < lex_key(&bp)) {
                    Some((cost, p))
                } else {
                    Some((b, bp))
                }
            }
        };
    }
    best.map(|(best, lex_smallest)| Oracle { best, lex_smallest })
}

fn random_matrix(rng: &mut ChaCha8Rng, integer: bool, forbid: f64) -> CostMatrix {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    CostMatrix::from_fn(n, m, |_, _| {
        if rng.random_bool(forbid) {
            FORBIDDEN
        } else if integer {
            f64::from(rng.random_range(0..4u8))
        } else {
            rng.random_range(-5.0..5.0)
        }
    })
    .unwrap()
}

#[test]
fn integer_costs_match_brute_force_including_tie_break() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x00A5_516E);
    for trial in 0..250 {
        let c = random_matrix(&mut rng, true, 0.0);
        let oracle = brute_force(&c).unwrap();
        let got = solve_assignment(&c).unwrap();
        assert_eq!(got.total_cost, oracle.best, "trial {trial}: {c:?}");
        assert_eq!(
            got.row_to_col(c.rows()),
            oracle.lex_smallest,
            "trial {trial}: {c:?}"
        );
    }
}

#[test]
fn float_costs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF10A7);
    for trial in 0..250 {
        let c = random_matrix(&mut rng, false, 0.0);
        let oracle = brute_force(&c).unwrap();
        let got = solve_assignment(&c).unwrap();
        assert_eq!(got.total_cost, oracle.best, "trial {trial}: {c:?}");
        assert_eq!(got.pairs.len(), c.rows().min(c.cols()));
    }
}

#[test]
fn forbidden_entries_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0B1D);
    let mut infeasible = 0;
    for trial in 0..300 {
        let c = random_matrix(&mut rng, true, 0.35);
        match (brute_force(&c), solve_assignment(&c)) {
            (Some(oracle), Ok(got)) => {
                assert_eq!(got.total_cost, oracle.best, "trial {trial}: {c:?}");
                assert_eq!(
                    got.row_to_col(c.rows()),
                    oracle.lex_smallest,
                    "trial {trial}"
                );
                assert!(got.pairs.iter().all(|&(r, col)| c.get(r, col).is_finite()));
            }
            (None, Err(Error::Infeasible { .. })) => infeasible += 1,
            (o, g) => panic!(
                "trial {trial}: oracle feasible={} solver={g:?}",
                o.is_some()
            ),
        }
    }
    assert!(
        infeasible > 0,
        "fixture should exercise the infeasible path"
    );
}
