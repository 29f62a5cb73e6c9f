use fpfuse_core::assignment::CorrespondenceWeights;
use fpfuse_core::losses::{
    ground_truth_permutation, mse, mse_grad, total_loss, GroundTruthRecord, LossConfig,
    LossWeights, MinutiaeOutput, OrientationLoss, PredictionRecord,
};
use fpfuse_core::template::angular_distance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn out(pos: &[[f64; 3]], emb: &[[f64; 2]]) -> MinutiaeOutput {
    MinutiaeOutput {
        positions: pos.to_vec(),
        embeddings: emb.iter().map(|e| e.to_vec()).collect(),
    }
}

fn fixture() -> (PredictionRecord, GroundTruthRecord) {
    let pred = PredictionRecord {
        global: vec![0.1, 0.2, 0.3, 0.4],
        minutiae: out(
            &[[10.0, 20.0, 0.5], [50.0, 60.0, 1.0], [100.0, 30.0, 6.0]],
            &[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]],
        ),
        intermediates: vec![out(
            &[[12.0, 18.0, 0.4], [52.0, 57.0, 1.2], [97.0, 33.0, 0.1]],
            &[[0.9, 0.2], [0.1, 0.95], [0.7, 0.7]],
        )],
    };
    let gt = GroundTruthRecord {
        global: vec![0.0, 0.25, 0.35, 0.3],
        minutiae: out(
            &[[101.0, 32.0, 0.2], [11.0, 19.0, 0.6], [49.0, 62.0, 1.1]],
            &[[0.8, 0.6], [0.9, 0.1], [0.1, 0.9]],
        ),
    };
    (pred, gt)
}

// Values recomputed independently: all 6 permutations scored with the
// weighted cost, then each MSE expanded term by term.
const L_G: f64 = 0.006250000000000002;
const L_PO: f64 = 1.361496449008248;
const L_E: f64 = 0.020000000000000007;
const L_PO_INTER: f64 = 5.895555555555556;
const L_E_INTER: f64 = 0.005416666666666668;
const L_PO_STRICT: f64 = 5.073333333333333;

#[test]
fn handcrafted_fixture_matches_recomputation() {
    let (pred, gt) = fixture();
    let b = total_loss(&pred, &gt, &LossConfig::default()).unwrap();
    for (got, want) in [
        (b.global, L_G),
        (b.positions, L_PO),
        (b.embeddings, L_E),
        (b.positions_inter, L_PO_INTER),
        (b.embeddings_inter, L_E_INTER),
        (b.total, L_G + L_PO + L_E + L_PO_INTER + L_E_INTER),
    ] {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!((b.total - 7.2887186712304715).abs() < 1e-9);
}

#[test]
fn handcrafted_fixture_weights_and_strict_orientation() {
    let (pred, gt) = fixture();
    let cfg = LossConfig {
        weights: LossWeights {
            lambda_g: 0.5,
            lambda_po: 2.0,
            lambda_e: 0.0,
            lambda_po_inter: 1.0,
            lambda_e_inter: 3.0,
        },
        ..Default::default()
    };
    let b = total_loss(&pred, &gt, &cfg).unwrap();
    assert!((b.total - 8.637923453572052).abs() < 1e-9);

    let strict = LossConfig {
        orientation: OrientationLoss::Strict,
        ..Default::default()
    };
    let b = total_loss(&pred, &gt, &strict).unwrap();
    assert!((b.positions - L_PO_STRICT).abs() < 1e-9);
    assert!((b.total - 11.000555555555556).abs() < 1e-9);
}

#[test]
fn one_hot_weights_select_a_component() {
    let (pred, gt) = fixture();
    let base = total_loss(&pred, &gt, &LossConfig::default()).unwrap();
    let parts = [
        base.global,
        base.positions,
        base.embeddings,
        base.positions_inter,
        base.embeddings_inter,
    ];
    for (k, want) in parts.into_iter().enumerate() {
        let mut w = [0.0; 5];
        w[k] = 1.0;
        let cfg = LossConfig {
            weights: LossWeights {
                lambda_g: w[0],
                lambda_po: w[1],
                lambda_e: w[2],
                lambda_po_inter: w[3],
                lambda_e_inter: w[4],
            },
            ..Default::default()
        };
        assert_eq!(total_loss(&pred, &gt, &cfg).unwrap().total, want);
    }
}

#[test]
fn mse_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = mse_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut up = a.clone();
            let mut dn = a.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (mse(&up, &b).unwrap() - mse(&dn, &b).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-8);
            assert!(rel < 1e-5 || (fd - g[i]).abs() < 1e-9, "{fd} vs {}", g[i]);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn straight_cost(p: &MinutiaeOutput, g: &MinutiaeOutput, i: usize, j: usize) -> f64 {
    let w = CorrespondenceWeights::default();
    let (a, b) = (p.positions[i], g.positions[j]);
    let loc = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let emb = p.embeddings[i]
        .iter()
        .zip(&g.embeddings[j])
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    w.w_loc * loc + w.w_ori * angular_distance(a[2], b[2]) + w.w_emb * emb
}

#[test]
fn reordering_equals_brute_force_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0DE5);
    let random_out = |l: usize, rng: &mut ChaCha8Rng| MinutiaeOutput {
        positions: (0..l)
            .map(|_| {
                [
                    rng.random_range(0.0..384.0),
                    rng.random_range(0.0..384.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect(),
        embeddings: (0..l)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    };
    for trial in 0..100 {
        let l = 1 + trial % 5;
        let pred = random_out(l, &mut rng);
        let gt = random_out(l, &mut rng);
        let got = ground_truth_permutation(&pred, &gt, &CorrespondenceWeights::default()).unwrap();
        let total =
            |perm: &[usize]| -> f64 { (0..l).map(|i| straight_cost(&pred, &gt, i, perm[i])).sum() };
        let best = permutations(l)
            .into_iter()
            .map(|p| total(&p))
            .fold(f64::INFINITY, f64::min);
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..l).collect::<Vec<_>>());
        assert!((total(&got) - best).abs() < 1e-9, "trial {trial}");
    }
}

#[test]
fn prediction_equal_to_ground_truth_is_zero() {
    let (_, gt) = fixture();
    let pred = PredictionRecord {
        global: gt.global.clone(),
        minutiae: gt.minutiae.clone(),
        intermediates: vec![gt.minutiae.clone(); 5],
    };
    let b = total_loss(&pred, &gt, &LossConfig::default()).unwrap();
    assert_eq!(b.total, 0.0);
}

#[test]
fn shape_mismatch_is_an_error() {
    let (mut pred, gt) = fixture();
    pred.global.push(1.0);
    assert!(total_loss(&pred, &gt, &LossConfig::default()).is_err());
    let (mut pred, gt) = fixture();
    pred.minutiae.positions.pop();
    pred.minutiae.embeddings.pop();
    assert!(total_loss(&pred, &gt, &LossConfig::default()).is_err());
}
