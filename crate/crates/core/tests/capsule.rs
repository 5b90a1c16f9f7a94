mod common;

use common::plain::{self, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use veritopic::capsule::{self, CapsuleConfig, CapsuleLayer};
use veritopic::numerics::{Graph, ParamStore, Tensor};

fn leaky_softmax_of(b: &Mat) -> Mat {
    let (m, n) = (b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..n {
        let mut col: Vec<f64> = (0..m).map(|j| b[j][i]).collect();
        col.push(0.0);
        let s = plain::softmax(&col);
        for j in 0..m {
            out[j][i] = s[j];
        }
    }
    out
}

/// Routing by agreement, written out with loops.
fn reference_routing(preds: &[Mat], prior: &[f64], iterations: usize) -> (Mat, Vec<f64>) {
    let (m, n) = (preds.len(), prior.len());
    let mut b = vec![vec![0.0; n]; m];
    let mut o = vec![];
    for _ in 0..iterations {
        let c = leaky_softmax_of(&b);
        o = (0..m)
            .map(|j| {
                let d_o = preds[j][0].len();
                let mut s = vec![0.0; d_o];
                for i in 0..n {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += c[j][i] * prior[i] * preds[j][i][k];
                    }
                }
                plain::squash(&s)
            })
            .collect::<Mat>();
        for j in 0..m {
            for i in 0..n {
                b[j][i] += preds[j][i].iter().zip(&o[j]).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }
    let rho = o.iter().map(|v| plain::norm(v)).collect();
    (o, rho)
}

#[test]
fn single_evidence_single_iteration_closed_form() {
    // One evidence, two classes, one iteration: both couplings are
    // e⁰/(e⁰+e⁰+e⁰) = 1/3, so o_j = squash(‖u‖ · W_j u / 3).
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let u = Tensor::randn(&[1, 5], 1.0, &mut rng);
        let w: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[5, 3], 0.7, &mut rng)).collect();
        let mut g = Graph::new();
        let uv = g.constant(u.clone());
        let prior = g.row_norm(uv).unwrap();
        let preds: Vec<_> = w
            .iter()
            .map(|wj| {
                let wv = g.constant(wj.clone());
                g.matmul(uv, wv).unwrap()
            })
            .collect();
        let r = capsule::dynamic_routing(&mut g, &preds, prior, 1).unwrap();

        let um = plain::mat(&u);
        let unorm = plain::norm(&um[0]);
        for (j, wj) in w.iter().enumerate() {
            let pred = plain::matmul(&um, &plain::mat(wj));
            let s: Vec<f64> = pred[0].iter().map(|x| x * unorm / 3.0).collect();
            let want = plain::squash(&s);
            let got = &g.value(r.o).row(j).to_vec();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "class {j}: {got:?} vs {want:?}");
            }
            assert!((g.value(r.rho).data()[j] - plain::norm(&want)).abs() < 1e-10);
            assert!((g.value(r.gamma).row(j)[0] - unorm / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn three_iteration_routing_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (n, m, d_o) in [(1, 2, 3), (3, 3, 4), (5, 3, 10)] {
        let preds: Vec<Tensor> = (0..m).map(|_| Tensor::randn(&[n, d_o], 0.8, &mut rng)).collect();
        let prior = Tensor::uniform(&[n], 0.1, 2.0, &mut rng);
        let mut g = Graph::new();
        let pv: Vec<_> = preds.iter().map(|p| g.constant(p.clone())).collect();
        let prv = g.constant(prior.clone());
        let r = capsule::dynamic_routing(&mut g, &pv, prv, 3).unwrap();
        let pm: Vec<Mat> = preds.iter().map(plain::mat).collect();
        let (o, rho) = reference_routing(&pm, prior.data(), 3);
        assert!(plain::max_abs_diff(&plain::mat(g.value(r.o)), &o) < 1e-10);
        assert!(plain::max_abs_diff(&vec![g.value(r.rho).data().to_vec()], &vec![rho]) < 1e-10);
    }
}

#[test]
fn leaky_softmax_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let b = Tensor::randn(&[3, 4], 3.0, &mut rng);
        let mut g = Graph::new();
        let bv = g.constant(b.clone());
        let c = capsule::leaky_softmax(&mut g, bv).unwrap();
        assert!(plain::max_abs_diff(&plain::mat(g.value(c)), &leaky_softmax_of(&plain::mat(&b))) < 1e-12);
    }
}

#[test]
fn per_pair_transforms_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, n, d_o, d_e) = (3, 4, 2, 5);
    let u = Tensor::randn(&[n, d_e], 1.0, &mut rng);
    let w = Tensor::randn(&[m, n, d_o, d_e], 1.0, &mut rng);
    let mut g = Graph::new();
    let (uv, wv) = (g.constant(u.clone()), g.constant(w.clone()));
    let preds = capsule::predict_vectors(&mut g, uv, wv).unwrap();
    for j in 0..m {
        for i in 0..n {
            for r in 0..d_o {
                let mut want = 0.0;
                for c in 0..d_e {
                    want += w.data()[((j * n + i) * d_o + r) * d_e + c] * u.get2(i, c);
                }
                assert!((g.value(preds[j]).get2(i, r) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn evidence_probe_cross_entropy() {
    let mut g = Graph::new();
    let confident = g.constant(Tensor::from_rows(&[vec![0.0, 40.0], vec![40.0, 0.0]]).unwrap());
    let l = capsule::evidence_ce_loss(&mut g, confident, &[true, false]).unwrap();
    assert!(g.value(l).item() < 1e-15);
    let flat = g.constant(Tensor::zeros(&[3, 2]));
    let l = capsule::evidence_ce_loss(&mut g, flat, &[true, false, false]).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
}

fn layer(n: usize, seed: u64) -> (CapsuleLayer, ParamStore) {
    let mut cfg = CapsuleConfig::new(n);
    cfg.class_dim = 4;
    let layer = CapsuleLayer::new(cfg, "capsule").unwrap();
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (layer, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn class_lengths_lie_in_unit_interval(seed in 0u64..10_000, n in 1usize..6, scale in 0.01f64..50.0) {
        let (layer, store) = layer(7, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let a = g.constant(Tensor::randn(&[n, 3], scale, &mut rng));
        let s = g.constant(Tensor::randn(&[n, 4], scale, &mut rng));
        let out = layer.forward(&mut g, &store, a, s).unwrap();
        for &r in g.value(out.routing.rho).data() {
            prop_assert!((0.0..1.0).contains(&r), "rho {r}");
        }
    }

    #[test]
    fn squash_length_is_increasing(x in prop::collection::vec(-5.0f64..5.0, 1..8), t in 1.0001f64..10.0) {
        prop_assume!(plain::norm(&x) > 1e-6);
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(&[x.clone(), x.iter().map(|e| e * t).collect()]).unwrap());
        let sq = capsule::squash(&mut g, v).unwrap();
        let lens: Vec<f64> = (0..2).map(|i| plain::norm(g.value(sq).row(i))).collect();
        prop_assert!(lens[0] < lens[1] && lens[1] < 1.0);
    }

    #[test]
    fn leaky_softmax_columns_sum_below_one(b in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let bv = g.constant(Tensor::new(vec![3, 4], b).unwrap());
        let c = capsule::leaky_softmax(&mut g, bv).unwrap();
        let c = plain::mat(g.value(c));
        for i in 0..4 {
            let sum: f64 = (0..3).map(|j| c[j][i]).sum();
            prop_assert!(sum < 1.0 && sum > 0.0);
        }
    }
}
