mod common;

use common::*;
use mbcgcn::cascade::{cascade_forward, Aggregation, ModelConfig};
use mbcgcn::grad::{
    backward_batch, backward_batch_with, bpr_loss_from_embeddings, embedding_seeds, finite_difference_check,
    pairwise_terms, Triplet, TripletBatch,
};
use mbcgcn::{Exec, Mat};
use nalgebra::DMatrix;
use rand::Rng;

fn random_batch(r: &mut impl Rng, m: usize, n: usize, len: usize) -> TripletBatch {
    TripletBatch::new(
        (0..len)
            .map(|_| {
                let u = r.random_range(0..m as u32);
                let i = r.random_range(0..n as u32);
                let mut j = r.random_range(0..n as u32);
                while j == i {
                    j = r.random_range(0..n as u32);
                }
                Triplet::new(u, i, j)
            })
            .collect(),
    )
}

#[test]
fn random_three_behavior_instance_d3() {
    let mut r = rng(77);
    let edges: Vec<Edges> = (0..3).map(|_| random_edges(&mut r, 6, 6, 0.4)).collect();
    let cfg = ModelConfig::new(3, vec![2, 1, 2]);
    let params = random_params(&mut r, &cfg, 6, 6, 0.8);
    let batch = random_batch(&mut r, 6, 6, 8);
    let report = finite_difference_check(&params, &graphs_from(&edges, 6, 6), &cfg, &batch, 0.0, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn sweep_over_architectures() {
    let mut r = rng(1234);
    let mut cases = 0;
    for b in 1..=3usize {
        for agg in Aggregation::ALL {
            for ft in [true, false] {
                let d = [2, 4, 8][r.random_range(0..3)];
                let layers: Vec<usize> = (0..b).map(|_| r.random_range(0..=3)).collect();
                let lambda = if r.random_bool(0.5) { 0.0 } else { 0.01 };
                let (m, n) = (r.random_range(3..=6), r.random_range(3..=6));
                let edges: Vec<Edges> = (0..b).map(|_| random_edges(&mut r, m, n, 0.45)).collect();
                let cfg = ModelConfig {
                    dim: d,
                    layers: layers.clone(),
                    transform: ft,
                    aggregation: agg,
                };
                let params = random_params(&mut r, &cfg, m, n, 0.7);
                let batch = random_batch(&mut r, m, n, 6);
                let report =
                    finite_difference_check(&params, &graphs_from(&edges, m, n), &cfg, &batch, lambda, 1e-5).unwrap();
                assert!(
                    report.max_rel_error < 1e-4,
                    "B={b} L={layers:?} d={d} {agg} ft={ft} λ={lambda}: {report:?}"
                );
                cases += 1;
            }
        }
    }
    assert!(cases >= 18);
}

#[test]
fn margin_shift_leaves_seeds_unchanged() {
    // Seeds depend on score differences only.
    for &(pos, neg) in &[(0.3, -0.2), (4.0, 3.5), (-2.0, 1.0)] {
        for &c in &[-10.0, 0.5, 7.25] {
            let (_, a) = pairwise_terms::<f64>(pos - neg);
            let (_, b) = pairwise_terms::<f64>((pos + c) - (neg + c));
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn shifting_scores_by_constant_leaves_embedding_gradients() {
    // Appending a constant coordinate (1 on the user side, c on every item)
    // adds c to every score of that user.
    let mut r = rng(19);
    let users = random_mat(&mut r, 4, 3, 1.0);
    let items = random_mat(&mut r, 6, 3, 1.0);
    let batch = random_batch(&mut r, 4, 6, 10);
    let widen = |m: &Mat<f64>, extra: f64| {
        Mat::from_fn(m.rows(), m.cols() + 1, |row, col| {
            if col < m.cols() {
                m.get(row, col)
            } else {
                extra
            }
        })
    };
    let (gu, gi) = embedding_seeds(&users, &items, &batch, Exec::Sequential).unwrap();
    let (gu2, gi2) = embedding_seeds(&widen(&users, 1.0), &widen(&items, 3.7), &batch, Exec::Sequential).unwrap();
    for row in 0..4 {
        for col in 0..3 {
            assert!((gu.get(row, col) - gu2.get(row, col)).abs() < 1e-12);
        }
    }
    for row in 0..6 {
        for col in 0..3 {
            assert!((gi.get(row, col) - gi2.get(row, col)).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_invariant_under_joint_rotation() {
    let mut r = rng(23);
    let edges: Vec<Edges> = (0..2).map(|_| random_edges(&mut r, 6, 6, 0.4)).collect();
    let cfg = ModelConfig::new(4, vec![1, 2]);
    let params = random_params(&mut r, &cfg, 6, 6, 0.8);
    let trace = cascade_forward(&graphs_from(&edges, 6, 6), &params, &cfg).unwrap();
    let batch = random_batch(&mut r, 6, 6, 12);
    let base = bpr_loss_from_embeddings(&trace.final_users, &trace.final_items, &batch).unwrap();

    let q = DMatrix::from_fn(4, 4, |_, _| r.random_range(-1.0..1.0)).qr().q();
    let rot_u = from_dense(&(to_dense(&trace.final_users) * &q));
    let rot_i = from_dense(&(to_dense(&trace.final_items) * &q));
    let rotated = bpr_loss_from_embeddings(&rot_u, &rot_i, &batch).unwrap();
    assert!((base - rotated).abs() < 1e-12, "{base} vs {rotated}");
}

#[test]
fn unreachable_rows_get_exactly_zero() {
    // Two disconnected components; the batch lives in the first.
    let e0: Edges = vec![(0, 0), (0, 1), (1, 1), (2, 3), (3, 4)];
    let e1: Edges = vec![(0, 1), (1, 0), (3, 3)];
    let graphs = graphs_from(&[e0, e1], 4, 5);
    let cfg = ModelConfig::new(3, vec![2, 2]);
    let mut r = rng(4);
    let params = random_params(&mut r, &cfg, 4, 5, 1.0);
    let trace = cascade_forward(&graphs, &params, &cfg).unwrap();
    let batch = TripletBatch::new(vec![Triplet::new(0, 0, 1), Triplet::new(1, 1, 0)]);
    let g = backward_batch(&trace, &graphs, &batch, &params, &cfg, 0.0).unwrap();
    for u in [2, 3] {
        assert!(g.user_emb.row(u).iter().all(|&x| x == 0.0), "user {u}");
    }
    for i in [2, 3, 4] {
        assert!(g.item_emb.row(i).iter().all(|&x| x == 0.0), "item {i}");
    }
    assert!(g.user_emb.row(0).iter().any(|&x| x != 0.0));
}

#[test]
fn parallel_backward_is_bitwise_sequential() {
    let mut r = rng(31);
    let (m, n) = (150, 100);
    let edges: Vec<Edges> = (0..3).map(|_| random_edges(&mut r, m, n, 0.06)).collect();
    let graphs = graphs_from(&edges, m, n);
    let cfg = ModelConfig::new(8, vec![2, 3, 2]);
    let params = random_params(&mut r, &cfg, m, n, 0.3);
    let batch = random_batch(&mut r, m, n, 256);
    let trace = cascade_forward(&graphs, &params, &cfg).unwrap();
    let a = backward_batch_with(Exec::Sequential, &trace, &graphs, &batch, &params, &cfg, 1e-3).unwrap();
    let b = backward_batch_with(Exec::Parallel, &trace, &graphs, &batch, &params, &cfg, 1e-3).unwrap();
    assert_eq!(a, b);
}
