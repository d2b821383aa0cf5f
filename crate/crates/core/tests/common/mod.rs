//! Reference implementations used as test oracles.
//!
//! Everything here works from raw edge lists on dense nalgebra matrices and
//! shares no code with the sparse production path.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mbcgcn::cascade::{Aggregation, CascadeParams, ModelConfig};
use mbcgcn::graph::BehaviorGraph;
use mbcgcn::Mat;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Edges = Vec<(u32, u32)>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dense(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_dense(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// `D_u^{-1/2} · Y · D_i^{-1/2}` from a raw edge list.
pub fn dense_normalized(edges: &[(u32, u32)], m: usize, n: usize) -> DMatrix<f64> {
    let mut y = DMatrix::<f64>::zeros(m, n);
    for &(u, i) in edges {
        y[(u as usize, i as usize)] = 1.0;
    }
    let du: Vec<f64> = (0..m).map(|u| y.row(u).sum()).collect();
    let di: Vec<f64> = (0..n).map(|i| y.column(i).sum()).collect();
    DMatrix::from_fn(m, n, |u, i| {
        if y[(u, i)] == 0.0 {
            0.0
        } else {
            1.0 / (du[u].sqrt() * di[i].sqrt())
        }
    })
}

/// Straight-line dense recomputation of propagation, layer sums,
/// transforms and aggregation.
pub fn dense_forward(
    edges: &[Edges],
    params: &CascadeParams<f64>,
    config: &ModelConfig,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = (params.user_emb.rows(), params.item_emb.rows());
    let mut xu = to_dense(&params.user_emb);
    let mut xi = to_dense(&params.item_emb);
    let mut outs = Vec::new();
    for (b, e) in edges.iter().enumerate() {
        let a = dense_normalized(e, m, n);
        let (mut hu, mut hi) = (xu.clone(), xi.clone());
        let (mut su, mut si) = (hu.clone(), hi.clone());
        for _ in 0..config.layers[b] {
            let nu = &a * &hi;
            let ni = a.transpose() * &hu;
            hu = nu;
            hi = ni;
            su += &hu;
            si += &hi;
        }
        if b + 1 < edges.len() {
            if config.transform {
                xu = &su * to_dense(&params.user_transforms[b]).transpose();
                xi = &si * to_dense(&params.item_transforms[b]).transpose();
            } else {
                xu = su.clone();
                xi = si.clone();
            }
        }
        outs.push((su, si));
    }
    match config.aggregation {
        Aggregation::Sum => {
            let mut u = DMatrix::zeros(m, config.dim);
            let mut i = DMatrix::zeros(n, config.dim);
            for (su, si) in &outs {
                u += su;
                i += si;
            }
            (u, i)
        }
        Aggregation::Concat => {
            let d = config.dim;
            let b = outs.len();
            let mut u = DMatrix::zeros(m, b * d);
            let mut i = DMatrix::zeros(n, b * d);
            for (k, (su, si)) in outs.iter().enumerate() {
                u.view_mut((0, k * d), (m, d)).copy_from(su);
                i.view_mut((0, k * d), (n, d)).copy_from(si);
            }
            (u, i)
        }
        Aggregation::LastOnly => outs.pop().unwrap(),
    }
}

pub fn random_edges(rng: &mut impl Rng, m: usize, n: usize, density: f64) -> Edges {
    let mut e = Vec::new();
    for u in 0..m as u32 {
        for i in 0..n as u32 {
            if rng.random_bool(density) {
                e.push((u, i));
            }
        }
    }
    e
}

pub fn graphs_from(edges: &[Edges], m: usize, n: usize) -> Vec<BehaviorGraph> {
    edges
        .iter()
        .map(|e| BehaviorGraph::from_pairs(e.iter().copied(), m, n).unwrap())
        .collect()
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_params(rng: &mut impl Rng, config: &ModelConfig, m: usize, n: usize, scale: f64) -> CascadeParams<f64> {
    let d = config.dim;
    let t = config.num_transforms();
    CascadeParams {
        user_emb: random_mat(rng, m, d, scale),
        item_emb: random_mat(rng, n, d, scale),
        user_transforms: (0..t).map(|_| random_mat(rng, d, d, scale)).collect(),
        item_transforms: (0..t).map(|_| random_mat(rng, d, d, scale)).collect(),
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &Mat<f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), b.shape());
    let mut worst = 0.0f64;
    for r in 0..b.rows() {
        for c in 0..b.cols() {
            worst = worst.max((a[(r, c)] - b.get(r, c)).abs());
        }
    }
    worst
}

/// Full-sort evaluator: scores every candidate independently, sorts
/// descending with the held-out item placed after its ties, and reads off
/// its position.
pub fn brute_force_metrics(
    users: &Mat<f64>,
    items: &Mat<f64>,
    held_out: &BTreeMap<u32, u32>,
    exclusions: &[Vec<u32>],
    ks: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for (&u, &target) in held_out {
        let eu = users.row(u as usize);
        let mut cands: Vec<(f64, bool)> = (0..items.rows() as u32)
            .filter(|i| *i == target || !exclusions[u as usize].contains(i))
            .map(|i| {
                let ei = items.row(i as usize);
                let s: f64 = eu.iter().zip(ei).map(|(a, b)| a * b).sum();
                (s, i == target)
            })
            .collect();
        // Descending score; on ties the held-out item goes last.
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let rank = cands.iter().position(|c| c.1).unwrap() + 1;
        for (p, &k) in ks.iter().enumerate() {
            if rank <= k {
                recall[p] += 1.0;
                ndcg[p] += 1.0 / ((rank + 1) as f64).log2();
            }
        }
    }
    let count = held_out.len() as f64;
    for x in recall.iter_mut().chain(ndcg.iter_mut()) {
        *x /= count;
    }
    (recall, ndcg)
}
