//! Leave-one-out full-ranking evaluation.
//!
//! Every test user ranks all items except its own target-behavior train
//! positives and its validation item. Ties count against the held-out item.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::cascade::{cascade_forward_with, score_user_all, CascadeParams, ModelConfig};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::graph::BehaviorGraph;
use crate::mat::Mat;
use crate::par::Exec;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub ks: Vec<usize>,
    /// Mean Recall@K, aligned with `ks`.
    pub recall: Vec<f64>,
    /// Mean NDCG@K, aligned with `ks`.
    pub ndcg: Vec<f64>,
    pub users: usize,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `{"label", "users", "recall": {K: value}, "ndcg": {K: value}}`
    pub fn to_json(&self) -> Value {
        let per_k = |vals: &[f64]| -> Value {
            let mut m = Map::new();
            for (k, v) in self.ks.iter().zip(vals) {
                m.insert(k.to_string(), json!(v));
            }
            Value::Object(m)
        };
        json!({
            "label": self.label,
            "users": self.users,
            "recall": per_k(&self.recall),
            "ndcg": per_k(&self.ndcg),
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let bad = |what: &str| Error::Metrics(format!("missing or malformed {what}"));
        let label = value.get("label").and_then(Value::as_str).ok_or_else(|| bad("label"))?;
        let users = value.get("users").and_then(Value::as_u64).ok_or_else(|| bad("users"))? as usize;
        let parse_block = |name: &str| -> Result<Vec<(usize, f64)>> {
            let obj = value.get(name).and_then(Value::as_object).ok_or_else(|| bad(name))?;
            obj.iter()
                .map(|(k, v)| {
                    let k = k.parse::<usize>().map_err(|_| bad(&format!("{name} cutoff {k:?}")))?;
                    let v = v.as_f64().ok_or_else(|| bad(&format!("{name}@{k}")))?;
                    Ok((k, v))
                })
                .collect()
        };
        let recall = parse_block("recall")?;
        let ndcg = parse_block("ndcg")?;
        let ks: Vec<usize> = recall.iter().map(|&(k, _)| k).collect();
        if ndcg.iter().map(|&(k, _)| k).ne(ks.iter().copied()) {
            return Err(Error::Metrics("recall and ndcg cutoffs differ".into()));
        }
        Ok(MetricsReport {
            label: label.to_owned(),
            ks,
            recall: recall.into_iter().map(|(_, v)| v).collect(),
            ndcg: ndcg.into_iter().map(|(_, v)| v).collect(),
            users,
        })
    }
}

/// 1-based rank of `test_item` among the non-excluded items.
///
/// Items tied with the test item are ranked above it.
pub fn rank_of_test_item<T: Real>(scores: &[T], test_item: u32, excluded: &[u32]) -> Result<usize> {
    let test = test_item as usize;
    if test >= scores.len() {
        return Err(Error::Contract(format!("test item {test} out of range")));
    }
    if excluded.contains(&test_item) {
        return Err(Error::Contract(format!("test item {test} is excluded")));
    }
    let mut mask = vec![false; scores.len()];
    for &e in excluded {
        if let Some(m) = mask.get_mut(e as usize) {
            *m = true;
        }
    }
    let target = scores[test];
    let mut above = 0usize;
    for (n, &s) in scores.iter().enumerate() {
        if n == test || mask[n] {
            continue;
        }
        // NaN test scores rank last.
        if target.is_nan() || s >= target {
            above += 1;
        }
    }
    Ok(1 + above)
}

/// `(hit, 1 / log2(rank + 1))` within the cutoff, zeros outside.
pub fn metrics_from_rank(rank: usize, k: usize) -> (f64, f64) {
    debug_assert!(rank >= 1);
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoff list must be non-empty and positive".into()));
    }
    Ok(())
}

/// Ranks each user's held-out item against final embeddings and averages
/// per-K contributions in ascending user order.
pub fn evaluate_embeddings<T: Real>(
    final_users: &Mat<T>,
    final_items: &Mat<T>,
    held_out: &BTreeMap<u32, u32>,
    exclusions: &[Vec<u32>],
    ks: &[usize],
    exec: Exec,
) -> Result<MetricsReport> {
    check_ks(ks)?;
    let users: Vec<(u32, u32)> = held_out.iter().map(|(&u, &i)| (u, i)).collect();
    let ranks = exec.map_slice(&users, |&(u, item)| {
        let scores = score_user_all(final_users.row(u as usize), final_items);
        let excluded = exclusions.get(u as usize).map(Vec::as_slice).unwrap_or(&[]);
        rank_of_test_item(&scores, item, excluded)
    });
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for rank in ranks {
        let rank = rank?;
        for (p, &k) in ks.iter().enumerate() {
            let (r, n) = metrics_from_rank(rank, k);
            recall[p] += r;
            ndcg[p] += n;
        }
    }
    let count = users.len();
    if count > 0 {
        for x in recall.iter_mut().chain(ndcg.iter_mut()) {
            *x /= count as f64;
        }
    }
    Ok(MetricsReport {
        label: String::new(),
        ks: ks.to_vec(),
        recall,
        ndcg,
        users: count,
    })
}

/// Per-user items excluded at test time: train target positives plus the
/// validation item.
pub fn test_exclusions(split: &SplitDataset) -> Vec<Vec<u32>> {
    let mut excl = split.train_positives();
    for (&u, &v) in &split.validation {
        excl[u as usize].push(v);
    }
    excl
}

pub fn evaluate_split<T: Real>(
    params: &CascadeParams<T>,
    config: &ModelConfig,
    graphs: &[BehaviorGraph],
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    evaluate_split_with(Exec::default(), params, config, graphs, split, ks)
}

pub fn evaluate_split_with<T: Real>(
    exec: Exec,
    params: &CascadeParams<T>,
    config: &ModelConfig,
    graphs: &[BehaviorGraph],
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    if split.test.is_empty() {
        return Err(Error::Contract("no test users to evaluate".into()));
    }
    let trace = cascade_forward_with(exec, graphs, params, config)?;
    evaluate_embeddings(
        &trace.final_users,
        &trace.final_items,
        &split.test,
        &test_exclusions(split),
        ks,
        exec,
    )
}
