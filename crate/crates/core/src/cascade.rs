//! Forward pass of the cascading model.
//!
//! Behavior `b` runs a LightGCN block of depth `L_b` on its own graph. The
//! block sum (layers `0..=L_b`) is the behavior's output. Passed through the
//! per-side transform matrices, that output becomes the next block's layer 0.
//! The first block starts from the free embedding tables `P` and `Q`.
//! Behavior outputs are then aggregated and scored by inner product.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::BehaviorGraph;
use crate::mat::Mat;
use crate::par::Exec;
use crate::real::{dot, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// Element-wise sum of every behavior's output.
    Sum,
    /// Behavior outputs side by side, first behavior first.
    Concat,
    /// Only the target behavior's output.
    LastOnly,
}

impl Aggregation {
    pub fn code(self) -> u32 {
        match self {
            Aggregation::Sum => 0,
            Aggregation::Concat => 1,
            Aggregation::LastOnly => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Aggregation::Sum),
            1 => Some(Aggregation::Concat),
            2 => Some(Aggregation::LastOnly),
            _ => None,
        }
    }

    pub const ALL: [Aggregation; 3] = [Aggregation::Sum, Aggregation::Concat, Aggregation::LastOnly];
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Concat => "concat",
            Aggregation::LastOnly => "last",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Aggregation::Sum),
            "concat" => Ok(Aggregation::Concat),
            "last" | "last_only" => Ok(Aggregation::LastOnly),
            other => Err(Error::Config(format!(
                "unknown aggregation {other:?} (expected sum, concat or last)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Propagation depth per behavior, in chain order.
    pub layers: Vec<usize>,
    pub transform: bool,
    pub aggregation: Aggregation,
}

impl ModelConfig {
    pub fn new(dim: usize, layers: Vec<usize>) -> Self {
        ModelConfig {
            dim,
            layers,
            transform: true,
            aggregation: Aggregation::Sum,
        }
    }

    pub fn num_behaviors(&self) -> usize {
        self.layers.len()
    }

    /// Width of the final embeddings.
    pub fn output_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.dim * self.num_behaviors(),
            _ => self.dim,
        }
    }

    /// Number of transform matrices per side.
    pub fn num_transforms(&self) -> usize {
        if self.transform {
            self.num_behaviors().saturating_sub(1)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("behavior chain must have at least one behavior".into()));
        }
        Ok(())
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeParams<T> {
    /// `M×d` user table.
    pub user_emb: Mat<T>,
    /// `N×d` item table.
    pub item_emb: Mat<T>,
    /// One `d×d` matrix per behavior boundary, applied to user rows.
    pub user_transforms: Vec<Mat<T>>,
    /// One `d×d` matrix per behavior boundary, applied to item rows.
    pub item_transforms: Vec<Mat<T>>,
}

impl<T: Real> CascadeParams<T> {
    pub fn zeros(config: &ModelConfig, num_users: usize, num_items: usize) -> Self {
        let d = config.dim;
        let t = config.num_transforms();
        CascadeParams {
            user_emb: Mat::zeros(num_users, d),
            item_emb: Mat::zeros(num_items, d),
            user_transforms: (0..t).map(|_| Mat::zeros(d, d)).collect(),
            item_transforms: (0..t).map(|_| Mat::zeros(d, d)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CascadeParams {
            user_emb: Mat::zeros(self.user_emb.rows(), self.user_emb.cols()),
            item_emb: Mat::zeros(self.item_emb.rows(), self.item_emb.cols()),
            user_transforms: self
                .user_transforms
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            item_transforms: self
                .item_transforms
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    /// Tensors in canonical order: `P`, `Q`, user transforms, item transforms.
    pub fn tensors(&self) -> Vec<&Mat<T>> {
        let mut v = vec![&self.user_emb, &self.item_emb];
        v.extend(self.user_transforms.iter());
        v.extend(self.item_transforms.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut v = vec![&mut self.user_emb, &mut self.item_emb];
        v.extend(self.user_transforms.iter_mut());
        v.extend(self.item_transforms.iter_mut());
        v
    }

    /// Human-readable name of the tensor at `idx` in [`Self::tensors`] order.
    pub fn tensor_name(&self, idx: usize) -> String {
        let t = self.user_transforms.len();
        match idx {
            0 => "user_emb".into(),
            1 => "item_emb".into(),
            k if k < 2 + t => format!("user_transform[{}]", k - 2),
            k => format!("item_transform[{}]", k - 2 - t),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    /// `‖Θ‖²` over every parameter.
    pub fn squared_norm(&self) -> T {
        self.tensors().iter().map(|m| m.squared_norm()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }

    /// Checks that shapes agree with `config` and the given table sizes.
    pub fn check_shapes(&self, config: &ModelConfig, num_users: usize, num_items: usize) -> Result<()> {
        let d = config.dim;
        let t = config.num_transforms();
        let ok = self.user_emb.shape() == (num_users, d)
            && self.item_emb.shape() == (num_items, d)
            && self.user_transforms.len() == t
            && self.item_transforms.len() == t
            && self
                .user_transforms
                .iter()
                .chain(&self.item_transforms)
                .all(|w| w.shape() == (d, d));
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "parameters do not match config (d={d}, {t} transforms, {num_users} users, {num_items} items)"
            )))
        }
    }

    pub fn cast<U: Real>(&self) -> CascadeParams<U> {
        CascadeParams {
            user_emb: self.user_emb.cast(),
            item_emb: self.item_emb.cast(),
            user_transforms: self.user_transforms.iter().map(Mat::cast).collect(),
            item_transforms: self.item_transforms.iter().map(Mat::cast).collect(),
        }
    }
}

/// Xavier-uniform initialization of every tensor.
///
/// Transforms use fan-in = fan-out = `d`; the embedding tables use the same
/// `(d, d)` fans, giving the bound `sqrt(3 / d)` everywhere.
pub fn init_params<T: Real>(config: &ModelConfig, num_users: usize, num_items: usize, seed: u64) -> CascadeParams<T> {
    let mut params = CascadeParams::zeros(config, num_users, num_items);
    let d = config.dim as f64;
    let bound = (6.0 / (d + d)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tensor in params.tensors_mut() {
        for x in tensor.as_mut_slice() {
            *x = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
    }
    params
}

/// Layer-by-layer embeddings of one LightGCN block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace<T> {
    /// `user_layers[0]` is the block input.
    pub user_layers: Vec<Mat<T>>,
    pub item_layers: Vec<Mat<T>>,
    pub user_sum: Mat<T>,
    pub item_sum: Mat<T>,
}

impl<T: Real> BlockTrace<T> {
    pub fn depth(&self) -> usize {
        self.user_layers.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub blocks: Vec<BlockTrace<T>>,
    pub final_users: Mat<T>,
    pub final_items: Mat<T>,
}

pub fn block_forward<T: Real>(
    graph: &BehaviorGraph,
    input_users: Mat<T>,
    input_items: Mat<T>,
    depth: usize,
) -> Result<BlockTrace<T>> {
    block_forward_with(Exec::default(), graph, input_users, input_items, depth)
}

pub fn block_forward_with<T: Real>(
    exec: Exec,
    graph: &BehaviorGraph,
    input_users: Mat<T>,
    input_items: Mat<T>,
    depth: usize,
) -> Result<BlockTrace<T>> {
    if input_users.rows() != graph.num_users()
        || input_items.rows() != graph.num_items()
        || input_users.cols() != input_items.cols()
    {
        return Err(Error::Contract(format!(
            "block input {:?}/{:?} does not fit a {}x{} graph",
            input_users.shape(),
            input_items.shape(),
            graph.num_users(),
            graph.num_items()
        )));
    }
    let mut user_sum = input_users.clone();
    let mut item_sum = input_items.clone();
    let mut user_layers = vec![input_users];
    let mut item_layers = vec![input_items];
    for l in 0..depth {
        let (nu, ni) = graph.propagate_unchecked(&user_layers[l], &item_layers[l], exec);
        user_sum.add_assign(&nu);
        item_sum.add_assign(&ni);
        user_layers.push(nu);
        item_layers.push(ni);
    }
    Ok(BlockTrace {
        user_layers,
        item_layers,
        user_sum,
        item_sum,
    })
}

/// Maps every user row through `w_user` and every item row through `w_item`
/// (`row ← W · row`).
pub fn feature_transform<T: Real>(
    user_sum: &Mat<T>,
    item_sum: &Mat<T>,
    w_user: &Mat<T>,
    w_item: &Mat<T>,
) -> (Mat<T>, Mat<T>) {
    feature_transform_with(Exec::default(), user_sum, item_sum, w_user, w_item)
}

pub fn feature_transform_with<T: Real>(
    exec: Exec,
    user_sum: &Mat<T>,
    item_sum: &Mat<T>,
    w_user: &Mat<T>,
    w_item: &Mat<T>,
) -> (Mat<T>, Mat<T>) {
    exec.join(
        || user_sum.map_rows_by(w_user, exec),
        || item_sum.map_rows_by(w_item, exec),
    )
}

/// Combines per-behavior `(user, item)` outputs into the final embeddings.
pub fn aggregate<T: Real>(blocks: &[(&Mat<T>, &Mat<T>)], mode: Aggregation) -> Result<(Mat<T>, Mat<T>)> {
    let (first_u, first_i) = *blocks
        .first()
        .ok_or_else(|| Error::Contract("aggregate needs at least one behavior".into()))?;
    for (u, i) in blocks {
        if u.shape() != first_u.shape() || i.shape() != first_i.shape() {
            return Err(Error::Contract("behavior outputs have mixed shapes".into()));
        }
    }
    Ok(match mode {
        Aggregation::Sum => {
            let mut u = first_u.clone();
            let mut i = first_i.clone();
            for (bu, bi) in &blocks[1..] {
                u.add_assign(bu);
                i.add_assign(bi);
            }
            (u, i)
        }
        Aggregation::Concat => (
            concat_cols(blocks.iter().map(|b| b.0)),
            concat_cols(blocks.iter().map(|b| b.1)),
        ),
        Aggregation::LastOnly => {
            let (u, i) = blocks[blocks.len() - 1];
            (u.clone(), i.clone())
        }
    })
}

fn concat_cols<'a, T: Real>(parts: impl Iterator<Item = &'a Mat<T>> + Clone) -> Mat<T> {
    let rows = parts.clone().next().map_or(0, |m| m.rows());
    let width: usize = parts.clone().map(|m| m.cols()).sum();
    let mut out = Mat::zeros(rows, width);
    for r in 0..rows {
        let mut offset = 0;
        let dst = out.row_mut(r);
        for m in parts.clone() {
            dst[offset..offset + m.cols()].copy_from_slice(m.row(r));
            offset += m.cols();
        }
    }
    out
}

pub fn cascade_forward<T: Real>(
    graphs: &[BehaviorGraph],
    params: &CascadeParams<T>,
    config: &ModelConfig,
) -> Result<ForwardTrace<T>> {
    cascade_forward_with(Exec::default(), graphs, params, config)
}

pub fn cascade_forward_with<T: Real>(
    exec: Exec,
    graphs: &[BehaviorGraph],
    params: &CascadeParams<T>,
    config: &ModelConfig,
) -> Result<ForwardTrace<T>> {
    config.validate()?;
    if graphs.len() != config.num_behaviors() {
        return Err(Error::Contract(format!(
            "{} graphs for a chain of {} behaviors",
            graphs.len(),
            config.num_behaviors()
        )));
    }
    let (m, n) = (graphs[0].num_users(), graphs[0].num_items());
    if graphs.iter().any(|g| g.num_users() != m || g.num_items() != n) {
        return Err(Error::Contract("behavior graphs disagree on user/item counts".into()));
    }
    params.check_shapes(config, m, n)?;

    let mut blocks: Vec<BlockTrace<T>> = Vec::with_capacity(graphs.len());
    let mut input = (params.user_emb.clone(), params.item_emb.clone());
    for (b, graph) in graphs.iter().enumerate() {
        let block = block_forward_with(exec, graph, input.0, input.1, config.layers[b])?;
        if b + 1 < graphs.len() {
            input = if config.transform {
                feature_transform_with(
                    exec,
                    &block.user_sum,
                    &block.item_sum,
                    &params.user_transforms[b],
                    &params.item_transforms[b],
                )
            } else {
                (block.user_sum.clone(), block.item_sum.clone())
            };
        } else {
            input = (Mat::zeros(0, 0), Mat::zeros(0, 0));
        }
        blocks.push(block);
    }

    let outputs: Vec<(&Mat<T>, &Mat<T>)> = blocks.iter().map(|b| (&b.user_sum, &b.item_sum)).collect();
    let (final_users, final_items) = aggregate(&outputs, config.aggregation)?;
    Ok(ForwardTrace {
        blocks,
        final_users,
        final_items,
    })
}

/// Predicted preference `ŷ = e_u · e_i`.
#[inline]
pub fn score_pair<T: Real>(user: &[T], item: &[T]) -> T {
    dot(user, item)
}

/// Scores of one user against every item row.
pub fn score_user_all<T: Real>(user: &[T], items: &Mat<T>) -> Vec<T> {
    (0..items.rows()).map(|n| score_pair(user, items.row(n))).collect()
}
