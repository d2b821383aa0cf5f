//! BPR objective and its exact gradient through the whole cascade.
//!
//! Backward pass, for a batch of `(u, i, j)` triplets with margin
//! `m = ŷ_ui − ŷ_uj`:
//!
//! 1. Each triplet seeds `∂/∂m = −σ(−m)` into the final user row and the
//!    two final item rows.
//! 2. Aggregation routes the final-embedding gradient to each behavior's
//!    block sum (copy for sum, column slice for concat, target only for
//!    last).
//! 3. Going from the target behavior back to the first: a transform
//!    `X' = S·Wᵀ` contributes `dW = dX'ᵀ·S` and `dS += dX'·W`; a block of
//!    depth `L` maps its sum gradient `G` to an input gradient
//!    `Σ_{l=0..L} Aˡ G`. The bipartite operator `A` is symmetric, so the
//!    backward of a layer is the same propagation.
//! 4. The first block's input gradient lands on `P` and `Q`; the L2 term
//!    adds `2λθ` to every entry.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cascade::{cascade_forward_with, Aggregation, CascadeParams, ForwardTrace, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::BehaviorGraph;
use crate::mat::Mat;
use crate::par::Exec;
use crate::real::{axpy, dot, sigmoid, softplus, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

impl Triplet {
    pub fn new(user: u32, pos: u32, neg: u32) -> Self {
        Triplet { user, pos, neg }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn new(triplets: Vec<Triplet>) -> Self {
        TripletBatch { triplets }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Gradients share the exact layout of the parameters they differentiate.
pub type Gradients<T> = CascadeParams<T>;

/// `(−ln σ(m), ∂/∂m)` for one margin.
#[inline]
pub fn pairwise_terms<T: Real>(margin: T) -> (T, T) {
    (softplus(-margin), -sigmoid(-margin))
}

fn check_batch<T: Real>(users: &Mat<T>, items: &Mat<T>, batch: &TripletBatch) -> Result<()> {
    for t in &batch.triplets {
        if t.user as usize >= users.rows() || t.pos as usize >= items.rows() || t.neg as usize >= items.rows() {
            return Err(Error::Contract(format!("triplet {t:?} out of range")));
        }
    }
    Ok(())
}

fn margins<T: Real>(users: &Mat<T>, items: &Mat<T>, batch: &TripletBatch, exec: Exec) -> Vec<T> {
    exec.map_slice(&batch.triplets, |t| {
        let eu = users.row(t.user as usize);
        dot(eu, items.row(t.pos as usize)) - dot(eu, items.row(t.neg as usize))
    })
}

/// Sum of `−ln σ(ŷ_ui − ŷ_uj)` over the batch, from final embeddings.
pub fn bpr_loss_from_embeddings<T: Real>(
    final_users: &Mat<T>,
    final_items: &Mat<T>,
    batch: &TripletBatch,
) -> Result<T> {
    check_batch(final_users, final_items, batch)?;
    Ok(margins(final_users, final_items, batch, Exec::Sequential)
        .into_iter()
        .map(|m| pairwise_terms(m).0)
        .sum())
}

/// Full objective: pairwise term plus `λ‖Θ‖²`.
pub fn bpr_loss<T: Real>(
    trace: &ForwardTrace<T>,
    batch: &TripletBatch,
    params: &CascadeParams<T>,
    lambda: T,
) -> Result<T> {
    Ok(bpr_loss_from_embeddings(&trace.final_users, &trace.final_items, batch)? + lambda * params.squared_norm())
}

/// Gradient of the pairwise term with respect to the final embeddings.
///
/// Seeds are scattered in batch order so duplicates add deterministically.
pub fn embedding_seeds<T: Real>(
    final_users: &Mat<T>,
    final_items: &Mat<T>,
    batch: &TripletBatch,
    exec: Exec,
) -> Result<(Mat<T>, Mat<T>)> {
    check_batch(final_users, final_items, batch)?;
    let slopes: Vec<T> = margins(final_users, final_items, batch, exec)
        .into_iter()
        .map(|m| pairwise_terms(m).1)
        .collect();
    let mut gu = Mat::zeros(final_users.rows(), final_users.cols());
    let mut gi = Mat::zeros(final_items.rows(), final_items.cols());
    for (t, &g) in batch.triplets.iter().zip(&slopes) {
        let (u, i, j) = (t.user as usize, t.pos as usize, t.neg as usize);
        let eu = final_users.row(u);
        axpy(g, final_items.row(i), gu.row_mut(u));
        axpy(-g, final_items.row(j), gu.row_mut(u));
        axpy(g, eu, gi.row_mut(i));
        axpy(-g, eu, gi.row_mut(j));
    }
    Ok((gu, gi))
}

fn column_slice<T: Real>(m: &Mat<T>, start: usize, width: usize) -> Mat<T> {
    Mat::from_fn(m.rows(), width, |r, c| m.get(r, start + c))
}

pub fn backward_batch<T: Real>(
    trace: &ForwardTrace<T>,
    graphs: &[BehaviorGraph],
    batch: &TripletBatch,
    params: &CascadeParams<T>,
    config: &ModelConfig,
    lambda: T,
) -> Result<Gradients<T>> {
    backward_batch_with(Exec::default(), trace, graphs, batch, params, config, lambda)
}

pub fn backward_batch_with<T: Real>(
    exec: Exec,
    trace: &ForwardTrace<T>,
    graphs: &[BehaviorGraph],
    batch: &TripletBatch,
    params: &CascadeParams<T>,
    config: &ModelConfig,
    lambda: T,
) -> Result<Gradients<T>> {
    let b_count = config.num_behaviors();
    if trace.blocks.len() != b_count || graphs.len() != b_count {
        return Err(Error::Contract(format!(
            "trace has {} blocks and {} graphs for a chain of {b_count}",
            trace.blocks.len(),
            graphs.len()
        )));
    }
    params.check_shapes(config, params.num_users(), params.num_items())?;
    let first = &trace.blocks[0];
    if first.user_layers[0] != params.user_emb || first.item_layers[0] != params.item_emb {
        return Err(Error::Contract("trace was not produced by these parameters".into()));
    }
    for (b, block) in trace.blocks.iter().enumerate() {
        if block.depth() != config.layers[b] {
            return Err(Error::Contract(format!(
                "block {b} has depth {} but config says {}",
                block.depth(),
                config.layers[b]
            )));
        }
    }
    if trace.final_users.cols() != config.output_dim() {
        return Err(Error::Contract(
            "final embedding width does not match aggregation".into(),
        ));
    }

    let (seed_u, seed_i) = embedding_seeds(&trace.final_users, &trace.final_items, batch, exec)?;
    let d = config.dim;
    let mut grads = params.zeros_like();
    let mut carry: Option<(Mat<T>, Mat<T>)> = None;

    for b in (0..b_count).rev() {
        let block = &trace.blocks[b];
        let (mut gu, mut gi) = match config.aggregation {
            Aggregation::Sum => (seed_u.clone(), seed_i.clone()),
            Aggregation::Concat => (column_slice(&seed_u, b * d, d), column_slice(&seed_i, b * d, d)),
            Aggregation::LastOnly if b + 1 == b_count => (seed_u.clone(), seed_i.clone()),
            Aggregation::LastOnly => (
                Mat::zeros(block.user_sum.rows(), d),
                Mat::zeros(block.item_sum.rows(), d),
            ),
        };

        if let Some((cu, ci)) = carry.take() {
            if config.transform {
                let (wu, wi) = (&params.user_transforms[b], &params.item_transforms[b]);
                let ((dwu, back_u), (dwi, back_i)) = exec.join(
                    || (cu.transpose_mul(&block.user_sum, exec), cu.matmul(wu, exec)),
                    || (ci.transpose_mul(&block.item_sum, exec), ci.matmul(wi, exec)),
                );
                grads.user_transforms[b] = dwu;
                grads.item_transforms[b] = dwi;
                gu.add_assign(&back_u);
                gi.add_assign(&back_i);
            } else {
                gu.add_assign(&cu);
                gi.add_assign(&ci);
            }
        }

        // Horner form of Σ_{l=0..L} Aˡ G.
        let (mut acc_u, mut acc_i) = (gu.clone(), gi.clone());
        for _ in 0..block.depth() {
            let (pu, pi) = graphs[b].propagate_unchecked(&acc_u, &acc_i, exec);
            acc_u = pu;
            acc_i = pi;
            acc_u.add_assign(&gu);
            acc_i.add_assign(&gi);
        }
        carry = Some((acc_u, acc_i));
    }

    let (dp, dq) = carry.expect("chain is non-empty");
    grads.user_emb = dp;
    grads.item_emb = dq;

    if lambda != T::zero() {
        let two_lambda = lambda + lambda;
        for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
            axpy(two_lambda, p.as_slice(), g.as_mut_slice());
        }
    }
    Ok(grads)
}

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(tensor name, flat index, analytic, numerical)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

/// Entries beyond this count are subsampled.
pub const FD_MAX_ENTRIES: usize = 10_000;

pub fn relative_error(analytic: f64, numerical: f64) -> f64 {
    (analytic - numerical).abs() / analytic.abs().max(numerical.abs()).max(1e-8)
}

fn objective(
    graphs: &[BehaviorGraph],
    params: &CascadeParams<f64>,
    config: &ModelConfig,
    batch: &TripletBatch,
    lambda: f64,
) -> Result<f64> {
    let trace = cascade_forward_with(Exec::Sequential, graphs, params, config)?;
    bpr_loss(&trace, batch, params, lambda)
}

/// Compares `analytic` against central differences `(L(θ+ε) − L(θ−ε)) / 2ε`
/// for every parameter entry (or a fixed random subset above
/// [`FD_MAX_ENTRIES`]).
#[allow(clippy::too_many_arguments)]
pub fn compare_with_finite_differences(
    analytic: &Gradients<f64>,
    params: &CascadeParams<f64>,
    graphs: &[BehaviorGraph],
    config: &ModelConfig,
    batch: &TripletBatch,
    lambda: f64,
    epsilon: f64,
    exec: Exec,
) -> Result<FdReport> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    params.check_shapes(config, params.num_users(), params.num_items())?;
    if analytic
        .tensors()
        .iter()
        .map(|m| m.shape())
        .ne(params.tensors().iter().map(|m| m.shape()))
    {
        return Err(Error::Contract(
            "analytic gradient shape differs from parameters".into(),
        ));
    }

    // Flat (tensor, offset) addressing.
    let sizes: Vec<usize> = params.tensors().iter().map(|m| m.as_slice().len()).collect();
    let total: usize = sizes.iter().sum();
    let locate = |mut flat: usize| -> (usize, usize) {
        for (t, &s) in sizes.iter().enumerate() {
            if flat < s {
                return (t, flat);
            }
            flat -= s;
        }
        unreachable!("flat index within total")
    };
    let mut entries: Vec<usize> = if total > FD_MAX_ENTRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sample(&mut rng, total, FD_MAX_ENTRIES).into_vec()
    } else {
        (0..total).collect()
    };
    entries.sort_unstable();

    let results = exec.map_slice(&entries, |&flat| -> Result<(usize, f64, f64)> {
        let (t, k) = locate(flat);
        let mut p = params.clone();
        let theta = p.tensors()[t].as_slice()[k];
        p.tensors_mut()[t].as_mut_slice()[k] = theta + epsilon;
        let plus = objective(graphs, &p, config, batch, lambda)?;
        p.tensors_mut()[t].as_mut_slice()[k] = theta - epsilon;
        let minus = objective(graphs, &p, config, batch, lambda)?;
        let numerical = (plus - minus) / (2.0 * epsilon);
        Ok((flat, analytic.tensors()[t].as_slice()[k], numerical))
    });

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: entries.len(),
    };
    for r in results {
        let (flat, a, n) = r?;
        let err = relative_error(a, n);
        if err > report.max_rel_error || report.worst.is_none() {
            let (t, k) = locate(flat);
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some((params.tensor_name(t), k, a, n));
        }
    }
    Ok(report)
}

/// Runs the forward and backward pass, then checks the result numerically.
pub fn finite_difference_check(
    params: &CascadeParams<f64>,
    graphs: &[BehaviorGraph],
    config: &ModelConfig,
    batch: &TripletBatch,
    lambda: f64,
    epsilon: f64,
) -> Result<FdReport> {
    let exec = Exec::default();
    let trace = cascade_forward_with(exec, graphs, params, config)?;
    let analytic = backward_batch_with(exec, &trace, graphs, batch, params, config, lambda)?;
    compare_with_finite_differences(&analytic, params, graphs, config, batch, lambda, epsilon, exec)
}
