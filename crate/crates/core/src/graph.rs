//! Symmetric-normalized bipartite adjacency and LightGCN propagation.
//!
//! Edge weights are `1 / sqrt(deg(u) · deg(i))` with degrees counted inside
//! one behavior. The graph is stored twice in compressed-row form, once per
//! side, so both directions of a layer (and its transpose in the backward
//! pass) are row-parallel gathers.

use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::par::Exec;
use crate::real::{axpy, Real};

/// Compressed sparse rows: neighbours of row `r` are
/// `cols[ptr[r]..ptr[r + 1]]` with matching `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Csr {
    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.ptr[r]..self.ptr[r + 1];
        (&self.cols[span.clone()], &self.weights[span])
    }

    pub fn num_rows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn degree(&self, r: usize) -> usize {
        self.ptr[r + 1] - self.ptr[r]
    }

    /// Row-wise weighted gather: `out[r] = Σ w · src[col]`.
    fn gather<T: Real>(&self, src: &Mat<T>, exec: Exec) -> Mat<T> {
        let mut out = Mat::zeros(self.num_rows(), src.cols());
        exec.for_each_row(out.as_mut_slice(), src.cols(), |r, out_row| {
            let (cols, weights) = self.row(r);
            for (&c, &w) in cols.iter().zip(weights) {
                axpy(T::from_f64_lossy(w), src.row(c as usize), out_row);
            }
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorGraph {
    num_users: usize,
    num_items: usize,
    user_adj: Csr,
    item_adj: Csr,
}

impl BehaviorGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.cols.len()
    }

    pub fn user_adj(&self) -> &Csr {
        &self.user_adj
    }

    pub fn item_adj(&self) -> &Csr {
        &self.item_adj
    }

    /// Stored weight of edge `(u, i)`, if present.
    pub fn weight(&self, u: usize, i: usize) -> Option<f64> {
        let (cols, weights) = self.user_adj.row(u);
        cols.binary_search(&(i as u32)).ok().map(|k| weights[k])
    }

    /// Builds the graph from raw `(user, item)` pairs. Duplicates collapse
    /// to a single edge.
    pub fn from_pairs<I>(pairs: I, num_users: usize, num_items: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut edges: Vec<(u32, u32)> = Vec::new();
        for (u, i) in pairs {
            if u as usize >= num_users || i as usize >= num_items {
                return Err(Error::Contract(format!(
                    "edge ({u}, {i}) outside a {num_users}x{num_items} graph"
                )));
            }
            edges.push((u, i));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut user_deg = vec![0usize; num_users];
        let mut item_deg = vec![0usize; num_items];
        for &(u, i) in &edges {
            user_deg[u as usize] += 1;
            item_deg[i as usize] += 1;
        }
        let weight = |u: u32, i: u32| 1.0 / ((user_deg[u as usize] * item_deg[i as usize]) as f64).sqrt();

        let user_ptr = prefix_sums(&user_deg);
        let user_adj = Csr {
            cols: edges.iter().map(|&(_, i)| i).collect(),
            weights: edges.iter().map(|&(u, i)| weight(u, i)).collect(),
            ptr: user_ptr,
        };

        // Counting-sort transpose; users stay ascending within each item row.
        let item_ptr = prefix_sums(&item_deg);
        let mut fill = item_ptr.clone();
        let mut cols = vec![0u32; edges.len()];
        let mut weights = vec![0.0; edges.len()];
        for (k, &(u, i)) in edges.iter().enumerate() {
            let slot = &mut fill[i as usize];
            cols[*slot] = u;
            weights[*slot] = user_adj.weights[k];
            *slot += 1;
        }
        let item_adj = Csr {
            ptr: item_ptr,
            cols,
            weights,
        };

        Ok(BehaviorGraph {
            num_users,
            num_items,
            user_adj,
            item_adj,
        })
    }

    /// Dense `M×N` normalized adjacency; intended for checks on tiny graphs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.num_items]; self.num_users];
        for (u, row) in out.iter_mut().enumerate() {
            let (cols, weights) = self.user_adj.row(u);
            for (&i, &w) in cols.iter().zip(weights) {
                row[i as usize] = w;
            }
        }
        out
    }

    fn check_dims<T: Real>(&self, users: &Mat<T>, items: &Mat<T>) -> Result<()> {
        if users.rows() != self.num_users || items.rows() != self.num_items {
            return Err(Error::Contract(format!(
                "embedding rows ({}, {}) do not match graph ({}, {})",
                users.rows(),
                items.rows(),
                self.num_users,
                self.num_items
            )));
        }
        if users.cols() != items.cols() {
            return Err(Error::Contract(format!(
                "user width {} differs from item width {}",
                users.cols(),
                items.cols()
            )));
        }
        Ok(())
    }

    /// One layer without dimension checks. The bipartite operator is
    /// symmetric, so this same map also backpropagates a layer.
    pub(crate) fn propagate_unchecked<T: Real>(&self, users: &Mat<T>, items: &Mat<T>, exec: Exec) -> (Mat<T>, Mat<T>) {
        exec.join(
            || self.user_adj.gather(items, exec),
            || self.item_adj.gather(users, exec),
        )
    }
}

fn prefix_sums(deg: &[usize]) -> Vec<usize> {
    let mut ptr = Vec::with_capacity(deg.len() + 1);
    let mut acc = 0;
    ptr.push(0);
    for &d in deg {
        acc += d;
        ptr.push(acc);
    }
    ptr
}

pub fn build_normalized_adjacency(set: &InteractionSet, num_users: usize, num_items: usize) -> Result<BehaviorGraph> {
    BehaviorGraph::from_pairs(set.pairs(), num_users, num_items)
}

/// One simultaneous LightGCN layer: new users aggregate the input item rows,
/// new items aggregate the input user rows.
pub fn propagate_layer<T: Real>(graph: &BehaviorGraph, users: &Mat<T>, items: &Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
    propagate_layer_with(Exec::default(), graph, users, items)
}

pub fn propagate_layer_with<T: Real>(
    exec: Exec,
    graph: &BehaviorGraph,
    users: &Mat<T>,
    items: &Mat<T>,
) -> Result<(Mat<T>, Mat<T>)> {
    graph.check_dims(users, items)?;
    Ok(graph.propagate_unchecked(users, items, exec))
}
