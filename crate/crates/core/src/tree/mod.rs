//! Non-recombining binary scenario tree for the common noise and processes
//! indexed by its nodes.
//!
//! Nodes are stored in heap order: level `k`, path `p` has id
//! `2^k - 1 + p`; its children are `2 id + 1` (down, `-sqrt(dt)`) and
//! `2 id + 2` (up, `+sqrt(dt)`). The path bits of `p` record the moves,
//! most significant first.

mod dump;

pub use dump::write_tree_csv;

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest depth accepted by [`NoiseTree::new`].
pub const MAX_DEPTH: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseTree {
    depth: usize,
    dt: f64,
    t0: f64,
}

impl NoiseTree {
    pub fn new(depth: usize, dt: f64) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(Error::InvalidParameter(format!("tree depth {depth}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("tree step dt = {dt}")));
        }
        Ok(Self { depth, dt, t0: 0.0 })
    }

    /// Tree over `[0, horizon]` with `depth` steps.
    pub fn over(horizon: f64, depth: usize) -> Result<Self> {
        Self::new(depth, horizon / depth.max(1) as f64)
    }

    /// Same tree rooted at time `t0`.
    pub fn starting_at(self, t0: f64) -> Self {
        Self { t0, ..self }
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.t0 + self.depth as f64 * self.dt
    }

    #[inline]
    pub fn sqrt_dt(&self) -> f64 {
        self.dt.sqrt()
    }

    pub fn node_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    /// Ids of the nodes at level `k`.
    #[inline]
    pub fn level_range(&self, k: usize) -> Range<usize> {
        ((1usize << k) - 1)..((1usize << (k + 1)) - 1)
    }

    #[inline]
    pub fn node(&self, level: usize, path: usize) -> usize {
        (1usize << level) - 1 + path
    }

    #[inline]
    pub fn level_of(&self, id: usize) -> usize {
        (usize::BITS - 1 - (id + 1).leading_zeros()) as usize
    }

    #[inline]
    pub fn path_of(&self, id: usize) -> usize {
        id + 1 - (1usize << self.level_of(id))
    }

    #[inline]
    pub fn is_leaf(&self, id: usize) -> bool {
        self.level_of(id) == self.depth
    }

    /// `(down, up)` children of a non-leaf node.
    #[inline]
    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        (!self.is_leaf(id)).then_some((2 * id + 1, 2 * id + 2))
    }

    #[inline]
    pub fn parent(&self, id: usize) -> Option<usize> {
        (id > 0).then(|| (id - 1) / 2)
    }

    #[inline]
    pub fn time(&self, id: usize) -> f64 {
        self.t0 + self.level_of(id) as f64 * self.dt
    }

    /// `+-1` increment sign of the edge into `id`.
    #[inline]
    pub fn increment_sign(&self, id: usize) -> f64 {
        if id % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Common-noise path value `B0` at a node.
    pub fn b0(&self, id: usize) -> f64 {
        let k = self.level_of(id) as f64;
        let ups = self.path_of(id).count_ones() as f64;
        (2.0 * ups - k) * self.sqrt_dt()
    }

    /// The subtree below `root` as a tree of its own, together with the map
    /// from its node ids to ids of `self`.
    pub fn subtree(&self, root: usize) -> Result<(NoiseTree, Vec<usize>)> {
        let k = self.level_of(root);
        if k >= self.depth {
            return Err(Error::LeafNode(root));
        }
        let sub = NoiseTree {
            depth: self.depth - k,
            dt: self.dt,
            t0: self.time(root),
        };
        let p = self.path_of(root);
        let map = (0..sub.node_count())
            .map(|id| {
                let j = sub.level_of(id);
                self.node(k + j, (p << j) + sub.path_of(id))
            })
            .collect();
        Ok((sub, map))
    }
}

/// A payload at every node of a tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeProcess<T> {
    tree: NoiseTree,
    values: Vec<T>,
}

impl<T> TreeProcess<T> {
    pub fn new(tree: NoiseTree, values: Vec<T>) -> Result<Self> {
        if values.len() != tree.node_count() {
            return Err(Error::LengthMismatch {
                expected: tree.node_count(),
                got: values.len(),
            });
        }
        Ok(Self { tree, values })
    }

    pub fn from_fn(tree: NoiseTree, f: impl FnMut(usize) -> T) -> Self {
        Self {
            tree,
            values: (0..tree.node_count()).map(f).collect(),
        }
    }

    #[inline]
    pub fn tree(&self) -> &NoiseTree {
        &self.tree
    }

    #[inline]
    pub fn get(&self, id: usize) -> &T {
        &self.values[id]
    }

    #[inline]
    pub fn root(&self) -> &T {
        &self.values[0]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn level(&self, k: usize) -> &[T] {
        &self.values[self.tree.level_range(k)]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> TreeProcess<U> {
        TreeProcess {
            tree: self.tree,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Restriction to the subtree below `root`.
    pub fn restrict(&self, root: usize) -> Result<TreeProcess<T>>
    where
        T: Clone,
    {
        let (sub, map) = self.tree.subtree(root)?;
        Ok(TreeProcess {
            tree: sub,
            values: map.iter().map(|&i| self.values[i].clone()).collect(),
        })
    }
}

impl<T: Clone> TreeProcess<T> {
    pub fn constant(tree: NoiseTree, value: T) -> Self {
        Self {
            tree,
            values: vec![value; tree.node_count()],
        }
    }
}

impl<T: Send + Sync> TreeProcess<T> {
    /// Backward level sweep: leaves from `leaf`, every other node from its
    /// `(down, up)` children. Nodes of one level run in parallel.
    pub fn backward(
        tree: NoiseTree,
        leaf: impl Fn(usize) -> Result<T> + Sync,
        node: impl Fn(usize, &T, &T) -> Result<T> + Sync,
    ) -> Result<Self> {
        let mut values: Vec<Option<T>> = (0..tree.node_count()).map(|_| None).collect();
        let leaves = tree.level_range(tree.depth);
        values[leaves.clone()]
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, slot)| -> Result<()> {
                *slot = Some(leaf(leaves.start + i)?);
                Ok(())
            })?;
        for k in (0..tree.depth).rev() {
            let range = tree.level_range(k);
            let (head, tail) = values.split_at_mut(range.end);
            let offset = range.end;
            let children = &*tail;
            head[range.clone()]
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(i, slot)| -> Result<()> {
                    let id = range.start + i;
                    let (d, u) = (2 * id + 1 - offset, 2 * id + 2 - offset);
                    let (d, u) = (children[d].as_ref(), children[u].as_ref());
                    *slot = Some(node(id, d.expect("child filled"), u.expect("child filled"))?);
                    Ok(())
                })?;
        }
        Ok(Self {
            tree,
            values: values.into_iter().map(|v| v.expect("all nodes filled")).collect(),
        })
    }

    /// Forward level sweep: root value, then each child from its parent.
    pub fn forward(tree: NoiseTree, root: T, child: impl Fn(usize, &T) -> Result<T> + Sync) -> Result<Self> {
        let mut values: Vec<Option<T>> = (0..tree.node_count()).map(|_| None).collect();
        values[0] = Some(root);
        for k in 1..=tree.depth {
            let range = tree.level_range(k);
            let (head, tail) = values.split_at_mut(range.start);
            let parents = &*head;
            tail[..range.len()]
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(i, slot)| -> Result<()> {
                    let id = range.start + i;
                    let p = parents[(id - 1) / 2].as_ref().expect("parent filled");
                    *slot = Some(child(id, p)?);
                    Ok(())
                })?;
        }
        Ok(Self {
            tree,
            values: values.into_iter().map(|v| v.expect("all nodes filled")).collect(),
        })
    }
}

/// `E[Y_children | node]`, the mean of the two children.
pub fn cond_expect(p: &TreeProcess<f64>, node: usize) -> Result<f64> {
    let (d, u) = p.tree.children(node).ok_or(Error::LeafNode(node))?;
    Ok(0.5 * (p.values[d] + p.values[u]))
}

/// One-step representation `Y_child = E + sigma0 Z dB`; returns `Z` and the
/// largest reconstruction error over the two children.
pub fn martingale_repr(y: &TreeProcess<f64>, node: usize, sigma0: f64, dt: f64) -> Result<(f64, f64)> {
    let (d, u) = y.tree.children(node).ok_or(Error::LeafNode(node))?;
    let (yd, yu) = (y.values[d], y.values[u]);
    let s = dt.sqrt();
    let z = (yu - yd) / (2.0 * sigma0 * s);
    let e = 0.5 * (yu + yd);
    let residual = (e + sigma0 * z * s - yu).abs().max((e - sigma0 * z * s - yd).abs());
    Ok((z, residual))
}

/// Euler scheme `X_child = X_node + drift_node dt + sigma0 dB` on the tree.
pub fn simulate_major_forward(x0: f64, drift: &TreeProcess<f64>, sigma0: f64, tree: &NoiseTree) -> TreeProcess<f64> {
    let s = tree.sqrt_dt();
    let dt = tree.dt();
    let mut values = vec![0.0; tree.node_count()];
    values[0] = x0;
    for id in 1..tree.node_count() {
        let parent = (id - 1) / 2;
        values[id] = values[parent] + drift.values[parent] * dt + sigma0 * tree.increment_sign(id) * s;
    }
    TreeProcess { tree: *tree, values }
}

/// `S(node) = a(node) + E[S(children) | node]` with `S = 0` at the leaves:
/// the exact conditional sum of `a` from each node to the horizon.
pub fn conditional_sums(a: &TreeProcess<f64>) -> TreeProcess<f64> {
    let tree = a.tree;
    let mut s = vec![0.0; tree.node_count()];
    for id in (0..tree.level_range(tree.depth).start).rev() {
        s[id] = a.values[id] + 0.5 * (s[2 * id + 1] + s[2 * id + 2]);
    }
    TreeProcess { tree, values: s }
}
