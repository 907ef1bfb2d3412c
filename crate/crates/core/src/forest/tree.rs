use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{best_split, SplitParams, SplitRule};
use crate::error::{Error, Result};
use crate::linalg::{sample_cov_rows, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub cov: SymMatrix,
    pub n: usize,
    /// In-bag row indices (with bootstrap multiplicity). Not persisted.
    #[serde(skip)]
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

/// Binary tree stored as an arena; node 0 is the root. Points with
/// `z[covariate] < cutpoint` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovTree {
    /// Position in the forest, equal to the RNG stream the tree was grown from.
    #[serde(default)]
    index: usize,
    nodes: Vec<Node>,
    #[serde(skip)]
    inbag: Vec<usize>,
}

impl CovTree {
    /// Builds a tree from explicit nodes, checking that child links are valid.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("tree needs at least one node"));
        }
        let dim = nodes.iter().find_map(|n| match n {
            Node::Leaf(l) => Some(l.cov.dim()),
            Node::Split { .. } => None,
        });
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Split { left, right, .. } => {
                    if *left <= i || *right <= i || *left >= nodes.len() || *right >= nodes.len() {
                        return Err(Error::invalid(format!("bad child link at node {i}")));
                    }
                }
                Node::Leaf(l) => {
                    if Some(l.cov.dim()) != dim {
                        return Err(Error::invalid("leaf covariances differ in dimension"));
                    }
                }
            }
        }
        Ok(CovTree {
            index: 0,
            nodes,
            inbag: Vec::new(),
        })
    }

    pub fn single_leaf(cov: SymMatrix, n: usize) -> Self {
        CovTree {
            index: 0,
            nodes: vec![Node::Leaf(Leaf {
                cov,
                n,
                rows: Vec::new(),
            })],
            inbag: Vec::new(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn inbag(&self) -> &[usize] {
        &self.inbag
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &Leaf)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Leaf(l) => Some((i, l)),
            Node::Split { .. } => None,
        })
    }

    pub fn leaf_index(&self, z: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(_) => return idx,
                Node::Split { rule, left, right } => {
                    idx = if z[rule.covariate_index] < rule.cutpoint {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn leaf(&self, z: &[f64]) -> &Leaf {
        match &self.nodes[self.leaf_index(z)] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!("leaf_index always stops at a leaf"),
        }
    }

    /// Split rules in depth-first order, for structural comparisons.
    pub fn split_rules(&self) -> Vec<SplitRule> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { rule, .. } => Some(*rule),
                Node::Leaf(_) => None,
            })
            .collect()
    }

    pub fn leaf_dim(&self) -> usize {
        self.leaves().next().map(|(_, l)| l.cov.dim()).unwrap_or(0)
    }
}

/// Grows one tree on the in-bag multiset `inbag`, splitting recursively
/// until no feasible split exists.
pub fn grow_tree<R: Rng + ?Sized>(
    inbag: Vec<usize>,
    y: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    params: &SplitParams,
    rng: &mut R,
) -> Result<CovTree> {
    let mut nodes = Vec::new();
    grow(&mut nodes, inbag.clone(), y, z, params, rng)?;
    Ok(CovTree {
        index: 0,
        nodes,
        inbag,
    })
}

fn grow<R: Rng + ?Sized>(
    nodes: &mut Vec<Node>,
    rows: Vec<usize>,
    y: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    params: &SplitParams,
    rng: &mut R,
) -> Result<usize> {
    let idx = nodes.len();
    let split = if rows.len() >= 2 * params.min_node_size {
        best_split(&rows, y, z, params, rng)
    } else {
        None
    };
    let Some(rule) = split else {
        let cov = sample_cov_rows(y, &rows)?;
        nodes.push(Node::Leaf(Leaf {
            cov,
            n: rows.len(),
            rows,
        }));
        return Ok(idx);
    };

    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| z[[r, rule.covariate_index]] < rule.cutpoint);
    drop(rows);
    // Placeholder, patched once both children exist.
    nodes.push(Node::Split {
        rule,
        left: 0,
        right: 0,
    });
    let left = grow(nodes, left_rows, y, z, params, rng)?;
    let right = grow(nodes, right_rows, y, z, params, rng)?;
    nodes[idx] = Node::Split { rule, left, right };
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_node(seed: u64, n: usize) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..10.0));
        let y = Array2::from_shape_fn((n, 2), |(i, j)| {
            let s = if z[[i, 0]] > 5.0 { 3.0 } else { 1.0 };
            s * rng.random_range(-1.0..1.0) + j as f64
        });
        (z, y)
    }

    fn params(min: usize) -> SplitParams {
        SplitParams {
            min_node_size: min,
            mtry: 2,
            max_cutpoints: Some(256),
            include_diagonal: true,
        }
    }

    #[test]
    fn large_min_node_gives_single_leaf() {
        let (z, y) = random_node(1, 40);
        let rows: Vec<usize> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = grow_tree(rows.clone(), y.view(), z.view(), &params(21), &mut rng).unwrap();
        assert_eq!(t.nodes().len(), 1);
        let leaf = t.leaf(&[1.0, 1.0]);
        assert_eq!(leaf.n, 40);
        assert_eq!(leaf.cov, sample_cov_rows(y.view(), &rows).unwrap());
    }

    #[test]
    fn leaves_respect_min_size_and_routing() {
        for seed in 0..20 {
            let (z, y) = random_node(seed, 200);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inbag: Vec<usize> = (0..200).map(|_| rng.random_range(0..200)).collect();
            let t = grow_tree(inbag.clone(), y.view(), z.view(), &params(8), &mut rng).unwrap();
            let mut total = 0;
            for (idx, leaf) in t.leaves() {
                assert!(leaf.n >= 8);
                assert_eq!(leaf.n, leaf.rows.len());
                assert_eq!(leaf.cov, sample_cov_rows(y.view(), &leaf.rows).unwrap());
                for &r in &leaf.rows {
                    let zr = z.row(r).to_vec();
                    assert_eq!(t.leaf_index(&zr), idx);
                }
                total += leaf.n;
            }
            assert_eq!(total, inbag.len());
        }
    }

    #[test]
    fn from_nodes_rejects_bad_links() {
        let leaf = Node::Leaf(Leaf {
            cov: SymMatrix::identity(2),
            n: 2,
            rows: vec![],
        });
        let bad = vec![
            Node::Split {
                rule: SplitRule {
                    covariate_index: 0,
                    cutpoint: 0.0,
                    criterion_value: 1.0,
                },
                left: 1,
                right: 5,
            },
            leaf,
        ];
        assert!(CovTree::from_nodes(bad).is_err());
    }
}
