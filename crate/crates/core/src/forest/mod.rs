//! Covariance-regression random forest.
//!
//! Each tree is grown on a bootstrap resample of the standardized residuals.
//! A split is chosen to maximize `√(n_L n_R) · d(Σ̂_L, Σ̂_R)`, where `d` is the
//! Euclidean distance between the upper triangles of the child sample
//! covariances. Leaves store the in-bag sample covariance; a prediction is the
//! plain average of the leaf covariances reached in every tree.

mod split;
mod tree;

pub use split::{
    best_split, best_split_among, improves, split_criterion, SplitParams, SplitRule, TIE_REL_TOL,
};
pub use tree::{grow_tree, CovTree, Leaf, Node};

use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cov_to_corr, SymMatrix};

pub const FOREST_FORMAT: &str = "condcov-forest";
pub const FOREST_FORMAT_VERSION: u32 = 1;

fn default_n_trees() -> usize {
    500
}

/// Cutpoint budget per covariate and node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutpointLimit {
    All,
    Max(usize),
}

impl Serialize for CutpointLimit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CutpointLimit::All => s.serialize_str("all"),
            CutpointLimit::Max(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for CutpointLimit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("max_candidate_cutpoints must be positive")),
            Raw::N(n) => Ok(CutpointLimit::Max(n as usize)),
            Raw::S(s) if s == "all" => Ok(CutpointLimit::All),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"all\", got {s:?}"
            ))),
        }
    }
}

fn default_cutpoints() -> CutpointLimit {
    CutpointLimit::Max(256)
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    /// Defaults to `max(10, 2p)`.
    #[serde(default)]
    pub min_node_size: Option<usize>,
    /// Covariates drawn per split; defaults to `⌈q/3⌉`.
    #[serde(default)]
    pub mtry: Option<usize>,
    /// Cutpoint candidates per covariate and node.
    #[serde(default = "default_cutpoints")]
    pub max_candidate_cutpoints: CutpointLimit,
    /// Whether the split distance includes the diagonal (variances).
    #[serde(default = "default_true")]
    pub include_diagonal: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: default_n_trees(),
            min_node_size: None,
            mtry: None,
            max_candidate_cutpoints: default_cutpoints(),
            include_diagonal: true,
            seed: default_seed(),
        }
    }
}

impl ForestConfig {
    pub fn resolve(&self, p: usize, q: usize) -> Result<SplitParams> {
        if self.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        let min_node_size = self.min_node_size.unwrap_or_else(|| (2 * p).max(10));
        if min_node_size < 2 {
            return Err(Error::invalid("min_node_size must be at least 2"));
        }
        let mtry = self.mtry.unwrap_or_else(|| q.div_ceil(3).max(1));
        if mtry == 0 || mtry > q {
            return Err(Error::invalid(format!("mtry {mtry} must lie in [1, {q}]")));
        }
        Ok(SplitParams {
            min_node_size,
            mtry,
            max_cutpoints: match self.max_candidate_cutpoints {
                CutpointLimit::All => None,
                CutpointLimit::Max(m) => Some(m),
            },
            include_diagonal: self.include_diagonal,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovForest {
    trees: Vec<CovTree>,
    config: ForestConfig,
    p: usize,
    q: usize,
    training_fingerprint: String,
    /// Marginal output scales used to map predictions back to output units.
    output_scale: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: CovForest,
}

/// Per-tree RNG: one ChaCha8 key from the seed, one stream per tree.
pub fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn fit_forest(
    data: &Dataset,
    residuals: ArrayView2<'_, f64>,
    config: &ForestConfig,
) -> Result<CovForest> {
    let n = data.n();
    if residuals.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "residual rows",
            expected: n,
            found: residuals.nrows(),
        });
    }
    let p = residuals.ncols();
    let q = data.q();
    let params = config.resolve(p, q)?;
    if n < 2 * params.min_node_size {
        return Err(Error::TooFewRows {
            needed: 2 * params.min_node_size,
            found: n,
        });
    }
    let z = data.covariates();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let inbag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(inbag, residuals, z, &params, &mut rng).map(|t0| t0.with_index(t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CovForest {
        trees,
        config: config.clone(),
        p,
        q,
        training_fingerprint: data.fingerprint(),
        output_scale: None,
    })
}

impl CovForest {
    /// Assembles a forest from prebuilt trees. Trees are kept sorted by
    /// index; if every index is 0 they are numbered in the order given.
    pub fn from_trees(mut trees: Vec<CovTree>, config: ForestConfig, q: usize) -> Result<Self> {
        if trees.iter().all(|t| t.index() == 0) {
            trees = trees
                .into_iter()
                .enumerate()
                .map(|(i, t)| t.with_index(i))
                .collect();
        }
        trees.sort_by_key(CovTree::index);
        let Some(first) = trees.first() else {
            return Err(Error::invalid("forest needs at least one tree"));
        };
        let p = first.leaf_dim();
        if trees.iter().any(|t| t.leaf_dim() != p) {
            return Err(Error::invalid("trees disagree on output dimension"));
        }
        let config = ForestConfig {
            n_trees: trees.len(),
            ..config
        };
        Ok(CovForest {
            trees,
            config,
            p,
            q,
            training_fingerprint: String::new(),
            output_scale: None,
        })
    }

    pub fn with_output_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.p {
            return Err(Error::DimensionMismatch {
                what: "output scale",
                expected: self.p,
                found: scale.len(),
            });
        }
        self.output_scale = Some(scale);
        Ok(self)
    }

    pub fn trees(&self) -> &[CovTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn training_fingerprint(&self) -> &str {
        &self.training_fingerprint
    }

    pub fn output_scale(&self) -> Option<&[f64]> {
        self.output_scale.as_deref()
    }

    /// Average of the leaf covariances reached in each tree, summed in
    /// ascending tree index.
    pub fn predict_cov(&self, z: &[f64]) -> Result<SymMatrix> {
        if z.len() != self.q {
            return Err(Error::DimensionMismatch {
                what: "query covariates",
                expected: self.q,
                found: z.len(),
            });
        }
        let mut acc = vec![0.0; self.p * (self.p + 1) / 2];
        for tree in &self.trees {
            for (a, v) in acc.iter_mut().zip(tree.leaf(z).cov.packed()) {
                *a += v;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        SymMatrix::from_packed(self.p, acc)
    }

    pub fn predict_corr(&self, z: &[f64]) -> Result<SymMatrix> {
        cov_to_corr(&self.predict_cov(z)?)
    }

    /// Prediction mapped to output units when an output scale is attached.
    pub fn predict_cov_output_scale(&self, z: &[f64]) -> Result<SymMatrix> {
        let s = self.predict_cov(z)?;
        Ok(match &self.output_scale {
            Some(d) => s.congruence_diag(d),
            None => s,
        })
    }

    /// SHA-256 of the persisted representation.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("forest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(s)?;
        if file.format != FOREST_FORMAT || file.version != FOREST_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported forest file {} v{}",
                file.format, file.version
            )));
        }
        let mut forest = file.forest;
        forest.trees.sort_by_key(CovTree::index);
        if forest.trees.len() != forest.config.n_trees {
            return Err(Error::Format("tree count does not match config".into()));
        }
        for t in &forest.trees {
            CovTree::from_nodes(t.nodes().to_vec())?;
            if t.leaf_dim() != forest.p {
                return Err(Error::Format("leaf dimension does not match forest".into()));
            }
        }
        Ok(forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn predict_cov(forest: &CovForest, z: &[f64]) -> Result<SymMatrix> {
    forest.predict_cov(z)
}

pub fn predict_corr(forest: &CovForest, z: &[f64]) -> Result<SymMatrix> {
    forest.predict_corr(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_cov_rows;
    use ndarray::Array2;

    fn toy_data(n: usize, seed: u64) -> (Dataset, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-5.0..5.0));
        let y = Array2::from_shape_fn((n, 2), |(i, _)| {
            rng.random_range(-1.0..1.0) * (1.0 + z[[i, 0]].abs())
        });
        let d = Dataset::from_arrays(z, y.clone()).unwrap();
        (d, y)
    }

    fn small_config(n_trees: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees,
            seed,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn config_defaults() {
        let p = ForestConfig::default().resolve(8, 2).unwrap();
        assert_eq!(p.min_node_size, 16);
        assert_eq!(p.mtry, 1);
        assert_eq!(p.max_cutpoints, Some(256));
        let p = ForestConfig::default().resolve(2, 4).unwrap();
        assert_eq!((p.min_node_size, p.mtry), (10, 2));
        let c: ForestConfig = toml::from_str("max_candidate_cutpoints = \"all\"").unwrap();
        assert_eq!(c.resolve(2, 2).unwrap().max_cutpoints, None);
        let c: ForestConfig = toml::from_str("max_candidate_cutpoints = 32\nn_trees = 7").unwrap();
        assert_eq!((c.max_candidate_cutpoints, c.n_trees), (CutpointLimit::Max(32), 7));
        assert!(toml::from_str::<ForestConfig>("max_candidate_cutpoints = \"some\"").is_err());
        let bad = ForestConfig {
            mtry: Some(5),
            ..ForestConfig::default()
        };
        assert!(bad.resolve(2, 4).is_err());
    }

    #[test]
    fn singleton_forest_is_one_tree() {
        let (d, y) = toy_data(120, 4);
        let cfg = small_config(1, 9);
        let f = fit_forest(&d, y.view(), &cfg).unwrap();
        let mut rng = tree_rng(9, 0);
        let inbag: Vec<usize> = (0..120).map(|_| rng.random_range(0..120)).collect();
        let params = cfg.resolve(2, 2).unwrap();
        let t = grow_tree(inbag, y.view(), d.covariates(), &params, &mut rng).unwrap();
        assert_eq!(f.trees()[0], t);
        assert_eq!(f.predict_cov(&[0.3, 0.1]).unwrap(), t.leaf(&[0.3, 0.1]).cov);
    }

    #[test]
    fn seeded_determinism() {
        let (d, y) = toy_data(150, 5);
        let a = fit_forest(&d, y.view(), &small_config(20, 3)).unwrap();
        let b = fit_forest(&d, y.view(), &small_config(20, 3)).unwrap();
        let c = fit_forest(&d, y.view(), &small_config(20, 4)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn single_leaf_forest_averages_bootstrap_covariances() {
        let (_, y) = toy_data(60, 6);
        let d = Dataset::from_arrays(Array2::from_elem((60, 2), 1.5), y.clone()).unwrap();
        let cfg = ForestConfig {
            min_node_size: Some(30),
            ..small_config(5, 2)
        };
        let f = fit_forest(&d, y.view(), &cfg).unwrap();
        let mut acc = SymMatrix::zeros(2);
        for t in f.trees() {
            assert_eq!(t.nodes().len(), 1);
            let c = sample_cov_rows(y.view(), t.inbag()).unwrap();
            acc = SymMatrix::from_upper_fn(2, |j, k| acc.get(j, k) + c.get(j, k));
        }
        let expect = acc.scaled(1.0 / 5.0);
        assert!(f.predict_cov(&[9.0, 9.0]).unwrap().max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn hand_built_forest_average() {
        let mk = |r: f64| SymMatrix::from_packed(2, vec![1.0, r, 1.0]).unwrap();
        let trees = vec![
            CovTree::single_leaf(mk(0.0), 10),
            CovTree::single_leaf(mk(0.6), 10),
            CovTree::single_leaf(mk(0.3), 10),
        ];
        let f = CovForest::from_trees(trees, ForestConfig::default(), 1).unwrap();
        let p = f.predict_cov(&[0.0]).unwrap();
        assert!((p.get(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(p.get(0, 0), 1.0);
        let r = f.predict_corr(&[0.0]).unwrap();
        assert!((r.get(0, 1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn too_few_rows() {
        let (d, y) = toy_data(15, 1);
        assert!(matches!(
            fit_forest(&d, y.view(), &small_config(3, 1)),
            Err(Error::TooFewRows { needed: 20, found: 15 })
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (d, y) = toy_data(100, 8);
        let f = fit_forest(&d, y.view(), &small_config(10, 8))
            .unwrap()
            .with_output_scale(vec![0.3, 1.7])
            .unwrap();
        let back = CovForest::from_json(&f.to_json().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let z = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
            assert_eq!(f.predict_cov(&z).unwrap(), back.predict_cov(&z).unwrap());
            assert_eq!(
                f.predict_cov_output_scale(&z).unwrap(),
                back.predict_cov_output_scale(&z).unwrap()
            );
        }
        assert_eq!(f.fingerprint(), back.fingerprint());
        let bad = f.to_json().unwrap().replace(FOREST_FORMAT, "other");
        assert!(CovForest::from_json(&bad).is_err());
    }
}
