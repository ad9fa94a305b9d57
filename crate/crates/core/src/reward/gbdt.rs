//! Gradient-boosted shallow regression trees under logistic loss, with
//! histogram split search over per-feature quantile bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 60,
            max_depth: 3,
            learning_rate: 0.15,
            max_bins: 32,
            min_samples_leaf: 10,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// `x[feature] <= threshold` goes left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtClassifier {
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Total split gain per feature.
    pub importances: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Candidate split thresholds per feature: midpoints between consecutive
/// distinct quantile values.
fn bin_edges(col: &mut [f64], max_bins: usize) -> Vec<f64> {
    col.sort_by(f64::total_cmp);
    let n = col.len();
    let mut cuts: Vec<f64> = (1..max_bins)
        .map(|j| col[(j * n / max_bins).min(n - 1)])
        .collect();
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len());
    for &c in &cuts {
        // Midpoint between c and the next larger sample value.
        let idx = col.partition_point(|&v| v <= c);
        if idx < n {
            edges.push(c + (col[idx] - c) / 2.0);
        }
    }
    edges.dedup();
    edges
}

struct Builder<'a> {
    binned: &'a [Vec<u16>],
    edges: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
    importances: &'a mut [f64],
}

impl Builder<'_> {
    fn leaf(&mut self, g: f64, h: f64) -> usize {
        self.nodes.push(Node::Leaf {
            value: -self.cfg.learning_rate * g / (h + self.cfg.lambda),
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        if depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_samples_leaf {
            return self.leaf(g, h);
        }
        let lambda = self.cfg.lambda;
        let parent = g * g / (h + lambda);
        // (gain, feature, bin): rows with bin <= split bin go left.
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, edges) in self.edges.iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let nb = edges.len() + 1;
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            for &i in rows.iter() {
                let b = self.binned[f][i] as usize;
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if cl < self.cfg.min_samples_leaf || cr < self.cfg.min_samples_leaf {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|bst| gain > bst.0) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((gain, feature, bin)) = best else {
            return self.leaf(g, h);
        };
        self.importances[feature] += gain;
        let threshold = self.edges[feature][bin];
        let split = partition(rows, |i| self.binned[feature][i] as usize <= bin);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let (lrows, rrows) = rows.split_at_mut(split);
        let left = self.build(lrows, depth + 1);
        let right = self.build(rrows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Stable in-place partition; returns the count of elements satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| pred(i));
    let k = yes.len();
    rows[..k].copy_from_slice(&yes);
    rows[k..].copy_from_slice(&no);
    k
}

impl GbdtClassifier {
    /// Fits on rows `x` with binary labels `y`.
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &GbdtConfig) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::InvalidArgument("GBDT needs equal, nonzero numbers of rows and labels".into()));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == n {
            return Err(Error::InvalidData("risk model training data has a single outcome class".into()));
        }
        let d = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::dim(d, r.len(), "risk model features"));
        }
        if cfg.max_bins < 2 || cfg.max_bins > u16::MAX as usize {
            return Err(Error::InvalidArgument("max_bins must be in [2, 65535]".into()));
        }

        let edges: Vec<Vec<f64>> = (0..d)
            .map(|f| {
                let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
                bin_edges(&mut col, cfg.max_bins)
            })
            .collect();
        let binned: Vec<Vec<u16>> = (0..d)
            .map(|f| {
                x.iter()
                    .map(|r| edges[f].partition_point(|&e| e < r[f]) as u16)
                    .collect()
            })
            .collect();

        let rate = pos as f64 / n as f64;
        let base_score = (rate / (1.0 - rate)).ln();
        let mut margin = vec![base_score; n];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut importances = vec![0.0; d];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..cfg.n_trees {
            for i in 0..n {
                let p = sigmoid(margin[i]);
                grad[i] = p - if y[i] { 1.0 } else { 0.0 };
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let mut rows: Vec<usize> = (0..n).collect();
            let mut b = Builder {
                binned: &binned,
                edges: &edges,
                grad: &grad,
                hess: &hess,
                cfg,
                nodes: Vec::new(),
                importances: &mut importances,
            };
            b.build(&mut rows, 0);
            let tree = Tree { nodes: b.nodes };
            for (m, r) in margin.iter_mut().zip(x) {
                *m += tree.predict(r);
            }
            trees.push(tree);
        }
        Ok(GbdtClassifier {
            n_features: d,
            base_score,
            trees,
            importances,
        })
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::dim(self.n_features, x.len(), "risk model input"));
        }
        let z = self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>();
        Ok(sigmoid(z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learns_threshold_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.2).collect();
        let m = GbdtClassifier::fit(&x, &y, &GbdtConfig::default()).unwrap();
        assert!(m.predict_proba(&[0.9, 0.0]).unwrap() > 0.9);
        assert!(m.predict_proba(&[-0.9, 0.0]).unwrap() < 0.1);
        assert!(m.importances[0] > m.importances[1]);
        assert!(m.trees.iter().all(|t| t.nodes.len() <= 15));
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(GbdtClassifier::fit(&x, &[false, false], &GbdtConfig::default()).is_err());
    }

    #[test]
    fn edges_split_distinct_values() {
        let mut col = vec![0.0, 0.0, 0.0, 1.0, 1.0, 2.0];
        assert_eq!(bin_edges(&mut col, 32), vec![0.5, 1.5]);
        let mut constant = vec![4.0; 10];
        assert!(bin_edges(&mut constant, 8).is_empty());
    }
}
