//! CART-style regression tree used as the ensemble base learner.

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fits on the rows listed in `rows` of a row-major n×p matrix.
    /// Splits minimize within-node squared error; ties go to the lowest
    /// feature index, then the lowest split position, so fitting is
    /// deterministic.
    pub fn fit(x: &[f64], p: usize, y: &[f64], rows: &[usize], cfg: &TreeConfig) -> Self {
        assert!(!rows.is_empty(), "cannot fit a tree on zero rows");
        assert!(cfg.min_leaf >= 1);
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.build(x, p, y, rows.to_vec(), 0, cfg);
        tree
    }

    fn build(
        &mut self,
        x: &[f64],
        p: usize,
        y: &[f64],
        rows: Vec<usize>,
        depth: usize,
        cfg: &TreeConfig,
    ) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| y[i]).sum();
        let mean = sum / n as f64;
        let make_leaf = |tree: &mut Self| {
            tree.nodes.push(Node::Leaf { value: mean });
            tree.nodes.len() - 1
        };
        if depth >= cfg.max_depth || n < 2 * cfg.min_leaf {
            return make_leaf(self);
        }

        let sumsq: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
        let total_sse = sumsq - sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
        let mut order = rows.clone();
        for j in 0..p {
            order.sort_by(|&a, &b| {
                x[a * p + j]
                    .partial_cmp(&x[b * p + j])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            let mut left_sumsq = 0.0;
            for s in 1..n {
                let prev = order[s - 1];
                left_sum += y[prev];
                left_sumsq += y[prev] * y[prev];
                if s < cfg.min_leaf || n - s < cfg.min_leaf {
                    continue;
                }
                let (lo, hi) = (x[prev * p + j], x[order[s] * p + j]);
                if lo == hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let right_sumsq = sumsq - left_sumsq;
                let sse = (left_sumsq - left_sum * left_sum / s as f64)
                    + (right_sumsq - right_sum * right_sum / (n - s) as f64);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, j, (lo + hi) / 2.0));
                }
            }
        }

        let (best_sse, feature, threshold) = match best {
            Some(b) => b,
            None => return make_leaf(self),
        };
        if total_sse - best_sse <= 1e-12 * (1.0 + total_sse.abs()) {
            return make_leaf(self);
        }

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| x[i * p + feature] <= threshold);
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean }); // placeholder
        let left = self.build(x, p, y, left_rows, depth + 1, cfg);
        let right = self.build(x, p, y, right_rows, depth + 1, cfg);
        self.nodes[node] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_1d(xs: &[f64], ys: &[f64], cfg: &TreeConfig) -> RegressionTree {
        let rows: Vec<usize> = (0..xs.len()).collect();
        RegressionTree::fit(xs, 1, ys, &rows, cfg)
    }

    #[test]
    fn constant_target_is_a_single_leaf() {
        let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
        let ys = [5.0; 5];
        let tree = fit_1d(&xs, &ys, &TreeConfig { max_depth: 6, min_leaf: 1 });
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict(&[0.33]), 5.0);
    }

    #[test]
    fn recovers_a_step_function_exactly() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&v| if v < 0.5 { 1.0 } else { 3.0 }).collect();
        let tree = fit_1d(&xs, &ys, &TreeConfig { max_depth: 3, min_leaf: 1 });
        assert_eq!(tree.predict(&[0.2]), 1.0);
        assert_eq!(tree.predict(&[0.8]), 3.0);
        assert_eq!(tree.predict(&[0.45]), 1.0); // threshold midpoint = 0.45 is left-inclusive
    }

    #[test]
    fn min_leaf_blocks_tiny_splits() {
        let xs = [0.0, 0.1, 0.2, 0.9, 1.0];
        let ys = [0.0, 0.0, 0.0, 1.0, 1.0];
        let tree = fit_1d(&xs, &ys, &TreeConfig { max_depth: 6, min_leaf: 3 });
        // 5 rows cannot produce two children of >= 3 rows.
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn splits_on_the_informative_feature() {
        // Feature 0 is noise-free signal, feature 1 is constant.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let v = i as f64 / 20.0;
            x.extend_from_slice(&[v, 0.5]);
            y.push(if v < 0.6 { 0.0 } else { 2.0 });
        }
        let rows: Vec<usize> = (0..20).collect();
        let tree = RegressionTree::fit(&x, 2, &y, &rows, &TreeConfig { max_depth: 4, min_leaf: 2 });
        assert_eq!(tree.predict(&[0.1, 0.5]), 0.0);
        assert_eq!(tree.predict(&[0.9, 0.5]), 2.0);
    }
}
