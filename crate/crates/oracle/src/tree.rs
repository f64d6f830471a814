//! Binary decision trees with `feature <= threshold` splits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf(String),
    Split {
        feature: usize,
        threshold: u64,
        /// Taken when `features[feature] <= threshold`.
        le: Box<Node>,
        gt: Box<Node>,
    },
}

impl Node {
    pub fn split(feature: usize, threshold: u64, le: Node, gt: Node) -> Node {
        Node::Split {
            feature,
            threshold,
            le: Box::new(le),
            gt: Box::new(gt),
        }
    }

    pub fn leaf(class: &str) -> Node {
        Node::Leaf(class.to_string())
    }

    pub fn classify(&self, features: &[u64]) -> &str {
        let mut n = self;
        loop {
            match n {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    le,
                    gt,
                } => n = if features[*feature] <= *threshold { le } else { gt },
            }
        }
    }
}

pub const MEAN: usize = 0;
pub const VARIANCE: usize = 1;
pub const BYTES: usize = 2;

/// The WEB/P2P tree over (mean size, size variance, total bytes).
/// `mean_t`, `var_t` and `bytes_t` are the three split thresholds.
pub fn web_p2p_tree(mean_t: u64, var_t: u64, bytes_t: u64) -> Node {
    Node::split(
        VARIANCE,
        var_t,
        Node::split(BYTES, bytes_t, Node::leaf("P2P"), Node::leaf("WEB")),
        Node::split(MEAN, mean_t, Node::leaf("P2P"), Node::leaf("WEB")),
    )
}
