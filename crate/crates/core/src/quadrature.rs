//! Composite Simpson rule on a closed interval.

/// Nodes and weights of a composite Simpson rule.
#[derive(Clone, Debug)]
pub struct SimpsonRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimpsonRule {
    /// Builds the rule with `points` equally spaced nodes on `[lo, hi]`.
    ///
    /// `points` is rounded up to the next odd number (minimum 3).
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        let points = points.max(3) | 1;
        let h = (hi - lo) / (points - 1) as f64;
        let mut nodes = Vec::with_capacity(points);
        let mut weights = Vec::with_capacity(points);
        for k in 0..points {
            nodes.push(if k == points - 1 { hi } else { lo + h * k as f64 });
            let c = if k == 0 || k == points - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights.push(c * h / 3.0);
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
