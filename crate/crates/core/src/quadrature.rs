//! Composite two-point Gauss-Legendre rule on `[0, 1]`.

/// Nodes and weights of a composite rule; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Two Gauss-Legendre points on each of `intervals` uniform subintervals of `[0, 1]`.
    /// Nodes come out in increasing order.
    pub fn composite_gauss2(intervals: usize) -> Self {
        let h = 1.0 / intervals as f64;
        let off = 0.5 / 3f64.sqrt();
        let mut nodes = Vec::with_capacity(2 * intervals);
        let mut weights = Vec::with_capacity(2 * intervals);
        for i in 0..intervals {
            let mid = (i as f64 + 0.5) * h;
            nodes.push(mid - off * h);
            nodes.push(mid + off * h);
            weights.push(0.5 * h);
            weights.push(0.5 * h);
        }
        Quadrature { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
