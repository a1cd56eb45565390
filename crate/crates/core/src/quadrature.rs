//! Gauss–Legendre rules on the unit interval.
//!
//! The mean-value factorizations used throughout the crate are integrals of the
//! form `∫₀¹ g(a x + (1 − a) y) da`. They all go through [`GaussLegendre::unit16`]
//! so that every consumer sees the same nodes in the same order.

use std::sync::LazyLock;

/// Number of nodes used for every `a`-average in the crate.
pub const MEAN_VALUE_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

static UNIT16: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::unit(MEAN_VALUE_NODES));

impl GaussLegendre {
    /// `order`-point rule mapped to `[0, 1]`. Roots of `P_order` by Newton from
    /// the Chebyshev-like initial guesses.
    pub fn unit(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]; symmetric pair
            nodes[i] = 0.5 * (1.0 - x);
            nodes[order - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[order - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }

    /// The shared 16-point rule.
    pub fn unit16() -> &'static GaussLegendre {
        &UNIT16
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| w * g(a))
            .sum()
    }

    /// `∫₀¹ g(a x + (1 − a) y) da`, written as `g(y) + ∫ (g(·) − g(y))` so that a
    /// constant `g` and `x == y` are reproduced exactly.
    pub fn mean_value(&self, g: impl Fn(f64) -> f64, x: f64, y: f64) -> f64 {
        let g0 = g(y);
        if x == y {
            return g0;
        }
        g0 + self.integrate(|a| g(a * x + (1.0 - a) * y) - g0)
    }
}

fn legendre(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    if order == 1 {
        (x, 1.0)
    } else {
        (p1, dp)
    }
}
