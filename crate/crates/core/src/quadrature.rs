//! Gauss–Hermite rules rescaled to integrate against the standard normal
//! density: `E[f(Z)] ~= sum_k weights[k] * f(nodes[k])`.
//!
//! The `adaptive` flag and the pilot rule only matter to the marginal
//! likelihood, which then recentres and rescales the nodes per subject.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 180;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub adaptive: bool,
    /// Coarser rule used for the first adaptive pass.
    #[serde(skip)]
    pub pilot: Option<Box<QuadratureRule>>,
}

impl QuadratureRule {
    /// `n`-point rule. Nodes are the Hermite roots (Newton iteration on the
    /// orthonormal three-term recurrence), sorted ascending.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        // Beyond ~190 nodes the orthonormal recurrence overflows at the
        // outermost starting guesses.
        if n == 0 || n > MAX_NODES {
            return Err(Error::Config(format!(
                "quadrature node count must be in 1..={MAX_NODES}, got {n}"
            )));
        }
        let (x, w) = physicists_rule(n);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x
            .into_iter()
            .zip(w)
            .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        let pilot = if n >= 10 {
            Some(Box::new(QuadratureRule::gauss_hermite(n.div_ceil(2))?))
        } else {
            None
        };
        Ok(QuadratureRule {
            nodes,
            weights,
            adaptive: true,
            pilot,
        })
    }

    /// Rule for the first adaptive pass: the pilot if there is one.
    pub fn pilot_rule(&self) -> &QuadratureRule {
        self.pilot.as_deref().unwrap_or(self)
    }

    /// The same nodes, used at the prior scale without recentring.
    pub fn fixed(mut self) -> Self {
        self.adaptive = false;
        self
    }

    /// The one-point rule at zero; integrates a degenerate effect exactly.
    pub fn point_mass() -> Self {
        QuadratureRule {
            nodes: vec![0.0],
            weights: vec![1.0],
            adaptive: false,
            pilot: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(sigma Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, sigma: f64, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(sigma * z))
            .sum()
    }
}

/// Nodes and weights for the weight function `exp(-x^2)`.
fn physicists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
