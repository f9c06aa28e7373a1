//! Gauss-Hermite and Gauss-Legendre rules computed by Newton iteration on the
//! orthogonal-polynomial recurrences.

use std::f64::consts::PI;

/// Nodes and weights for `∫ f(x) exp(-x²) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `ln(weight) + node²`, the log of the weight applied to `f(x)` when the
    /// integrand is supplied without the `exp(-x²)` factor.
    pub log_weights_unweighted: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node required");
        // pi^(-1/4)
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let mut nodes = vec![0.0; n];
        let mut log_w = vec![0.0; n];
        let nf = n as f64;
        let m = (n + 1) / 2;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
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
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            let lw = 2f64.ln() - 2.0 * pp.abs().ln();
            log_w[i] = lw;
            log_w[n - 1 - i] = lw;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        nodes.reverse();
        log_w.reverse();
        let weights = log_w.iter().map(|w| w.exp()).collect();
        let log_weights_unweighted = log_w
            .iter()
            .zip(&nodes)
            .map(|(w, x)| w + x * x)
            .collect();
        Self {
            nodes,
            weights,
            log_weights_unweighted,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Nodes and weights for `∫_{-1}^{1} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node required");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [1, 2, 5, 20, 40, 80, 160] {
            let gh = GaussHermite::new(n);
            let m0: f64 = gh.weights.iter().sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            if n >= 2 {
                let m2: f64 = gh.weights.iter().zip(&gh.nodes).map(|(w, x)| w * x * x).sum();
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12, "n={n}");
            }
            assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn hermite_integrates_smooth_functions() {
        // ∫ cos(x) exp(-x²) dx = sqrt(pi) exp(-1/4)
        let gh = GaussHermite::new(40);
        let v: f64 = gh.weights.iter().zip(&gh.nodes).map(|(w, x)| w * x.cos()).sum();
        assert!((v - PI.sqrt() * (-0.25f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn legendre_is_exact_for_polynomials() {
        for n in [1, 3, 10, 40, 80] {
            let gl = GaussLegendre::new(n);
            let total: f64 = gl.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let v: f64 = gl
                .on_interval(0.0, 2.0)
                .map(|(x, w)| w * x.powi(deg as i32))
                .sum();
            let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
            assert!(((v - exact) / exact).abs() < 1e-12, "n={n}");
        }
    }
}
