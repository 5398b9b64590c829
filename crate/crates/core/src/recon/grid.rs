//! Optimizable volume parameterization and the Adam updater.
//!
//! Density is parameterized through a softplus transform (non-negativity
//! without a projection kink) and colors through a sigmoid.

use crate::render::types::{Aabb, VolumeGrid};

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid for initialization.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Unconstrained parameters of a dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub resolution: usize,
    pub bounds: Aabb,
    /// Density logits, `n^3`.
    pub theta_density: Vec<f64>,
    /// Color logits, `3 n^3` channel-major.
    pub theta_color: Vec<f64>,
}

impl GridParams {
    pub fn new(resolution: usize, bounds: Aabb) -> Self {
        let n3 = resolution.pow(3);
        Self {
            resolution,
            bounds,
            // Near-empty start: softplus(-2) ~ 0.13 density.
            theta_density: vec![-2.0; n3],
            theta_color: vec![0.0; 3 * n3],
        }
    }

    /// Materializes the constrained grid.
    pub fn to_grid(&self) -> VolumeGrid {
        let mut g = VolumeGrid::new(self.resolution, self.bounds).expect("resolution checked");
        for (d, &t) in g.density.iter_mut().zip(&self.theta_density) {
            *d = softplus(t);
        }
        for (c, &t) in g.color.iter_mut().zip(&self.theta_color) {
            *c = sigmoid(t);
        }
        g
    }

    pub fn n_params(&self) -> usize {
        self.theta_density.len() + self.theta_color.len()
    }
}

/// First/second moment accumulators for one parameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam state over the two grid parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub density: Moments,
    pub color: Moments,
    /// Update counter for bias correction.
    pub t: u64,
}

impl AdamState {
    pub fn for_params(p: &GridParams) -> Self {
        Self {
            density: Moments::zeros(p.theta_density.len()),
            color: Moments::zeros(p.theta_color.len()),
            t: 0,
        }
    }

    pub fn step_block(
        moments: &mut Moments,
        theta: &mut [f64],
        grad: &[f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        t: u64,
    ) {
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g;
            moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g;
            let mhat = moments.m[i] / bc1;
            let vhat = moments.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + 1e-8);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_sigmoid_stable_and_consistent() {
        for x in [-800.0, -30.0, -1.0, 0.0, 2.0, 40.0, 800.0] {
            let s = softplus(x);
            assert!(s >= 0.0 && s.is_finite());
            let g = sigmoid(x);
            assert!((0.0..=1.0).contains(&g));
            // d softplus / dx = sigmoid, checked by central difference in
            // the moderate range.
            if x.abs() < 30.0 {
                let h = 1e-6;
                let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
                assert!((fd - g).abs() < 1e-8);
            }
        }
        assert!((sigmoid(logit(0.37)) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn grid_materialization_respects_invariants() {
        let p = GridParams::new(4, Aabb::unit());
        let g = p.to_grid();
        g.validate().unwrap();
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (theta - 3)^2 elementwise.
        let mut theta = vec![0.0; 4];
        let mut mom = Moments::zeros(4);
        for t in 1..=400 {
            let grad: Vec<f64> = theta.iter().map(|&x| 2.0 * (x - 3.0)).collect();
            AdamState::step_block(&mut mom, &mut theta, &grad, 0.05, 0.9, 0.99, t);
        }
        for x in theta {
            assert!((x - 3.0).abs() < 0.05, "{x}");
        }
    }
}
