//! RMSProp and learning-rate schedules.

/// Dense RMSProp: `v ← ρ v + (1 − ρ) g²`, `θ ← θ − lr · g / (√v + ε)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    sq: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize, decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            sq: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.sq.len());
        assert_eq!(grads.len(), self.sq.len());
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.sq) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= lr * g / (v.sqrt() + self.eps);
        }
    }
}

/// RMSProp over a large parameter vector where each step touches few
/// entries. Untouched entries see a zero gradient, so their second moment
/// only decays; that decay is applied lazily as `ρ^Δt` on the next touch,
/// which makes the update identical to the dense one.
#[derive(Debug, Clone)]
pub struct SparseRmsProp {
    pub decay: f64,
    pub eps: f64,
    sq: Vec<f64>,
    last: Vec<u32>,
    t: u32,
}

impl SparseRmsProp {
    pub fn new(n: usize, decay: f64, eps: f64) -> Self {
        SparseRmsProp {
            decay,
            eps,
            sq: vec![0.0; n],
            last: vec![0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq.is_empty()
    }

    /// Start a new step; call once before the [`Self::update`] calls of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Return the increment for parameter `i` given its gradient.
    pub fn update(&mut self, i: usize, g: f64, lr: f64) -> f64 {
        let gap = self.t - self.last[i];
        let v = self.decay.powi(gap as i32 - 1) * self.sq[i] * self.decay + (1.0 - self.decay) * g * g;
        self.sq[i] = v;
        self.last[i] = self.t;
        -lr * g / (v.sqrt() + self.eps)
    }
}

/// `lr_t = lr · γ^(t / total)`: reaches `lr · γ` at the final step.
pub fn exponential_lr(lr: f64, gamma: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    lr * gamma.powf(step as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_over_sqrt_one_minus_decay() {
        let mut o = RmsProp::new(1, 0.99, 0.0);
        let mut p = [1.0];
        o.step(&mut p, &[3.0], 0.1);
        assert!((p[0] - (1.0 - 0.1 / 0.1)).abs() < 1e-12);
    }

    #[test]
    fn sparse_matches_dense() {
        let n = 5;
        let mut dense = RmsProp::new(n, 0.9, 1e-8);
        let mut sparse = SparseRmsProp::new(n, 0.9, 1e-8);
        let mut pd = vec![0.0; n];
        let mut ps = vec![0.0; n];
        for t in 0..40 {
            let g: Vec<f64> = (0..n)
                .map(|i| if (t + i) % 3 == 0 { ((t * 7 + i) as f64).sin() } else { 0.0 })
                .collect();
            dense.step(&mut pd, &g, 0.01);
            sparse.begin_step();
            for (i, &gi) in g.iter().enumerate() {
                if gi != 0.0 {
                    ps[i] += sparse.update(i, gi, 0.01);
                }
            }
        }
        for (a, b) in pd.iter().zip(&ps) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(exponential_lr(1e-3, 0.1, 0, 100), 1e-3);
        assert!((exponential_lr(1e-3, 0.1, 100, 100) - 1e-4).abs() < 1e-18);
        assert!((exponential_lr(1e-3, 0.1, 50, 100) - 1e-3 * 0.1f64.sqrt()).abs() < 1e-15);
    }
}
