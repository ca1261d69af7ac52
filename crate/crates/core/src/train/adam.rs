use crate::autodiff::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    /// Applied steps.
    pub t: u64,
    /// Steps skipped because a gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = shapes.into_iter().map(|p| Matrix::zeros(p.nrows(), p.ncols())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns `false` (and leaves everything
/// but the skip counter untouched) when any gradient entry is not finite.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], gamma: f64, state: &mut AdamState) -> bool {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        state.skipped += 1;
        log::warn!("skipping optimizer step with non-finite gradient ({} so far)", state.skipped);
        return false;
    }
    state.t += 1;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            p[i] -= gamma * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    #[test]
    fn quadratic_bowl_against_scalar_recurrence() {
        let mut w = scalar(1.0);
        let mut st = AdamState::new([&w]);
        // independent scalar form of the update
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=50 {
            let g = scalar(2.0 * w[0]);
            assert!(adam_step(&mut [&mut w], &[g], 0.1, &mut st));
            let gx = 2.0 * x;
            m = 0.9 * m + 0.1 * gx;
            v = 0.999 * v + 0.001 * gx * gx;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((w[0] - x).abs() < 1e-12);
            // momentum overshoots the minimum after about ten steps
            if t <= 10 {
                assert!(w[0].abs() < prev);
                prev = w[0].abs();
            }
        }
        assert!(w[0].abs() < 0.01);
    }

    #[test]
    fn first_step_moves_by_gamma() {
        // bias correction makes the first step exactly γ·sign(g) up to ε
        let mut w = scalar(0.0);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[scalar(-3.0)], 0.01, &mut st);
        assert!((w[0] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut w = scalar(0.5);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[scalar(1.0)], 0.1, &mut st);
        let (before, m0, v0) = (w[0], st.m[0][0], st.v[0][0]);
        adam_step(&mut [&mut w], &[scalar(0.0)], 0.1, &mut st);
        assert!((st.m[0][0] - BETA1 * m0).abs() < 1e-15);
        assert!((st.v[0][0] - BETA2 * v0).abs() < 1e-15);
        // momentum still carries the parameter
        assert!(w[0] < before);
        let mut z = scalar(0.5);
        let mut fresh = AdamState::new([&z]);
        adam_step(&mut [&mut z], &[scalar(0.0)], 0.1, &mut fresh);
        assert_eq!(z[0], 0.5);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut w = scalar(0.5);
        let mut st = AdamState::new([&w]);
        assert!(!adam_step(&mut [&mut w], &[scalar(f64::NAN)], 0.1, &mut st));
        assert_eq!((w[0], st.t, st.skipped), (0.5, 0, 1));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut w = Matrix::from_row_slice(1, 2, &[1.0, -2.0]);
            let mut st = AdamState::new([&w]);
            let mut path = Vec::new();
            for i in 0..20 {
                let g = w.map(|x| x * (1.0 + i as f64 * 0.1));
                adam_step(&mut [&mut w], &[g], 0.05, &mut st);
                path.push(w.clone());
            }
            path
        };
        assert_eq!(run(), run());
    }
}
