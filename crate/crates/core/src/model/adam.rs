use super::{BatchGradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for the full user and item matrices. Only rows present in a
/// gradient are touched by a step; untouched rows keep their moments as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    user_m: Vec<f64>,
    user_v: Vec<f64>,
    item_m: Vec<f64>,
    item_v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            user_m: vec![0.0; params.user_raw.len()],
            user_v: vec![0.0; params.user_raw.len()],
            item_m: vec![0.0; params.item_raw.len()],
            item_v: vec![0.0; params.item_raw.len()],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over the rows in `grads`.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BatchGradients,
        lr: f64,
        cfg: &AdamConfig,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let dim = params.dim();
        for (&u, g) in &grads.users {
            let range = u * dim..(u + 1) * dim;
            update_row(
                &mut params.user_raw[range.clone()],
                &mut self.user_m[range.clone()],
                &mut self.user_v[range],
                g,
                lr,
                cfg,
                c1,
                c2,
            );
        }
        for (&j, g) in &grads.items {
            let range = j * dim..(j + 1) * dim;
            update_row(
                &mut params.item_raw[range.clone()],
                &mut self.item_m[range.clone()],
                &mut self.item_v[range],
                g,
                lr,
                cfg,
                c1,
                c2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_row(
    p: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    cfg: &AdamConfig,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_for_item(j: usize, g: Vec<f64>) -> BatchGradients {
        let mut grads = BatchGradients::default();
        grads.items.insert(j, g);
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ModelParams::init(2, 3, 4, 0);
        let before = p.clone();
        let mut state = AdamState::new(&p);
        state.step(
            &mut p,
            &grads_for_item(1, vec![0.0; 4]),
            0.1,
            &AdamConfig::default(),
        );
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::init(1, 2, 3, 0);
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let lr = 1e-4;
        state.step(
            &mut p,
            &grads_for_item(0, vec![0.5, -3.0, 1e-3]),
            lr,
            &AdamConfig::default(),
        );
        let signs = [1.0, -1.0, 1.0];
        for (i, sign) in signs.iter().enumerate() {
            let delta = p.item_raw[i] - before.item_raw[i];
            assert!(
                (delta + lr * sign).abs() < 1e-6 * lr.max(1.0),
                "coord {i}: {delta}"
            );
        }
        // other rows untouched
        assert_eq!(p.item_raw[3..], before.item_raw[3..]);
        assert_eq!(p.user_raw, before.user_raw);
    }

    #[test]
    fn repeated_steps_move_monotonically() {
        let mut p = ModelParams::init(1, 1, 2, 0);
        let mut state = AdamState::new(&p);
        let mut last = p.item_raw[0];
        for _ in 0..2 {
            state.step(
                &mut p,
                &grads_for_item(0, vec![0.7, 0.0]),
                0.01,
                &AdamConfig::default(),
            );
            assert!(p.item_raw[0] < last);
            last = p.item_raw[0];
        }
    }
}
