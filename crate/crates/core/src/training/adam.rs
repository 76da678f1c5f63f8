/// Moment accumulators for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam step in place. A parameter whose gradient has always been zero
/// keeps zero moments and is left untouched.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.len(), "parameter and optimizer state lengths differ");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_stream_leaves_params() {
        let mut p = vec![0.5, -1.0, 0.0];
        let mut s = AdamState::new(3);
        for _ in 0..50 {
            adam_update(&mut p, &[0.0; 3], &mut s, &AdamHyper::default());
        }
        assert_eq!(p, vec![0.5, -1.0, 0.0]);
        assert!(s.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_function_of_inputs() {
        let hyper = AdamHyper::default();
        let (mut a, mut b) = (vec![1.0, 2.0], vec![1.0, 2.0]);
        let (mut sa, mut sb) = (AdamState::new(2), AdamState::new(2));
        adam_update(&mut a, &[0.3, -4.0], &mut sa, &hyper);
        adam_update(&mut b, &[0.3, -4.0], &mut sb, &hyper);
        assert_eq!((a, sa), (b, sb));
    }

    proptest! {
        #[test]
        fn first_step_moves_by_learning_rate(g in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], p0 in -5.0f64..5.0) {
            let hyper = AdamHyper::default();
            let mut p = vec![p0];
            let mut s = AdamState::new(1);
            adam_update(&mut p, &[g], &mut s, &hyper);
            let step = p0 - p[0];
            prop_assert!((step.abs() - hyper.learning_rate).abs() < 1e-6);
            prop_assert_eq!(step.signum(), g.signum());
            prop_assert!(s.v[0] >= 0.0);
        }
    }
}
