use super::model::{Gradients, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .enumerate()
    {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Arch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelParams {
        ModelParams::init(Arch::with_input(8, 8, 2), &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let zero = ModelParams::zeros(p.arch);
        adam_step(&mut p, &zero, &mut s, 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = small();
        let before = p.clone();
        let mut g = ModelParams::zeros(p.arch);
        for (k, v) in g.tensors_mut()[0].data_mut().iter_mut().enumerate() {
            *v = if k % 2 == 0 { 0.37 } else { -2.5 };
        }
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3);
        for ((a, b), gv) in p.tensors()[0]
            .data()
            .iter()
            .zip(before.tensors()[0].data())
            .zip(g.tensors()[0].data())
        {
            let step = b - a;
            assert!((step - 1e-3 * gv.signum()).abs() < 1e-9, "{step}");
        }
    }

    #[test]
    fn two_steps_match_scalar_recomputation() {
        let mut p = small();
        let w0: Vec<f64> = p.tensors()[1].data()[..3].to_vec();
        let gs = [[0.5, -1.0, 2.0], [0.25, 3.0, -0.5]];
        let mut s = AdamState::new(&p);
        for gstep in &gs {
            let mut g = ModelParams::zeros(p.arch);
            g.tensors_mut()[1].data_mut()[..3].copy_from_slice(gstep);
            adam_step(&mut p, &g, &mut s, 0.01);
        }
        for k in 0..3 {
            let (mut w, mut m, mut v) = (w0[k], 0.0, 0.0);
            for (t, gstep) in gs.iter().enumerate() {
                let g = gstep[k];
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
                let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
                w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
            assert!((p.tensors()[1].data()[k] - w).abs() < 1e-12);
        }
    }
}
