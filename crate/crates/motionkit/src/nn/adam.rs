//! Adam optimizer with bias-corrected moment estimates.

use std::collections::BTreeMap;

use super::{Params, Scalar};

pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: BTreeMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update over every parameter the model exposes, consuming the
    /// gradients currently stored next to them.
    pub fn step(&mut self, model: &mut impl Params<S>) {
        self.t += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let c1 = S::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let c2 = S::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        let state = &mut self.state;
        model.visit_params("", &mut |name, value, grad| {
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![S::ZERO; value.len()], vec![S::ZERO; value.len()]));
            assert_eq!(m.len(), value.len(), "parameter {name} changed size");
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneParam {
        w: Vec<f64>,
        g: Vec<f64>,
    }

    impl Params<f64> for OneParam {
        fn visit_params(
            &mut self,
            _prefix: &str,
            f: &mut dyn FnMut(&str, &mut Vec<f64>, &mut Vec<f64>),
        ) {
            f("w", &mut self.w, &mut self.g);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the first update is lr * g / (|g| + eps),
        // essentially lr regardless of gradient magnitude.
        for g in [1e-4, 0.5, 30.0] {
            let mut p = OneParam {
                w: vec![1.0],
                g: vec![g],
            };
            let mut opt = Adam::new(0.01);
            opt.step(&mut p);
            assert!(((1.0 - p.w[0]) - 0.01).abs() < 1e-6, "g={g} -> {}", p.w[0]);
        }
    }

    #[test]
    fn drives_a_quadratic_toward_zero() {
        // Minimize f(w) = w^2 from w = 1 at lr 0.1; compare each iterate to a
        // textbook reference implementation written out inline.
        let mut p = OneParam {
            w: vec![1.0],
            g: vec![0.0],
        };
        let mut opt = Adam::new(0.1);

        let (mut rw, mut rm, mut rv) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            p.g[0] = 2.0 * p.w[0];
            opt.step(&mut p);

            let g = 2.0 * rw;
            rm = 0.9 * rm + 0.1 * g;
            rv = 0.999 * rv + 0.001 * g * g;
            let mhat = rm / (1.0 - 0.9f64.powi(t));
            let vhat = rv / (1.0 - 0.999f64.powi(t));
            rw -= 0.1 * mhat / (vhat.sqrt() + 1e-8);

            assert!(
                (p.w[0] - rw).abs() < 1e-12,
                "step {t}: {} vs reference {rw}",
                p.w[0]
            );
        }
        assert!(p.w[0].abs() < 0.05, "final w = {}", p.w[0]);
    }

    #[test]
    fn state_is_kept_per_parameter_name() {
        let mut p = OneParam {
            w: vec![1.0, 2.0],
            g: vec![1.0, -1.0],
        };
        let mut opt = Adam::new(0.5);
        opt.step(&mut p);
        opt.step(&mut p);
        assert_eq!(opt.steps_taken(), 2);
        // opposite gradients move opposite directions
        assert!(p.w[0] < 1.0 && p.w[1] > 2.0);
    }
}
