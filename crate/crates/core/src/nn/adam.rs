use ndarray::{Array2, Zip};

use super::{Scalar, Slot, Visit};

/// Adaptive-moment optimizer with bias correction.
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    moments: Vec<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam { beta1, beta2, epsilon, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `net`.
    pub fn step(&mut self, net: &mut dyn Visit<T>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (T::cast(self.beta1), T::cast(self.beta2));
        let (one, eps) = (T::one(), T::cast(self.epsilon));
        let (inv_c1, inv_c2, lr) = (T::cast(1.0 / c1), T::cast(1.0 / c2), T::cast(lr));
        let moments = &mut self.moments;
        let mut i = 0;
        net.visit_mut(&mut |_, slot| {
            let Slot::Param(p) = slot else { return };
            if moments.len() == i {
                moments.push((Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            }
            let (m, v) = &mut moments[i];
            Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m * inv_c1;
                let vhat = *v * inv_c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::array;

    struct Quadratic(Param<f64>);

    impl Visit<f64> for Quadratic {
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, f64>)) {
            f("w", Slot::Param(&mut self.0));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut q = Quadratic(Param::new(array![[1.0, -2.0]]));
        q.0.grad = array![[0.5, -3.0]];
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        opt.step(&mut q, 0.1);
        assert!((q.0.value[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((q.0.value[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut q = Quadratic(Param::new(array![[3.0, -4.0]]));
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            q.0.grad = q.0.value.mapv(|w| 2.0 * w);
            opt.step(&mut q, 0.05);
        }
        assert!(q.0.value.iter().all(|w| w.abs() < 1e-3));
    }
}
