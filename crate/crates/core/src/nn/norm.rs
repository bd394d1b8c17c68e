use ndarray::{Array1, Array2};

use super::{Layer, Param, Scalar, Slot};

/// Batch normalization over rows, one statistic per column.
///
/// Training uses the biased batch variance; running statistics follow
/// `r <- momentum * r + (1 - momentum) * batch` and are used by `infer`.
pub struct BatchNorm<T> {
    name: String,
    momentum: T,
    epsilon: T,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    cache: Option<(Array2<T>, Array1<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: impl Into<String>, features: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNorm {
            name: name.into(),
            momentum: T::cast(momentum),
            epsilon: T::cast(epsilon),
            gamma: Param::new(Array2::ones((1, features))),
            beta: Param::new(Array2::zeros((1, features))),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            cache: None,
        }
    }

    fn features(&self) -> usize {
        self.running_mean.len()
    }
}

fn column_stats<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / c;
    let n = T::cast(rows as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, x: Array2<T>) -> Array2<T> {
        let mut x = x.as_standard_layout().into_owned();
        let c = self.features();
        let scale: Vec<T> =
            (0..c).map(|j| self.gamma.value[[0, j]] / (self.running_var[j] + self.epsilon).sqrt()).collect();
        let shift: Vec<T> = (0..c).map(|j| self.beta.value[[0, j]] - self.running_mean[j] * scale[j]).collect();
        for row in x.as_slice_mut().expect("standard layout").chunks_exact_mut(c) {
            for ((v, &s), &b) in row.iter_mut().zip(&scale).zip(&shift) {
                *v = *v * s + b;
            }
        }
        x
    }

    fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let mut x = x.as_standard_layout().into_owned();
        let c = self.features();
        let (mean, var) = column_stats(x.as_slice().expect("standard layout"), c);
        let inv_std: Array1<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
        let one = T::one();
        for j in 0..c {
            self.running_mean[j] = self.momentum * self.running_mean[j] + (one - self.momentum) * mean[j];
            self.running_var[j] = self.momentum * self.running_var[j] + (one - self.momentum) * var[j];
        }
        // x becomes xhat
        for row in x.as_slice_mut().expect("standard layout").chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(inv_std.iter()) {
                *v = (*v - m) * s;
            }
        }
        let mut y = x.clone();
        let g = self.gamma.value.row(0).to_vec();
        let b = self.beta.value.row(0).to_vec();
        for row in y.as_slice_mut().expect("standard layout").chunks_exact_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(&g).zip(&b) {
                *v = *v * g + b;
            }
        }
        self.cache = Some((x, inv_std));
        y
    }

    fn backward(&mut self, dy: Array2<T>) -> Array2<T> {
        let (xhat, inv_std) = self.cache.take().expect("backward without forward");
        let mut dy = dy.as_standard_layout().into_owned();
        let c = self.features();
        let rows = dy.nrows();
        let n = T::cast(rows as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        let xs = xhat.as_slice().expect("standard layout");
        for (drow, xrow) in dy.as_slice().expect("standard layout").chunks_exact(c).zip(xs.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += drow[j];
                sum_dy_xhat[j] += drow[j] * xrow[j];
            }
        }
        for j in 0..c {
            self.gamma.grad[[0, j]] = sum_dy_xhat[j];
            self.beta.grad[[0, j]] = sum_dy[j];
        }
        // dx = gamma * inv_std / n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
        let k: Vec<T> = (0..c).map(|j| self.gamma.value[[0, j]] * inv_std[j] / n).collect();
        for (drow, xrow) in dy.as_slice_mut().expect("standard layout").chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
            for j in 0..c {
                drow[j] = k[j] * (n * drow[j] - sum_dy[j] - xrow[j] * sum_dy_xhat[j]);
            }
        }
        dy
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&format!("{}.gamma", self.name), Slot::Param(&mut self.gamma));
        f(&format!("{}.beta", self.name), Slot::Param(&mut self.beta));
        f(&format!("{}.running_mean", self.name), Slot::Buffer(&mut self.running_mean));
        f(&format!("{}.running_var", self.name), Slot::Buffer(&mut self.running_var));
    }
}
