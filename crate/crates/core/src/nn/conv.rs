use ndarray::{Array2, Axis};
use rand::Rng;

use super::{glorot, Layer, Param, Scalar, Slot};

/// `(1, d)` convolution with "same" zero padding and unit stride.
///
/// Input rows are positions; each consecutive run of `width` rows is one line
/// the kernel slides along. Columns are channels. The weight is stored as
/// `(d * in_channels) x out_channels`, tap-major.
pub struct Conv1xD<T> {
    name: String,
    kernel: usize,
    in_channels: usize,
    width: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cols: Option<Array2<T>>,
}

impl<T: Scalar> Conv1xD<T> {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel >= 1 && width >= 1);
        let fan_in = kernel * in_channels;
        let fan_out = kernel * out_channels;
        Conv1xD {
            name: name.into(),
            kernel,
            in_channels,
            width,
            weight: Param::new(glorot(rng, (fan_in, out_channels), fan_in, fan_out)),
            bias: Param::new(Array2::zeros((1, out_channels))),
            cols: None,
        }
    }

    fn pad(&self) -> isize {
        (self.kernel as isize - 1) / 2
    }

    fn im2col(&self, x: &Array2<T>) -> Array2<T> {
        let (rows, c) = x.dim();
        debug_assert_eq!(c, self.in_channels);
        debug_assert_eq!(rows % self.width, 0);
        let d = self.kernel;
        let mut cols = Array2::<T>::zeros((rows, d * c));
        let src = x.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("standard layout");
        let w = self.width as isize;
        let pad = self.pad();
        for i in 0..rows {
            let n = (i % self.width) as isize;
            let line = i as isize - n;
            let out = &mut dst[i * d * c..(i + 1) * d * c];
            for o in 0..d {
                let s = n + o as isize - pad;
                if s >= 0 && s < w {
                    let r = (line + s) as usize;
                    out[o * c..(o + 1) * c].copy_from_slice(&src[r * c..(r + 1) * c]);
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<T>) -> Array2<T> {
        let rows = dcols.nrows();
        let c = self.in_channels;
        let d = self.kernel;
        let mut dx = Array2::<T>::zeros((rows, c));
        let src = dcols.as_slice().expect("standard layout");
        let dst = dx.as_slice_mut().expect("standard layout");
        let w = self.width as isize;
        let pad = self.pad();
        for i in 0..rows {
            let n = (i % self.width) as isize;
            let line = i as isize - n;
            let from = &src[i * d * c..(i + 1) * d * c];
            for o in 0..d {
                let s = n + o as isize - pad;
                if s >= 0 && s < w {
                    let r = (line + s) as usize;
                    for (acc, &g) in dst[r * c..(r + 1) * c].iter_mut().zip(&from[o * c..(o + 1) * c]) {
                        *acc += g;
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, cols: &Array2<T>) -> Array2<T> {
        cols.dot(&self.weight.value) + &self.bias.value
    }
}

impl<T: Scalar> Layer<T> for Conv1xD<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, x: Array2<T>) -> Array2<T> {
        let x = x.as_standard_layout().into_owned();
        if self.kernel == 1 {
            return self.apply(&x);
        }
        self.apply(&self.im2col(&x))
    }

    fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let x = x.as_standard_layout().into_owned();
        let cols = if self.kernel == 1 { x } else { self.im2col(&x) };
        let y = self.apply(&cols);
        self.cols = Some(cols);
        y
    }

    fn backward(&mut self, dy: Array2<T>) -> Array2<T> {
        let cols = self.cols.take().expect("backward without forward");
        self.weight.grad = cols.t().dot(&dy);
        self.bias.grad = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = dy.dot(&self.weight.value.t());
        if self.kernel == 1 {
            dcols
        } else {
            self.col2im(&dcols)
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&format!("{}.weight", self.name), Slot::Param(&mut self.weight));
        f(&format!("{}.bias", self.name), Slot::Param(&mut self.bias));
    }
}
