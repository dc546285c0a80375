//! Fully connected layer over row batches.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{fill_normal, he_std};

/// `y = x·Wᵀ + b`, rows are samples.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Dense {
    /// He-initialized weights, zero biases.
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        fill_normal(layer.w.view_mut().into_dyn(), he_std(in_dim), rng);
        layer
    }

    /// All-zero weights and biases (used for heads that must start inert).
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        self.gw += &gy.t().dot(x);
        self.gb += &gy.sum_axis(Axis(0));
        gy.dot(&self.w)
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![self.w.view().into_dyn(), self.b.view().into_dyn()]
    }

    pub fn grads_mut(&mut self) -> Vec<(ArrayViewMutD<'_, f64>, ArrayViewMutD<'_, f64>)> {
        vec![
            (self.w.view_mut().into_dyn(), self.gw.view_mut().into_dyn()),
            (self.b.view_mut().into_dyn(), self.gb.view_mut().into_dyn()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grad;
    use crate::seeding::rng_from_seed;
    use std::cell::RefCell;

    #[test]
    fn forward_matches_manual_product() {
        let mut layer = Dense::zeros(2, 3);
        layer.w = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        layer.b = Array1::from_vec(vec![0.5, -0.5]);
        let x = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, -1.0]).unwrap();
        let y = layer.forward(&x);
        assert!((y[[0, 0]] - (1.0 - 3.0 + 0.5)).abs() < 1e-12);
        assert!((y[[0, 1]] - (4.0 - 6.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(11);
        let layer = RefCell::new(Dense::new(3, 4, &mut rng));
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) as f64).sin() * 0.5);
        // Loss: weighted sum of outputs with fixed coefficients.
        let coeff = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f64).cos());
        let loss = || (&layer.borrow().forward(&x) * &coeff).sum();

        let (gw, gb, gx) = {
            let mut l = layer.borrow_mut();
            l.gw.fill(0.0);
            l.gb.fill(0.0);
            let gx = l.backward(&x, &coeff);
            (l.gw.clone(), l.gb.clone(), gx)
        };

        let gw_flat: Vec<f64> = gw.iter().copied().collect();
        check_grad(
            &gw_flat,
            &|i| layer.borrow().w.as_slice().unwrap()[i],
            &|i, v| layer.borrow_mut().w.as_slice_mut().unwrap()[i] = v,
            &loss,
            1e-5,
            "dense.w",
        );
        let gb_flat: Vec<f64> = gb.iter().copied().collect();
        check_grad(
            &gb_flat,
            &|i| layer.borrow().b.as_slice().unwrap()[i],
            &|i, v| layer.borrow_mut().b.as_slice_mut().unwrap()[i] = v,
            &loss,
            1e-5,
            "dense.b",
        );

        // Input gradient via an owned copy of x.
        let x_cell = RefCell::new(x.clone());
        let loss_x = || (&layer.borrow().forward(&x_cell.borrow()) * &coeff).sum();
        let gx_flat: Vec<f64> = gx.iter().copied().collect();
        check_grad(
            &gx_flat,
            &|i| x_cell.borrow().as_slice().unwrap()[i],
            &|i, v| x_cell.borrow_mut().as_slice_mut().unwrap()[i] = v,
            &loss_x,
            1e-5,
            "dense.x",
        );
    }
}
