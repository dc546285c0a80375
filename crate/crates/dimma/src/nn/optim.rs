//! Adam optimizer and the cosine learning-rate schedule.

use ndarray::{ArrayD, ArrayViewMutD};

use super::snap_f32;

/// One `(parameter, gradient)` tensor pair handed to the optimizer.
pub type ParamPair<'a> = (ArrayViewMutD<'a, f64>, ArrayViewMutD<'a, f64>);

/// Adam with bias correction. Moment buffers are allocated on the first step
/// from the shapes the model presents; the presentation order must stay
/// fixed, which the models guarantee by visiting tensors in declaration
/// order.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update at the given rate, then clears the gradients.
    /// Updated parameters are snapped back to the `f32` grid so checkpoint
    /// serialization stays lossless.
    pub fn step(&mut self, params: Vec<ParamPair<'_>>, lr: f64) {
        if self.m.is_empty() {
            for (w, _) in &params {
                self.m.push(ArrayD::zeros(w.raw_dim()));
                self.v.push(ArrayD::zeros(w.raw_dim()));
            }
        }
        assert_eq!(params.len(), self.m.len(), "tensor count changed mid-run");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (mut w, mut g)) in params.into_iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for ((wv, gv), (mv, vv)) in w
                .iter_mut()
                .zip(g.iter_mut())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * *gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * *gv * *gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *wv = snap_f32(*wv - lr * mhat / (vhat.sqrt() + self.eps));
                *gv = 0.0;
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Cosine annealing from `base` at step 0 to 0 at `t_max`.
pub fn cosine_lr(base: f64, t: usize, t_max: usize) -> f64 {
    let t = t.min(t_max) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t / t_max as f64).cos())
}
