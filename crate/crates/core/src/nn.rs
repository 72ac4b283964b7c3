//! Minimal dense layers, activations and the Adam optimizer shared by the
//! matching heads and the DeepSets verifier.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

const SMALL_BATCH: usize = 4;

/// Fully connected layer `x · W + b`, with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)`, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Dense {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        // A few rows do not amortize the packing a matrix product performs,
        // so they accumulate weight rows directly.
        if x.nrows() <= SMALL_BATCH {
            let mut z = Array2::zeros((x.nrows(), self.fan_out()));
            for (xr, mut zr) in x.outer_iter().zip(z.outer_iter_mut()) {
                zr.assign(&self.b);
                for (&xi, wr) in xr.iter().zip(self.w.outer_iter()) {
                    if xi != 0.0 {
                        zr.scaled_add(xi, &wr);
                    }
                }
            }
            return z;
        }
        let mut z = x.dot(&self.w);
        z += &self.b;
        z
    }

    /// Gradients for `dz = ∂L/∂z`; the input gradient is computed only when
    /// asked for.
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        dz: &Array2<f64>,
        want_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        let grad = DenseGrad {
            w: x.t().dot(dz),
            b: dz.sum_axis(Axis(0)),
        };
        let dx = want_input_grad.then(|| dz.dot(&self.w.t()));
        (grad, dx)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    /// Advances the shared step counter; call once per mini-batch.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    pub fn update(&self, moments: &mut Moments, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            moments.m[i] = self.beta1 * moments.m[i] + (1.0 - self.beta1) * g;
            moments.v[i] = self.beta2 * moments.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = moments.m[i] / c1;
            let v_hat = moments.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn update_dense(&self, moments: &mut DenseMoments, layer: &mut Dense, grad: &DenseGrad) {
        self.update(
            &mut moments.w,
            layer.w.as_slice_mut().expect("standard layout"),
            grad.w.as_standard_layout().as_slice().expect("standard layout"),
        );
        self.update(
            &mut moments.b,
            layer.b.as_slice_mut().expect("standard layout"),
            grad.b.as_slice().expect("standard layout"),
        );
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseMoments {
    w: Moments,
    b: Moments,
}

impl DenseMoments {
    pub fn for_layer(layer: &Dense) -> Self {
        DenseMoments {
            w: Moments::new(layer.w.len()),
            b: Moments::new(layer.b.len()),
        }
    }
}
