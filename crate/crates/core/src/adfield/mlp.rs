use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::{seed::Rng, Error, Result, Scalar};

/// Dense layer `y = x W + b` acting on row batches; `weight` is `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Linear {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || T::lit(rng.random_range(-bound..bound))),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        y.assign(&self.bias.view().insert_axis(Axis(0)));
        general_mat_mul(T::one(), &x, &self.weight, T::one(), &mut y);
        y
    }
}

/// ReLU network: every layer but the last is followed by a ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Activations recorded by [`Mlp::forward`]: the input seen by every layer (the last one
/// after masking).
#[derive(Clone, Debug)]
pub struct MlpTape<T> {
    pub inputs: Vec<Array2<T>>,
}

impl<T: Scalar> MlpTape<T> {
    /// Input of the final layer, i.e. the features the output head is linear in.
    pub fn head_input(&self) -> ArrayView2<'_, T> {
        self.inputs.last().expect("non-empty network").view()
    }

    /// Which ReLU units are active, over every hidden layer in row-major order.
    pub fn active_units(&self) -> Vec<bool> {
        self.inputs.iter().skip(1).flat_map(|a| a.iter().map(|&v| v > T::zero())).collect()
    }
}

impl<T: Scalar> Mlp<T> {
    /// Layer widths `[in, h1, …, out]`.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Linear::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty network").outputs()
    }

    /// Width of the last layer's input, which is what a dropout mask covers.
    pub fn head_width(&self) -> usize {
        self.layers.last().expect("non-empty network").inputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `mask` (rows 1 or n) multiplies the input of the last layer.
    pub fn forward(
        &self,
        x: Array2<T>,
        mask: Option<ArrayView2<T>>,
        net: &'static str,
    ) -> Result<(Array2<T>, MlpTape<T>)> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for (k, layer) in self.layers.iter().enumerate() {
            if k == last {
                if let Some(m) = mask {
                    a = &a * &m;
                }
            }
            let mut y = layer.apply(a.view());
            inputs.push(a);
            if k < last {
                y.mapv_inplace(|v| v.max(T::zero()));
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteActivation { net, layer: k });
            }
            a = y;
        }
        Ok((a, MlpTape { inputs }))
    }

    /// Reverse pass. Parameter gradients are accumulated into `grads` when given; the gradient
    /// with respect to the network input is returned.
    pub fn backward(
        &self,
        tape: &MlpTape<T>,
        grad_out: Array2<T>,
        mask: Option<ArrayView2<T>>,
        mut grads: Option<&mut Mlp<T>>,
    ) -> Array2<T> {
        let last = self.layers.len() - 1;
        let mut g = grad_out;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a = &tape.inputs[k];
            if let Some(gr) = grads.as_deref_mut() {
                let gl = &mut gr.layers[k];
                general_mat_mul(T::one(), &a.t(), &g, T::one(), &mut gl.weight);
                gl.bias += &g.sum_axis(Axis(0));
            }
            let mut gp = Array2::zeros((g.nrows(), layer.inputs()));
            general_mat_mul(T::one(), &g, &layer.weight.t(), T::zero(), &mut gp);
            if k == last {
                if let Some(m) = mask {
                    gp = &gp * &m;
                }
            }
            if k > 0 {
                // a is a ReLU output (possibly scaled by a non-negative mask)
                Zip::from(&mut gp).and(a).for_each(|g, &v| {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                });
            }
            g = gp;
        }
        g
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    #[test]
    fn single_linear_layer_weight_gradient_is_input() {
        let net = Mlp {
            layers: vec![Linear {
                weight: array![[0.5f64, -1.0], [2.0, 0.25], [0.0, 1.0]],
                bias: array![0.1, 0.2],
            }],
        };
        let x = array![[1.5, -2.0, 3.0]];
        let (y, tape) = net.forward(x.clone(), None, "test").unwrap();
        assert!((y[[0, 0]] - (0.75 - 4.0 + 0.1)).abs() < 1e-15);
        // d y_j / d W_ij = x_i: seed the upstream with e_j
        for j in 0..2 {
            let mut up = Array2::zeros((1, 2));
            up[[0, j]] = 1.0;
            let mut grads = net.zeros_like();
            net.backward(&tape, up, None, Some(&mut grads));
            for i in 0..3 {
                assert_eq!(grads.layers[0].weight[[i, j]], x[[0, i]]);
                assert_eq!(grads.layers[0].weight[[i, 1 - j]], 0.0);
            }
            assert_eq!(grads.layers[0].bias[j], 1.0);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seed::rng(1);
        let net = Mlp::<f64>::init(&[4, 8, 3], &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, tape) = net.forward(x, None, "test").unwrap();
        let mut grads = net.zeros_like();
        let gx = net.backward(&tape, Array2::zeros((5, 3)), None, Some(&mut grads));
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(grads.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        let mut rng = seed::rng(9);
        let mut net = Mlp::<f64>::init(&[3, 6, 2], &mut rng);
        for l in &mut net.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp<f64>, x: &Array2<f64>| (&n.forward(x.clone(), None, "t").unwrap().0 * &up).sum();
        let (_, tape) = net.forward(x.clone(), None, "t").unwrap();
        let mut grads = net.zeros_like();
        let gx = net.backward(&tape, up.clone(), None, Some(&mut grads));

        let h = 1e-5;
        let analytic: Vec<f64> = grads.param_slices().concat();
        let mut idx = 0;
        for s in 0..net.param_slices().len() {
            for j in 0..net.param_slices()[s].len() {
                let mut p = net.clone();
                p.param_slices_mut()[s][j] += h;
                let mut m = net.clone();
                m.param_slices_mut()[s][j] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                let a = analytic[idx];
                assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-6), "{fd} vs {a}");
                idx += 1;
            }
        }
        for r in 0..4 {
            for c in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[[r, c]] += h;
                xm[[r, c]] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert!((fd - gx[[r, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let mut rng = seed::rng(2);
        let mut net = Mlp::<f64>::init(&[2, 3, 1], &mut rng);
        net.layers[1].bias[0] = f64::NAN;
        let err = net.forward(Array2::zeros((1, 2)), None, "density").unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { net: "density", layer: 1 }));
    }
}
