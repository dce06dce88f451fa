use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// Row-wise softmax; only valid on the output layer.
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Identity => {}
            Self::Tanh => z.mapv_inplace(f64::tanh),
            Self::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Self::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
            }
        }
    }

    /// Gradient w.r.t. the pre-activation given the post-activation `a`.
    fn backprop(self, a: &Array2<f64>, g: &mut Array2<f64>) {
        match self {
            Self::Identity => {}
            Self::Tanh => g.zip_mut_with(a, |gi, &ai| *gi *= 1.0 - ai * ai),
            Self::Relu => g.zip_mut_with(a, |gi, &ai| {
                if ai <= 0.0 {
                    *gi = 0.0
                }
            }),
            Self::Softmax => {
                for (mut grow, arow) in g.rows_mut().into_iter().zip(a.rows()) {
                    let dot: f64 = grow.iter().zip(arow.iter()).map(|(x, y)| x * y).sum();
                    grow.zip_mut_with(&arow, |gi, &ai| *gi = ai * (*gi - dot));
                }
            }
        }
    }
}

/// Architecture of an [`Mlp`], stored alongside parameters in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            widths,
            hidden,
            output,
        }
    }

    /// Σ (w_i · w_{i+1} + w_{i+1}).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dense feed-forward network with all parameters in one flat vector.
///
/// Layer `l` occupies `W_l` (row-major, `out × in`) followed by `b_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_tape`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[L]` the output.
    acts: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape has at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.acts[0]
    }
}

impl Mlp {
    /// Seeded fan-in scaled uniform init: He for relu, Xavier otherwise. Biases start at zero.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(invalid("an mlp needs at least two non-zero widths"));
        }
        if spec.hidden == Activation::Softmax {
            return Err(invalid("softmax is only allowed on the output layer"));
        }
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = match spec.hidden {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if spec.widths.len() < 2 {
            return Err(invalid("an mlp needs at least two widths"));
        }
        if params.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.spec.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.spec.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Weight matrix (`out × in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + i * o]).unwrap();
        let b = ArrayView1::from(&self.params[off + i * o..off + i * o + o]);
        (w, b)
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.spec.output
        } else {
            self.spec.hidden
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x)?.row(0).to_vec())
    }

    /// Forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w.t()) + b;
            self.activation(l).apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps every activation for [`Mlp::backward`].
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(&x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_owned());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w.t()) + b;
            self.activation(l).apply(&mut z);
            acts.push(z);
        }
        Ok(Tape { acts })
    }

    /// Reverse pass. `grad_out` is dL/d(output) for every row of the taped batch.
    /// Returns the parameter gradient (flat, same layout as the parameters) and
    /// dL/d(input).
    pub fn backward(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        assert_eq!(grad_out.dim(), tape.output().dim(), "grad_out shape");
        let mut grad = vec![0.0; self.params.len()];
        let mut g = grad_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            self.activation(l).backprop(&tape.acts[l + 1], &mut g);
            let (w, _) = self.layer(l);
            let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let off = self.layer_offset(l);
            let dw = g.t().dot(&tape.acts[l]);
            for (dst, v) in grad[off..off + i * o].iter_mut().zip(dw.iter()) {
                *dst = *v;
            }
            let db = g.sum_axis(Axis(0));
            for (dst, v) in grad[off + i * o..off + i * o + o].iter_mut().zip(db.iter()) {
                *dst = *v;
            }
            g = g.dot(&w);
        }
        (grad, g)
    }

    /// Squared norm of every row's own parameter gradient, without forming the
    /// per-row gradients, plus dL/d(input).
    pub fn per_sample_sq_norms(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        assert_eq!(grad_out.dim(), tape.output().dim(), "grad_out shape");
        let n = grad_out.nrows();
        let mut sq = vec![0.0; n];
        let mut g = grad_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            self.activation(l).backprop(&tape.acts[l + 1], &mut g);
            let a = &tape.acts[l];
            for i in 0..n {
                let gg = g.row(i).dot(&g.row(i));
                let aa = a.row(i).dot(&a.row(i));
                sq[i] += gg * (aa + 1.0);
            }
            g = g.dot(&self.layer(l).0);
        }
        (sq, g)
    }

    /// Only dL/d(input); skips nothing but avoids returning the parameter gradient.
    pub fn backward_input(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> Array2<f64> {
        self.backward(tape, grad_out).1
    }

    /// Spectral norms of every weight matrix (power iteration).
    pub fn layer_spectral_norms(&self, iters: usize) -> Vec<f64> {
        (0..self.n_layers())
            .map(|l| spectral_norm(self.layer(l).0, iters))
            .collect()
    }
}

/// Largest singular value by power iteration on `WᵀW`.
pub fn spectral_norm(w: ArrayView2<f64>, iters: usize) -> f64 {
    let n = w.ncols();
    // deterministic, non-degenerate start
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sin()));
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let u = w.dot(&v);
        let wtu = w.t().dot(&u);
        let nrm = wtu.dot(&wtu).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        v = wtu / nrm;
        sigma = w.dot(&v).dot(&w.dot(&v)).sqrt();
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn linear(w: &[f64], b: &[f64], i: usize, o: usize) -> Mlp {
        let mut p = w.to_vec();
        p.extend_from_slice(b);
        Mlp::from_params(
            MlpSpec::new(vec![i, o], Activation::Tanh, Activation::Identity),
            p,
        )
        .unwrap()
    }

    #[test]
    fn param_count_formula() {
        let spec = MlpSpec::new(vec![20, 64, 16], Activation::Relu, Activation::Identity);
        assert_eq!(spec.param_count(), 20 * 64 + 64 + 64 * 16 + 16);
        let m = Mlp::new(spec.clone(), &mut rng::from_seed(0)).unwrap();
        assert_eq!(m.params().len(), spec.param_count());
    }

    #[test]
    fn identity_layer() {
        let m = linear(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let m = linear(&[0.0; 6], &[0.5, -1.0], 3, 2);
        assert_eq!(m.forward(&[3.0, 4.0, 5.0]).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn two_layer_tanh_matches_hand_evaluation() {
        // 2 -> 2 (tanh) -> 1
        let p = vec![0.1, -0.2, 0.3, 0.4, 0.05, -0.05, 0.7, -0.6, 0.2];
        let m = Mlp::from_params(
            MlpSpec::new(vec![2, 2, 1], Activation::Tanh, Activation::Identity),
            p,
        )
        .unwrap();
        let x = [0.5, -1.5];
        let h0 = (0.1 * 0.5 + -0.2 * -1.5 + 0.05f64).tanh();
        let h1 = (0.3 * 0.5 + 0.4 * -1.5 - 0.05f64).tanh();
        let expected = 0.7 * h0 - 0.6 * h1 + 0.2;
        let out = m.forward(&x).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let m = linear(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = MlpSpec::new(vec![3, 4, 5], Activation::Tanh, Activation::Softmax);
        let m = Mlp::new(spec, &mut rng::from_seed(1)).unwrap();
        let out = m
            .forward_batch(array![[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]].view())
            .unwrap();
        for r in out.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_of_scaled_identity() {
        let w = array![[2.0, 0.0], [0.0, 2.0]];
        assert!((spectral_norm(w.view(), 100) - 2.0).abs() < 1e-12);
    }
}
