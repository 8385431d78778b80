//! Dense ReLU network with a linear output layer.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out x in`, row-major) followed by the bias. Gradients use the same layout.

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `inputs[l]` is the `batch x dims[l]` input of layer `l`.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// `batch x out` outputs, row-major.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn output_row(&self, b: usize) -> &[f64] {
        let n = self.output.len() / self.batch;
        &self.output[b * n..(b + 1) * n]
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

// Inputs that are mostly zeros (one-hot encodings) take a sparse path.
fn is_sparse(x: &[f64]) -> bool {
    let zeros = x.iter().filter(|v| **v == 0.0).count();
    zeros * 4 >= x.len() * 3
}

impl Mlp {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0));
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {dims:?}")));
        }
        let expected = param_count(dims);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn offsets(&self, layer: usize) -> (usize, usize) {
        let start: usize = self.dims[..layer + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        (start, start + i * o)
    }

    /// `tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.dims, online.dims);
        soft_update(&mut self.params, &online.params, tau);
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for l in 0..self.layers() {
            let (w0, b0) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[w0..b0];
            let mut z = self.params[b0..b0 + n_out].to_vec();
            if l == 0 && is_sparse(&x) {
                for (i, &xi) in x.iter().enumerate() {
                    if xi != 0.0 {
                        for (o, zo) in z.iter_mut().enumerate() {
                            *zo += w[o * n_in + i] * xi;
                        }
                    }
                }
            } else {
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo += dot(&w[o * n_in..(o + 1) * n_in], &x);
                }
            }
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = z;
        }
        Ok(x)
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        if batch == 0 || inputs.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        let mut cache_inputs = Vec::with_capacity(self.layers());
        let mut x = inputs.to_vec();
        for l in 0..self.layers() {
            let (w0, b0) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[w0..b0];
            let bias = &self.params[b0..b0 + n_out];
            let mut z = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            if l == 0 && is_sparse(&x) {
                for b in 0..batch {
                    let xr = &x[b * n_in..(b + 1) * n_in];
                    let zr = &mut z[b * n_out..(b + 1) * n_out];
                    for (i, &xi) in xr.iter().enumerate() {
                        if xi != 0.0 {
                            for (o, zo) in zr.iter_mut().enumerate() {
                                *zo += w[o * n_in + i] * xi;
                            }
                        }
                    }
                }
            } else {
                // z (batch x out) += x (batch x in) * w^T (in x out)
                unsafe {
                    matrixmultiply::dgemm(
                        batch,
                        n_in,
                        n_out,
                        1.0,
                        x.as_ptr(),
                        n_in as isize,
                        1,
                        w.as_ptr(),
                        1,
                        n_in as isize,
                        1.0,
                        z.as_mut_ptr(),
                        n_out as isize,
                        1,
                    );
                }
            }
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cache_inputs.push(std::mem::replace(&mut x, z));
        }
        Ok(ForwardCache {
            batch,
            inputs: cache_inputs,
            output: x,
        })
    }

    /// Accumulates parameter gradients of `sum_b <d_output[b], f(x_b)>` into
    /// `grads`. Returns input gradients when `want_input` is set.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let batch = cache.batch;
        assert_eq!(d_output.len(), batch * self.output_dim());
        assert_eq!(grads.len(), self.params.len());
        let mut d = d_output.to_vec();
        for l in (0..self.layers()).rev() {
            let (w0, b0) = self.offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &cache.inputs[l];
            {
                let (gw, gb) = grads[w0..b0 + n_out].split_at_mut(b0 - w0);
                for b in 0..batch {
                    for (o, g) in gb.iter_mut().enumerate() {
                        *g += d[b * n_out + o];
                    }
                }
                if l == 0 && is_sparse(x) {
                    for b in 0..batch {
                        let xr = &x[b * n_in..(b + 1) * n_in];
                        let dr = &d[b * n_out..(b + 1) * n_out];
                        for (i, &xi) in xr.iter().enumerate() {
                            if xi != 0.0 {
                                for (o, &dv) in dr.iter().enumerate() {
                                    gw[o * n_in + i] += dv * xi;
                                }
                            }
                        }
                    }
                } else {
                    // gw (out x in) += d^T (out x batch) * x (batch x in)
                    unsafe {
                        matrixmultiply::dgemm(
                            n_out,
                            batch,
                            n_in,
                            1.0,
                            d.as_ptr(),
                            1,
                            n_out as isize,
                            x.as_ptr(),
                            n_in as isize,
                            1,
                            1.0,
                            gw.as_mut_ptr(),
                            n_in as isize,
                            1,
                        );
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &self.params[w0..b0];
            let mut prev = vec![0.0; batch * n_in];
            // prev (batch x in) = d (batch x out) * w (out x in)
            unsafe {
                matrixmultiply::dgemm(
                    batch,
                    n_out,
                    n_in,
                    1.0,
                    d.as_ptr(),
                    n_out as isize,
                    1,
                    w.as_ptr(),
                    n_in as isize,
                    1,
                    0.0,
                    prev.as_mut_ptr(),
                    n_in as isize,
                    1,
                );
            }
            if l > 0 {
                for (p, &a) in prev.iter_mut().zip(x.iter()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            d = prev;
        }
        Some(d)
    }

    /// Parameter gradients as a fresh vector.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(cache, d_output, &mut grads, false);
        grads
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}
