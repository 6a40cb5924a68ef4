//! Dense matrices, feed-forward networks with hand-written backprop, and Adam.
//!
//! All parameters of an [`Mlp`] live in one flat buffer. Layer `l` owns a
//! row-major `in x out` weight block followed by its `out` biases, so the
//! optimizer, soft target updates and snapshots all work on plain slices.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("Matrix::hcat", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copies columns `start..end` into a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`. When `trans_a` is set, `a` is
/// stored as `k x m`; likewise for `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the exact extent implied
    // by (m, k, n) and the strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Multi-layer perceptron: `hidden` activation on every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
    /// Start of each layer's weight block; biases follow the weights.
    offsets: Vec<usize>,
}

/// Post-activation outputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut total = 0;
    for w in sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape(
                "Mlp::zeros",
                "at least two non-zero layer sizes",
                format!("{sizes:?}"),
            ));
        }
        let (offsets, total) = layout(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; total],
            offsets,
        })
    }

    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (net.sizes[l] as f64).sqrt();
            let (start, end) = (net.offsets[l], net.layer_end(l));
            for p in &mut net.params[start..end] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape("Mlp::set_params", self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_end(&self, l: usize) -> usize {
        self.offsets[l] + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]
    }

    /// Row-major `in x out` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let start = self.offsets[l];
        &self.params[start..start + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l];
        let len = self.sizes[l] * self.sizes[l + 1];
        &mut self.params[start..start + len]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[start..start + self.sizes[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        let len = self.sizes[l + 1];
        &mut self.params[start..start + len]
    }

    fn activation_of(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward", self.input_dim(), input.cols()));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &Matrix) -> Matrix {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let batch = x.rows();
        let mut out = Matrix::zeros(batch, fan_out);
        let bias = self.bias(l);
        for r in 0..batch {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            batch,
            fan_in,
            fan_out,
            1.0,
            x.data(),
            false,
            self.weights(l),
            false,
            1.0,
            out.data_mut(),
        );
        let act = self.activation_of(l);
        if act != Activation::Identity {
            for v in out.data_mut() {
                *v = act.apply(*v);
            }
        }
        out
    }

    /// Batched forward pass; rows of `input` are independent samples.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = self.layer_forward(0, input);
        for l in 1..self.num_layers() {
            x = self.layer_forward(l, &x);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.clone());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, &activations[l]);
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradients of `sum(upstream ⊙ output)` with respect to all parameters
    /// (flat, same layout as [`Mlp::params`]) and to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_impl(cache, upstream, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but only the input gradient is produced.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
        self.backward_impl(cache, upstream, None)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
        mut grads: Option<&mut Vec<f64>>,
    ) -> Result<Matrix> {
        if cache.activations.len() != self.sizes.len() {
            return Err(Error::shape(
                "Mlp::backward cache",
                self.sizes.len(),
                cache.activations.len(),
            ));
        }
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::shape(
                "Mlp::backward upstream",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let batch = upstream.rows();
        let mut delta = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation_of(l);
            let y = &cache.activations[l + 1];
            if act != Activation::Identity {
                for (d, &yv) in delta.data_mut().iter_mut().zip(y.data()) {
                    *d *= act.derivative_from_output(yv);
                }
            }
            let x = &cache.activations[l];
            if let Some(g) = grads.as_deref_mut() {
                let w_start = self.offsets[l];
                let b_start = w_start + fan_in * fan_out;
                gemm(
                    fan_in,
                    batch,
                    fan_out,
                    1.0,
                    x.data(),
                    true,
                    delta.data(),
                    false,
                    0.0,
                    &mut g[w_start..b_start],
                );
                let gb = &mut g[b_start..b_start + fan_out];
                for r in 0..batch {
                    for (acc, d) in gb.iter_mut().zip(delta.row(r)) {
                        *acc += d;
                    }
                }
            }
            let mut prev = Matrix::zeros(batch, fan_in);
            gemm(
                batch,
                fan_out,
                fan_in,
                1.0,
                delta.data(),
                false,
                self.weights(l),
                true,
                0.0,
                prev.data_mut(),
            );
            delta = prev;
        }
        Ok(delta)
    }

    /// `self <- (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if source.params.len() != self.params.len() {
            return Err(Error::shape(
                "Mlp::soft_update_from",
                self.params.len(),
                source.params.len(),
            ));
        }
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
        Ok(())
    }

    /// Writes the text parameter format:
    ///
    /// ```text
    /// mlp v1
    /// activations <hidden> <output>
    /// sizes <n0> <n1> ...
    /// <one parameter per line, flat layout>
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mlp v1")?;
        writeln!(w, "activations {} {}", self.hidden.name(), self.output.name())?;
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(w, "sizes {}", sizes.join(" "))?;
        for p in &self.params {
            writeln!(w, "{p:?}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            what: "mlp parameters".into(),
            message,
        };
        let mut lines = r.lines();
        let mut next_line = || -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(parse_err(e.to_string())),
                None => Err(parse_err("unexpected end of input".into())),
            }
        };
        if next_line()?.trim() != "mlp v1" {
            return Err(parse_err("missing `mlp v1` header".into()));
        }
        let acts = next_line()?;
        let acts: Vec<&str> = acts.split_whitespace().collect();
        let (hidden, output) = match acts.as_slice() {
            ["activations", h, o] => (
                Activation::from_name(h).ok_or_else(|| parse_err(format!("activation {h}")))?,
                Activation::from_name(o).ok_or_else(|| parse_err(format!("activation {o}")))?,
            ),
            _ => return Err(parse_err("bad activations line".into())),
        };
        let sizes_line = next_line()?;
        let mut parts = sizes_line.split_whitespace();
        if parts.next() != Some("sizes") {
            return Err(parse_err("bad sizes line".into()));
        }
        let sizes = parts
            .map(|s| s.parse::<usize>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::zeros(&sizes, hidden, output)?;
        for i in 0..net.params.len() {
            let line = next_line()?;
            net.params[i] = line
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(format!("parameter {i}: {e}")))?;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::shape("Adam::step params", self.first_moment.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::shape("Adam::step grads", params.len(), grads.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
