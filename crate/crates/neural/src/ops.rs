//! Forward and backward kernels for every supported layer kind.
//!
//! Layout is channel-last throughout: 1D signals are `[len, ch]` and 2D maps
//! are `[h, w, ch]`. Convolutions are valid (no padding), stride 1, and are
//! cross-correlations (no kernel flip). Backward kernels accumulate parameter
//! gradients into caller-provided buffers and return the input gradient.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

fn rank2<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => shape_err(op, format!("expected rank-2 input, got {s:?}")),
    }
}

fn rank3<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => shape_err(op, format!("expected rank-3 input, got {s:?}")),
    }
}

// ───────────────────────────── convolution ─────────────────────────────

/// Valid 1D cross-correlation of `[len, cin]` with kernels `[k, cin, cout]`.
pub fn conv1d<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (len, cin) = rank2(input, "conv1d")?;
    let (k, kc, cout) = match *kernels.shape() {
        [k, c, o] => (k, c, o),
        ref s => return shape_err("conv1d", format!("kernels must be [k, cin, cout], got {s:?}")),
    };
    if kc != cin || bias.len() != cout {
        return shape_err(
            "conv1d",
            format!("input channels {cin}, kernel channels {kc}, bias {} vs {cout} filters", bias.len()),
        );
    }
    if len < k {
        return shape_err("conv1d", format!("input length {len} shorter than kernel {k}"));
    }
    let out_len = len - k + 1;
    let mut out = Vec::with_capacity(out_len * cout);
    for _ in 0..out_len {
        out.extend_from_slice(bias);
    }
    // Row t of the window matrix is input[t*cin .. t*cin + k*cin].
    let windows = MatRef {
        data: input.data(),
        row_stride: cin,
        col_stride: 1,
    };
    gemm(
        out_len,
        k * cin,
        cout,
        windows,
        MatRef::row_major(kernels.data(), cout),
        T::one(),
        &mut out,
        cout,
    );
    Tensor::new(vec![out_len, cout], out)
}

pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
) -> Tensor<T> {
    let (len, cin) = (input.shape()[0], input.shape()[1]);
    let (k, cout) = (kernels.shape()[0], kernels.shape()[2]);
    let out_len = len - k + 1;
    let kc = k * cin;
    let g = grad_out.data();

    let windows_t = MatRef {
        data: input.data(),
        row_stride: 1,
        col_stride: cin,
    };
    gemm(kc, out_len, cout, windows_t, MatRef::row_major(g, cout), T::one(), grad_kernels, cout);
    for row in g.chunks_exact(cout) {
        for (b, &v) in grad_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    // dcolᵀ = W · Gᵀ, computed transposed so W is read contiguously.
    let mut dcol_t = vec![T::zero(); kc * out_len];
    gemm(
        kc,
        cout,
        out_len,
        MatRef::row_major(kernels.data(), cout),
        MatRef::transposed(g, cout),
        T::zero(),
        &mut dcol_t,
        out_len,
    );
    let mut dx = vec![T::zero(); len * cin];
    for (j, col) in dcol_t.chunks_exact(out_len).enumerate() {
        for (t, &v) in col.iter().enumerate() {
            dx[t * cin + j] += v;
        }
    }
    Tensor::new(vec![len, cin], dx).expect("conv1d_backward shape")
}

fn im2col<T: Real>(x: &[T], h: usize, w: usize, cin: usize, k: usize) -> (Vec<T>, usize, usize) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let kk = k * k * cin;
    let span = k * cin;
    let mut col = Vec::with_capacity(ho * wo * kk);
    for i in 0..ho {
        for j in 0..wo {
            for di in 0..k {
                let src = ((i + di) * w + j) * cin;
                col.extend_from_slice(&x[src..src + span]);
            }
        }
    }
    (col, ho, wo)
}

/// Valid 2D cross-correlation of `[h, w, cin]` with kernels `[k, k, cin, cout]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (h, w, cin) = rank3(input, "conv2d")?;
    let (k, cout) = match *kernels.shape() {
        [k1, k2, c, o] if k1 == k2 && c == cin => (k1, o),
        ref s => {
            return shape_err(
                "conv2d",
                format!("kernels must be [k, k, {cin}, cout], got {s:?}"),
            )
        }
    };
    if bias.len() != cout {
        return shape_err("conv2d", format!("bias length {} vs {cout} filters", bias.len()));
    }
    if h < k || w < k {
        return shape_err("conv2d", format!("input {h}×{w} smaller than kernel {k}"));
    }
    let (col, ho, wo) = im2col(input.data(), h, w, cin, k);
    let kk = k * k * cin;
    let mut out = Vec::with_capacity(ho * wo * cout);
    for _ in 0..ho * wo {
        out.extend_from_slice(bias);
    }
    gemm(
        ho * wo,
        kk,
        cout,
        MatRef::row_major(&col, kk),
        MatRef::row_major(kernels.data(), cout),
        T::one(),
        &mut out,
        cout,
    );
    Tensor::new(vec![ho, wo, cout], out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
) -> Tensor<T> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernels.shape()[0], kernels.shape()[3]);
    let (col, ho, wo) = im2col(input.data(), h, w, cin, k);
    let kk = k * k * cin;
    let rows = ho * wo;
    let g = grad_out.data();

    gemm(
        kk,
        rows,
        cout,
        MatRef::transposed(&col, kk),
        MatRef::row_major(g, cout),
        T::one(),
        grad_kernels,
        cout,
    );
    for row in g.chunks_exact(cout) {
        for (b, &v) in grad_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let mut dcol = vec![T::zero(); rows * kk];
    gemm(
        rows,
        cout,
        kk,
        MatRef::row_major(g, cout),
        MatRef::transposed(kernels.data(), cout),
        T::zero(),
        &mut dcol,
        kk,
    );
    let span = k * cin;
    let mut dx = vec![T::zero(); h * w * cin];
    for i in 0..ho {
        for j in 0..wo {
            let row = &dcol[(i * wo + j) * kk..(i * wo + j + 1) * kk];
            for di in 0..k {
                let dst = ((i + di) * w + j) * cin;
                for (d, &v) in dx[dst..dst + span].iter_mut().zip(&row[di * span..(di + 1) * span]) {
                    *d += v;
                }
            }
        }
    }
    Tensor::new(vec![h, w, cin], dx).expect("conv2d_backward shape")
}

// ─────────────────────────── instance norm ───────────────────────────

/// Saved statistics for the instance-norm backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each channel (last axis) over all remaining axes of one
/// instance, then applies the per-channel affine `gamma·x̂ + beta`.
///
/// With a single position per channel the variance is degenerate; values then
/// pass through the affine unnormalized.
pub fn instance_norm<T: Real>(input: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> Result<Tensor<T>> {
    instance_norm_cached(input, gamma, beta, eps).map(|(y, _)| y)
}

pub fn instance_norm_cached<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let ch = *input.shape().last().unwrap();
    if gamma.len() != ch || beta.len() != ch {
        return shape_err("instance_norm", format!("{ch} channels, gamma {}, beta {}", gamma.len(), beta.len()));
    }
    let x = input.data();
    let n = x.len() / ch;
    let mut y = vec![T::zero(); x.len()];
    if n == 1 {
        for c in 0..ch {
            y[c] = gamma[c] * x[c] + beta[c];
        }
        let cache = NormCache {
            xhat: x.to_vec(),
            inv_std: vec![T::one(); ch],
        };
        return Ok((Tensor::new(input.shape().to_vec(), y)?, cache));
    }
    let nf = T::lit(n as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); ch];
    for c in 0..ch {
        let mean = (0..n).map(|p| x[p * ch + c]).sum::<T>() / nf;
        let var = (0..n)
            .map(|p| {
                let d = x[p * ch + c] - mean;
                d * d
            })
            .sum::<T>()
            / nf;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[c] = inv;
        for p in 0..n {
            let i = p * ch + c;
            xhat[i] = (x[i] - mean) * inv;
            y[i] = gamma[c] * xhat[i] + beta[c];
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), y)?, NormCache { xhat, inv_std }))
}

pub fn instance_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) -> Tensor<T> {
    let ch = gamma.len();
    let g = grad_out.data();
    let n = g.len() / ch;
    let mut dx = vec![T::zero(); g.len()];
    if n == 1 {
        for c in 0..ch {
            grad_gamma[c] += g[c] * cache.xhat[c];
            grad_beta[c] += g[c];
            dx[c] = g[c] * gamma[c];
        }
        return Tensor::new(grad_out.shape().to_vec(), dx).expect("norm shape");
    }
    let nf = T::lit(n as f64);
    for c in 0..ch {
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for p in 0..n {
            let i = p * ch + c;
            grad_gamma[c] += g[i] * cache.xhat[i];
            grad_beta[c] += g[i];
            let dxhat = g[i] * gamma[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * cache.xhat[i];
        }
        let scale = cache.inv_std[c] / nf;
        for p in 0..n {
            let i = p * ch + c;
            let dxhat = g[i] * gamma[c];
            dx[i] = scale * (nf * dxhat - sum_dxhat - cache.xhat[i] * sum_dxhat_xhat);
        }
    }
    Tensor::new(grad_out.shape().to_vec(), dx).expect("norm shape")
}

// ─────────────────────────── pointwise ops ───────────────────────────

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu shape")
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| g * p * (T::one() - p))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("sigmoid shape")
}

pub fn flatten<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.clone().reshape(vec![input.len()]).expect("flatten")
}

/// Inverted dropout. Returns the output and, in training mode, the mask that
/// was applied (entries are `0` or `1/(1-rate)`).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<T>>) {
    if !training || rate == 0.0 {
        return (input.clone(), None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    (Tensor::new(input.shape().to_vec(), data).expect("dropout shape"), Some(mask))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad_out.shape().to_vec(), data).expect("dropout shape")
        }
    }
}

// ───────────────────────────── max pooling ─────────────────────────────

/// Output length of a non-overlapping pool: `len / kernel`, except that an
/// axis shorter than the kernel collapses to a single window.
pub fn pooled_len(len: usize, kernel: usize) -> usize {
    if len < kernel {
        1
    } else {
        len / kernel
    }
}

/// Output shape of [`maxpool`] for a channel-last input.
pub fn maxpool_shape(in_shape: &[usize], kernel: usize, axes: &[usize]) -> Vec<usize> {
    let spatial = in_shape.len() - 1;
    in_shape
        .iter()
        .enumerate()
        .map(|(a, &d)| if a < spatial && axes.contains(&a) { pooled_len(d, kernel) } else { d })
        .collect()
}

/// Non-overlapping max pooling of a `[len, ch]` or `[h, w, ch]` input along
/// the listed spatial `axes`. Returns the output and the flat input index of
/// each selected maximum.
pub fn maxpool<T: Real>(input: &Tensor<T>, kernel: usize, axes: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = input.shape();
    let (h, w, ch) = match *shape {
        [l, c] => (l, 1, c),
        [h, w, c] => (h, w, c),
        ref s => return shape_err("maxpool", format!("expected rank 2 or 3, got {s:?}")),
    };
    if kernel == 0 || axes.iter().any(|&a| a + 1 >= shape.len()) {
        return shape_err("maxpool", format!("bad kernel {kernel} / axes {axes:?} for {shape:?}"));
    }
    let (kh, kw) = (
        if axes.contains(&0) { kernel } else { 1 },
        if axes.contains(&1) { kernel } else { 1 },
    );
    let (ho, wo) = (pooled_len(h, kh), pooled_len(w, kw));
    let (sh, sw) = (kh.min(h), kw.min(w));
    let x = input.data();
    let mut out = Vec::with_capacity(ho * wo * ch);
    let mut argmax = Vec::with_capacity(ho * wo * ch);
    for i in 0..ho {
        for j in 0..wo {
            for c in 0..ch {
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                for di in 0..sh {
                    for dj in 0..sw {
                        let idx = ((i * kh + di) * w + (j * kw + dj)) * ch + c;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(maxpool_shape(shape, kernel, axes), out)?, argmax))
}

pub fn maxpool_backward<T: Real>(in_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    dx
}

// ─────────────────────────────── dense ───────────────────────────────

/// Affine map `x·W + b` on the flattened input; `weights` is `[n_in, units]`.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n_in, units) = match *weights.shape() {
        [a, b] => (a, b),
        ref s => return shape_err("dense", format!("weights must be rank 2, got {s:?}")),
    };
    if input.len() != n_in || bias.len() != units {
        return shape_err(
            "dense",
            format!("input {} / bias {} vs weights {n_in}×{units}", input.len(), bias.len()),
        );
    }
    let mut out = bias.to_vec();
    gemm(
        1,
        n_in,
        units,
        MatRef::row_major(input.data(), n_in),
        MatRef::row_major(weights.data(), units),
        T::one(),
        &mut out,
        units,
    );
    Tensor::new(vec![units], out)
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
) -> Tensor<T> {
    let (n_in, units) = (weights.shape()[0], weights.shape()[1]);
    let g = grad_out.data();
    gemm(
        n_in,
        1,
        units,
        MatRef::transposed(input.data(), n_in),
        MatRef::row_major(g, units),
        T::one(),
        grad_weights,
        units,
    );
    for (b, &v) in grad_bias.iter_mut().zip(g) {
        *b += v;
    }
    let mut dx = vec![T::zero(); n_in];
    gemm(
        1,
        units,
        n_in,
        MatRef::row_major(g, units),
        MatRef::transposed(weights.data(), units),
        T::zero(),
        &mut dx,
        n_in,
    );
    Tensor::new(input.shape().to_vec(), dx).expect("dense shape")
}

// ─────────────────────────────── LSTM ───────────────────────────────

/// Borrowed LSTM parameters. Gate blocks are ordered `[i, f, g, o]` along the
/// `4·units` axis; `wx` is `[input_dim, 4·units]`, `wh` is `[units, 4·units]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    pub wx: &'a [T],
    pub wh: &'a [T],
    pub bias: &'a [T],
    pub units: usize,
}

impl<T: Real> LstmWeights<'_, T> {
    fn input_dim(&self) -> usize {
        self.wx.len() / (4 * self.units)
    }

    fn check(&self, x_len: usize, h_len: usize, c_len: usize) -> Result<()> {
        let u = self.units;
        if u == 0
            || self.wx.len() % (4 * u) != 0
            || self.wh.len() != u * 4 * u
            || self.bias.len() != 4 * u
            || x_len != self.input_dim()
            || h_len != u
            || c_len != u
        {
            return shape_err(
                "lstm",
                format!(
                    "units {u}, wx {}, wh {}, bias {}, x {x_len}, h {h_len}, c {c_len}",
                    self.wx.len(),
                    self.wh.len(),
                    self.bias.len()
                ),
            );
        }
        Ok(())
    }
}

/// Activated gates for one step, laid out `[i | f | g | o]`.
fn lstm_gates<T: Real>(x: &[T], h_prev: &[T], w: &LstmWeights<'_, T>) -> Vec<T> {
    let u4 = 4 * w.units;
    let mut z = w.bias.to_vec();
    gemm(1, x.len(), u4, MatRef::row_major(x, x.len()), MatRef::row_major(w.wx, u4), T::one(), &mut z, u4);
    gemm(1, w.units, u4, MatRef::row_major(h_prev, w.units), MatRef::row_major(w.wh, u4), T::one(), &mut z, u4);
    activate_gates(&mut z, w.units);
    z
}

fn activate_gates<T: Real>(z: &mut [T], units: usize) {
    for (idx, v) in z.iter_mut().enumerate() {
        *v = if idx / units == 2 { v.tanh() } else { sigmoid_scalar(*v) };
    }
}

/// One LSTM cell update: returns `(h, c)`.
pub fn lstm_step<T: Real>(x: &[T], h_prev: &[T], c_prev: &[T], w: LstmWeights<'_, T>) -> Result<(Vec<T>, Vec<T>)> {
    w.check(x.len(), h_prev.len(), c_prev.len())?;
    let u = w.units;
    let gates = lstm_gates(x, h_prev, &w);
    let mut h = vec![T::zero(); u];
    let mut c = vec![T::zero(); u];
    for j in 0..u {
        let (i, f, g, o) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok((h, c))
}

/// Per-step activations saved for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    /// `steps × 4·units` activated gates.
    pub gates: Vec<T>,
    /// `(steps + 1) × units` cell states; row 0 is the zero initial state.
    pub cells: Vec<T>,
    /// `(steps + 1) × units` hidden states; row 0 is the zero initial state.
    pub hidden: Vec<T>,
}

/// Runs the cell over a `[steps, input_dim]` sequence from zero state and
/// returns the final hidden state.
pub fn lstm_sequence<T: Real>(input: &Tensor<T>, w: LstmWeights<'_, T>) -> Result<(Tensor<T>, LstmCache<T>)> {
    let (steps, d) = rank2(input, "lstm")?;
    let u = w.units;
    w.check(d, u, u)?;
    let u4 = 4 * u;
    // Input projections for all steps at once.
    let mut zx = Vec::with_capacity(steps * u4);
    for _ in 0..steps {
        zx.extend_from_slice(w.bias);
    }
    gemm(steps, d, u4, MatRef::row_major(input.data(), d), MatRef::row_major(w.wx, u4), T::one(), &mut zx, u4);

    let mut cache = LstmCache {
        gates: zx,
        cells: vec![T::zero(); (steps + 1) * u],
        hidden: vec![T::zero(); (steps + 1) * u],
    };
    for t in 0..steps {
        let h_prev = cache.hidden[t * u..(t + 1) * u].to_vec();
        let z = &mut cache.gates[t * u4..(t + 1) * u4];
        gemm(1, u, u4, MatRef::row_major(&h_prev, u), MatRef::row_major(w.wh, u4), T::one(), z, u4);
        activate_gates(z, u);
        for j in 0..u {
            let (i, f, g, o) = (z[j], z[u + j], z[2 * u + j], z[3 * u + j]);
            let c = f * cache.cells[t * u + j] + i * g;
            cache.cells[(t + 1) * u + j] = c;
            cache.hidden[(t + 1) * u + j] = o * c.tanh();
        }
    }
    let h_last = cache.hidden[steps * u..].to_vec();
    Ok((Tensor::new(vec![u], h_last)?, cache))
}

pub struct LstmGrads<'a, T> {
    pub wx: &'a mut [T],
    pub wh: &'a mut [T],
    pub bias: &'a mut [T],
}

pub fn lstm_sequence_backward<T: Real>(
    input: &Tensor<T>,
    w: LstmWeights<'_, T>,
    cache: &LstmCache<T>,
    grad_h_last: &Tensor<T>,
    grads: LstmGrads<'_, T>,
) -> Tensor<T> {
    let (steps, d) = (input.shape()[0], input.shape()[1]);
    let u = w.units;
    let u4 = 4 * u;
    let one = T::one();
    let mut dh = grad_h_last.data().to_vec();
    let mut dc = vec![T::zero(); u];
    let mut dz_all = vec![T::zero(); steps * u4];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * u4..(t + 1) * u4];
        let c_prev = &cache.cells[t * u..(t + 1) * u];
        let c = &cache.cells[(t + 1) * u..(t + 2) * u];
        let dz = &mut dz_all[t * u4..(t + 1) * u4];
        for j in 0..u {
            let (i, f, g, o) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (one - tc * tc);
            let d_i = dc[j] * g;
            let d_g = dc[j] * i;
            let d_f = dc[j] * c_prev[j];
            dz[j] = d_i * i * (one - i);
            dz[u + j] = d_f * f * (one - f);
            dz[2 * u + j] = d_g * (one - g * g);
            dz[3 * u + j] = d_o * o * (one - o);
            dc[j] *= f;
        }
        // dh_prev = dz · Whᵀ
        let mut dh_prev = vec![T::zero(); u];
        gemm(1, u4, u, MatRef::row_major(dz, u4), MatRef::transposed(w.wh, u4), T::zero(), &mut dh_prev, u);
        // dWh += h_prevᵀ · dz
        let h_prev = &cache.hidden[t * u..(t + 1) * u];
        gemm(u, 1, u4, MatRef::transposed(h_prev, u), MatRef::row_major(dz, u4), one, grads.wh, u4);
        dh = dh_prev;
    }
    gemm(d, steps, u4, MatRef::transposed(input.data(), d), MatRef::row_major(&dz_all, u4), one, grads.wx, u4);
    for row in dz_all.chunks_exact(u4) {
        for (b, &v) in grads.bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dx = vec![T::zero(); steps * d];
    gemm(steps, u4, d, MatRef::row_major(&dz_all, u4), MatRef::transposed(w.wx, u4), T::zero(), &mut dx, d);
    Tensor::new(vec![steps, d], dx).expect("lstm shape")
}

// ─────────────────────────────── loss ───────────────────────────────

/// Binary cross-entropy of a probability against a 0/1 target, with the
/// probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Binary cross-entropy evaluated from the pre-sigmoid logit; stable for
/// large `|z|`. Its derivative with respect to `z` is `sigmoid(z) - y`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
