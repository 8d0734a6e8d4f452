//! Forward and backward kernels for the fixed layer set.
//!
//! Activations are `[N, C, H, W]` for spatial layers and `[N, D]` for dense
//! layers. All convolutions and pools use valid (no) padding.

use rand::Rng;

use super::{NnError, Tensor};

/// `c = a * b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index reached with the strides
    // the callers pass (dense row- or column-major layouts of exactly these
    // dimensions).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize, NnError> {
    if stride == 0 || kernel == 0 {
        return Err(NnError::Shape("kernel and stride must be positive".into()));
    }
    if kernel > input {
        return Err(NnError::Shape(format!("kernel {kernel} larger than input {input}")));
    }
    Ok((input - kernel) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[C, H, W]` into `[C*kh*kw, OH*OW]`.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let p = self.cols();
        for c in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = (c * self.kh + u) * self.kw + v;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for i in 0..self.oh {
                        let src = &img[(c * self.h + i * self.stride + u) * self.w..];
                        let out = &mut dst[i * self.ow..(i + 1) * self.ow];
                        if self.stride == 1 {
                            out.copy_from_slice(&src[v..v + self.ow]);
                        } else {
                            for (j, o) in out.iter_mut().enumerate() {
                                *o = src[j * self.stride + v];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-adds columns back into `[C, H, W]`.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.cols();
        for c in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = (c * self.kh + u) * self.kw + v;
                    let src = &cols[row * p..(row + 1) * p];
                    for i in 0..self.oh {
                        let base = (c * self.h + i * self.stride + u) * self.w + v;
                        for j in 0..self.ow {
                            img[base + j * self.stride] += src[i * self.ow + j];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize) -> Result<(usize, usize, ConvGeom), NnError> {
    let (n, c, h, wd) = x.dims4()?;
    let (f, wc, kh, kw) = w.dims4()?;
    if wc != c {
        return Err(NnError::Shape(format!("input has {c} channels, kernel expects {wc}")));
    }
    let oh = conv_output_size(h, kh, stride)?;
    let ow = conv_output_size(wd, kw, stride)?;
    Ok((n, f, ConvGeom { c, h, w: wd, kh, kw, stride, oh, ow }))
}

/// Valid cross-correlation: `out[n,f,i,j] = b[f] + sum x[n,c,i*s+u,j*s+v] * w[f,c,u,v]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor, NnError> {
    let (n, f, g) = conv_geom(x, w, stride)?;
    if b.len() != f {
        return Err(NnError::Shape(format!("bias has {} entries for {f} filters", b.len())));
    }
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut out = Tensor::zeros(&[n, f, g.oh, g.ow]);
    let mut cols = vec![0.0; rows * p];
    for s in 0..n {
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        let dst = &mut out.data_mut()[s * f * p..(s + 1) * f * p];
        for (fi, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(b.data()[fi]);
        }
        gemm(f, rows, p, w.data(), (rows as isize, 1), &cols, (p as isize, 1), 1.0, dst);
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, stride: usize) -> Result<ConvGrads, NnError> {
    let (n, f, g) = conv_geom(x, w, stride)?;
    if grad_out.shape() != [n, f, g.oh, g.ow] {
        return Err(NnError::Shape(format!(
            "conv grad_out {:?} does not match output [{n}, {f}, {}, {}]",
            grad_out.shape(),
            g.oh,
            g.ow
        )));
    }
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[f]);
    let mut cols = vec![0.0; rows * p];
    let mut gcols = vec![0.0; rows * p];
    for s in 0..n {
        let go = &grad_out.data()[s * f * p..(s + 1) * f * p];
        for (fi, chunk) in go.chunks(p).enumerate() {
            gb.data_mut()[fi] += chunk.iter().sum::<f64>();
        }
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        // gw[f, r] += sum_p go[f, p] * cols[r, p]
        gemm(f, p, rows, go, (p as isize, 1), &cols, (1, p as isize), 1.0, gw.data_mut());
        // gcols[r, p] = sum_f w[f, r] * go[f, p]
        gemm(rows, f, p, w.data(), (1, rows as isize), go, (p as isize, 1), 0.0, &mut gcols);
        g.col2im(&gcols, &mut gx.data_mut()[s * in_len..(s + 1) * in_len]);
    }
    Ok(ConvGrads { input: gx, weight: gw, bias: gb })
}

/// Window maxima plus the flat input index of each maximum. Ties go to the
/// first element in row-major window order.
pub fn maxpool_forward(x: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<(Tensor, Vec<usize>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let oh = conv_output_size(h, kh, stride)?;
    let ow = conv_output_size(w, kw, stride)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    let od = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = base + i * stride * w + j * stride;
                let mut best = xd[best_idx];
                for u in 0..kh {
                    let row = base + (i * stride + u) * w + j * stride;
                    for v in 0..kw {
                        if xd[row + v] > best {
                            best = xd[row + v];
                            best_idx = row + v;
                        }
                    }
                }
                od[o] = best;
                argmax.push(best_idx);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor, NnError> {
    if argmax.len() != grad_out.len() {
        return Err(NnError::Shape("maxpool grad_out does not match cached argmax".into()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.n % 2 == 0 {
            return Err(NnError::Config(format!("LRN window must be odd, got {}", self.n)));
        }
        if self.k <= 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(NnError::Config("LRN requires k > 0, alpha >= 0, beta >= 0".into()));
        }
        Ok(())
    }
}

/// `k + alpha * sum_{c' in window(c)} x[c']^2` at every position.
fn lrn_scale(x: &Tensor, p: &LrnParams) -> Result<Tensor, NnError> {
    p.validate()?;
    let (n, c, h, w) = x.dims4()?;
    let half = p.n / 2;
    let hw = h * w;
    let xd = x.data();
    let mut scale = Tensor::filled(x.shape(), p.k);
    let sd = scale.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            let dst = (s * c + ch) * hw;
            for other in lo..=hi {
                let src = (s * c + other) * hw;
                for i in 0..hw {
                    sd[dst + i] += p.alpha * xd[src + i] * xd[src + i];
                }
            }
        }
    }
    Ok(scale)
}

/// Cross-channel local response normalization; windows clamp at channel borders.
pub fn lrn_forward(x: &Tensor, p: &LrnParams) -> Result<Tensor, NnError> {
    let scale = lrn_scale(x, p)?;
    let data = x
        .data()
        .iter()
        .zip(scale.data())
        .map(|(v, s)| v * s.powf(-p.beta))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn lrn_backward(x: &Tensor, p: &LrnParams, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if grad_out.shape() != x.shape() {
        return Err(NnError::Shape("LRN grad_out shape mismatch".into()));
    }
    let scale = lrn_scale(x, p)?;
    let (n, c, h, w) = x.dims4()?;
    let half = p.n / 2;
    let hw = h * w;
    let (xd, sd, gd) = (x.data(), scale.data(), grad_out.data());
    // t[c] = g[c] * x[c] * S[c]^(-beta-1)
    let t: Vec<f64> = (0..xd.len())
        .map(|i| gd[i] * xd[i] * sd[i].powf(-p.beta - 1.0))
        .collect();
    let mut gx = Tensor::zeros(x.shape());
    let out = gx.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            let dst = (s * c + ch) * hw;
            for i in 0..hw {
                let mut acc = 0.0;
                for other in lo..=hi {
                    acc += t[(s * c + other) * hw + i];
                }
                let idx = dst + i;
                out[idx] = gd[idx] * sd[idx].powf(-p.beta) - 2.0 * p.alpha * p.beta * xd[idx] * acc;
            }
        }
    }
    Ok(gx)
}

/// Inverted dropout. Returns the output and, in training mode, the per-element
/// multiplier (0 or `1/(1-rate)`) needed for the backward pass.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    rng: Option<&mut R>,
) -> Result<(Tensor, Option<Vec<f64>>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
        }
        _ => Ok((x.clone(), None)),
    }
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Result<Tensor, NnError> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            if mask.len() != grad_out.len() {
                return Err(NnError::Shape("dropout mask does not match grad_out".into()));
            }
            let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
    }
}

/// `out[n, o] = b[o] + sum_i x[n, i] * w[o, i]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (n, d) = x.dims2()?;
    let (o, wd) = w.dims2()?;
    if wd != d || b.len() != o {
        return Err(NnError::Shape(format!(
            "dense: input [{n}, {d}], weight {:?}, bias {:?}",
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, o]);
    for row in out.data_mut().chunks_mut(o) {
        row.copy_from_slice(b.data());
    }
    gemm(n, d, o, x.data(), (d as isize, 1), w.data(), (1, d as isize), 1.0, out.data_mut());
    Ok(out)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<DenseGrads, NnError> {
    let (n, d) = x.dims2()?;
    let (o, _) = w.dims2()?;
    if grad_out.shape() != [n, o] {
        return Err(NnError::Shape("dense grad_out shape mismatch".into()));
    }
    let mut gx = Tensor::zeros(&[n, d]);
    gemm(n, o, d, grad_out.data(), (o as isize, 1), w.data(), (d as isize, 1), 0.0, gx.data_mut());
    let mut gw = Tensor::zeros(&[o, d]);
    gemm(o, n, d, grad_out.data(), (1, o as isize), x.data(), (d as isize, 1), 0.0, gw.data_mut());
    let mut gb = Tensor::zeros(&[o]);
    for row in grad_out.data().chunks(o) {
        for (acc, g) in gb.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads { input: gx, weight: gw, bias: gb })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if x.shape() != grad_out.shape() {
        return Err(NnError::Shape("relu grad_out shape mismatch".into()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Collapses everything after the batch dimension.
pub fn flatten(x: &Tensor) -> Result<Tensor, NnError> {
    let n = *x.shape().first().ok_or_else(|| NnError::Shape("empty shape".into()))?;
    x.clone().reshape(vec![n, x.len() / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    type NoRng = ChaCha8Rng;

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: usize) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (f, _, kh, kw) = w.dims4().unwrap();
        let (oh, ow) = ((h - kh) / s + 1, (wd - kw) / s + 1);
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for u in 0..kh {
                                for v in 0..kw {
                                    acc += x.data()[((ni * c + ci) * h + i * s + u) * wd + j * s + v]
                                        * w.data()[((fi * c + ci) * kh + u) * kw + v];
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 1, 4, 5], &mut rng);
        let w = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let out = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_all_ones_sums_to_nine() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 1, 5, 5], &mut rng);
        let w = random(&[1, 1, 3, 3], &mut rng);
        let b = random(&[1], &mut rng);
        assert_close(&conv2d_forward(&x, &w, &b, 1).unwrap(), &naive_conv(&x, &w, &b, 1), 1e-12);

        let x = random(&[2, 3, 9, 8], &mut rng);
        let w = random(&[4, 3, 3, 2], &mut rng);
        let b = random(&[4], &mut rng);
        for s in [1, 2, 3] {
            assert_close(&conv2d_forward(&x, &w, &b, s).unwrap(), &naive_conv(&x, &w, &b, s), 1e-12);
        }
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1), Err(NnError::Shape(_))));
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool_forward(&x, 2, 2, 1).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::filled(&[1, 2, 6, 6], 0.5);
        let (out, arg) = maxpool_forward(&c, 3, 3, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        // ties resolve to the window's first element
        assert_eq!(arg[0], 0);
        assert_eq!(arg[1], 2);
        assert!(matches!(maxpool_forward(&c, 7, 1, 1), Err(NnError::Shape(_))));
    }

    #[test]
    fn maxpool_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 1, 6, 6], &mut rng);
        let (out, _) = maxpool_forward(&x, 3, 3, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for u in 0..3 {
                    for v in 0..3 {
                        m = m.max(x.data()[(i * 2 + u) * 6 + j * 2 + v]);
                    }
                }
                assert_eq!(out.data()[i * 2 + j], m);
            }
        }
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 3, 7, 7], &mut rng);
        let (out, arg) = maxpool_forward(&x, 3, 3, 2).unwrap();
        let g = random(out.shape(), &mut rng);
        let gx = maxpool_backward(x.shape(), &arg, &g).unwrap();
        assert!((gx.sum() - g.sum()).abs() < 1e-12);
        for (i, v) in gx.data().iter().enumerate() {
            if !arg.contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn lrn_scalar_cases() {
        let p = LrnParams { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 };
        let x = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let out = lrn_forward(&x, &p).unwrap();
        let expect = 1.0 / 2.0001f64.powf(0.75);
        assert!((out.data()[0] - expect).abs() < 1e-15);
        assert!((expect - 0.5946).abs() < 1e-4);

        let z = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(lrn_forward(&z, &p).unwrap().data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 4, 3, 3], &mut rng);
        let id = LrnParams { k: 1.0, n: 3, alpha: 0.0, beta: 0.75 };
        assert_eq!(lrn_forward(&x, &id).unwrap(), x);
        assert!(matches!(lrn_forward(&x, &LrnParams { n: 4, ..p }), Err(NnError::Config(_))));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[4, 10], &mut rng);
        let (out, mask) = dropout_forward(&x, 0.0, Some(&mut rng)).unwrap();
        assert_eq!(out, x);
        assert!(mask.is_none());
        let (out, _) = dropout_forward::<NoRng>(&x, 0.7, None).unwrap();
        assert_eq!(out, x);
        assert!(dropout_forward::<NoRng>(&x, 1.0, None).is_err());
    }

    #[test]
    fn dropout_rate_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::filled(&[1, 100_000], 1.0);
        let (out, _) = dropout_forward(&x, 0.5, Some(&mut rng)).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.05, "zero fraction {zeros}");
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_identity_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[3, 4], &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let b = random(&[4], &mut rng);
        let out = dense_forward(&x, &eye, &b).unwrap();
        for n in 0..3 {
            for i in 0..4 {
                assert!((out.data()[n * 4 + i] - (x.data()[n * 4 + i] + b.data()[i])).abs() < 1e-15);
            }
        }

        let w = random(&[5, 4], &mut rng);
        let b = random(&[5], &mut rng);
        let out = dense_forward(&x, &w, &b).unwrap();
        for n in 0..3 {
            for o in 0..5 {
                let mut acc = b.data()[o];
                for i in 0..4 {
                    acc += x.data()[n * 4 + i] * w.data()[o * 4 + i];
                }
                assert!((out.data()[n * 5 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_values_and_gradient() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0, 0.0]);
        let g = Tensor::new(vec![1, 3], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 6.0, 0.0]);
    }

    #[test]
    fn conv_and_dense_are_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let zero_b = Tensor::zeros(&[3]);
        let a = random(&[1, 2, 6, 7], &mut rng);
        let b = random(&[1, 2, 6, 7], &mut rng);
        let (ca, cb) = (0.7, -1.3);
        let mix = Tensor::from_fn(a.shape(), |i| ca * a.data()[i] + cb * b.data()[i]);
        let lhs = conv2d_forward(&mix, &w, &zero_b, 1).unwrap();
        let ra = conv2d_forward(&a, &w, &zero_b, 1).unwrap();
        let rb = conv2d_forward(&b, &w, &zero_b, 1).unwrap();
        let rhs = Tensor::from_fn(lhs.shape(), |i| ca * ra.data()[i] + cb * rb.data()[i]);
        assert_close(&lhs, &rhs, 1e-9);

        let wd = random(&[4, 6], &mut rng);
        let zb = Tensor::zeros(&[4]);
        let a = random(&[2, 6], &mut rng);
        let b = random(&[2, 6], &mut rng);
        let mix = Tensor::from_fn(a.shape(), |i| ca * a.data()[i] + cb * b.data()[i]);
        let lhs = dense_forward(&mix, &wd, &zb).unwrap();
        let ra = dense_forward(&a, &wd, &zb).unwrap();
        let rb = dense_forward(&b, &wd, &zb).unwrap();
        let rhs = Tensor::from_fn(lhs.shape(), |i| ca * ra.data()[i] + cb * rb.data()[i]);
        assert_close(&lhs, &rhs, 1e-9);
    }

    /// Central-difference check of `sum(forward(x) * probe)` against an analytic gradient.
    fn fd_check(x: &Tensor, forward: &dyn Fn(&Tensor) -> Tensor, analytic: &Tensor, probe: &Tensor) {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let f = |t: &Tensor| -> f64 { forward(t).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 2, 6, 5], &mut rng);
        let w = random(&[3, 2, 3, 2], &mut rng);
        let b = random(&[3], &mut rng);
        for stride in [1, 2] {
            let out = conv2d_forward(&x, &w, &b, stride).unwrap();
            let probe = random(out.shape(), &mut rng);
            let g = conv2d_backward(&x, &w, &probe, stride).unwrap();
            fd_check(&x, &|t| conv2d_forward(t, &w, &b, stride).unwrap(), &g.input, &probe);
            fd_check(&w, &|t| conv2d_forward(&x, t, &b, stride).unwrap(), &g.weight, &probe);
            fd_check(&b, &|t| conv2d_forward(&x, &w, t, stride).unwrap(), &g.bias, &probe);
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&[3, 5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let b = random(&[4], &mut rng);
        let probe = random(&[3, 4], &mut rng);
        let g = dense_backward(&x, &w, &probe).unwrap();
        fd_check(&x, &|t| dense_forward(t, &w, &b).unwrap(), &g.input, &probe);
        fd_check(&w, &|t| dense_forward(&x, t, &b).unwrap(), &g.weight, &probe);
        fd_check(&b, &|t| dense_forward(&x, &w, t).unwrap(), &g.bias, &probe);
    }

    #[test]
    fn lrn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[2, 6, 3, 3], &mut rng);
        // a large alpha makes the cross-channel term visible to the check
        let p = LrnParams { k: 1.5, n: 3, alpha: 0.3, beta: 0.75 };
        let probe = random(x.shape(), &mut rng);
        let g = lrn_backward(&x, &p, &probe).unwrap();
        fd_check(&x, &|t| lrn_forward(t, &p).unwrap(), &g, &probe);
        let p = LrnParams::default();
        let g = lrn_backward(&x, &p, &probe).unwrap();
        fd_check(&x, &|t| lrn_forward(t, &p).unwrap(), &g, &probe);
    }

    #[test]
    fn pool_relu_dropout_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[1, 2, 7, 7], &mut rng);
        let (out, arg) = maxpool_forward(&x, 3, 3, 2).unwrap();
        let probe = random(out.shape(), &mut rng);
        let g = maxpool_backward(x.shape(), &arg, &probe).unwrap();
        fd_check(&x, &|t| maxpool_forward(t, 3, 3, 2).unwrap().0, &g, &probe);

        let probe = random(x.shape(), &mut rng);
        let g = relu_backward(&x, &probe).unwrap();
        fd_check(&x, &relu_forward, &g, &probe);

        let (_, mask) = dropout_forward(&x, 0.4, Some(&mut ChaCha8Rng::seed_from_u64(99))).unwrap();
        let g = dropout_backward(mask.as_deref(), &probe).unwrap();
        let fixed = |t: &Tensor| dropout_forward(t, 0.4, Some(&mut ChaCha8Rng::seed_from_u64(99))).unwrap().0;
        fd_check(&x, &fixed, &g, &probe);
    }
}
