//! Forward and backward kernels for every layer op. All convolutions are
//! 3x3, stride 1, zero-padding 1, no bias; max pooling is non-overlapping
//! 2x2. Shapes follow [batch, channel, height, width].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Float;

/// Log clamp floor for cross-entropy.
pub fn ce_clamp<T: Float>() -> T {
    T::from(1e-12).unwrap()
}

// ---------------------------------------------------------------------------
// matmul helpers (row-major)
// ---------------------------------------------------------------------------

/// out[m,n] += a[m,k] * b[k,n]
fn matmul_acc<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
}

/// out[m,p] += a[m,n] * b[p,n]^T  (b given row-major as [p,n])
fn matmul_nt_acc<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..p {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for t in 0..n {
                acc = acc + arow[t] * brow[t];
            }
            out[i * p + j] = out[i * p + j] + acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]  (a given row-major as [m,k])
fn matmul_tn_acc<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d (3x3, stride 1, pad 1, no bias)
// ---------------------------------------------------------------------------

/// Lay out 3x3 patches of one image [C,H,W] as a [C*9, H*W] matrix.
fn im2col<T: Float>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for v in cols.iter_mut() {
        *v = T::zero();
    }
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ((ch * 3 + ky) * 3 + kx) * hw;
                // output y maps to input y + ky - 1
                let y_lo = 1usize.saturating_sub(ky);
                let y_hi = if ky <= 1 { h } else { h - 1 };
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = if kx <= 1 { w } else { w - 1 };
                for y in y_lo..y_hi {
                    let iy = y + ky - 1;
                    let src = &plane[iy * w + (x_lo + kx - 1)..iy * w + (x_hi + kx - 1)];
                    cols[row + y * w + x_lo..row + y * w + x_hi].copy_from_slice(src);
                }
            }
        }
    }
}

/// Scatter-add a [C*9, H*W] gradient matrix back onto the [C,H,W] image.
fn col2im_acc<T: Float>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ((ch * 3 + ky) * 3 + kx) * hw;
                let y_lo = 1usize.saturating_sub(ky);
                let y_hi = if ky <= 1 { h } else { h - 1 };
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = if kx <= 1 { w } else { w - 1 };
                for y in y_lo..y_hi {
                    let iy = y + ky - 1;
                    let dst = &mut plane[iy * w + (x_lo + kx - 1)..iy * w + (x_hi + kx - 1)];
                    let src = &cols[row + y * w + x_lo..row + y * w + x_hi];
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn conv_shapes<T: Float>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 4 {
        return Err(Error::BadShape { context: "conv2d input", shape: is.to_vec() });
    }
    if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != is[1] {
        return Err(Error::ShapeMismatch {
            context: "conv2d weight vs input",
            lhs: ws.to_vec(),
            rhs: is.to_vec(),
        });
    }
    Ok((is[0], is[1], is[2], is[3], ws[0]))
}

pub fn conv2d_forward<T: Float>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, cin, h, w, cout) = conv_shapes(input, weight)?;
    let hw = h * w;
    let k = cin * 9;
    let mut out = Tensor::zeros(&[b, cout, h, w]);
    let mut cols = vec![T::zero(); k * hw];
    for bi in 0..b {
        im2col(&input.data()[bi * cin * hw..(bi + 1) * cin * hw], cin, h, w, &mut cols);
        matmul_acc(
            weight.data(),
            &cols,
            &mut out.data_mut()[bi * cout * hw..(bi + 1) * cout * hw],
            cout,
            k,
            hw,
        );
    }
    Ok(out)
}

pub fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, cin, h, w, cout) = conv_shapes(input, weight)?;
    let hw = h * w;
    let k = cin * 9;
    let mut dinput = Tensor::zeros(input.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    let mut cols = vec![T::zero(); k * hw];
    let mut dcols = vec![T::zero(); k * hw];
    for bi in 0..b {
        let dout_b = &dout.data()[bi * cout * hw..(bi + 1) * cout * hw];
        im2col(&input.data()[bi * cin * hw..(bi + 1) * cin * hw], cin, h, w, &mut cols);
        // dW += dout_b [cout,hw] * cols^T [hw,k]
        matmul_nt_acc(dout_b, &cols, dweight.data_mut(), cout, hw, k);
        // dcols = W^T [k,cout] * dout_b [cout,hw]
        for v in dcols.iter_mut() {
            *v = T::zero();
        }
        matmul_tn_acc(weight.data(), dout_b, &mut dcols, cout, k, hw);
        col2im_acc(&dcols, cin, h, w, &mut dinput.data_mut()[bi * cin * hw..(bi + 1) * cin * hw]);
    }
    Ok((dinput, dweight))
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

/// Saved forward state the backward rule needs.
pub struct BnSaved<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn bn_check<T: Float>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let is = input.shape();
    if is.len() != 4 {
        return Err(Error::BadShape { context: "batch_norm input", shape: is.to_vec() });
    }
    let c = is[1];
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch {
            context: "batch_norm gamma/beta vs channels",
            lhs: gamma.shape().to_vec(),
            rhs: is.to_vec(),
        });
    }
    Ok((is[0], c, is[2], is[3]))
}

/// Train-mode forward: normalize by per-channel batch statistics (biased
/// variance). Returns the output plus everything backward needs.
pub fn bn_forward_train<T: Float>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (b, c, h, w) = bn_check(input, gamma, beta)?;
    let n = b * h * w;
    if n < 2 {
        return Err(Error::BadShape { context: "batch_norm train needs B*H*W >= 2", shape: input.shape().to_vec() });
    }
    let hw = h * w;
    let nf = T::from(n).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let plane = &input.data()[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
            let mut s = T::zero();
            for &v in plane {
                s = s + v;
            }
            mean[ch] = mean[ch] + s;
        }
    }
    for m in mean.iter_mut() {
        *m = *m / nf;
    }
    for bi in 0..b {
        for ch in 0..c {
            let plane = &input.data()[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
            let mu = mean[ch];
            let mut s = T::zero();
            for &v in plane {
                let d = v - mu;
                s = s + d * d;
            }
            var[ch] = var[ch] + s;
        }
    }
    for v in var.iter_mut() {
        *v = *v / nf;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, bta) = (gamma.data()[ch], beta.data()[ch]);
            for i in 0..hw {
                let xh = (input.data()[base + i] - mu) * is;
                normalized.data_mut()[base + i] = xh;
                out.data_mut()[base + i] = g * xh + bta;
            }
        }
    }
    Ok((out, BnSaved { normalized, inv_std, batch_mean: mean, batch_var: var }))
}

/// Eval-mode forward: normalize by running statistics. Pure.
pub fn bn_forward_eval<T: Float>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = bn_check(input, gamma, beta)?;
    let hw = h * w;
    let mut out = Tensor::zeros(input.shape());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let mu = running_mean[ch];
            let is = T::one() / (running_var[ch] + eps).sqrt();
            let (g, bta) = (gamma.data()[ch], beta.data()[ch]);
            for i in 0..hw {
                out.data_mut()[base + i] = g * (input.data()[base + i] - mu) * is + bta;
            }
        }
    }
    Ok(out)
}

/// Backward through train-mode batch norm.
pub fn bn_backward<T: Float>(
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let is = saved.normalized.shape();
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let hw = h * w;
    let n = b * h * w;
    let nf = T::from(n).unwrap();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut sum_dxhat = vec![T::zero(); c];
    let mut sum_dxhat_xhat = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let g = gamma.data()[ch];
            for i in 0..hw {
                let go = dout.data()[base + i];
                let xh = saved.normalized.data()[base + i];
                dgamma.data_mut()[ch] = dgamma.data()[ch] + go * xh;
                dbeta.data_mut()[ch] = dbeta.data()[ch] + go;
                let dxh = go * g;
                sum_dxhat[ch] = sum_dxhat[ch] + dxh;
                sum_dxhat_xhat[ch] = sum_dxhat_xhat[ch] + dxh * xh;
            }
        }
    }
    // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
    let mut dinput = Tensor::zeros(is);
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let g = gamma.data()[ch];
            let is_ = saved.inv_std[ch];
            let (s1, s2) = (sum_dxhat[ch], sum_dxhat_xhat[ch]);
            for i in 0..hw {
                let dxh = dout.data()[base + i] * g;
                let xh = saved.normalized.data()[base + i];
                dinput.data_mut()[base + i] = is_ / nf * (nf * dxh - s1 - xh * s2);
            }
        }
    }
    (dinput, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// relu / max pool / global average pool
// ---------------------------------------------------------------------------

pub fn relu_forward<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at 0 is 0: gradient passes only where the input was > 0.
pub fn relu_backward<T: Float>(input: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut d = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        if input.data()[i] > T::zero() {
            d.data_mut()[i] = dout.data()[i];
        }
    }
    d
}

/// Non-overlapping 2x2 max pool. Records the argmax (first in row-major
/// order on ties) for the backward route.
pub fn max_pool2_forward<T: Float>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let is = input.shape();
    if is.len() != 4 || is[2] % 2 != 0 || is[3] % 2 != 0 {
        return Err(Error::BadShape { context: "max_pool2 needs even H and W", shape: is.to_vec() });
    }
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = vec![0usize; b * c * oh * ow];
    for bc in 0..b * c {
        let plane = &input.data()[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (2 * oy) * w + 2 * ox;
                let mut best = plane[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                let o = bc * oh * ow + oy * ow + ox;
                out.data_mut()[o] = best;
                argmax[o] = bc * h * w + best_idx;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2_backward<T: Float>(input_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut d = Tensor::zeros(input_shape);
    for (o, &src) in argmax.iter().enumerate() {
        d.data_mut()[src] = d.data()[src] + dout.data()[o];
    }
    d
}

/// Per-channel spatial mean: [B,C,H,W] -> [B,C].
pub fn global_avg_pool_forward<T: Float>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let is = input.shape();
    if is.len() != 4 {
        return Err(Error::BadShape { context: "global_avg_pool input", shape: is.to_vec() });
    }
    let (b, c, hw) = (is[0], is[1], is[2] * is[3]);
    let inv = T::one() / T::from(hw).unwrap();
    let mut out = Tensor::zeros(&[b, c]);
    for bc in 0..b * c {
        let mut s = T::zero();
        for &v in &input.data()[bc * hw..(bc + 1) * hw] {
            s = s + v;
        }
        out.data_mut()[bc] = s * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_backward<T: Float>(input_shape: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let (hw, bc) = (input_shape[2] * input_shape[3], input_shape[0] * input_shape[1]);
    let inv = T::one() / T::from(hw).unwrap();
    let mut d = Tensor::zeros(input_shape);
    for i in 0..bc {
        let g = dout.data()[i] * inv;
        for v in &mut d.data_mut()[i * hw..(i + 1) * hw] {
            *v = g;
        }
    }
    d
}

// ---------------------------------------------------------------------------
// dense (no bias)
// ---------------------------------------------------------------------------

pub fn dense_forward<T: Float>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 2 || ws.len() != 2 || is[1] != ws[0] {
        return Err(Error::ShapeMismatch {
            context: "dense input vs weight",
            lhs: is.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let (b, f, k) = (is[0], is[1], ws[1]);
    let mut out = Tensor::zeros(&[b, k]);
    matmul_acc(input.data(), weight.data(), out.data_mut(), b, f, k);
    Ok(out)
}

pub fn dense_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (b, f, k) = (input.shape()[0], input.shape()[1], weight.shape()[1]);
    let mut dinput = Tensor::zeros(input.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    // dX = dY * W^T ; dW = X^T * dY
    matmul_nt_acc(dout.data(), weight.data(), dinput.data_mut(), b, k, f);
    matmul_tn_acc(input.data(), dout.data(), dweight.data_mut(), b, f, k);
    (dinput, dweight)
}

// ---------------------------------------------------------------------------
// softmax / losses
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction.
pub fn softmax_forward<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let is = logits.shape();
    if is.len() != 2 || is[1] < 2 {
        return Err(Error::BadShape { context: "softmax needs [B,K], K>=2", shape: is.to_vec() });
    }
    let (b, k) = (is[0], is[1]);
    let mut out = Tensor::zeros(is);
    for r in 0..b {
        let row = &logits.data()[r * k..(r + 1) * k];
        let mut mx = row[0];
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for j in 0..k {
            let e = (row[j] - mx).exp();
            out.data_mut()[r * k + j] = e;
            sum = sum + e;
        }
        for j in 0..k {
            out.data_mut()[r * k + j] = out.data()[r * k + j] / sum;
        }
    }
    Ok(out)
}

/// dL/dx_i = s_i * (g_i - sum_j g_j s_j), per row.
pub fn softmax_backward<T: Float>(probs: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let (b, k) = (probs.shape()[0], probs.shape()[1]);
    let mut d = Tensor::zeros(probs.shape());
    for r in 0..b {
        let s = &probs.data()[r * k..(r + 1) * k];
        let g = &dout.data()[r * k..(r + 1) * k];
        let mut dot = T::zero();
        for j in 0..k {
            dot = dot + g[j] * s[j];
        }
        for j in 0..k {
            d.data_mut()[r * k + j] = s[j] * (g[j] - dot);
        }
    }
    d
}

/// Batch-mean cross-entropy of one-hot targets against probabilities,
/// with the log clamped at 1e-12.
pub fn cross_entropy_forward<T: Float>(targets: &Tensor<T>, probs: &Tensor<T>) -> Result<T> {
    if targets.shape() != probs.shape() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy targets vs predictions",
            lhs: targets.shape().to_vec(),
            rhs: probs.shape().to_vec(),
        });
    }
    let b = T::from(targets.shape()[0]).unwrap();
    let clamp = ce_clamp::<T>();
    let mut loss = T::zero();
    for i in 0..targets.len() {
        let t = targets.data()[i];
        if t != T::zero() {
            let p = probs.data()[i].max(clamp);
            loss = loss - t * p.ln();
        }
    }
    Ok(loss / b)
}

pub fn cross_entropy_backward<T: Float>(targets: &Tensor<T>, probs: &Tensor<T>, dloss: T) -> Tensor<T> {
    let b = T::from(targets.shape()[0]).unwrap();
    let clamp = ce_clamp::<T>();
    let mut d = Tensor::zeros(probs.shape());
    for i in 0..targets.len() {
        let t = targets.data()[i];
        if t != T::zero() && probs.data()[i] > clamp {
            d.data_mut()[i] = -t / probs.data()[i] / b * dloss;
        }
    }
    d
}

/// Mean over all B*K elements of the squared difference.
pub fn mse_forward<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "mse operands",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let n = T::from(a.len()).unwrap();
    let mut s = T::zero();
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        s = s + d * d;
    }
    Ok(s / n)
}

pub fn mse_backward<T: Float>(a: &Tensor<T>, b: &Tensor<T>, dloss: T) -> (Tensor<T>, Tensor<T>) {
    let n = T::from(a.len()).unwrap();
    let two = T::from(2.0).unwrap();
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    for i in 0..a.len() {
        let g = two * (a.data()[i] - b.data()[i]) / n * dloss;
        da.data_mut()[i] = g;
        db.data_mut()[i] = -g;
    }
    (da, db)
}
