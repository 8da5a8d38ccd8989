// Raw slice kernels shared by the forward and backward rules. All loops run
// in a fixed order so results are bit-reproducible.

use super::Real;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        let acol = &a[p * m..(p + 1) * m];
        for (i, &av) in acol.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let mut bt = vec![T::zero(); k * n];
    transpose(b, n, k, &mut bt);
    matmul_nn(a, &bt, m, k, n, out);
}

/// `out[c×r] = x[r×c]ᵀ`
pub fn transpose<T: Real>(x: &[T], r: usize, c: usize, out: &mut [T]) {
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output shape of permuting `shape` by `perm` (output axis `i` is input axis `perm[i]`).
pub fn permuted_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

/// Writes `x` permuted by `perm` into `out`. When `accumulate` is set the
/// permuted values are added instead of stored.
pub fn permute<T: Real>(x: &[T], shape: &[usize], perm: &[usize], out: &mut [T], accumulate: bool) {
    let in_strides = strides(shape);
    let out_shape = permuted_shape(shape, perm);
    let rank = shape.len();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        if accumulate {
            *o += x[src];
        } else {
            *o = x[src];
        }
        // odometer increment over the output index
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

/// Unfolds `x[cin×t]` into `cols[(cin·k)×t_out]` for a strided dilated convolution.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    cin: usize,
    t: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    t_out: usize,
    cols: &mut [T],
) {
    for c in 0..cin {
        let xrow = &x[c * t..(c + 1) * t];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
            let off = j * dilation;
            for (o, dst) in row.iter_mut().enumerate() {
                let pos = o * stride + off;
                *dst = if pos >= padding && pos - padding < t {
                    xrow[pos - padding]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `dx[cin×t]` (accumulating).
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    cin: usize,
    t: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    t_out: usize,
    dx: &mut [T],
) {
    for c in 0..cin {
        for j in 0..k {
            let row = &cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
            let off = j * dilation;
            for (o, &g) in row.iter().enumerate() {
                let pos = o * stride + off;
                if pos >= padding && pos - padding < t {
                    dx[c * t + pos - padding] += g;
                }
            }
        }
    }
}

/// Row-wise softmax over the last axis of `x`, viewed as `batch × lq × lk`.
/// With `causal`, query row `i` may only attend keys `j <= i + (lk - lq)`;
/// masked entries get probability exactly zero.
pub fn softmax_rows<T: Real>(x: &[T], lq: usize, lk: usize, causal: bool, out: &mut [T]) {
    let offset = lk.saturating_sub(lq);
    for (r, (xrow, orow)) in x.chunks(lk).zip(out.chunks_mut(lk)).enumerate() {
        let limit = if causal { (r % lq + offset + 1).min(lk) } else { lk };
        let mut mx = T::neg_infinity();
        for &v in &xrow[..limit] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for (o, &v) in orow[..limit].iter_mut().zip(&xrow[..limit]) {
            *o = (v - mx).exp();
            sum += *o;
        }
        let inv = T::one() / sum;
        for o in orow[..limit].iter_mut() {
            *o *= inv;
        }
        for o in orow[limit..].iter_mut() {
            *o = T::zero();
        }
    }
}

/// Log-sum-exp of a slice.
pub fn logsumexp<T: Real>(x: &[T]) -> T {
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = x.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln()
}

// GELU, tanh approximation.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
