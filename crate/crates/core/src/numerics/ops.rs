//! Value-level kernels. The tape in [`super::tape`] calls these for its
//! forward pass, and they are usable directly when no gradient is needed.

use super::Tensor;
use crate::error::{Result, SomoError};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, m] => Ok((*n, *m)),
        s => Err(SomoError::dim(op, s, &[0, 0])),
    }
}

/// `a · b` for `a: n×k`, `b: k×m`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_2d("matmul", a)?;
    let (k2, m) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(SomoError::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    matmul_into(a.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// `a · bᵀ` for `a: n×k`, `b: m×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_2d("matmul_nt", a)?;
    let (m, k2) = require_2d("matmul_nt", b)?;
    if k != k2 {
        return Err(SomoError::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    matmul_nt_into(a.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// `aᵀ · b` for `a: k×n`, `b: k×m`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, n) = require_2d("matmul_tn", a)?;
    let (k2, m) = require_2d("matmul_tn", b)?;
    if k != k2 {
        return Err(SomoError::dim("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    matmul_tn_into(a.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

// out += a(n×k) · b(k×m)
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * m..(p + 1) * m];
            for (x, &bv) in o.iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    }
}

// out += a(n×k) · b(m×k)ᵀ
// Transposes `b` first so the inner loop is a contiguous axpy.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    let mut bt = vec![0.0; k * m];
    for j in 0..m {
        for p in 0..k {
            bt[p * m + j] = b[j * k + p];
        }
    }
    matmul_into(a, &bt, out, n, k, m);
}

// out += a(k×n)ᵀ · b(k×m)
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for p in 0..k {
        let br = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let av = a[p * n + i];
            if av == 0.0 {
                continue;
            }
            let o = &mut out[i * m..(i + 1) * m];
            for (x, &bv) in o.iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    }
}

/// `x · w + bias` with the bias broadcast over rows.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut out = matmul(x, w)?;
    add_row_bias(&mut out, bias)?;
    Ok(out)
}

pub(crate) fn add_row_bias(x: &mut Tensor, bias: &Tensor) -> Result<()> {
    let m = x.cols();
    if bias.len() != m {
        return Err(SomoError::dim("bias", x.shape(), bias.shape()));
    }
    for i in 0..x.rows() {
        for (v, b) in x.row_mut(i).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(())
}

/// Row-wise softmax. Each row is shifted by its maximum before
/// exponentiation, so large inputs do not overflow.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    require_2d("softmax_rows", x)?;
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Per-row statistics kept by [`layer_norm_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_cached(x, gain, shift, eps).map(|(y, _)| y)
}

pub fn layer_norm_cached(
    x: &Tensor,
    gain: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (n, m) = require_2d("layer_norm", x)?;
    if m < 2 {
        return Err(SomoError::dim("layer_norm", x.shape(), &[n, 2]));
    }
    if gain.len() != m || shift.len() != m {
        return Err(SomoError::dim("layer_norm", x.shape(), gain.shape()));
    }
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        let nr = normalized.row_mut(i);
        for (z, v) in nr.iter_mut().zip(row) {
            *z = (v - mean) * r;
        }
        let nr = normalized.row(i).to_vec();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gain.data()[j] * nr[j] + shift.data()[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn linear_identity_weight() {
        let y = linear(&t(&[&[1.0, 2.0]]), &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_zero_input_passes_bias() {
        let w = t(&[&[0.3, -7.0], &[2.0, 5.5]]);
        let bias = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let y = linear(&t(&[&[0.0, 0.0]]), &w, &bias).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_hand_expansion() {
        // [1,2]·[[1,0],[1,1]] = [3,2]; + [0,1] = [3,3]
        let w = t(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let bias = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let y = linear(&t(&[&[1.0, 2.0]]), &w, &bias).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let err = linear(&t(&[&[1.0, 2.0, 3.0]]), &Tensor::identity(2), &Tensor::zeros(&[2]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_variants_agree() {
        let a = t(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = t(&[&[1.0, -1.0], &[0.5, 2.0], &[3.0, 0.0]]);
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(matmul_nt(&a, &b.transpose()).unwrap(), ab);
        assert_eq!(matmul_tn(&a.transpose(), &b).unwrap(), ab);
        assert_eq!(ab.data(), &[11.0, 3.0, 24.5, 6.0]);
    }

    #[test]
    fn softmax_uniform_row() {
        let y = softmax_rows(&t(&[&[0.0, 0.0, 0.0]])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_row() {
        let y = softmax_rows(&t(&[&[0.0, 2f64.ln()]])).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let y = softmax_rows(&t(&[&[1000.0, 1000.0]])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_shift() {
        let x = t(&[&[1.0, 1.0, 1.0, 1.0]]);
        let y = layer_norm(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_already_standard_row() {
        let x = t(&[&[1.0, -1.0]]);
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn layer_norm_zero_gain_gives_shift() {
        let x = t(&[&[3.0, -8.0, 0.25]]);
        let shift = Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let y = layer_norm(&x, &Tensor::zeros(&[3]), &shift, 1e-5).unwrap();
        assert_eq!(y.data(), shift.data());
    }

    #[test]
    fn layer_norm_rejects_single_column() {
        let x = t(&[&[3.0]]);
        assert!(layer_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).is_err());
    }

    #[test]
    fn leaky_relu_cases() {
        let x = Tensor::new(vec![2], vec![2.0, -2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).data(), &[2.0, -0.2]);
        let pos = Tensor::new(vec![3], vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(leaky_relu(&pos, DEFAULT_LEAKY_SLOPE), pos);
        let mixed = Tensor::new(vec![3], vec![-4.0, 1.0, -0.5]).unwrap();
        assert_eq!(leaky_relu(&mixed, 1.0), mixed);
    }
}
