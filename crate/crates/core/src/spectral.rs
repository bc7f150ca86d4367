//! Orthonormal DCT-II along the time (row) axis.
//!
//! With `T[k][n] = c_k · cos(π (2n + 1) k / 2M)`, `c_0 = √(1/M)` and
//! `c_k = √(2/M)` otherwise, `T·Tᵀ = I`, so the inverse is `Tᵀ` and the
//! transform preserves energy.

use std::f64::consts::PI;

use crate::error::{Result, SomoError};
use crate::numerics::{ops, Tensor};

/// Low-frequency DCT coefficients of a length-`original_length` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoeffs {
    coeffs: Tensor,
    original_length: usize,
}

impl DctCoeffs {
    pub fn new(coeffs: Tensor, original_length: usize) -> Result<Self> {
        let kept = coeffs.rows();
        if coeffs.shape().len() != 2 || kept == 0 || kept > original_length {
            return Err(SomoError::Config(format!(
                "{kept} coefficient rows for a sequence of length {original_length}"
            )));
        }
        Ok(DctCoeffs {
            coeffs,
            original_length,
        })
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn kept(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }
}

/// The `m×m` orthonormal DCT-II matrix.
pub fn dct_matrix(m: usize) -> Tensor {
    let mut t = Tensor::zeros(&[m, m]);
    let mf = m as f64;
    for k in 0..m {
        let c = if k == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
        for n in 0..m {
            let angle = PI * (2 * n + 1) as f64 * k as f64 / (2.0 * mf);
            t.set(&[k, n], c * angle.cos());
        }
    }
    t
}

/// DCT matrix with frequency rows `keep..m` zeroed: maps a sequence to
/// its low-pass coefficients, zero-padded back to `m` rows.
pub fn lowpass_dct_matrix(m: usize, keep: usize) -> Tensor {
    let mut t = dct_matrix(m);
    for k in keep..m {
        t.row_mut(k).fill(0.0);
    }
    t
}

/// Inverse transform that ignores coefficient rows `keep..m`.
pub fn lowpass_idct_matrix(m: usize, keep: usize) -> Tensor {
    lowpass_dct_matrix(m, keep).transpose()
}

pub fn dct(seq: &Tensor) -> Result<Tensor> {
    if seq.shape().len() != 2 {
        return Err(SomoError::dim("dct", seq.shape(), &[0, 0]));
    }
    ops::matmul(&dct_matrix(seq.rows()), seq)
}

/// Inverse transform, zero-padding the dropped high frequencies.
pub fn idct(coeffs: &DctCoeffs) -> Result<Tensor> {
    let m = coeffs.original_length;
    let basis = dct_matrix(m);
    let kept = coeffs.kept();
    let d = coeffs.coeffs.cols();
    let mut out = Tensor::zeros(&[m, d]);
    for n in 0..m {
        for k in 0..kept {
            let b = basis.get(&[k, n]);
            let c = coeffs.coeffs.row(k);
            for (o, &cv) in out.row_mut(n).iter_mut().zip(c) {
                *o += b * cv;
            }
        }
    }
    Ok(out)
}

/// Keeps the `keep` lowest-frequency rows.
pub fn truncate(coeffs: &Tensor, keep: usize) -> Result<DctCoeffs> {
    let m = coeffs.rows();
    if keep == 0 || keep > m {
        return Err(SomoError::Config(format!(
            "kept frequency count {keep} outside 1..={m}"
        )));
    }
    let d = coeffs.cols();
    let kept = Tensor::new(vec![keep, d], coeffs.data()[..keep * d].to_vec())?;
    DctCoeffs::new(kept, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let mut t = Tensor::zeros(&[rows, cols]);
        for i in 0..rows {
            for j in 0..cols {
                t.set(&[i, j], f(i, j));
            }
        }
        t
    }

    #[test]
    fn matrix_is_orthonormal() {
        for m in 1..=16 {
            let t = dct_matrix(m);
            let prod = ops::matmul_nt(&t, &t).unwrap();
            assert!(prod.max_abs_diff(&Tensor::identity(m)) < 1e-13, "m={m}");
        }
    }

    #[test]
    fn constant_column_has_only_dc() {
        let v = 2.5;
        let c = dct(&seq(4, 1, |_, _| v)).unwrap();
        // √4 · v
        assert!((c.data()[0] - 2.0 * v).abs() < 1e-12);
        for k in 1..4 {
            assert!(c.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        assert_eq!(dct(&Tensor::zeros(&[5, 3])).unwrap(), Tensor::zeros(&[5, 3]));
        let z = DctCoeffs::new(Tensor::zeros(&[2, 3]), 5).unwrap();
        assert_eq!(idct(&z).unwrap(), Tensor::zeros(&[5, 3]));
    }

    #[test]
    fn dc_only_reconstructs_constant_sequence() {
        let x = seq(6, 2, |_, j| if j == 0 { -3.0 } else { 11.0 });
        let kept = truncate(&dct(&x).unwrap(), 1).unwrap();
        assert!(idct(&kept).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn truncate_rejects_out_of_range() {
        let c = Tensor::zeros(&[4, 2]);
        assert!(matches!(truncate(&c, 0), Err(SomoError::Config(_))));
        assert!(matches!(truncate(&c, 5), Err(SomoError::Config(_))));
    }

    #[test]
    fn dropped_row_energy_equals_reconstruction_error() {
        let x = seq(7, 3, |i, j| ((i * 13 + j * 7) % 11) as f64 - 4.3);
        let full = dct(&x).unwrap();
        let kept = truncate(&full, 6).unwrap();
        let rec = idct(&kept).unwrap();
        let err: f64 = rec
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dropped: f64 = full.row(6).iter().map(|v| v * v).sum();
        assert!((err - dropped).abs() < 1e-10, "{err} vs {dropped}");
    }

    #[test]
    fn lowpass_matrices_match_truncate_and_idct() {
        let x = seq(10, 4, |i, j| (i as f64 * 0.7 + j as f64).sin() * 30.0);
        let via_matrix = ops::matmul(
            &lowpass_idct_matrix(10, 4),
            &ops::matmul(&lowpass_dct_matrix(10, 4), &x).unwrap(),
        )
        .unwrap();
        let via_fns = idct(&truncate(&dct(&x).unwrap(), 4).unwrap()).unwrap();
        assert!(via_matrix.max_abs_diff(&via_fns) < 1e-12);
    }

    proptest! {
        #[test]
        fn reconstruction_error_non_increasing_in_kept(
            values in proptest::collection::vec(-100.0f64..100.0, 24)
        ) {
            let x = Tensor::new(vec![12, 2], values).unwrap();
            let full = dct(&x).unwrap();
            let mut prev = f64::INFINITY;
            for keep in 1..=12 {
                let rec = idct(&truncate(&full, keep).unwrap()).unwrap();
                let err = rec.zip_map(&x, |a, b| (a - b) * (a - b)).unwrap().sum();
                prop_assert!(err <= prev + 1e-9);
                prev = err;
            }
            prop_assert!(prev < 1e-18 * x.norm().powi(2).max(1.0) * 1e6);
        }
    }
}
