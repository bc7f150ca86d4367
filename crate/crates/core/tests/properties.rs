use proptest::prelude::*;
use somo_core::metrics::{ade, ampjpe, fde, mpjpe};
use somo_core::numerics::Tensor;
use somo_core::sie::piecewise_index;
use somo_core::spectral::{dct, idct, truncate};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

proptest! {
    #[test]
    fn bucket_index_is_bounded_odd_and_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let il = piecewise_index(lo, 1.0, 2.0, 4.0).unwrap();
        let ih = piecewise_index(hi, 1.0, 2.0, 4.0).unwrap();
        prop_assert!(il <= ih);
        prop_assert!((0..=2).contains(&il) && (0..=2).contains(&ih));
        prop_assert_eq!(piecewise_index(-a, 1.0, 2.0, 4.0).unwrap(), -piecewise_index(a, 1.0, 2.0, 4.0).unwrap());
    }

    #[test]
    fn dct_round_trips(m in 1usize..12, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&[m, cols], (0..m * cols).map(|_| rng.gen_range(-500.0..500.0)).collect());
        let c = dct(&x).unwrap();
        prop_assert!((c.norm() - x.norm()).abs() <= 1e-9 * (1.0 + x.norm()));
        let back = idct(&truncate(&c, m).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn truncation_never_adds_energy(m in 2usize..12, keep_frac in 0.0f64..1.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let keep = 1 + ((m - 1) as f64 * keep_frac) as usize;
        let x = tensor(&[m, 3], (0..m * 3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let back = idct(&truncate(&dct(&x).unwrap(), keep).unwrap()).unwrap();
        prop_assert!(back.norm() <= x.norm() + 1e-12);
    }

    #[test]
    fn metrics_are_nonnegative_and_zero_on_identity(
        data in proptest::collection::vec(-1000.0f64..1000.0, 2 * 3 * 4 * 3),
        shift in proptest::collection::vec(-1000.0f64..1000.0, 3),
    ) {
        let x = tensor(&[2, 3, 4, 3], data);
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += shift[i % 3];
        }
        prop_assert_eq!(mpjpe(&x, &x).unwrap(), 0.0);
        prop_assert!(ampjpe(&x, &y).unwrap() <= 1e-9);
        let norm = (shift[0].powi(2) + shift[1].powi(2) + shift[2].powi(2)).sqrt();
        prop_assert!((mpjpe(&x, &y).unwrap() - norm).abs() <= 1e-9);
        prop_assert!((ade(&x, &y).unwrap() - norm).abs() <= 1e-9);
        prop_assert!((fde(&x, &y).unwrap() - norm).abs() <= 1e-9);
    }
}
