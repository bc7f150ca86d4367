//! Symmetries of the full model: moving the whole scene or relabelling its
//! persons must not change what is predicted.

use somo_core::config::ModelConfig;
use somo_core::model::MotionModel;
use somo_core::motion::{generate_synthetic_scene, MultiPersonScene, SceneSpec};
use somo_core::numerics::Tensor;

const OFFSET: [f64; 3] = [1234.5, -987.25, 321.0];

fn setup(seed: u64) -> (MotionModel, MultiPersonScene) {
    let model = MotionModel::new(ModelConfig::toy(), seed).unwrap();
    let scene = generate_synthetic_scene(&SceneSpec::default(), seed + 10).unwrap();
    (model, scene.slice_frames(0, 50).unwrap())
}

fn person_block(x: &Tensor, person: usize) -> &[f64] {
    let w = x.len() / x.shape()[0];
    &x.data()[person * w..(person + 1) * w]
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoder_ignores_global_translation() {
    for seed in 0..2 {
        let (model, scene) = setup(seed);
        let a = model.encode(&scene).unwrap();
        let b = model.encode(&scene.translated(OFFSET)).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-9, "seed {seed}: {}", a.max_abs_diff(&b));
    }
}

#[test]
fn rollout_moves_with_the_scene() {
    let (model, scene) = setup(3);
    let a = model.predict(&scene, 25).unwrap().poses;
    let b = model.predict(&scene.translated(OFFSET), 25).unwrap().poses;
    let mut expected = a.clone();
    for (i, v) in expected.data_mut().iter_mut().enumerate() {
        *v += OFFSET[i % 3];
    }
    assert!(b.max_abs_diff(&expected) <= 1e-9, "{}", b.max_abs_diff(&expected));
}

#[test]
fn relabelling_persons_permutes_outputs() {
    let (model, scene) = setup(4);
    let order = [2, 0, 1];
    let permuted = scene.permuted(&order).unwrap();

    let a = model.predict(&scene, 25).unwrap();
    let b = model.predict(&permuted, 25).unwrap();
    for (new, &old) in order.iter().enumerate() {
        let d = max_diff(person_block(&b.poses, new), person_block(&a.poses, old));
        assert!(d <= 1e-9, "person {old} -> {new}: {d}");
    }

    let ea = model.encode(&scene).unwrap();
    let eb = model.encode(&permuted).unwrap();
    let s = model.encoded_windows();
    let f = ea.cols();
    for (new, &old) in order.iter().enumerate() {
        let d = max_diff(
            &eb.data()[new * s * f..(new + 1) * s * f],
            &ea.data()[old * s * f..(old + 1) * s * f],
        );
        assert!(d <= 1e-9, "memory block {old} -> {new}: {d}");
    }

    // Attention columns follow their person blocks as well.
    for (new_q, &old_q) in order.iter().enumerate() {
        for (new_k, &old_k) in order.iter().enumerate() {
            for w in 0..s {
                let x = b.attention.get(&[new_q, new_k * s + w]);
                let y = a.attention.get(&[old_q, old_k * s + w]);
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    for seed in 0..3 {
        let (model, scene) = setup(seed);
        let attn = model.predict(&scene, 10).unwrap().attention;
        assert_eq!(attn.shape(), &[3, 3 * model.encoded_windows()]);
        for r in 0..attn.rows() {
            let row = attn.row(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {r}: {sum}");
        }
    }
}
