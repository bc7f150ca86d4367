//! Position error metrics over `P×T×J×3` pose tensors, in millimeters.
//!
//! Norms are plain Euclidean distances (not squared).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SomoError};
use crate::motion::ROOT_JOINT;
use crate::numerics::Tensor;

fn check(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<(usize, usize, usize)> {
    match (pred.shape(), truth.shape()) {
        (&[p, t, j, 3], b) if b == pred.shape() => Ok((p, t, j)),
        _ => Err(SomoError::dim(op, pred.shape(), truth.shape())),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean joint position error over persons, frames and joints.
pub fn mpjpe(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (p, t, j) = check("mpjpe", pred, truth)?;
    let total: f64 = pred.data().chunks(3).zip(truth.data().chunks(3)).map(|(a, b)| dist(a, b)).sum();
    Ok(total / (p * t * j) as f64)
}

/// [`mpjpe`] after subtracting each pose's own root position.
pub fn ampjpe(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (p, t, j) = check("ampjpe", pred, truth)?;
    let w = j * 3;
    let mut total = 0.0;
    for (a, b) in pred.data().chunks(w).zip(truth.data().chunks(w)) {
        let ra = &a[ROOT_JOINT * 3..ROOT_JOINT * 3 + 3];
        let rb = &b[ROOT_JOINT * 3..ROOT_JOINT * 3 + 3];
        for k in 0..j {
            let da: Vec<f64> = (0..3).map(|c| a[k * 3 + c] - ra[c]).collect();
            let db: Vec<f64> = (0..3).map(|c| b[k * 3 + c] - rb[c]).collect();
            total += dist(&da, &db);
        }
    }
    Ok(total / (p * t * j) as f64)
}

fn root_errors(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (p, t, j) = check(op, pred, truth)?;
    let w = j * 3;
    let errors = pred
        .data()
        .chunks(w)
        .zip(truth.data().chunks(w))
        .map(|(a, b)| dist(&a[ROOT_JOINT * 3..ROOT_JOINT * 3 + 3], &b[ROOT_JOINT * 3..ROOT_JOINT * 3 + 3]))
        .collect();
    Ok((p, t, errors))
}

/// Mean root position error over persons and frames.
pub fn ade(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (p, t, errors) = root_errors("ade", pred, truth)?;
    Ok(errors.iter().sum::<f64>() / (p * t) as f64)
}

/// Root position error at the last frame, averaged over persons.
pub fn fde(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (p, t, errors) = root_errors("fde", pred, truth)?;
    Ok((0..p).map(|i| errors[i * t + t - 1]).sum::<f64>() / p as f64)
}

/// Metrics over the first `frames` predicted frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub seconds: f64,
    pub frames: usize,
    pub mpjpe: f64,
    pub ampjpe: f64,
    pub ade: f64,
    pub fde: f64,
}

type MetricRow = (&'static str, fn(&HorizonMetrics) -> f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizons: Vec<HorizonMetrics>,
}

/// Reporting horizons in seconds: 0.2 s steps that fit in `frames` at `fps`.
pub fn default_horizons(frames: usize, fps: f64) -> Vec<f64> {
    (1..)
        .map(|k| k as f64 * 0.2)
        .take_while(|s| horizon_frames(*s, fps) <= frames && horizon_frames(*s, fps) > 0)
        .collect()
}

fn horizon_frames(seconds: f64, fps: f64) -> usize {
    (seconds * fps).round() as usize
}

fn leading(x: &Tensor, frames: usize) -> Result<Tensor> {
    let &[p, t, j, _] = x.shape() else {
        return Err(SomoError::dim("metrics", x.shape(), &[0, 0, 0, 3]));
    };
    let w = j * 3;
    let mut out = Vec::with_capacity(p * frames * w);
    for i in 0..p {
        out.extend_from_slice(&x.data()[i * t * w..(i * t + frames) * w]);
    }
    Tensor::new(vec![p, frames, j, 3], out)
}

/// Evaluates `pred` against `truth` (both `P×T×J×3`) at each horizon in
/// seconds. Every metric at a horizon covers frames `1..=round(s·fps)`;
/// FDE uses the last of them.
pub fn evaluate(pred: &Tensor, truth: &Tensor, fps: f64, horizons: &[f64]) -> Result<MetricReport> {
    let (_, t, _) = check("evaluate", pred, truth)?;
    if horizons.is_empty() {
        return Err(SomoError::Validation(format!(
            "no reporting horizon fits {t} predicted frames at {fps} fps"
        )));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(sorted.len());
    for seconds in sorted {
        let frames = horizon_frames(seconds, fps);
        if frames == 0 || frames > t {
            return Err(SomoError::Validation(format!(
                "horizon {seconds} s needs {frames} frames, prediction has {t}"
            )));
        }
        let p = leading(pred, frames)?;
        let g = leading(truth, frames)?;
        out.push(HorizonMetrics {
            seconds,
            frames,
            mpjpe: mpjpe(&p, &g)?,
            ampjpe: ampjpe(&p, &g)?,
            ade: ade(&p, &g)?,
            fde: fde(&p, &g)?,
        });
    }
    Ok(MetricReport { horizons: out })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per metric, one column per horizon.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "Time (sec)");
        for h in &self.horizons {
            out.push_str(&format!("{:>10}", format!("{:.1}", h.seconds)));
        }
        out.push('\n');
        let rows: [MetricRow; 4] = [
            ("MPJPE", |h| h.mpjpe),
            ("AMPJPE", |h| h.ampjpe),
            ("ADE", |h| h.ade),
            ("FDE", |h| h.fde),
        ];
        for (name, get) in rows {
            out.push_str(&format!("{name:<12}"));
            for h in &self.horizons {
                out.push_str(&format!("{:>10.2}", get(h)));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poses(p: usize, t: usize, j: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Tensor {
        let mut data = Vec::new();
        for a in 0..p {
            for b in 0..t {
                for c in 0..j {
                    for d in 0..3 {
                        data.push(f(a, b, c, d));
                    }
                }
            }
        }
        Tensor::new(vec![p, t, j, 3], data).unwrap()
    }

    #[test]
    fn identical_inputs_score_zero() {
        let x = poses(2, 5, 4, |a, b, c, d| (a * 7 + b * 3 + c + d) as f64);
        assert_eq!(mpjpe(&x, &x).unwrap(), 0.0);
        assert_eq!(ampjpe(&x, &x).unwrap(), 0.0);
        assert_eq!(ade(&x, &x).unwrap(), 0.0);
        assert_eq!(fde(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five_offset() {
        let g = poses(2, 4, 3, |a, b, c, d| (a + b + c + d) as f64);
        let p = poses(2, 4, 3, |a, b, c, d| (a + b + c + d) as f64 + [3.0, 4.0, 0.0][d]);
        assert!((mpjpe(&p, &g).unwrap() - 5.0).abs() < 1e-12);
        assert!((mpjpe(&g, &p).unwrap() - 5.0).abs() < 1e-12);
        assert!(ampjpe(&p, &g).unwrap().abs() < 1e-12);
        assert!((ade(&p, &g).unwrap() - 5.0).abs() < 1e-12);
        assert!((fde(&p, &g).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp_root_error() {
        // root x error 0, 10/9, ..., 10 over ten frames; limbs follow the root
        let g = poses(1, 10, 2, |_, _, c, _| c as f64);
        let p = poses(1, 10, 2, |_, b, c, d| c as f64 + if d == 0 { b as f64 * 10.0 / 9.0 } else { 0.0 });
        assert!((fde(&p, &g).unwrap() - 10.0).abs() < 1e-12);
        assert!((ade(&p, &g).unwrap() - 5.0).abs() < 1e-12);
        assert!(ampjpe(&p, &g).unwrap().abs() < 1e-12);
    }

    #[test]
    fn horizon_report() {
        let g = poses(1, 25, 2, |_, _, _, _| 0.0);
        let p = poses(1, 25, 2, |_, b, _, d| if d == 1 { (b + 1) as f64 } else { 0.0 });
        let hs = default_horizons(25, 25.0);
        assert_eq!(hs.len(), 5);
        let r = evaluate(&p, &g, 25.0, &hs).unwrap();
        assert_eq!(r.horizons[0].frames, 5);
        assert_eq!(r.horizons[4].frames, 25);
        assert!((r.horizons[0].fde - 5.0).abs() < 1e-12);
        assert!((r.horizons[0].ade - 3.0).abs() < 1e-12);
        assert!(r.to_table().starts_with("Time (sec)"));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(matches!(evaluate(&p, &g, 25.0, &[1.2]), Err(SomoError::Validation(_))));
        assert!(matches!(evaluate(&p, &g, 25.0, &[]), Err(SomoError::Validation(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = poses(1, 3, 2, |_, _, _, _| 0.0);
        let b = poses(1, 4, 2, |_, _, _, _| 0.0);
        assert!(matches!(mpjpe(&a, &b), Err(SomoError::Dimension { .. })));
    }
}
