use super::FeatureMatrix;

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-utterance mean and variance normalization.
///
/// Dimensions whose variance falls below `1e-12` are set to zero after mean
/// subtraction. A single-frame utterance is mean-normalized only.
pub fn apply_cmvn(features: &FeatureMatrix) -> FeatureMatrix {
    let frames = features.num_frames();
    let dim = features.dim();
    let n = frames as f64;
    let mut mean = vec![0.0f64; dim];
    for row in features.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for row in features.rows() {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);

    let scale: Vec<f64> = var
        .iter()
        .map(|&v| {
            if frames < 2 {
                1.0
            } else if v < VARIANCE_FLOOR {
                0.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let data = features
        .rows()
        .flat_map(|row| row.iter().zip(&mean).zip(&scale).map(|((&v, m), s)| (v - m) * s))
        .collect();
    FeatureMatrix::new(frames, dim, data, features.kind())
        .expect("normalization preserves shape and finiteness")
        .with_frame_shift(features.frame_shift())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use proptest::prelude::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows, FeatureKind::Mfcc).unwrap()
    }

    fn moments(m: &FeatureMatrix, d: usize) -> (f64, f64) {
        let n = m.num_frames() as f64;
        let mean = m.rows().map(|r| r[d]).sum::<f64>() / n;
        let var = m.rows().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn two_frames_map_to_plus_minus_one() {
        let out = apply_cmvn(&matrix(&[vec![0.0], vec![2.0]]));
        assert_eq!(out.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_dimension_is_zeroed() {
        let out = apply_cmvn(&matrix(&[vec![5.0, 1.0], vec![5.0, 3.0], vec![5.0, 2.0]]));
        for row in out.rows() {
            assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn single_frame_is_mean_only() {
        let out = apply_cmvn(&matrix(&[vec![4.0, -2.0]]));
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn normalized_input_unchanged() {
        let m = matrix(&[vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]]);
        let out = apply_cmvn(&m);
        for (a, b) in out.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn zero_mean_unit_variance_and_idempotent(
            rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..30)
        ) {
            let m = matrix(&rows);
            let once = apply_cmvn(&m);
            for d in 0..3 {
                let (mean, var) = moments(&once, d);
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!(var == 0.0 || (var - 1.0).abs() < 1e-8);
            }
            let twice = apply_cmvn(&once);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
