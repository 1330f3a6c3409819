use super::{FeatureError, FeatureMatrix};

/// Regression deltas over `±window` frames, applied twice:
/// `d_t = Σ_n n (c_{t+n} − c_{t−n}) / (2 Σ_n n²)` with out-of-range frames
/// replicated from the nearest edge. Output rows are `[static | Δ | ΔΔ]`.
pub fn append_deltas(features: &FeatureMatrix, window: usize) -> Result<FeatureMatrix, FeatureError> {
    if window == 0 {
        return Err(FeatureError::InvalidConfig("delta window must be >= 1".into()));
    }
    let frames = features.num_frames();
    let dim = features.dim();
    let statics = features.as_slice();
    let delta = regression(statics, frames, dim, window);
    let delta2 = regression(&delta, frames, dim, window);

    let mut data = Vec::with_capacity(frames * dim * 3);
    for t in 0..frames {
        let range = t * dim..(t + 1) * dim;
        data.extend_from_slice(features.row(t));
        data.extend_from_slice(&delta[range.clone()]);
        data.extend_from_slice(&delta2[range]);
    }
    Ok(FeatureMatrix::new(frames, dim * 3, data, features.kind())?.with_frame_shift(features.frame_shift()))
}

fn regression(input: &[f64], frames: usize, dim: usize, window: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize, d: usize| {
        let t = t.clamp(0, frames as isize - 1) as usize;
        input[t * dim + d]
    };
    let mut out = vec![0.0; frames * dim];
    for t in 0..frames {
        for d in 0..dim {
            let mut acc = 0.0;
            for n in 1..=window {
                let n_i = n as isize;
                acc += n as f64 * (at(t as isize + n_i, d) - at(t as isize - n_i, d));
            }
            out[t * dim + d] = acc / denom;
        }
    }
    out
}
