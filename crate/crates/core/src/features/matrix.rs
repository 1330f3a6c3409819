use super::FeatureError;

/// Which front-end produced a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    Fbank,
    External,
    Tandem,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Fbank => "fbank",
            FeatureKind::External => "external",
            FeatureKind::Tandem => "tandem",
        }
    }
}

/// A `T × D` grid of observation vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
    frame_shift: f64,
    kind: FeatureKind,
}

pub const DEFAULT_FRAME_SHIFT: f64 = 0.010;

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>, kind: FeatureKind) -> Result<Self, FeatureError> {
        if frames == 0 {
            return Err(FeatureError::Empty);
        }
        if data.len() != frames * dim {
            return Err(FeatureError::Shape {
                expected: frames * dim,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                frame: pos / dim.max(1),
            });
        }
        Ok(Self {
            frames,
            dim,
            data,
            frame_shift: DEFAULT_FRAME_SHIFT,
            kind,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], kind: FeatureKind) -> Result<Self, FeatureError> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(FeatureError::RaggedRow { frame: t });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data, kind)
    }

    pub fn with_frame_shift(mut self, seconds: f64) -> Self {
        self.frame_shift = seconds;
        self
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.frames).map(move |t| self.row(t))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rounds every value through `f32`, the precision of feature files.
    pub fn round_to_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Stacks matrices of equal dimension frame-wise.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self, FeatureError> {
        let first = parts.first().ok_or(FeatureError::Empty)?;
        let dim = first.dim;
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut frames = 0;
        for m in parts {
            if m.dim != dim {
                return Err(FeatureError::RaggedRow { frame: frames });
            }
            data.extend_from_slice(&m.data);
            frames += m.frames;
        }
        Ok(Self {
            frames,
            dim,
            data,
            frame_shift: first.frame_shift,
            kind: first.kind,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self, FeatureError> {
        let end = end.min(self.frames);
        if start >= end {
            return Err(FeatureError::Empty);
        }
        let data = self.data[start * self.dim..end * self.dim].to_vec();
        Ok(Self {
            frames: end - start,
            dim: self.dim,
            data,
            frame_shift: self.frame_shift,
            kind: self.kind,
        })
    }
}
