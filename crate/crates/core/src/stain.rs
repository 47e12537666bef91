use crate::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Minimum angle between stain vectors before a matrix is considered
/// degenerate (rows nearly collinear).
pub const MIN_STAIN_ANGLE_DEG: f64 = 1.0;

/// Two unit optical-density stain vectors (rows) plus the per-stain
/// 99th-percentile concentration observed when the matrix was estimated.
///
/// Row 0 is the hematoxylin-like vector by convention (tissue that appears
/// blue, i.e. absorbs red strongly, so the red OD entry is the larger one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StainMatrix {
    /// Row-major 2x3: rows are unit vectors in optical-density space.
    vectors: [[f64; 3]; 2],
    /// Per-stain 99th-percentile concentration.
    max_concentrations: [f64; 2],
}

impl StainMatrix {
    /// Validates unit norm, nonnegativity and row independence.
    pub fn new(vectors: [[f64; 3]; 2], max_concentrations: [f64; 2]) -> Result<Self> {
        for (i, row) in vectors.iter().enumerate() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(CoreError::Invariant(format!(
                    "stain vector {i} must have unit norm, got {norm}"
                )));
            }
            if row.iter().any(|&v| v < 0.0) {
                return Err(CoreError::Invariant(format!(
                    "stain vector {i} has a negative entry"
                )));
            }
        }
        let angle = angle_deg(&vectors[0], &vectors[1]);
        if angle <= MIN_STAIN_ANGLE_DEG {
            return Err(CoreError::Invariant(format!(
                "stain vectors are nearly collinear ({angle:.3} deg apart)"
            )));
        }
        if max_concentrations.iter().any(|&v| v < 0.0) {
            return Err(CoreError::Invariant("max concentrations must be >= 0".into()));
        }
        Ok(StainMatrix {
            vectors,
            max_concentrations,
        })
    }

    /// Normalizes raw rows to unit norm first (entries clamped to >= 0).
    pub fn from_raw_rows(raw: [[f64; 3]; 2], max_concentrations: [f64; 2]) -> Result<Self> {
        let mut vectors = [[0.0; 3]; 2];
        for (i, row) in raw.iter().enumerate() {
            let clamped = [row[0].max(0.0), row[1].max(0.0), row[2].max(0.0)];
            let norm: f64 = clamped.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(CoreError::Invariant(format!("stain vector {i} is zero")));
            }
            for c in 0..3 {
                vectors[i][c] = clamped[c] / norm;
            }
        }
        Self::new(vectors, max_concentrations)
    }

    /// The published Ruifrok H&E matrix, row-normalized:
    /// hematoxylin (0.65, 0.70, 0.29), eosin (0.07, 0.99, 0.11).
    pub fn he_reference() -> Self {
        Self::from_raw_rows([[0.65, 0.70, 0.29], [0.07, 0.99, 0.11]], [1.0, 1.0])
            .expect("reference H&E matrix is valid")
    }

    pub fn vectors(&self) -> &[[f64; 3]; 2] {
        &self.vectors
    }

    pub fn row(&self, stain: usize) -> [f64; 3] {
        self.vectors[stain]
    }

    pub fn max_concentrations(&self) -> [f64; 2] {
        self.max_concentrations
    }

    pub fn with_max_concentrations(&self, max_concentrations: [f64; 2]) -> Result<Self> {
        Self::new(self.vectors, max_concentrations)
    }

    /// Reorders rows so row 0 is the hematoxylin-like vector (larger red OD).
    pub fn ordered(mut self) -> Self {
        if self.vectors[1][0] > self.vectors[0][0] {
            self.vectors.swap(0, 1);
            self.max_concentrations.swap(0, 1);
        }
        self
    }

    /// Angle in degrees between the two rows.
    pub fn row_angle_deg(&self) -> f64 {
        angle_deg(&self.vectors[0], &self.vectors[1])
    }
}

/// Angle in degrees between two 3-vectors.
pub fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}
