//! Weighted point lists: the discrete probability measures on ℝⁿ that every
//! coupling callback (`f(x, m)`, `g₀(x, m)`) receives.

use nalgebra::DVector;

use super::MeasureError;

/// Tolerance on `Σ wᵢ = 1` accepted by the constructors.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A finitely supported probability measure `Σᵢ wᵢ δ_{xᵢ}` on ℝⁿ.
///
/// The weighted mean is computed once at construction so that models whose
/// coupling depends on `m` only through its mean stay O(1) per evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoints {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    mean: DVector<f64>,
}

impl WeightedPoints {
    /// Builds a measure, checking dimensions, signs and normalization.
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if points.is_empty() {
            return Err(MeasureError::Empty);
        }
        if points.len() != weights.len() {
            return Err(MeasureError::SizeMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        let dim = points[0].len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(MeasureError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MeasureError::NegativeWeight(w));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        Ok(Self::from_parts(points, weights))
    }

    /// Builds a measure after rescaling the weights to sum to one.
    pub fn normalized(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(MeasureError::NotNormalized(total));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(points, weights)
    }

    /// Equal weights `1/N`.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self, MeasureError> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dirac(point: DVector<f64>) -> Self {
        Self::from_parts(vec![point], vec![1.0])
    }

    /// Scalar atoms, mostly for one-dimensional states.
    pub fn from_scalars(values: &[f64], weights: Vec<f64>) -> Result<Self, MeasureError> {
        let points = values.iter().map(|&x| DVector::from_element(1, x)).collect();
        Self::new(points, weights)
    }

    // Callers guarantee the invariants checked in `new`.
    pub(crate) fn from_parts(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Self {
        let dim = points.first().map_or(0, |p| p.len());
        let mut mean = DVector::zeros(dim);
        for (p, &w) in points.iter().zip(&weights) {
            mean.axpy(w, p, 1.0);
        }
        Self {
            points,
            weights,
            mean,
        }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges atoms whose positions agree to `tol` in the sup norm, summing
    /// their weights. First occurrence order is kept.
    pub fn deduplicated(&self, tol: f64) -> Self {
        let mut points: Vec<DVector<f64>> = Vec::with_capacity(self.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        for (p, &w) in self.points.iter().zip(&self.weights) {
            match points.iter().position(|q| (q - p).amax() <= tol) {
                Some(i) => weights[i] += w,
                None => {
                    points.push(p.clone());
                    weights.push(w);
                }
            }
        }
        Self::from_parts(points, weights)
    }

    /// `∫ h dm`.
    pub fn integrate(&self, mut h: impl FnMut(&DVector<f64>) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * h(p))
            .sum()
    }
}
