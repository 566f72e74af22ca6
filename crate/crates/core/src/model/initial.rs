use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::measures::WeightedPoints;

/// The initial population `m₀` with compact support `K₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    /// `count` equal-weight atoms filling the box `[lower, upper]`.
    ///
    /// Coordinate `j` of atom `i` sits at the midpoint of stratum `πⱼ(i)` of
    /// `[lowerⱼ, upperⱼ]`, with `π₀` the identity and the other permutations
    /// drawn from `seed`. In one dimension the atoms are the `count`
    /// midpoint quantiles of the interval.
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
        count: usize,
        seed: u64,
    },
    Points {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl InitialDistribution {
    pub fn uniform_interval(lower: f64, upper: f64, count: usize) -> Self {
        InitialDistribution::Uniform {
            lower: vec![lower],
            upper: vec![upper],
            count,
            seed: 0,
        }
    }

    /// Samples the atoms, checking that they lie in the declared support box.
    pub fn sample(&self) -> Result<WeightedPoints, ModelError> {
        let invalid = |msg: String| ModelError::InvalidInitialDistribution(msg);
        match self {
            InitialDistribution::Uniform {
                lower,
                upper,
                count,
                seed,
            } => {
                if *count == 0 {
                    return Err(invalid("sample count must be positive".into()));
                }
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(invalid("box bounds must be nonempty and of equal length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u && l.is_finite() && u.is_finite())) {
                    return Err(invalid("box bounds must be finite with lower ≤ upper".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let perms: Vec<Vec<usize>> = (0..lower.len())
                    .map(|j| {
                        let mut perm: Vec<usize> = (0..*count).collect();
                        if j > 0 {
                            perm.shuffle(&mut rng);
                        }
                        perm
                    })
                    .collect();
                let points = (0..*count)
                    .map(|i| {
                        DVector::from_iterator(
                            lower.len(),
                            (0..lower.len()).map(|j| {
                                let u = (perms[j][i] as f64 + 0.5) / *count as f64;
                                lower[j] + u * (upper[j] - lower[j])
                            }),
                        )
                    })
                    .collect();
                WeightedPoints::uniform(points).map_err(|e| invalid(e.to_string()))
            }
            InitialDistribution::Points { points, weights } => {
                if points.is_empty() {
                    return Err(invalid("point list is empty".into()));
                }
                if points.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(invalid("points must be finite".into()));
                }
                let pts = points.iter().map(|p| DVector::from_column_slice(p)).collect();
                WeightedPoints::new(pts, weights.clone()).map_err(|e| invalid(e.to_string()))
            }
        }
    }

    /// Bounding box `K₀` of the support.
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            InitialDistribution::Uniform { lower, upper, .. } => (lower.clone(), upper.clone()),
            InitialDistribution::Points { points, .. } => {
                let dim = points.first().map_or(0, Vec::len);
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for p in points {
                    for j in 0..dim.min(p.len()) {
                        lo[j] = lo[j].min(p[j]);
                        hi[j] = hi[j].max(p[j]);
                    }
                }
                (lo, hi)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialDistribution::Uniform { lower, .. } => lower.len(),
            InitialDistribution::Points { points, .. } => points.first().map_or(0, Vec::len),
        }
    }
}
