use nalgebra::DVector;

/// Built-in price maps `ψ = ∇φ`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceFunction {
    /// `ψ(z) = s·z/√(1+|z|²)`, `φ(z) = s·√(1+|z|²)`; bounded by `s`, strictly convex.
    Saturating { scale: f64 },
    /// `ψ(z) = k·z`, `φ(z) = ½k|z|²`; unbounded.
    Linear { slope: f64 },
    /// `ψ ≡ c`, `φ(z) = ⟨c, z⟩`.
    Constant { value: Vec<f64> },
}

impl Default for PriceFunction {
    fn default() -> Self {
        PriceFunction::Saturating { scale: 1.0 }
    }
}

impl PriceFunction {
    pub fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            PriceFunction::Saturating { scale } => z * (*scale / (1.0 + z.norm_squared()).sqrt()),
            PriceFunction::Linear { slope } => z * *slope,
            PriceFunction::Constant { value } => DVector::from_column_slice(value),
        }
    }

    pub fn potential(&self, z: &DVector<f64>) -> f64 {
        match self {
            PriceFunction::Saturating { scale } => scale * (1.0 + z.norm_squared()).sqrt(),
            PriceFunction::Linear { slope } => 0.5 * slope * z.norm_squared(),
            PriceFunction::Constant { value } => DVector::from_column_slice(value).dot(z),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            PriceFunction::Saturating { scale } => scale.abs(),
            PriceFunction::Linear { slope } if *slope == 0.0 => 0.0,
            PriceFunction::Linear { .. } => f64::INFINITY,
            PriceFunction::Constant { value } => DVector::from_column_slice(value).norm(),
        }
    }

    /// Checks the output dimension against the control dimension.
    pub fn check_dim(&self, m: usize) -> Result<(), String> {
        match self {
            PriceFunction::Constant { value } if value.len() != m => Err(format!(
                "constant price has {} components, control dimension is {m}",
                value.len()
            )),
            PriceFunction::Saturating { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                Err(format!("saturating price scale must be nonnegative, got {scale}"))
            }
            PriceFunction::Linear { slope } if !(slope.is_finite() && *slope >= 0.0) => {
                Err(format!("linear price slope must be nonnegative, got {slope}"))
            }
            _ => Ok(()),
        }
    }
}
