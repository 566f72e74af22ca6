/// `M_ε(a, b) = ½(a+b) + ½√((a−b)² + 4ε²)`, a C¹ upper approximation of
/// `max(a, b)` with `max(a, b) ≤ M_ε(a, b) ≤ max(a, b) + ε`.
pub fn smoothed_max(a: f64, b: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        return a.max(b);
    }
    let d = a - b;
    // Split by sign to avoid cancellation in ½(a+b) + ½|a−b| when |a−b| ≫ ε.
    let root = d.hypot(2.0 * eps);
    if d >= 0.0 {
        a + 0.5 * (root - d)
    } else {
        b + 0.5 * (root + d)
    }
}

/// Partial derivatives `(∂M_ε/∂a, ∂M_ε/∂b)`.
pub fn smoothed_max_grad(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let d = a - b;
    let root = d.hypot(2.0 * eps);
    if root == 0.0 {
        return (0.5, 0.5);
    }
    let s = d / root;
    (0.5 * (1.0 + s), 0.5 * (1.0 - s))
}
