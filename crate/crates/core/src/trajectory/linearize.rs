use crate::geom::Point2;

/// `x ↦ grad·x + constant` on the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub grad: Point2,
    pub constant: f64,
}

impl Affine2 {
    pub fn eval(&self, x: Point2) -> f64 {
        self.grad.dot(x) + self.constant
    }
}

/// First-order model of `q ↦ ‖q − center‖` at `anchor`, with the gradient
/// damped by `eps_tol` in its denominator.
pub fn linearize_h1(anchor: Point2, center: Point2, eps_tol: f64) -> Affine2 {
    let r = anchor - center;
    let n = r.norm();
    let grad = r * (1.0 / (n + eps_tol));
    Affine2 {
        grad,
        constant: n - grad.dot(anchor),
    }
}

/// First-order model of `Δ ↦ ‖Δ‖` at `Δ^j = anchor_next − anchor`, as a
/// function of the displacement `Δ`. Coincident anchors fall back to the
/// damped denominator, which yields a zero gradient.
pub fn linearize_h2(anchor: Point2, anchor_next: Point2, eps_tol: f64) -> Affine2 {
    let delta = anchor_next - anchor;
    let n = delta.norm();
    let grad = if n > 0.0 {
        delta * (1.0 / n)
    } else {
        delta * (1.0 / eps_tol)
    };
    Affine2 {
        grad,
        constant: n - grad.dot(delta),
    }
}
