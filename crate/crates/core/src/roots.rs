//! Bracketed scalar root finding: bisection with a safeguarded secant step.
//!
//! Every root the sediment kinetics needs lives in an interval where the
//! residual is monotone, so a sign-change bracket is always available and the
//! solver never has to search for one.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    pub const fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel }
    }

    fn width(&self, x: f64) -> f64 {
        self.abs + self.rel * x.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo:e}, {hi:e}] (f(lo) = {f_lo:e}, f(hi) = {f_hi:e})")]
    NotBracketed { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder stalled after {iterations} iterations on [{lo:e}, {hi:e}], residual {residual:e}")]
    NotConverged {
        lo: f64,
        hi: f64,
        residual: f64,
        iterations: usize,
    },
}

const MAX_ITER: usize = 400;

/// Finds a root of `f` inside `[lo, hi]`, which must bracket a sign change.
///
/// Each iteration tries a secant step through the two most recent iterates,
/// falls back to bisection whenever that step leaves the bracket, and forces a
/// bisection if two consecutive iterations failed to halve the bracket.
pub fn find_root<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64, RootError>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NotBracketed {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }

    // Most recent two iterates for the secant.
    let (mut x_prev, mut f_prev) = (a, fa);
    let (mut x_last, mut f_last) = (b, fb);
    let mut slow_steps = 0;

    for _ in 0..MAX_ITER {
        let width = b - a;
        let mid = 0.5 * (a + b);
        if width.abs() <= tol.width(mid) {
            return Ok(if fa.abs() < fb.abs() { a } else { b });
        }

        let mut x = mid;
        if slow_steps < 2 && f_last != f_prev {
            let secant = x_last - f_last * (x_last - x_prev) / (f_last - f_prev);
            if secant > a && secant < b && secant.is_finite() {
                x = secant;
            }
        }
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }

        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        if (b - a).abs() > 0.5 * width.abs() {
            slow_steps += 1;
        } else {
            slow_steps = 0;
        }
        x_prev = x_last;
        f_prev = f_last;
        x_last = x;
        f_last = fx;
    }

    Err(RootError::NotConverged {
        lo: a,
        hi: b,
        residual: fa.abs().min(fb.abs()),
        iterations: MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_root() {
        let root = find_root(|x| x * x - 2.0, 0.0, 2.0, Tolerance::absolute(1e-14)).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn reports_missing_bracket() {
        let err = find_root(|x| x * x + 1.0, -1.0, 1.0, Tolerance::absolute(1e-12)).unwrap_err();
        assert!(matches!(err, RootError::NotBracketed { .. }));
    }

    #[test]
    fn endpoint_root_returned_directly() {
        assert_eq!(find_root(|x| x - 1.0, 1.0, 3.0, Tolerance::absolute(1e-12)).unwrap(), 1.0);
    }

    #[test]
    fn flat_then_steep_function_still_converges() {
        // Secant steps stagnate on this shape; the forced bisection rescues it.
        let f = |x: f64| (x - 0.7).powi(9) + 1e-30;
        let root = find_root(f, 0.0, 1.0, Tolerance::absolute(1e-12)).unwrap();
        assert!(f(root - 1e-3) < 0.0 && f(root + 1e-3) > 0.0);
    }

    #[test]
    fn relative_tolerance_for_tiny_roots() {
        let target = 3.0e-10;
        let root = find_root(|x| x - target, 0.0, 1e21, Tolerance::relative(1e-14)).unwrap();
        assert!(((root - target) / target).abs() < 1e-12);
    }
}
