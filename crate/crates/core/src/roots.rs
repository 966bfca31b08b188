//! Safeguarded Newton iteration for monotone scalar equations.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RootError {
    #[error("root finder did not converge after {iterations} iterations (last iterate {last})")]
    NoConvergence { iterations: usize, last: f64 },
}

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Root of a strictly decreasing `f`, given as `x -> (f(x), f'(x))`.
///
/// The bracket is grown by doubling a step away from `x0` until `f` changes
/// sign; Newton steps are then taken inside the bracket, falling back to
/// bisection when a step leaves it.
pub fn decreasing_root(
    f: impl Fn(f64) -> (f64, f64),
    x0: f64,
    initial_step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, RootError> {
    let (f0, _) = f(x0);
    if f0 == 0.0 {
        return Ok(x0);
    }
    let dir = if f0 > 0.0 { 1.0 } else { -1.0 };
    let mut step = initial_step.abs().max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let (mut lo, mut hi);
    let mut near = x0;
    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(RootError::NoConvergence { iterations: max_iter, last: near });
        }
        let far = x0 + dir * step;
        let (ff, _) = f(far);
        // A NaN here would mean the caller's function is ill-defined.
        if ff == 0.0 {
            return Ok(far);
        }
        if (ff > 0.0) != (f0 > 0.0) {
            (lo, hi) = if dir > 0.0 { (near, far) } else { (far, near) };
            break;
        }
        near = far;
        step *= 2.0;
    }
    // Invariant: f(lo) > 0 > f(hi).
    let mut x = 0.5 * (lo + hi);
    while iterations < max_iter {
        iterations += 1;
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - x).abs();
        x = next;
        if moved <= tol * (1.0 + x.abs()) || hi - lo <= tol * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    Err(RootError::NoConvergence { iterations, last: x })
}

/// Plain bisection on a sign-changing bracket; used as an independent oracle.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    let flo = f(lo);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root() {
        let r = decreasing_root(|x| (3.0 - 2.0 * x, -2.0), 0.0, 1e-3, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn steep_sinh_root() {
        // sinh(x) = 1e6 with pure Newton from 0 overshooting badly.
        let f = |x: f64| (1e6 - x.sinh(), -x.cosh());
        let r = decreasing_root(f, 0.0, 1e-3, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((r - 1e6f64.asinh()).abs() < 1e-10);
    }

    #[test]
    fn root_to_the_left() {
        let f = |x: f64| (-(x + 7.25), -1.0);
        let r = decreasing_root(f, 0.0, 0.01, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((r + 7.25).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let err = decreasing_root(|x| (1.0 - x, -1.0), 0.0, 1e-300, DEFAULT_TOL, 5).unwrap_err();
        assert!(matches!(err, RootError::NoConvergence { .. }));
    }

    #[test]
    fn bisection_oracle() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 100);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }
}
