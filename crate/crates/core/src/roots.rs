//! Bracketed scalar root finding.
//!
//! Both solvers keep a sign-changing bracket at every step, so they can not
//! escape the interval they were handed. The Newton variant falls back to
//! bisection whenever the Newton step leaves the bracket or fails to shrink
//! it fast enough.

use crate::error::{Error, Result};

/// Default absolute residual tolerance.
pub const ROOT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            tol: ROOT_TOL,
            max_iter: ROOT_MAX_ITER,
        }
    }
}

fn bracket_collapsed(a: f64, b: f64) -> bool {
    (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0)
}

/// Grows `[x0 - step, x0 + step]` geometrically until an increasing function
/// changes sign, never leaving `[limit_lo, limit_hi]`.
pub fn expand_bracket<F>(
    f: F,
    x0: f64,
    step: f64,
    limit_lo: f64,
    limit_hi: f64,
    what: &'static str,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let x0 = x0.clamp(limit_lo, limit_hi);
    let f0 = f(x0);
    if f0 == 0.0 {
        return Ok((x0, x0));
    }
    let mut step = step.max(1e-3);
    let mut anchor = x0;
    for _ in 0..128 {
        if f0 > 0.0 {
            let lo = (anchor - step).max(limit_lo);
            if f(lo) <= 0.0 {
                return Ok((lo, anchor));
            }
            if lo <= limit_lo {
                break;
            }
            anchor = lo;
        } else {
            let hi = (anchor + step).min(limit_hi);
            if f(hi) >= 0.0 {
                return Ok((anchor, hi));
            }
            if hi >= limit_hi {
                break;
            }
            anchor = hi;
        }
        step *= 2.0;
    }
    Err(Error::BracketFailure { what, target: 0.0 })
}

/// Safeguarded Newton iteration on an increasing function with
/// `f(lo) <= 0 <= f(hi)`. `f_df` returns the value and the derivative.
pub fn newton_bisect<F>(
    f_df: F,
    mut lo: f64,
    mut hi: f64,
    opts: RootOptions,
    what: &'static str,
) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let (flo, _) = f_df(lo);
    let (fhi, _) = f_df(hi);
    if flo.abs() <= opts.tol {
        return Ok(lo);
    }
    if fhi.abs() <= opts.tol {
        return Ok(hi);
    }
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::BracketFailure { what, target: 0.0 });
    }

    let mut x = 0.5 * (lo + hi);
    let mut last_width = hi - lo;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (fx, dfx) = f_df(x);
        residual = fx.abs();
        if residual <= opts.tol || (!fx.is_finite() && bracket_collapsed(lo, hi)) {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else if fx > 0.0 {
            hi = x;
        } else {
            return Ok(x);
        }
        if bracket_collapsed(lo, hi) {
            return Ok(x);
        }
        let newton = x - fx / dfx;
        let width = hi - lo;
        let use_newton =
            dfx.is_finite() && dfx > 0.0 && newton > lo && newton < hi && width < 0.7 * last_width;
        last_width = width;
        x = if use_newton { newton } else { 0.5 * (lo + hi) };
    }
    Err(Error::NoConvergence {
        what,
        iterations: opts.max_iter,
        residual,
    })
}

/// Illinois (modified regula falsi) on a bracket with a sign change. The
/// function need not be monotone; any root inside the bracket is returned.
pub fn illinois<F>(
    f: F,
    mut a: f64,
    mut b: f64,
    opts: RootOptions,
    what: &'static str,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut fa = f(a);
    let mut fb = f(b);
    if fa.abs() <= opts.tol {
        return Ok(a);
    }
    if fb.abs() <= opts.tol {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::BracketFailure { what, target: 0.0 });
    }
    let mut side = 0i8;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        residual = fc.abs();
        if residual <= opts.tol || bracket_collapsed(a, b) {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoConvergence {
        what,
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_bisect_finds_cube_root() {
        let r = newton_bisect(
            |x| (x * x * x - 2.0, 3.0 * x * x),
            0.0,
            2.0,
            RootOptions::default(),
            "cube",
        )
        .unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-10);
    }

    #[test]
    fn newton_bisect_rejects_bad_bracket() {
        let err =
            newton_bisect(|x| (x + 5.0, 1.0), 0.0, 1.0, RootOptions::default(), "lin").unwrap_err();
        assert!(matches!(err, Error::BracketFailure { .. }));
    }

    #[test]
    fn newton_bisect_survives_flat_derivative() {
        // arctan has a vanishing derivative far from the root; plain Newton overshoots.
        let r = newton_bisect(
            |x: f64| (x.atan() - 0.3, 1.0 / (1.0 + x * x)),
            -50.0,
            80.0,
            RootOptions::default(),
            "atan",
        )
        .unwrap();
        assert!((r - 0.3f64.tan()).abs() < 1e-9);
    }

    #[test]
    fn illinois_handles_non_monotone_bracket() {
        let r = illinois(|x: f64| x.sin(), 2.0, 4.0, RootOptions::default(), "sin").unwrap();
        assert!((r - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn expand_bracket_reaches_far_root() {
        let (lo, hi) = expand_bracket(|x| x - 1000.0, 0.0, 1.0, -1e6, 1e6, "lin").unwrap();
        assert!(lo <= 1000.0 && hi >= 1000.0);
        let err = expand_bracket(|x| x - 1000.0, 0.0, 1.0, -10.0, 10.0, "lin").unwrap_err();
        assert!(matches!(err, Error::BracketFailure { .. }));
    }
}
