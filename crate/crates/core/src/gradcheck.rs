//! Central finite-difference gradient checking, 64-bit only.
//!
//! Compares the tape's analytic gradients against
//! `(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)` for every coordinate of
//! every checked tensor. Relative error uses
//! `|a - n| / max(|a|, |n|, 1e-8)`.

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_RTOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Worst relative error over the smooth coordinates.
    pub worst_rel_err: f64,
    /// (tensor index in `wrt`, flat element index) of the worst coordinate.
    pub worst_coord: Option<(usize, usize)>,
    /// Total number of coordinates checked.
    pub n_coords: usize,
    /// Coordinates where the central-difference window straddled a kink
    /// (relu corner, pooling argmax switch). These are verified one-sided
    /// instead: the analytic gradient must match the left or right secant.
    pub kink_coords: usize,
    /// Set when a forward evaluation or gradient produced a non-finite value;
    /// carries the offending coordinate.
    pub non_finite_at: Option<(usize, usize)>,
    pub passed: bool,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} worst_rel_err={:.3e} over {} coords ({} at kinks){}",
            if self.passed { "pass" } else { "FAIL" },
            self.worst_rel_err,
            self.n_coords,
            self.kink_coords,
            match self.non_finite_at {
                Some((t, i)) => format!(" (non-finite at tensor {} coord {})", t, i),
                None => String::new(),
            }
        )
    }
}

/// Checks d(f)/d(t) for every tensor `t` in `wrt`. `f` must be a pure,
/// deterministic function of the `wrt` tensors (plus constants it captures),
/// returning a scalar tensor.
pub fn gradcheck<F>(f: F, wrt: &[&Tensor<f64>], eps: f64, rtol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>) -> Result<Tensor<f64>>,
{
    for t in wrt {
        assert!(
            t.tracks_grad(),
            "gradcheck target must have requires_grad set"
        );
        t.clear_grad();
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let y = f(&mut tape)?;
    tape.backward(&y)?;
    let analytic: Vec<Vec<f64>> = wrt
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradcheckReport {
        worst_rel_err: 0.0,
        worst_coord: None,
        n_coords: 0,
        kink_coords: 0,
        non_finite_at: None,
        passed: true,
    };

    let rel_err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    let y0 = f(&mut Tape::no_grad())?.item();
    let mut failed = false;

    for (ti, t) in wrt.iter().enumerate() {
        let n = t.numel();
        for i in 0..n {
            let orig = t.data()[i];

            t.data_mut()[i] = orig + eps;
            let y_plus = f(&mut Tape::no_grad())?.item();
            t.data_mut()[i] = orig - eps;
            let y_minus = f(&mut Tape::no_grad())?.item();
            t.data_mut()[i] = orig;

            let numeric = (y_plus - y_minus) / (2.0 * eps);
            let a = analytic[ti][i];
            report.n_coords += 1;

            if !numeric.is_finite() || !a.is_finite() {
                report.non_finite_at = Some((ti, i));
                report.passed = false;
                report.worst_rel_err = f64::INFINITY;
                return Ok(report);
            }

            let rel = rel_err(a, numeric);
            if rel > rtol {
                // The central secant may straddle a non-differentiable point
                // (relu corner, argmax switch). If the one-sided slopes split,
                // this coordinate sits at a kink: the analytic value must
                // then agree with one of the sides (subgradient consistency)
                // instead of the central average. A wrong adjoint matches
                // neither side and still fails.
                let left = (y0 - y_minus) / eps;
                let right = (y_plus - y0) / eps;
                let side_ok = |s: f64| (a - s).abs() <= 10.0 * rtol * a.abs().max(s.abs()) + 1e-7;
                if rel_err(left, right) > 10.0 * rtol && (side_ok(left) || side_ok(right)) {
                    report.kink_coords += 1;
                    continue;
                }
            }
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
                report.worst_coord = Some((ti, i));
            }
            if rel > rtol {
                failed = true;
            }
        }
    }

    report.passed = !failed && report.worst_rel_err <= rtol;
    Ok(report)
}

/// `gradcheck` with the standard eps/rtol.
pub fn gradcheck_default<F>(f: F, wrt: &[&Tensor<f64>]) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>) -> Result<Tensor<f64>>,
{
    gradcheck(f, wrt, DEFAULT_EPS, DEFAULT_RTOL)
}
