//! Finite-difference gradient checking.
//!
//! Lives in the library (not test code) because the `verify` command replays
//! these checks at runtime. The scheme is standard: rebuild the forward pass
//! from scratch at `x ± h` per coordinate and compare the central difference
//! against the gradient the tape produced.

use super::{Graph, Tensor};
use crate::error::{Error, Result};

/// Central-difference step. With f64 values and O(1) magnitudes this puts the
/// truncation and rounding errors both near 1e-10.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor: `|a - b| / max(1, |a|, |b|)`.
/// The floor keeps near-zero gradients from amplifying rounding noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Worst disagreement between two gradient vectors of equal length.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Outcome of one check: per-input analytic and numeric gradients plus the
/// worst relative error across all coordinates.
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_err: f64,
}

/// Check the gradient of a scalar-valued builder w.r.t. every coordinate of
/// every input. `build` receives fresh tensors for the inputs each time it is
/// called and must be a pure function of them.
pub fn check_scalar_fn(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: impl Fn(&Graph, &[Tensor]) -> Result<Tensor>,
) -> Result<GradReport> {
    let eval = |xs: &[Vec<f64>]| -> Result<f64> {
        let g = Graph::new();
        let ts: Vec<Tensor> = inputs
            .iter()
            .zip(xs)
            .map(|((shape, _), data)| g.constant(data.clone(), shape))
            .collect::<Result<_>>()?;
        let out = build(&g, &ts)?;
        if out.numel() != 1 {
            return Err(Error::contract(format!(
                "gradcheck build must return a scalar, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.item())
    };

    // Analytic pass on trainable leaves.
    let analytic = {
        let g = Graph::new();
        let ts: Vec<Tensor> = inputs
            .iter()
            .map(|(shape, data)| g.leaf(data.clone(), shape))
            .collect::<Result<_>>()?;
        let out = build(&g, &ts)?;
        if out.numel() != 1 {
            return Err(Error::contract(format!(
                "gradcheck build must return a scalar, got shape {:?}",
                out.shape()
            )));
        }
        out.backward();
        ts.iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect::<Vec<_>>()
    };

    // Numeric pass: central differences, one coordinate at a time.
    let mut xs: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut numeric: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| vec![0.0; d.len()]).collect();
    for k in 0..xs.len() {
        for j in 0..xs[k].len() {
            let orig = xs[k][j];
            xs[k][j] = orig + FD_STEP;
            let fp = eval(&xs)?;
            xs[k][j] = orig - FD_STEP;
            let fm = eval(&xs)?;
            xs[k][j] = orig;
            numeric[k][j] = (fp - fm) / (2.0 * FD_STEP);
        }
    }

    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        worst = worst.max(max_rel_err(a, n));
    }
    Ok(GradReport { analytic, numeric, max_rel_err: worst })
}
