//! Central finite-difference gradient verification.

use alloc::vec::Vec;

use rand::Rng as _;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Default finite-difference step.
pub const EPSILON: f32 = 1e-3;
/// Default acceptance threshold on [`relative_error`].
pub const TOLERANCE: f32 = 1e-3;

/// `|g - ĝ| / max(1, |g|, |ĝ|)`
pub fn relative_error(analytic: f32, numeric: f32) -> f32 {
    let denom = 1.0f32.max(analytic.abs()).max(numeric.abs());
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f32,
    /// (parameter index, flat coordinate, analytic, numeric) of the worst entry
    pub worst: Option<(usize, usize, f32, f32)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f32) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares the analytic gradient of `f` with central differences.
///
/// `f` builds a scalar loss from the parameter leaves it is handed. At most
/// `max_coords` coordinates per parameter are probed (all of them when the
/// parameter is smaller); the probe set is drawn from `seed`.
pub fn check<F>(params: &[Tensor], eps: f32, max_coords: usize, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let l = f(&mut g, &vars)?;
        let v = g.value(l);
        if v.numel() != 1 {
            return Err(Error::NotScalar {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item() as f64)
    };

    let mut rng = rng::stream(seed, "gradcheck", 0);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.gen_range(0..n)).collect()
        };
        for c in coords {
            let orig = p.data()[c];
            let (xp, xm) = (orig + eps, orig - eps);
            work[pi].data_mut()[c] = xp;
            let fp = eval(&work)?;
            work[pi].data_mut()[c] = xm;
            let fm = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            // divide by the step actually representable in f32
            let numeric = ((fp - fm) / (xp as f64 - xm as f64)) as f32;
            let a = analytic[pi].data()[c];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((pi, c, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
