//! Central finite-difference check of analytic parameter gradients.

use std::fmt::Write as _;

use rand::seq::index::sample;

use crate::detector::ModelParams;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub step: f64,
    pub coords: Vec<CoordError>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    /// The `k` coordinates with the largest relative error.
    pub fn worst(&self, k: usize) -> Vec<CoordError> {
        let mut v = self.coords.clone();
        v.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err).then(a.index.cmp(&b.index)));
        v.truncate(k);
        v
    }

    pub fn ensure(&self, tolerance: f64) -> Result<()> {
        if self.max_rel_err < tolerance {
            Ok(())
        } else {
            Err(Error::GradCheck {
                max_rel_err: self.max_rel_err,
                tolerance,
            })
        }
    }

    /// `coordinate,analytic,numeric,rel_err` rows for the worst coordinates,
    /// preceded by a summary line.
    pub fn to_text(&self, worst: usize) -> String {
        let mut s = format!(
            "# {} step={:e} coords={} max_rel_err={:e}\ncoordinate,analytic,numeric,rel_err\n",
            self.label,
            self.step,
            self.coords.len(),
            self.max_rel_err
        );
        for c in self.worst(worst) {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", c.index, c.analytic, c.numeric, c.rel_err);
        }
        s
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Coordinates to probe: all of them when `n >= len`, otherwise a uniform
/// sample without replacement, sorted.
pub fn sample_coords(len: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut v = sample(rng, len, n).into_vec();
    v.sort_unstable();
    v
}

/// Compares `analytic` with `(L(theta + h e_k) - L(theta - h e_k)) / 2h` on
/// each coordinate `k` in `coords`.
pub fn grad_check(
    label: &str,
    loss: impl Fn(&ModelParams) -> f64,
    params: &ModelParams,
    analytic: &ModelParams,
    coords: &[usize],
    step: f64,
) -> GradCheckReport {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    let mut max_rel_err = 0.0f64;
    for &k in coords {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let plus = loss(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let minus = loss(&probe);
        probe.as_mut_slice()[k] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.as_slice()[k];
        let rel_err = relative_error(a, numeric);
        max_rel_err = max_rel_err.max(rel_err);
        out.push(CoordError {
            index: k,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    GradCheckReport {
        label: label.to_string(),
        step,
        coords: out,
        max_rel_err,
    }
}
