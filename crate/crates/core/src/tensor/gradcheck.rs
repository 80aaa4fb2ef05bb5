use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::rng;
use crate::{Error, Result};

/// Which coordinates of the point to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSelection {
    All,
    /// Up to `per_tensor` seeded coordinates from every input tensor.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where every step size crossed a ReLU gate, max-pool
    /// winner or BCE clamp, so central differences are not a valid oracle.
    pub skipped: usize,
}

/// Gradients below this magnitude are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// Compares backward() gradients of `f` at `point` with central differences.
///
/// `f` builds its computation on the given tape from one leaf per entry of
/// `point` and returns a scalar. A coordinate is only compared when the
/// perturbed evaluations share the base point's kink signature; otherwise the
/// step is shrunk tenfold (twice) before the coordinate is skipped.
pub fn finite_difference_check<F>(f: F, point: &[Tensor], h: f64, coords: CoordSelection) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::arg("finite_difference_check: h must be positive"));
    }
    let eval = |pt: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok((v.data()[0], tape.kink_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v).expect("leaf gradient")).collect();

    let mut selection: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in point.iter().enumerate() {
        match coords {
            CoordSelection::All => selection.extend((0..t.len()).map(|c| (ti, c))),
            CoordSelection::Sample { per_tensor, seed } => {
                let mut idx: Vec<usize> = (0..t.len()).collect();
                let mut r = rng::seeded(rng::derive_seed(seed, &[ti as u64]));
                rng::shuffle(&mut r, &mut idx);
                idx.truncate(per_tensor);
                idx.sort_unstable();
                selection.extend(idx.into_iter().map(|c| (ti, c)));
            }
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = point.to_vec();
    for (ti, c) in selection {
        let x0 = point[ti].data()[c];
        let mut numeric = None;
        let mut step = h;
        for _ in 0..3 {
            work[ti].data_mut()[c] = x0 + step;
            let (fp, sp) = eval(&work)?;
            work[ti].data_mut()[c] = x0 - step;
            let (fm, sm) = eval(&work)?;
            work[ti].data_mut()[c] = x0;
            if sp == base_sig && sm == base_sig {
                numeric = Some((fp - fm) / (2.0 * step));
                break;
            }
            step /= 10.0;
        }
        match numeric {
            Some(n) => {
                let a = analytic[ti].data()[c];
                let scale = a.abs().max(n.abs()).max(REL_FLOOR);
                report.max_rel_error = report.max_rel_error.max((a - n).abs() / scale);
                report.checked += 1;
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
