//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use rand::Rng as _;

use super::{Tape, Tensor, Var};
use crate::rng::rng_from_seed;
use crate::Result;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked elements.
    pub max_rel_error: f64,
    /// Largest relative error per input.
    pub per_input: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Differences smaller than this are measured against it rather than against
/// the (tiny) gradient magnitude.
pub const REL_FLOOR: f64 = 1e-3;

/// Central-difference step.
pub const STEP: f64 = 1e-6;

/// Checks the analytic gradients of `f` at `inputs`.
///
/// Non-scalar outputs are reduced with a fixed random projection
/// `L = <f(inputs), r>` so every output element contributes.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let (tape, out, vars) = eval(inputs)?;
    let mut rng = rng_from_seed(seed);
    let shape = tape.value(out).shape().to_vec();
    let proj = Tensor::from_vec(
        shape,
        (0..tape.value(out).numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let grads = tape.backward_seeded(out, proj.clone())?;

    let loss = |vals: &[Tensor<f64>]| -> Result<f64> {
        let (t, o, _) = eval(vals)?;
        t.value(o).dot(&proj)
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut worst = 0.0f64;
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let lp = loss(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let lm = loss(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
