//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward rules it is checking.

use crate::error::Result;
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Step used by the acceptance gradient suite.
pub const STEP: f64 = 1e-6;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input, worst case.
    pub max_rel_err: f64,
    /// The same ratio over all inputs' gradients taken as one vector.
    pub rel_err: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of the scalar produced by `f` against central
/// differences with step `h`, for every tensor in `inputs`.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for k in 0..inputs[t].numel() {
            let orig = inputs[t].data()[k];
            work[t].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[t].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[t].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(a.data(), n.data()))
        .fold(0.0, f64::max);
    let flat = |ts: &[Tensor]| ts.iter().flat_map(|t| t.data().iter().copied()).collect::<Vec<f64>>();
    let rel_err = rel_err(&flat(&analytic), &flat(&numeric));
    Ok(GradReport {
        max_rel_err,
        rel_err,
        analytic,
        numeric,
    })
}

/// Reduces a tensor-valued output to a scalar by a fixed random projection,
/// so every output component contributes to the checked gradient.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = Rng::new(seed);
    let weights = Tensor::uniform(&shape, 1.0, &mut rng);
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Random tensor with entries uniform in `[-2, 2)`.
pub fn random_input(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, 2.0, rng)
}
