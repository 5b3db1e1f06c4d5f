//! History-of-semantic stacks and the trainable per-layer gate.
//!
//! A [`LayerStack`] holds every representation produced for one sequence,
//! from the raw embeddings through each encoder layer to the base attention
//! output. [`apply_gate`] scales each layer featurewise by its row of a
//! [`GateMatrix`] and concatenates the results on the feature axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Ordered layers `[E; C¹; …; Cⁿ; A]`, each `[len × d]`.
#[derive(Clone, Debug)]
pub struct LayerStack {
    layers: Vec<Var>,
    len: usize,
    d: usize,
}

impl LayerStack {
    pub fn layers(&self) -> &[Var] {
        &self.layers
    }

    /// Number of stacked layers, `n + 2`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn width(&self) -> usize {
        self.d
    }
}

/// Assembles `[E; C¹; …; Cⁿ; A]`.
pub fn build_hos(tape: &Tape, embedded: Var, encoded: &[Var], attended: Var) -> Result<LayerStack> {
    let shape = tape.shape(embedded).to_vec();
    let (len, d) = tape.value(embedded).dims2()?;
    let mut layers = Vec::with_capacity(encoded.len() + 2);
    layers.push(embedded);
    layers.extend_from_slice(encoded);
    layers.push(attended);
    for &l in &layers {
        if tape.shape(l) != shape.as_slice() {
            return Err(Error::dim("build_hos", &shape, tape.shape(l)));
        }
    }
    Ok(LayerStack { layers, len, d })
}

/// Which stacked layer starts with an all-ones gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateInit {
    /// The embedding layer, first in the stack.
    #[default]
    First,
    /// The base attention output, last in the stack.
    Last,
}

/// Gate values `[L × d]`: one multiplier per stacked layer per feature.
#[derive(Clone, Copy, Debug)]
pub struct GateMatrix {
    pub values: Var,
}

/// Initial gate: ones on the selected layer's row, zeros elsewhere.
pub fn init_gate(layers: usize, d: usize, init: GateInit) -> Result<Tensor> {
    if layers < 2 || d == 0 {
        return Err(Error::Parameter(format!("gate needs L >= 2 and d >= 1, got L={layers}, d={d}")));
    }
    let mut g = Tensor::zeros(&[layers, d]);
    let row = match init {
        GateInit::First => 0,
        GateInit::Last => layers - 1,
    };
    g.data_mut()[row * d..(row + 1) * d].fill(1.0);
    Ok(g)
}

/// Gated, feature-concatenated stack: `[len × (L·d)]`, block `k` equal to
/// `layers[k] ⊙ gate[k]` broadcast over positions.
#[derive(Clone, Copy, Debug)]
pub struct GatedRepresentation {
    pub features: Var,
}

pub fn apply_gate(tape: &mut Tape, stack: &LayerStack, gate: &GateMatrix) -> Result<GatedRepresentation> {
    let (gl, gd) = tape.value(gate.values).dims2()?;
    if gl != stack.depth() || gd != stack.width() {
        return Err(Error::dim(
            "apply_gate",
            &[stack.depth(), stack.width()],
            tape.shape(gate.values),
        ));
    }
    let mut blocks = Vec::with_capacity(gl);
    for (k, &layer) in stack.layers.iter().enumerate() {
        let row = tape.slice_rows(gate.values, k, k + 1)?;
        blocks.push(tape.mul(layer, row)?);
    }
    let features = tape.concat_cols(&blocks)?;
    Ok(GatedRepresentation { features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn random_stack(tape: &mut Tape, n: usize, len: usize, d: usize, rng: &mut Rng) -> (LayerStack, Vec<Tensor>) {
        let vals: Vec<Tensor> = (0..n + 2).map(|_| Tensor::uniform(&[len, d], 1.0, rng)).collect();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let stack = build_hos(tape, vars[0], &vars[1..=n], vars[n + 1]).unwrap();
        (stack, vals)
    }

    #[test]
    fn build_hos_depths_and_order() {
        let mut t = Tape::new();
        let mut rng = Rng::new(1);
        let (s0, _) = random_stack(&mut t, 0, 3, 2, &mut rng);
        assert_eq!(s0.depth(), 2);
        let (s4, vals) = random_stack(&mut t, 4, 3, 2, &mut rng);
        assert_eq!(s4.depth(), 6);
        assert_eq!(t.value(s4.layers()[1]), &vals[1]);

        let e = t.constant(Tensor::zeros(&[3, 2]));
        let bad = t.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(build_hos(&t, e, &[bad], e), Err(Error::Dimension { .. })));
    }

    #[test]
    fn init_gate_first_column() {
        let g = init_gate(3, 2, GateInit::First).unwrap();
        assert_eq!(g, Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(g.data().iter().sum::<f64>(), 2.0);
        let last = init_gate(3, 2, GateInit::Last).unwrap();
        assert_eq!(last.row(2), &[1.0, 1.0]);
        assert_eq!(last.row(0), &[0.0, 0.0]);
        assert!(init_gate(1, 2, GateInit::First).is_err());
        assert!(init_gate(2, 0, GateInit::First).is_err());
    }

    #[test]
    fn init_reduction_keeps_only_embeddings() {
        let mut t = Tape::new();
        let mut rng = Rng::new(2);
        let (stack, vals) = random_stack(&mut t, 3, 4, 5, &mut rng);
        let gate = GateMatrix { values: t.constant(init_gate(5, 5, GateInit::First).unwrap()) };
        let out = apply_gate(&mut t, &stack, &gate).unwrap();
        let f = t.value(out.features);
        assert_eq!(f.slice_cols(0, 5).unwrap(), vals[0]);
        for k in 1..5 {
            assert!(f.slice_cols(k * 5, (k + 1) * 5).unwrap().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identity_and_zero_gates() {
        let mut t = Tape::new();
        let mut rng = Rng::new(3);
        let (stack, _) = random_stack(&mut t, 2, 3, 2, &mut rng);
        let ones = GateMatrix { values: t.constant(Tensor::ones(&[4, 2])) };
        let out = apply_gate(&mut t, &stack, &ones).unwrap();
        let plain = t.concat_cols(stack.layers()).unwrap();
        assert_eq!(t.value(out.features), t.value(plain));
        let zeros = GateMatrix { values: t.constant(Tensor::zeros(&[4, 2])) };
        let out = apply_gate(&mut t, &stack, &zeros).unwrap();
        assert!(t.value(out.features).data().iter().all(|&x| x == 0.0));

        let wrong = GateMatrix { values: t.constant(Tensor::ones(&[3, 2])) };
        assert!(matches!(apply_gate(&mut t, &stack, &wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matches_loop_oracle() {
        let mut t = Tape::new();
        let mut rng = Rng::new(4);
        let (len, d, n) = (5, 3, 2);
        let (stack, vals) = random_stack(&mut t, n, len, d, &mut rng);
        let g = Tensor::uniform(&[n + 2, d], 2.0, &mut rng);
        let gate = GateMatrix { values: t.constant(g.clone()) };
        let out = apply_gate(&mut t, &stack, &gate).unwrap();

        let width = (n + 2) * d;
        let mut oracle = vec![0.0; len * width];
        for i in 0..len {
            for (k, layer) in vals.iter().enumerate() {
                for j in 0..d {
                    oracle[i * width + k * d + j] = layer.at(i, j) * g.at(k, j);
                }
            }
        }
        let oracle = Tensor::new(vec![len, width], oracle).unwrap();
        assert!(t.value(out.features).max_abs_diff(&oracle) <= 1e-12);
    }
}
