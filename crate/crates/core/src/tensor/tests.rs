use super::*;
use crate::gradcheck::{self, STEP};

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k) = a.dims2().unwrap();
    let (_, c) = b.dims2().unwrap();
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for t in 0..k {
                s += a.at(i, t) * b.at(t, j);
            }
            out.data_mut()[i * c + j] = s;
        }
    }
    out
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(Tensor::new(vec![0, 2], vec![]).is_err());
}

#[test]
fn matmul_identity_and_selector() {
    let mut t = Tape::new();
    let i2 = t.constant(Tensor::identity(2));
    let x = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let y = t.matmul(i2, x).unwrap();
    assert_eq!(t.value(y), &m(&[&[1.0, 2.0], &[3.0, 4.0]]));

    let s = t.constant(m(&[&[1.0, 0.0], &[0.0, 0.0]]));
    let b = t.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let y = t.matmul(s, b).unwrap();
    assert_eq!(t.value(y), &m(&[&[5.0, 6.0], &[0.0, 0.0]]));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(1);
    let a = Tensor::uniform(&[3, 4], 1.0, &mut rng);
    let b = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let y = t.matmul(va, vb).unwrap();
    assert!(t.value(y).max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);

    let nt = t.matmul_nt(va, va).unwrap();
    assert!(t.value(nt).max_abs_diff(&naive_matmul(&a, &a.transpose().unwrap())) <= 1e-12);
    let tn = t.matmul_tn(va, va).unwrap();
    assert!(t.value(tn).max_abs_diff(&naive_matmul(&a.transpose().unwrap(), &a)) <= 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn softmax_rows_examples() {
    let mut t = Tape::new();
    let x = t.constant(m(&[&[0.0, 0.0]]));
    let y = t.softmax_rows(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);

    let x = t.constant(m(&[&[2f64.ln(), 0.0]]));
    let y = t.softmax_rows(x).unwrap();
    assert!((t.value(y).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((t.value(y).data()[1] - 1.0 / 3.0).abs() < 1e-15);

    let mut rng = Rng::new(2);
    let x = t.constant(Tensor::uniform(&[5, 7], 3.0, &mut rng));
    let y = t.softmax_rows(x).unwrap();
    for i in 0..5 {
        let s: f64 = t.value(y).row(i).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn softmax_cols_examples() {
    let mut t = Tape::new();
    let x = t.constant(m(&[&[0.0], &[0.0]]));
    let y = t.softmax_cols(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);

    let mut rng = Rng::new(3);
    let raw = Tensor::uniform(&[4, 3], 3.0, &mut rng);
    let x = t.constant(raw.clone());
    let y = t.softmax_cols(x).unwrap();
    for j in 0..3 {
        let s: f64 = (0..4).map(|i| t.value(y).at(i, j)).sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }

    let xt = t.constant(raw.transpose().unwrap());
    let r = t.softmax_rows(xt).unwrap();
    let back = t.value(r).transpose().unwrap();
    assert_eq!(t.value(y), &back, "must match bit for bit");
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let mut t = Tape::new();
    let x = t.constant(m(&[&[1e300, 1e300], &[MASK_VALUE, 0.0]]));
    let y = t.softmax_rows(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5, 0.0, 1.0]);
}

#[test]
fn elementwise_examples() {
    let mut t = Tape::new();
    let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let va = t.constant(a.clone());
    let ones = t.constant(Tensor::ones(&[2, 2]));
    let zeros = t.constant(Tensor::zeros(&[2, 2]));
    let y = t.mul(va, ones).unwrap();
    assert_eq!(t.value(y), &a);
    let y = t.mul(va, zeros).unwrap();
    assert_eq!(t.value(y), &Tensor::zeros(&[2, 2]));
    let d = t.constant(m(&[&[2.0, 0.0], &[0.0, 2.0]]));
    let y = t.mul(va, d).unwrap();
    assert_eq!(t.value(y), &m(&[&[2.0, 0.0], &[0.0, 8.0]]));
}

#[test]
fn elementwise_broadcast_rule() {
    let mut t = Tape::new();
    let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    let row = t.constant(Tensor::new(vec![2], vec![10.0, 100.0]).unwrap());
    let y = t.mul(a, row).unwrap();
    assert_eq!(t.value(y).data(), &[10.0, 200.0, 30.0, 400.0, 50.0, 600.0]);
    let row2 = t.constant(m(&[&[10.0, 100.0]]));
    let y2 = t.mul(a, row2).unwrap();
    assert_eq!(t.value(y), t.value(y2));

    let col = t.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(t.mul(a, col), Err(Error::Dimension { .. })));
    let bad = t.constant(Tensor::zeros(&[3]));
    assert!(t.mul(a, bad).is_err());
}

#[test]
fn concat_examples() {
    let mut t = Tape::new();
    let mut rng = Rng::new(4);
    let p1 = Tensor::uniform(&[3, 2], 1.0, &mut rng);
    let p2 = Tensor::uniform(&[3, 3], 1.0, &mut rng);
    let (a, b) = (t.constant(p1.clone()), t.constant(p2));
    let c = t.concat_cols(&[a, b]).unwrap();
    assert_eq!(t.shape(c), &[3, 5]);
    assert_eq!(t.value(c).slice_cols(0, 2).unwrap(), p1);
    let single = t.concat_cols(&[a]).unwrap();
    assert_eq!(t.value(single), &p1);

    let wrong = t.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(t.concat_cols(&[a, wrong]), Err(Error::Dimension { .. })));
    assert!(t.concat_cols(&[]).is_err());
}

#[test]
fn dropout_modes() {
    let mut rng = Rng::new(5);
    let x = Tensor::uniform(&[100, 100], 1.0, &mut rng);
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let same = t.dropout(v, 0.0, true, &mut rng).unwrap();
    assert_eq!(t.value(same), &x);
    let eval = t.dropout(v, 0.7, false, &mut rng).unwrap();
    assert_eq!(t.value(eval), &x);

    let mut drng = Rng::new(42);
    let y = t.dropout(v, 0.5, true, &mut drng).unwrap();
    let zeroed = t.value(y).data().iter().filter(|&&z| z == 0.0).count();
    let frac = zeroed as f64 / 1e4;
    assert!((0.47..=0.53).contains(&frac), "fraction zeroed {frac}");
    for (o, i) in t.value(y).data().iter().zip(x.data()) {
        assert!(*o == 0.0 || *o == 2.0 * i);
    }

    assert!(matches!(t.dropout(v, 1.0, true, &mut drng), Err(Error::Parameter(_))));
    assert!(t.dropout(v, -0.1, false, &mut drng).is_err());
}

#[test]
fn backward_square_sum() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let sq = t.mul(a, a).unwrap();
    let loss = t.sum(sq);
    t.backward(loss).unwrap();
    assert_eq!(t.grad(a).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[2, 2]), true);
    assert!(matches!(t.backward(a), Err(Error::Shape(_))));
}

#[test]
fn backward_matmul_matches_finite_differences() {
    let mut rng = Rng::new(6);
    let a = gradcheck::random_input(&[3, 4], &mut rng);
    let b = gradcheck::random_input(&[4, 2], &mut rng);
    let r = gradcheck::check(&[a, b], STEP, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-5, "{}", r.max_rel_err);
}

#[test]
fn backward_softmax_mul_chain() {
    let mut rng = Rng::new(7);
    let a = gradcheck::random_input(&[3, 5], &mut rng);
    let b = gradcheck::random_input(&[3, 5], &mut rng);
    let r = gradcheck::check(&[a, b], STEP, |t, v| {
        let s = t.softmax_rows(v[0])?;
        let y = t.mul(s, v[1])?;
        gradcheck::project(t, y, 99)
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-5, "{}", r.max_rel_err);
}

#[test]
fn reset_clears_graph() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::scalar(2.0), true);
    let l = t.mul(a, a).unwrap();
    t.backward(l).unwrap();
    assert!(!t.is_empty());
    t.reset();
    assert!(t.is_empty());
}

#[test]
fn gather_pad_rows_are_zero() {
    let mut t = Tape::new();
    let table = t.leaf(Tensor::ones(&[4, 3]), true);
    let e = t.gather_rows(table, &[0, 2, 2], Some(0)).unwrap();
    assert_eq!(t.value(e).row(0), &[0.0; 3]);
    assert_eq!(t.value(e).row(1), t.value(e).row(2));
    let s = t.sum(e);
    t.backward(s).unwrap();
    let g = t.grad(table).unwrap();
    assert_eq!(g.row(0), &[0.0; 3]);
    assert_eq!(g.row(2), &[2.0; 3]);
    assert!(matches!(t.gather_rows(table, &[4], None), Err(Error::Vocabulary { id: 4, size: 4 })));
}

#[test]
fn cross_entropy_values() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[4]));
    let l = t.cross_entropy(x, 2).unwrap();
    assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-15);
    assert!(matches!(t.cross_entropy(x, 4), Err(Error::Label { .. })));
}
