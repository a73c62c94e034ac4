use std::sync::Arc;

use ctsn_core::autodiff::*;
use ctsn_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out * w)` with fixed random weights, so every output element carries gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> ctsn_core::Result<Var> {
    let (r, c) = tape.value(out).dims2()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c));
    let p = tape.mul(out, w)?;
    tape.sum_all(p)
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, 3, 5);
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::identity(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let y = tape.softmax_rows(x).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[2, 4], 3.5));
    let g = tape.constant(Tensor::ones(&[1, 4]));
    let b = tape.constant(Tensor::zeros(&[1, 4]));
    let y = tape.layer_norm_rows(x, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_rows_have_zero_mean_unit_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng, 3, 8));
    let g = tape.constant(Tensor::ones(&[1, 8]));
    let b = tape.constant(Tensor::zeros(&[1, 8]));
    let y = tape.layer_norm_rows(x, g, b).unwrap();
    for r in 0..3 {
        let row = tape.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        // Epsilon shrinks the variance slightly below one.
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn sum_gradient_is_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.param(random(&mut rng, 2, 3));
    let s = tape.sum_all(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x), Tensor::ones(&[2, 3]));
}

#[test]
fn half_squared_norm_gradient_is_x() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = random(&mut rng, 4, 2);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum_all(sq).unwrap();
    let l = tape.scale(s, 0.5).unwrap();
    assert_eq!(tape.backward(l).unwrap().wrt(x), x0);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(Error::Validation(_)) | Err(Error::Shape { .. })));
}

#[test]
fn unreached_parameter_gets_zero_gradient() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::ones(&[1, 2]));
    let b = tape.param(Tensor::ones(&[3, 1]));
    let s = tape.sum_all(a).unwrap();
    assert_eq!(tape.backward(s).unwrap().wrt(b), Tensor::zeros(&[3, 1]));
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(&[2, 3]));
    let b = tape.param(Tensor::zeros(&[2, 3]));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.param(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn non_finite_forward_names_the_primitive() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::full(&[1, 1], 1e300));
    let err = tape.mul(a, a).unwrap_err();
    assert_eq!(err, Error::NonFinite { op: "mul" });
    assert!(err.is_numeric());
}

#[test]
fn linear_map_check_is_exact() {
    let x = Tensor::from_rows(&[&[0.25, -0.5]]).unwrap();
    let w = Tensor::from_rows(&[&[3.0], &[-2.0]]).unwrap();
    let r = finite_diff_check(&[x, w.clone()], |t, v| {
        let c = t.constant(w.clone());
        let y = t.matmul(v[0], c)?;
        t.sum_all(y)
    })
    .unwrap();
    assert!(r.per_param[0] < 1e-10, "{r:?}");
    // The second parameter is unreachable: both gradients are zero.
    assert_eq!(r.per_param[1], 0.0);
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = vec![
        random(&mut rng, 5, 3),
        random(&mut rng, 3, 6),
        random(&mut rng, 1, 6),
        random(&mut rng, 6, 4),
        random(&mut rng, 1, 4),
        Tensor::ones(&[1, 4]),
        Tensor::zeros(&[1, 4]),
    ];
    let r = finite_diff_check(&params, |t, p| {
        let h = t.matmul(p[0], p[1])?;
        let h = t.add(h, p[2])?;
        let h = t.sigmoid(h)?;
        let h = t.matmul(h, p[3])?;
        let h = t.add(h, p[4])?;
        let h = t.layer_norm_rows(h, p[5], p[6])?;
        let h = t.softmax_rows(h)?;
        project(t, h, 60)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = random(&mut rng, 1, 5);
    let mut x = vec![random(&mut rng, 1, 5)];
    let mut st = AdamState::new(&x);
    for _ in 0..5000 {
        let g: Vec<f64> = x[0].data().iter().zip(target.data()).map(|(a, c)| 2.0 * (a - c)).collect();
        adam_step(&mut x, &[Tensor::matrix(1, 5, g).unwrap()], &mut st, 1e-3).unwrap();
    }
    let d: f64 = x[0].data().iter().zip(target.data()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
    assert!(d < 1e-3, "{d}");
    assert_eq!(st.step, 5000);
}

#[test]
fn forward_is_bitwise_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let a = tape.param(random(&mut rng, 6, 4));
        let b = tape.param(random(&mut rng, 4, 4));
        let m = tape.matmul(a, b).unwrap();
        let seg: Arc<[usize]> = vec![0, 0, 1, 1, 1, 2].into();
        let s = tape.segment_sum_rows(m, seg, 3).unwrap();
        let l = tape.l2_norm_rows(s).unwrap();
        let l = tape.mean_all(l).unwrap();
        (tape.value(l).clone(), tape.backward(l).unwrap().wrt(a))
    };
    assert_eq!(run(), run());
}

#[test]
fn row_normalize_falls_back_on_zero_rows() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 3.0]]).unwrap());
    let fb = Tensor::from_rows(&[&[0.25, 0.75], &[0.5, 0.5]]).unwrap();
    let y = tape.row_normalize(x, &fb).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25, 0.75, 0.25, 0.75]);
}

#[test]
fn segment_softmax_normalizes_each_segment() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng, 7, 2));
    let seg: Arc<[usize]> = vec![0, 0, 0, 1, 2, 2, 2].into();
    let y = tape.segment_softmax(x, seg.clone(), 3).unwrap();
    for c in 0..2 {
        for s in 0..3 {
            let sum: f64 = (0..7).filter(|&r| seg[r] == s).map(|r| tape.value(y).get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..5, 1usize..5, 1usize..5, any::<u64>())
}

/// Relative error under `1e-4`, or an absolute error at the rounding floor of
/// the central differences.
fn within_fd_floor(g: &GradCheck) -> bool {
    g.per_param.iter().zip(&g.per_param_abs).all(|(r, a)| *r < 1e-4 || *a < 1e-9)
}

fn check_unary(seed: u64, r: usize, c: usize, op: impl Fn(&mut Tape, Var) -> ctsn_core::Result<Var>) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, r, c);
    finite_diff_check(&[x], |t, p| {
        let y = op(t, p[0])?;
        project(t, y, seed ^ 1)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradients((r, k, c, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, r, k);
        let b = random(&mut rng, k, c);
        let e = finite_diff_check(&[a, b], |t, p| {
            let y = t.matmul(p[0], p[1])?;
            project(t, y, seed)
        }).unwrap();
        prop_assert!(within_fd_floor(&e), "{:?}", e);
    }

    #[test]
    fn add_sub_mul_gradients((r, c, _, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![random(&mut rng, r, c), random(&mut rng, r, c), random(&mut rng, 1, c)];
        let e = finite_diff_check(&ps, |t, p| {
            let y = t.add(p[0], p[1])?;
            let y = t.add(y, p[2])?;
            let z = t.sub(y, p[0])?;
            let w = t.mul(z, p[0])?;
            let w = t.scale(w, -1.5)?;
            project(t, w, seed)
        }).unwrap();
        prop_assert!(within_fd_floor(&e), "{:?}", e);
    }

    #[test]
    fn pointwise_gradients((r, c, _, seed) in dims()) {
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.sigmoid(x))));
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.relu(x))));
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.softmax_rows(x))));
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.l2_norm_rows(x))));
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.mean_all(x))));
        prop_assert!(within_fd_floor(&check_unary(seed, r, c, |t, x| t.reshape(x, &[c, r]))));
    }

    #[test]
    fn layer_norm_gradients((r, c, _, seed) in dims()) {
        let c = c + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![random(&mut rng, r, c), random(&mut rng, 1, c), random(&mut rng, 1, c)];
        let e = finite_diff_check(&ps, |t, p| {
            let y = t.layer_norm_rows(p[0], p[1], p[2])?;
            project(t, y, seed)
        }).unwrap();
        prop_assert!(within_fd_floor(&e), "{:?}", e);
    }

    #[test]
    fn structural_gradients((r, c, s, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![random(&mut rng, r, c), random(&mut rng, r, s)];
        let idx: Arc<[usize]> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
        let seg: Arc<[usize]> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
        let e = finite_diff_check(&ps, |t, p| {
            let cat = t.concat_last_dim(&[p[0], p[1]])?;
            let g = t.gather_rows(cat, idx.clone())?;
            let ss = t.segment_sum_rows(g, seg.clone(), r)?;
            let sm = t.segment_softmax(g, seg.clone(), r)?;
            let a = project(t, ss, seed)?;
            let b = project(t, sm, seed ^ 2)?;
            let both = t.concat_last_dim(&[a, b])?;
            t.sum_all(both)
        }).unwrap();
        prop_assert!(within_fd_floor(&e), "{:?}", e);
    }

    #[test]
    fn blend_and_normalize_gradients((r, j, d, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..r * j).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ps = vec![Tensor::matrix(r, j, w).unwrap(), random(&mut rng, r, j * d)];
        let fb = Tensor::full(&[r, j], 1.0 / j as f64);
        let e = finite_diff_check(&ps, |t, p| {
            let n = t.row_normalize(p[0], &fb)?;
            let y = t.blend_rows(n, p[1])?;
            project(t, y, seed)
        }).unwrap();
        prop_assert!(within_fd_floor(&e), "{:?}", e);
    }

    #[test]
    fn softmax_is_shift_invariant((r, c, _, seed) in dims(), shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, r, c);
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += shift);
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(shifted);
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        prop_assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < 1e-12);
        for row in 0..r {
            prop_assert!((tape.value(sa).row(row).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
