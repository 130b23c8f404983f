use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

type G = Graph<f64>;

fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
}

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Plain triple loop, independent of the GEMM kernel.
fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

/// Central finite differences of `f` at `x`, independent of the backward pass.
fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let theta = x.data()[i];
            let h = 1e-5 * theta.abs().max(1.0);
            probe.data_mut()[i] = theta + h;
            let plus = f(&probe);
            probe.data_mut()[i] = theta - h;
            let minus = f(&probe);
            probe.data_mut()[i] = theta;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Max relative error of `d sum(w ⊙ op(x)) / dx` versus finite differences,
/// where `w` is a fixed random weighting so every output element matters.
fn op_grad_error(x: &Tensor<f64>, op: impl Fn(&mut Graph<f64>, Var) -> Var, seed: u64) -> f64 {
    let mut g = G::new();
    let v = g.constant(x.clone());
    let probe = op(&mut g, v);
    let out_dims = g.dims(probe).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random(&out_dims, &mut rng);

    let objective = |g: &mut Graph<f64>, xv: Var| {
        let y = op(g, xv);
        let w = g.constant(weights.clone());
        let yw = g.mul(y, w).unwrap();
        g.sum(yw)
    };
    let mut g = G::new();
    let xv = g.param(x.clone());
    let root = objective(&mut g, xv);
    g.backward(root).unwrap();
    let analytic = g.grad_tensor(xv);
    let numeric = numeric_grad(x, |probe| {
        let mut g = G::new();
        let xv = g.constant(probe.clone());
        let root = objective(&mut g, xv);
        g.value(root).data()[0]
    });
    analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[test]
fn matmul_identity() {
    let mut g = G::new();
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_hand_dot_product() {
    let mut g = G::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.dims(y), &[2, 1]);
    assert_eq!(g.value(y).data(), &[17.0, 39.0]);
}

#[test]
fn matmul_matches_naive_oracle_batched_and_shared() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 4, 5], &mut rng);
    let b = random(&[3, 5, 2], &mut rng);
    let w = random(&[5, 6], &mut rng);
    let mut g = G::new();
    let (av, bv, wv) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(w.clone()));
    let batched = g.matmul(av, bv).unwrap();
    let shared = g.matmul(av, wv).unwrap();
    for i in 0..3 {
        let expect = naive_matmul(&a.data()[i * 20..(i + 1) * 20], &b.data()[i * 10..(i + 1) * 10], 4, 5, 2);
        for (x, y) in g.value(batched).data()[i * 8..(i + 1) * 8].iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        let expect = naive_matmul(&a.data()[i * 20..(i + 1) * 20], w.data(), 4, 5, 6);
        for (x, y) in g.value(shared).data()[i * 24..(i + 1) * 24].iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = G::new();
    let a = g.constant(Tensor::zeros(vec![3, 4]).unwrap());
    let b = g.constant(Tensor::zeros(vec![5, 2]).unwrap());
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[3×4]") && err.contains("[5×2]"), "{err}");
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let mut g = G::new();
    let (av, bv) = (g.param(a.clone()), g.constant(b.clone()));
    let y = g.matmul(av, bv).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let numeric = numeric_grad(&a, |probe| {
        let prod = naive_matmul(probe.data(), b.data(), 3, 4, 2);
        prod.iter().sum()
    });
    for (x, y) in g.grad(av).unwrap().iter().zip(&numeric) {
        assert!(relative_error(*x, *y) < 1e-5);
    }
}

#[test]
fn softmax_examples() {
    let mut g = G::new();
    let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let y = g.softmax_lastdim(x);
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(t(&[3], &[1000.0, 0.0, 0.0]));
    let y = g.softmax_lastdim(x);
    let out = g.value(y).data();
    assert!(out.iter().all(|v| v.is_finite()));
    assert!((out[0] - 1.0).abs() < 1e-12 && out[1] < 1e-300);
}

#[test]
fn softmax_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[5, 7], &mut rng);
    let mut g = G::new();
    let xv = g.constant(x);
    let y = g.softmax_lastdim(xv);
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = G::new();
    let gamma = g.constant(t(&[3], &[1.0; 3]));
    let beta = g.constant(t(&[3], &[0.0; 3]));
    let x = g.constant(t(&[3], &[1.0, 1.0, 1.0]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

    // population variance of [1,2,3] is 2/3, so the ends map to ±1/sqrt(2/3)
    let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    let expect = 1.0 / (2.0f64 / 3.0).sqrt();
    let out = g.value(y).data();
    assert!((out[0] + expect).abs() < 1e-9 && out[1].abs() < 1e-12 && (out[2] - expect).abs() < 1e-9);
    assert!((expect - 1.2247).abs() < 1e-4);
}

#[test]
fn layer_norm_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.insert("x", random(&[2, 4], &mut rng)).unwrap();
    store.insert("gamma", random(&[4], &mut rng)).unwrap();
    store.insert("beta", random(&[4], &mut rng)).unwrap();
    let w = random(&[2, 4], &mut rng);
    let report = grad_check(&store, None, 1e-4, GradFault::None, |g, p| {
        let y = g.layer_norm(p.get("x")?, p.get("gamma")?, p.get("beta")?, 1e-5)?;
        let wv = g.constant(w.clone());
        let yw = g.mul(y, wv)?;
        Ok(g.sum(yw))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn layer_norm_rejects_bad_affine() {
    let mut g = G::new();
    let x = g.constant(Tensor::zeros(vec![2, 4]).unwrap());
    let gamma = g.constant(Tensor::zeros(vec![3]).unwrap());
    let beta = g.constant(Tensor::zeros(vec![4]).unwrap());
    assert!(g.layer_norm(x, gamma, beta, 1e-5).is_err());
}

#[test]
fn transpose_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 4, 2], &mut rng);
    let mut g = G::new();
    let xv = g.constant(x.clone());
    let once = g.transpose(xv, 0, 1).unwrap();
    assert_eq!(g.dims(once), &[4, 3, 2]);
    let twice = g.transpose(once, 0, 1).unwrap();
    assert_eq!(g.value(twice), &x);
    assert!(matches!(g.transpose(xv, 0, 3), Err(Error::Axis { .. })));
}

#[test]
fn concat_extents_and_errors() {
    let mut g = G::new();
    let a = g.constant(Tensor::zeros(vec![2, 3, 4]).unwrap());
    let b = g.constant(Tensor::zeros(vec![2, 5, 4]).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.dims(c), &[2, 8, 4]);
    assert!(g.concat(&[a, b], 2).is_err());
    assert!(matches!(g.concat(&[a, b], 3), Err(Error::Axis { .. })));
}

#[test]
fn concat_and_slice_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, b) = (random(&[2, 3, 2], &mut rng), random(&[2, 1, 2], &mut rng));
    let mut g = G::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.concat(&[av, bv], 1).unwrap();
    let a2 = g.slice(c, 1, 0, 3).unwrap();
    let b2 = g.slice(c, 1, 3, 1).unwrap();
    assert_eq!(g.value(a2), &a);
    assert_eq!(g.value(b2), &b);
    assert!(g.slice(c, 1, 3, 2).is_err());
}

#[test]
fn reduce_sum_gradient_is_all_ones() {
    let mut g = G::new();
    let x = g.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_polynomial_and_diamond() {
    let mut g = G::new();
    let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);

    let mut g = G::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.add(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0]);
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = G::new();
    let x = g.param(Tensor::zeros(vec![2]).unwrap());
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (a, b) = (random(&[4, 6], &mut rng), random(&[6, 3], &mut rng));
    let run = || {
        let mut g = G::new();
        let (av, bv) = (g.param(a.clone()), g.param(b.clone()));
        let y = g.matmul(av, bv).unwrap();
        let y = g.softmax_lastdim(y);
        let y = g.mul(y, y).unwrap();
        let s = g.mean(y);
        g.backward(s).unwrap();
        (g.grad_tensor(av), g.grad_tensor(bv))
    };
    let (first, second) = (run(), run());
    assert_eq!(first.0.data(), second.0.data());
    assert_eq!(first.1.data(), second.1.data());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = G::new();
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let p = g.param(t(&[2], &[3.0, 4.0]));
    let y = g.mul(c, p).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[1.0, 2.0]);
}

#[test]
fn gather_gradient_touches_only_used_rows() {
    let mut g = G::new();
    let table = g.param(Tensor::zeros(vec![4, 2]).unwrap());
    let rows = g.gather_rows(table, &[1, 3, 1], &[3]).unwrap();
    assert_eq!(g.dims(rows), &[3, 2]);
    let s = g.sum(rows);
    g.backward(s).unwrap();
    assert_eq!(g.grad(table).unwrap(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    assert!(matches!(g.gather_rows(table, &[4], &[1]), Err(Error::Index { .. })));
}

#[test]
fn linear_layer_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store.insert("w", random(&[4, 3], &mut rng)).unwrap();
    store.insert("b", random(&[3], &mut rng)).unwrap();
    let x = random(&[5, 4], &mut rng);
    let target = random(&[5, 3], &mut rng);
    let report = grad_check(&store, None, 1e-5, GradFault::None, |g, p| {
        let xv = g.constant(x.clone());
        let y = g.matmul(xv, p.get("w")?)?;
        let y = g.add(y, p.get("b")?)?;
        let tv = g.constant(target.clone());
        let d = g.sub(y, tv)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.params.len(), 2);
}

#[test]
fn corrupted_backward_fails_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store.insert("x", random(&[5, 4], &mut rng)).unwrap();
    let w = random(&[4, 3], &mut rng);
    let report = grad_check(&store, None, 1e-4, GradFault::MatmulLhs, |g, p| {
        let wv = g.constant(w.clone());
        let y = g.matmul(p.get("x")?, wv)?;
        let y = g.mul(y, y)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!report.passed());
    assert_eq!(report.failures().next().unwrap().name, "x");
}

#[test]
fn grad_check_flags_non_finite_gradient() {
    let mut store = ParamStore::new();
    store.insert("x", t(&[1], &[f64::MAX])).unwrap();
    let report = grad_check(&store, None, 1e-4, GradFault::None, |g, p| {
        let x = p.get("x")?;
        let y = g.mul(x, x)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!report.passed());
    assert!(!report.params[0].analytic_finite);
}

#[test]
fn dump_lists_every_node() {
    let mut g = G::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let y = g.relu(x);
    let _ = g.sum(y);
    let dump = g.dump_edges();
    assert_eq!(dump.lines().count(), 3);
    assert!(dump.lines().nth(1).unwrap().starts_with("1\trelu\t[2]\t<- 0"));
}

#[test]
fn f32_graph_runs() {
    let mut g: Graph<f32> = Graph::new();
    let a = g.param(Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 1], vec![5.0f32, 6.0]).unwrap());
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[17.0f32, 39.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[5.0f32, 6.0, 5.0, 6.0]);
}

#[derive(Clone, Copy, Debug)]
enum UnaryCase {
    Relu,
    Gelu,
    SmoothL1,
    Softmax,
    LayerNorm,
    Scale,
    AddScalar,
    Transpose,
    Reshape,
    SliceFirst,
    ConcatSelf,
    RepeatFront,
    Mean,
    SquareMul,
    MatmulSelfT,
    BiasAdd,
    SubRev,
    Gather,
}

fn apply(case: UnaryCase, g: &mut Graph<f64>, x: Var) -> Var {
    let dims = g.dims(x).to_vec();
    let rank = dims.len();
    match case {
        UnaryCase::Relu => g.relu(x),
        UnaryCase::Gelu => g.gelu(x),
        UnaryCase::SmoothL1 => {
            let y = g.scale(x, 3.0);
            g.smooth_l1(y)
        }
        UnaryCase::Softmax => g.softmax_lastdim(x),
        UnaryCase::LayerNorm => {
            let w = dims[rank - 1];
            let gamma = g.constant(Tensor::full(vec![w], 1.3).unwrap());
            let beta = g.constant(Tensor::full(vec![w], -0.2).unwrap());
            g.layer_norm(x, gamma, beta, 1e-5).unwrap()
        }
        UnaryCase::Scale => g.scale(x, -2.5),
        UnaryCase::AddScalar => g.add_scalar(x, 4.0),
        UnaryCase::Transpose => g.transpose(x, 0, rank - 1).unwrap(),
        UnaryCase::Reshape => g.reshape(x, &[dims.iter().product()]).unwrap(),
        UnaryCase::SliceFirst => g.slice(x, 0, 0, 1).unwrap(),
        UnaryCase::ConcatSelf => g.concat(&[x, x], rank - 1).unwrap(),
        UnaryCase::RepeatFront => {
            let mut d = vec![1];
            d.extend(&dims);
            let r = g.reshape(x, &d).unwrap();
            g.repeat_axis(r, 0, 3).unwrap()
        }
        UnaryCase::Mean => g.mean(x),
        UnaryCase::SquareMul => g.mul(x, x).unwrap(),
        UnaryCase::MatmulSelfT => {
            let xt = g.transpose(x, rank - 2, rank - 1).unwrap();
            g.matmul(x, xt).unwrap()
        }
        UnaryCase::BiasAdd => {
            let w = dims[rank - 1];
            let bias: Vec<f64> = (0..w).map(|i| 0.1 * i as f64).collect();
            let b = g.constant(Tensor::new(vec![w], bias).unwrap());
            let y = g.add(x, b).unwrap();
            g.mul(y, x).unwrap()
        }
        UnaryCase::SubRev => {
            let c = g.constant(Tensor::full(dims.clone(), 0.3).unwrap());
            g.sub(c, x).unwrap()
        }
        UnaryCase::Gather => {
            let flat = g.reshape(x, &[dims[..rank - 1].iter().product(), dims[rank - 1]]).unwrap();
            let rows = g.dims(flat)[0];
            let idx: Vec<usize> = (0..rows + 1).map(|i| (i * 7) % rows).collect();
            g.gather_rows(flat, &idx, &[rows + 1]).unwrap()
        }
    }
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..4, 2..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_op_matches_finite_differences(
        dims in dims_strategy(),
        seed in any::<u64>(),
        case in prop::sample::select(vec![
            UnaryCase::Relu, UnaryCase::Gelu, UnaryCase::SmoothL1, UnaryCase::Softmax,
            UnaryCase::LayerNorm, UnaryCase::Scale, UnaryCase::AddScalar, UnaryCase::Transpose,
            UnaryCase::Reshape, UnaryCase::SliceFirst, UnaryCase::ConcatSelf, UnaryCase::RepeatFront,
            UnaryCase::Mean, UnaryCase::SquareMul, UnaryCase::MatmulSelfT, UnaryCase::BiasAdd,
            UnaryCase::SubRev, UnaryCase::Gather,
        ]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random(&dims, &mut rng);
        if matches!(case, UnaryCase::Relu) {
            // keep inputs away from the kink so central differences are exact
            x.data_mut().iter_mut().for_each(|v| if v.abs() < 0.05 { *v += 0.1 });
        }
        let err = op_grad_error(&x, |g, v| apply(case, g, v), seed ^ 0x5eed);
        prop_assert!(err <= 1e-4, "{case:?} on {dims:?}: rel err {err}");
    }

    #[test]
    fn softmax_rows_sum_to_one(dims in dims_strategy(), seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random(&dims, &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let mut g = G::new();
        let xv = g.constant(x);
        let y = g.softmax_lastdim(xv);
        let w = *dims.last().unwrap();
        for row in g.value(y).data().chunks(w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn layer_norm_standardizes(dims in dims_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&dims, &mut rng);
        let w = *dims.last().unwrap();
        let mut g = G::new();
        let xv = g.constant(x);
        let gamma = g.constant(Tensor::full(vec![w], 1.0).unwrap());
        let beta = g.constant(Tensor::zeros(vec![w]).unwrap());
        let y = g.layer_norm(xv, gamma, beta, 1e-5).unwrap();
        for (row, src) in g.value(y).data().chunks(w).zip(g.value(xv).data().chunks(w)) {
            let n = w as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let src_mean = src.iter().sum::<f64>() / n;
            let src_var = src.iter().map(|v| (v - src_mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-8);
            // eps-adjusted target variance
            prop_assert!((var - src_var / (src_var + 1e-5)).abs() <= 1e-4);
            prop_assert!((var - 1.0).abs() <= 1e-4 || src_var < 0.2);
        }
    }
}
