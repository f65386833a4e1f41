use mmsurv_autodiff::{grad_check, Adam, Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var, TensorError>;

/// Runs `build` on random inputs of the given shapes and compares gradients
/// with central differences at 100 points.
fn check_op(name: &str, shapes: &[(usize, usize)], build: Build) {
    check_op_with(name, shapes, build, 0.0)
}

/// `margin` keeps inputs at least that far from zero (for kinked ops).
fn check_op_with(name: &str, shapes: &[(usize, usize)], build: Build, margin: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let t = random(&mut rng, r, c).map(|v| v + margin * v.signum());
                store.add(format!("in{i}"), t)
            })
            .collect();
        // random linear readout so every output entry carries a distinct weight
        let probe = {
            let mut g = Graph::new();
            let vars: Vec<_> = ids.iter().map(|&id| g.param(&store, id)).collect();
            let out = build(&mut g, &vars).unwrap();
            let s = g.shape(out).to_vec();
            let n: usize = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let err = grad_check(&store, &ids, 1e-3, |g, s| {
            let vars: Vec<_> = ids.iter().map(|&id| g.param(s, id)).collect();
            let out = build(g, &vars)?;
            let w = g.constant(probe.clone());
            let prod = g.mul(out, w)?;
            g.sum(prod)
        })
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "{name}: max relative error {worst}");
}

#[test]
fn elementwise_ops_match_finite_differences() {
    check_op("add", &[(3, 4), (3, 4)], |g, v| g.add(v[0], v[1]));
    check_op("sub", &[(3, 4), (3, 4)], |g, v| g.sub(v[0], v[1]));
    check_op("mul", &[(3, 4), (3, 4)], |g, v| g.mul(v[0], v[1]));
    check_op("add_row", &[(3, 4), (1, 4)], |g, v| g.add_row(v[0], v[1]));
    check_op("affine", &[(2, 5)], |g, v| g.affine(v[0], -1.7, 0.3));
    check_op("gelu", &[(3, 4)], |g, v| g.gelu(v[0]));
    check_op("exp", &[(3, 4)], |g, v| g.exp(v[0]));
    check_op_with("abs", &[(3, 4)], |g, v| g.abs(v[0]), 0.01);
    check_op("log_floor", &[(3, 4)], |g, v| {
        let e = g.exp(v[0])?;
        g.log_floor(e, 1e-12)
    });
}

#[test]
fn matrix_ops_match_finite_differences() {
    check_op("matmul", &[(3, 4), (4, 2)], |g, v| g.matmul(v[0], v[1]));
    check_op("matmul_nt", &[(3, 4), (5, 4)], |g, v| g.matmul_nt(v[0], v[1]));
    check_op("transpose", &[(3, 4)], |g, v| g.transpose(v[0]));
    check_op("reshape", &[(3, 4)], |g, v| g.reshape(v[0], vec![2, 6]));
    check_op("concat_rows", &[(2, 3), (1, 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
    check_op("concat_cols", &[(2, 3), (2, 2)], |g, v| g.concat_cols(&[v[0], v[1]]));
    check_op("slice_rows", &[(4, 3)], |g, v| g.slice_rows(v[0], 1, 3));
    check_op("slice_cols", &[(3, 5)], |g, v| g.slice_cols(v[0], 2, 4));
    check_op("gather", &[(3, 4)], |g, v| g.gather(v[0], vec![(0, 1), (2, 3), (0, 1)]));
}

#[test]
fn reductions_and_normalizers_match_finite_differences() {
    check_op("softmax", &[(3, 5)], |g, v| g.softmax_rows(v[0]));
    check_op("log_softmax", &[(3, 5)], |g, v| g.log_softmax_rows(v[0]));
    check_op("layer_norm", &[(3, 6), (1, 6), (1, 6)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    check_op("normalize_rows", &[(3, 4)], |g, v| g.normalize_rows(v[0]));
    check_op("sum", &[(3, 4)], |g, v| g.sum(v[0]));
    check_op("mean", &[(3, 4)], |g, v| g.mean(v[0]));
    check_op("mean_rows", &[(3, 4)], |g, v| g.mean_rows(v[0]));
}

#[test]
fn square_has_gradient_six_at_three() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(3.0));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let sq = g.mul(v, v).unwrap();
    let grads = g.backward(sq).unwrap();
    assert_eq!(grads.get(p).unwrap().item(), 6.0);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::row(vec![0.3, -1.2, 2.0, 0.7]).unwrap());
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let s = g.softmax_rows(v).unwrap();
    let total = g.sum(s).unwrap();
    let grads = g.backward(total).unwrap();
    assert!(grads.get(p).unwrap().max_abs() < 1e-15);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::row(vec![1.0, 2.0]).unwrap());
    let mut g = Graph::new();
    let v = g.param(&store, p);
    assert!(matches!(g.backward(v), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn non_finite_result_names_the_node() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(800.0));
    let err = g.exp(x).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "exp", node: 1 }), "{err}");
}

#[test]
fn shared_parameter_gradients_accumulate() {
    // y = p·p + 3p uses p through two paths and two param() calls
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(2.0));
    let mut g = Graph::new();
    let a = g.param(&store, p);
    let b = g.param(&store, p);
    let sq = g.mul(a, b).unwrap();
    let lin = g.scale(b, 3.0).unwrap();
    let y = g.add(sq, lin).unwrap();
    assert_eq!(g.backward(y).unwrap().get(p).unwrap().item(), 7.0);
}

#[test]
fn each_backward_starts_from_zero() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(1.5));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let y = g.scale(v, 2.0).unwrap();
    let first = g.backward(y).unwrap();
    let second = g.backward(y).unwrap();
    assert_eq!(first.get(p).unwrap().item(), 2.0);
    assert_eq!(second.get(p).unwrap().item(), 2.0);
    let mut acc = first.clone();
    acc.accumulate(&second);
    assert_eq!(acc.get(p).unwrap().item(), 4.0);
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(1.0));
    let q = store.add("q", Tensor::scalar(2.0));
    let mut g = Graph::new();
    let pv = g.param(&store, p);
    let qv = g.frozen(&store, q);
    let y = g.mul(pv, qv).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(p).unwrap().item(), 2.0);
    assert!(grads.get(q).is_none());
}

#[test]
fn layer_norm_examples() {
    let ones = Tensor::row(vec![1.0; 4]).unwrap();
    let zeros = Tensor::row(vec![0.0; 4]).unwrap();

    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![5.0; 4]).unwrap());
    let (ga, bi) = (g.constant(ones.clone()), g.constant(zeros.clone()));
    let y = g.layer_norm(x, ga, bi, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![1.0, 3.0]).unwrap());
    let ga = g.constant(Tensor::row(vec![1.0, 1.0]).unwrap());
    let bi = g.constant(Tensor::row(vec![0.0, 0.0]).unwrap());
    let y = g.layer_norm(x, ga, bi, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let row: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(row).unwrap());
    let ga = g.constant(Tensor::row(vec![1.0; 16]).unwrap());
    let bi = g.constant(Tensor::row(vec![0.0; 16]).unwrap());
    let y = g.layer_norm(x, ga, bi, 0.0).unwrap();
    let out = g.value(y).data();
    let mean = out.iter().sum::<f64>() / 16.0;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-9);
}

#[test]
fn grad_check_is_exact_for_quadratic_forms() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::column(vec![0.4, -1.1, 2.3]).unwrap());
    let a = Tensor::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, -0.3], vec![0.0, -0.3, 3.0]]).unwrap();
    let err = grad_check(&store, &[x], 1e-3, |g, s| {
        let xv = g.param(s, x);
        let av = g.constant(a.clone());
        let ax = g.matmul(av, xv)?;
        let xt = g.transpose(xv)?;
        let q = g.matmul(xt, ax)?;
        g.sum(q)
    })
    .unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 6, 8);
        let b = random(&mut rng, 8, 5);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a), g.constant(b));
        let m = g.matmul(av, bv).unwrap();
        let s = g.softmax_rows(m).unwrap();
        g.value(s).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::row(vec![3.0, -2.0]).unwrap());
    let mut opt = Adam::new(0.1);
    for _ in 0..500 {
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        opt.step(&mut store, &grads, &[p]);
    }
    assert!(store.get(p).max_abs() < 1e-2);
    assert_eq!(opt.steps_taken(), 500);
}
